"""Synthetic two-speaker corpus with time-aligned visual embeddings.

A "speaker" is band-limited noise in a few fixed formant bands, amplitude
modulated by a slow sinusoidal envelope. The two default speakers (and the
babble noise surrogate) occupy disjoint bands, so an oracle mask separates
them almost perfectly and the ceiling of the benchmark stays high.

The visual embedding for a frame is what a lip-region feature would give at
desk scale: a one-hot speaker identity plus deterministic transforms of the
amplitude envelope, sampled at 30 frames per second and resampled to the STFT
frame rate. It carries exactly the information the conditional prior needs:
who is talking and how loudly right now.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .containers import MAGIC_EMBEDDING, MAGIC_MATRICES, read_arrays, write_arrays
from .dsp import StftConfig, Waveform, frame_times, n_frames, power, read_wav, \
    stft, write_wav
from .errors import ConfigError, DataError
from .seeding import substream
from .vae import FrameTriples

RAW_DIM = 16
VIDEO_FPS = 30.0
_N_SPEAKER_SLOTS = 4
_UTTERANCE_RMS = 0.06


@dataclass(frozen=True)
class SynthSpeakerSpec:
    """Identity slot, formant bands as (center_hz, width_hz), envelope rate."""

    id: int
    formant_bands: tuple
    modulation_rate: float
    seed: int

    def __post_init__(self):
        if not 0 <= self.id < _N_SPEAKER_SLOTS:
            raise ConfigError("speaker id must be in [0, %d), got %d"
                              % (_N_SPEAKER_SLOTS, self.id))
        if not self.formant_bands:
            raise ConfigError("at least one formant band is required")
        for center, width in self.formant_bands:
            if width <= 0 or center - width / 2 <= 0:
                raise ConfigError("band (%g, %g) reaches below 0 Hz"
                                  % (center, width))
        if self.modulation_rate <= 0:
            raise ConfigError("modulation_rate must be positive")


@dataclass(frozen=True)
class MixSpec:
    """How to combine two utterances and the noise bed.

    speaker_snr_db is the level of speaker 2 relative to speaker 1 (positive
    means speaker 2 is louder). noise_snr_db is 10*log10 of speech-sum power
    over noise power, so -5 means the noise is 5 dB louder than both speakers
    together; None disables the noise entirely.
    """

    speaker_snr_db: float = 0.0
    noise_type: str = "white"
    noise_snr_db: float | None = 5.0

    def __post_init__(self):
        if self.noise_type not in ("white", "pink", "babble", "none"):
            raise ConfigError("unknown noise type %r" % (self.noise_type,))


def default_speakers():
    """The two standard desk-scale speakers; their bands do not overlap."""
    a = SynthSpeakerSpec(id=0, formant_bands=((600.0, 150.0), (2200.0, 200.0)),
                         modulation_rate=2.5, seed=101)
    b = SynthSpeakerSpec(id=1, formant_bands=((1200.0, 150.0), (3200.0, 200.0)),
                         modulation_rate=3.5, seed=202)
    return a, b


def babble_spec():
    """Third disjoint-band modulated-noise process used as babble surrogate."""
    return SynthSpeakerSpec(id=2, formant_bands=((4500.0, 800.0),),
                            modulation_rate=6.0, seed=303)


def _band_mask(freqs, bands):
    mask = np.zeros_like(freqs)
    for center, width in bands:
        lo, hi = center - width / 2.0, center + width / 2.0
        taper = 0.15 * width
        core = (freqs >= lo + taper) & (freqs <= hi - taper)
        mask[core] = 1.0
        for edge_lo, edge_hi, rising in ((lo, lo + taper, True),
                                         (hi - taper, hi, False)):
            sel = (freqs >= edge_lo) & (freqs < edge_hi)
            ramp = (freqs[sel] - edge_lo) / taper
            mask[sel] = np.maximum(
                mask[sel], 0.5 - 0.5 * np.cos(np.pi * (ramp if rising else 1 - ramp))
            )
    return mask


def _band_noise(bands, n_samples, sample_rate, rng):
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    shaped = np.fft.irfft(spectrum * _band_mask(freqs, bands), n=n_samples)
    return shaped


def _envelope(spec: SynthSpeakerSpec, t, phase):
    return 0.55 + 0.45 * np.sin(2.0 * np.pi * spec.modulation_rate * t + phase)


def synth_utterance(spec: SynthSpeakerSpec, duration, cfg: StftConfig, rng):
    """One utterance: (Waveform, embeddings (n_frames, RAW_DIM)).

    The stream is consumed as: band-noise draws, then the envelope phase.
    """
    n_samples = int(round(duration * cfg.sample_rate))
    if n_samples < cfg.fft_size:
        raise DataError("duration %.3fs is shorter than one analysis window"
                        % duration)
    for center, width in spec.formant_bands:
        if center + width / 2.0 > cfg.sample_rate / 2.0:
            raise ConfigError("band (%g, %g) exceeds Nyquist for %d Hz"
                              % (center, width, cfg.sample_rate))
    shaped = _band_noise(spec.formant_bands, n_samples, cfg.sample_rate, rng)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n_samples) / cfg.sample_rate
    x = shaped * _envelope(spec, t, phase)
    x = x * (_UTTERANCE_RMS / np.sqrt(np.mean(x**2)))
    wave = Waveform(x, cfg.sample_rate)

    count = n_frames(n_samples, cfg)
    t_video = np.arange(int(np.ceil(duration * VIDEO_FPS))) / VIDEO_FPS
    env_video = _envelope(spec, t_video, phase)
    env = np.interp(frame_times(count, cfg), t_video, env_video)
    emb = np.zeros((count, RAW_DIM))
    emb[:, spec.id] = 1.0
    emb[:, 4] = env
    emb[:, 5] = env**2
    emb[:, 6] = np.sqrt(env)
    emb[:, 7] = 1.0 - env
    emb[:, 8] = np.concatenate([[env[0]], env[:-1]])
    emb[:, 9] = np.concatenate([env[1:], [env[-1]]])
    return wave, emb


def _mean_power(x):
    return float(np.mean(x**2))


def mix(w1: Waveform, w2: Waveform, m: MixSpec, rng):
    """Combine two utterances per `m`; returns (mixture, ref1, ref2).

    The references are the signals as they appear in the mixture: speaker 1
    untouched, speaker 2 scaled to the requested relative level. Both are
    truncated to the shorter of the two. The stream is consumed only when the
    noise type needs draws (all types except "none").
    """
    if w1.sample_rate != w2.sample_rate:
        raise DataError("sample rates differ: %d vs %d"
                        % (w1.sample_rate, w2.sample_rate))
    n = min(len(w1), len(w2))
    s1 = w1.samples[:n].copy()
    s2 = w2.samples[:n].copy()
    p1, p2 = _mean_power(s1), _mean_power(s2)
    if p1 == 0.0 or p2 == 0.0:
        raise DataError("cannot mix a silent utterance")
    s2 *= np.sqrt(p1 * 10.0 ** (m.speaker_snr_db / 10.0) / p2)
    total = s1 + s2
    if m.noise_type != "none" and m.noise_snr_db is not None:
        if m.noise_type == "white":
            noise = rng.standard_normal(n)
        elif m.noise_type == "pink":
            spectrum = np.fft.rfft(rng.standard_normal(n))
            freqs = np.fft.rfftfreq(n, 1.0 / w1.sample_rate)
            weights = np.zeros_like(freqs)
            weights[1:] = 1.0 / np.sqrt(freqs[1:])
            noise = np.fft.irfft(spectrum * weights, n=n)
        else:  # babble
            spec = babble_spec()
            noise = _band_noise(spec.formant_bands, n, w1.sample_rate, rng)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            t = np.arange(n) / w1.sample_rate
            noise = noise * _envelope(spec, t, phase)
        p_speech = _mean_power(s1 + s2)
        target = p_speech / 10.0 ** (m.noise_snr_db / 10.0)
        noise *= np.sqrt(target / _mean_power(noise))
        total = total + noise
    rate = w1.sample_rate
    return Waveform(total, rate), Waveform(s1, rate), Waveform(s2, rate)


@dataclass
class Utterance:
    speaker: int
    split: str
    index: int
    wave: Waveform
    embeddings: np.ndarray


@dataclass
class Corpus:
    """Training triples (pooled and per speaker) plus paired test utterances."""

    stft_cfg: StftConfig
    specs: tuple
    triples: FrameTriples
    speaker_triples: dict
    test_pairs: list
    seed: int
    duration: float
    n_train: int
    n_test: int


def _utterance_stream(seed, spec, split, index):
    split_code = {"train": 0, "test": 1}[split]
    return substream(seed, "utt", spec.seed, split_code, index)


def build_corpus(n_train, n_test, cfg: StftConfig, seed, duration=2.0,
                 specs=None) -> Corpus:
    """Synthesize everything: train triples for both speakers, test pairs.

    Training mixtures are symmetric (0 dB) two-speaker sums with no noise bed;
    the noise enters only at evaluation time through MixSpec. Seeds are
    disjoint across speakers, splits and utterance indices.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigError("need at least one utterance per split")
    if specs is None:
        specs = default_speakers()
    if len(specs) != 2 or specs[0].id == specs[1].id:
        raise ConfigError("exactly two speakers with distinct ids are required")
    utts = {}
    for spec in specs:
        for split, count in (("train", n_train), ("test", n_test)):
            for i in range(count):
                rng = _utterance_stream(seed, spec, split, i)
                wave, emb = synth_utterance(spec, duration, cfg, rng)
                utts[(spec.id, split, i)] = Utterance(spec.id, split, i, wave, emb)

    plain = MixSpec(speaker_snr_db=0.0, noise_type="none", noise_snr_db=None)
    speaker_triples = {}
    for me, partner in (specs, specs[::-1]):
        xs, ss, vs = [], [], []
        for i in range(n_train):
            own = utts[(me.id, "train", i)]
            j = int(substream(seed, "pair", me.id, i).integers(n_train))
            other = utts[(partner.id, "train", j)]
            mixture, ref, _ = mix(own.wave, other.wave, plain,
                                  substream(seed, "trainmix", me.id, i))
            xs.append(power(stft(mixture, cfg)).T)
            ss.append(power(stft(ref, cfg)).T)
            vs.append(own.embeddings)
        speaker_triples[me.id] = FrameTriples(np.concatenate(xs),
                                              np.concatenate(ss),
                                              np.concatenate(vs))
    pooled = FrameTriples(
        np.concatenate([speaker_triples[s.id].mix_power for s in specs]),
        np.concatenate([speaker_triples[s.id].clean_power for s in specs]),
        np.concatenate([speaker_triples[s.id].embeddings for s in specs]),
    )
    test_pairs = [(utts[(specs[0].id, "test", i)], utts[(specs[1].id, "test", i)])
                  for i in range(n_test)]
    return Corpus(stft_cfg=cfg, specs=tuple(specs), triples=pooled,
                  speaker_triples=speaker_triples, test_pairs=test_pairs,
                  seed=seed, duration=duration, n_train=n_train, n_test=n_test)


def save_corpus(corpus: Corpus, out_dir) -> None:
    """Write manifest.json, per-utterance WAV + embedding files, triples."""
    out = Path(out_dir)
    for sub in ("audio", "emb", "triples"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    utt_entries = []
    for pair in corpus.test_pairs:
        for utt in pair:
            stem = "spk%d_%s_%03d" % (utt.speaker, utt.split, utt.index)
            write_wav(out / "audio" / (stem + ".wav"), utt.wave)
            write_arrays(out / "emb" / (stem + ".bin"), MAGIC_EMBEDDING,
                         [utt.embeddings])
            utt_entries.append({
                "speaker": utt.speaker, "split": utt.split, "index": utt.index,
                "wav": "audio/%s.wav" % stem, "emb": "emb/%s.bin" % stem,
            })
    triple_entries = {}
    for speaker_id, triples in sorted(corpus.speaker_triples.items()):
        rel = "triples/spk%d.bin" % speaker_id
        write_arrays(out / rel, MAGIC_MATRICES,
                     [triples.mix_power, triples.clean_power, triples.embeddings])
        triple_entries[str(speaker_id)] = rel
    manifest = {
        "seed": corpus.seed,
        "duration": corpus.duration,
        "n_train": corpus.n_train,
        "n_test": corpus.n_test,
        "stft": {"fft_size": corpus.stft_cfg.fft_size,
                 "hop": corpus.stft_cfg.hop,
                 "window": corpus.stft_cfg.window,
                 "sample_rate": corpus.stft_cfg.sample_rate},
        "speakers": [asdict(s) for s in corpus.specs],
        "utterances": utt_entries,
        "triples": triple_entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")


def load_corpus(corpus_dir) -> Corpus:
    """Rebuild a Corpus from save_corpus output."""
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError("cannot read %s: %s" % (manifest_path, exc)) from exc
    cfg = StftConfig(**manifest["stft"])
    specs = tuple(
        SynthSpeakerSpec(id=s["id"],
                         formant_bands=tuple(tuple(b) for b in s["formant_bands"]),
                         modulation_rate=s["modulation_rate"], seed=s["seed"])
        for s in manifest["speakers"]
    )
    speaker_triples = {}
    for key, rel in manifest["triples"].items():
        arrays = read_arrays(root / rel, MAGIC_MATRICES)
        if len(arrays) != 3:
            raise DataError("%s: expected 3 arrays, got %d"
                            % (root / rel, len(arrays)))
        speaker_triples[int(key)] = FrameTriples(*arrays)
    pooled = FrameTriples(
        np.concatenate([speaker_triples[s.id].mix_power for s in specs]),
        np.concatenate([speaker_triples[s.id].clean_power for s in specs]),
        np.concatenate([speaker_triples[s.id].embeddings for s in specs]),
    )
    by_key = {}
    for entry in manifest["utterances"]:
        wave = read_wav(root / entry["wav"])
        emb = read_arrays(root / entry["emb"], MAGIC_EMBEDDING)[0]
        utt = Utterance(entry["speaker"], entry["split"], entry["index"],
                        wave, emb)
        by_key[(utt.speaker, utt.index)] = utt
    test_pairs = [
        (by_key[(specs[0].id, i)], by_key[(specs[1].id, i)])
        for i in range(manifest["n_test"])
    ]
    return Corpus(stft_cfg=cfg, specs=specs, triples=pooled,
                  speaker_triples=speaker_triples, test_pairs=test_pairs,
                  seed=manifest["seed"], duration=manifest["duration"],
                  n_train=manifest["n_train"], n_test=manifest["n_test"])
