"""Waveforms and the STFT/ISTFT pair.

Analysis and synthesis both use a periodic sqrt-Hann window. Signals get a
lead-in of (fft_size - hop) zeros and a zero-padded tail so every real sample
is covered by a full set of overlapping windows; inversion divides by the
accumulated squared window, which makes the round trip exact to machine
precision for any hop that divides fft_size with overlap factor >= 2.
"""

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono audio: float64 samples (nominally in [-1, 1]) at a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("waveform must be 1-D, got shape %s" % (self.samples.shape,))
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive, got %d" % self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Frame size, hop and window for the analysis/synthesis pair."""

    fft_size: int = 1024
    hop: int = 512
    window: str = "sqrt_hann"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2 != 0:
            raise ConfigError("fft_size must be even and >= 2, got %d" % self.fft_size)
        if self.hop < 1 or self.fft_size % self.hop != 0:
            raise ConfigError(
                "hop must divide fft_size (got hop=%d, fft_size=%d)"
                % (self.hop, self.fft_size)
            )
        if self.fft_size // self.hop < 2:
            raise ConfigError("overlap factor must be >= 2 for reconstruction")
        if self.window != "sqrt_hann":
            raise ConfigError("unknown window %r" % (self.window,))
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive, got %d" % self.sample_rate)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def lead_pad(self) -> int:
        return self.fft_size - self.hop


def _window(cfg: StftConfig) -> np.ndarray:
    # periodic Hann so shifted copies sum to an exact constant
    n = np.arange(cfg.fft_size)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.fft_size)
    return np.sqrt(hann)


def n_frames(n_samples: int, cfg: StftConfig) -> int:
    """Number of STFT frames produced for a signal of `n_samples` samples."""
    if n_samples < cfg.fft_size:
        raise DataError(
            "signal too short: %d samples < one window (%d)"
            % (n_samples, cfg.fft_size)
        )
    return -(-n_samples // cfg.hop)  # ceil


def frame_times(count: int, cfg: StftConfig) -> np.ndarray:
    """Center time (seconds) of each analysis frame, shape (count,)."""
    return np.arange(count) * cfg.hop / cfg.sample_rate


def stft(w: Waveform, cfg: StftConfig) -> np.ndarray:
    """One-sided STFT of `w`, complex array of shape (n_bins, n_frames)."""
    x = w.samples
    count = n_frames(len(x), cfg)
    lead = cfg.lead_pad
    total = (count - 1) * cfg.hop + cfg.fft_size
    padded = np.zeros(total)
    padded[lead:lead + len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.fft_size)
    frames = frames[:: cfg.hop]  # shape (count, fft_size)
    spec = np.fft.rfft(frames * _window(cfg), axis=1)
    return spec.T.copy()  # shape (n_bins, n_frames)


def istft(s: np.ndarray, cfg: StftConfig, length: int) -> Waveform:
    """Invert a one-sided STFT back to `length` samples."""
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] != cfg.n_bins:
        raise DataError(
            "spectrogram shape %s inconsistent with %d-bin config"
            % (s.shape, cfg.n_bins)
        )
    count = s.shape[1]
    lead = cfg.lead_pad
    natural = (count - 1) * cfg.hop + cfg.fft_size - lead
    if length < 1 or length > natural:
        raise DataError(
            "cannot produce %d samples from %d frames (max %d)"
            % (length, count, natural)
        )
    win = _window(cfg)
    frames = np.fft.irfft(s.T, n=cfg.fft_size, axis=1) * win
    total = (count - 1) * cfg.hop + cfg.fft_size
    out = np.zeros(total)
    wsum = np.zeros(total)
    wsq = win * win
    for k in range(count):
        start = k * cfg.hop
        out[start:start + cfg.fft_size] += frames[k]
        wsum[start:start + cfg.fft_size] += wsq
    covered = wsum > 0.0
    out[covered] /= wsum[covered]
    return Waveform(out[lead:lead + length], cfg.sample_rate)


def power(s: np.ndarray) -> np.ndarray:
    """Power spectrogram |s|^2, float64, same shape as `s`."""
    return np.abs(s) ** 2


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataError("%s: expected mono, got %d channels"
                                % (path, fh.getnchannels()))
            if fh.getsampwidth() != 2:
                raise DataError("%s: expected 16-bit PCM, got %d-byte samples"
                                % (path, fh.getsampwidth()))
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, OSError, EOFError) as exc:
        raise DataError("cannot read %s: %s" % (path, exc)) from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write `w` as a mono 16-bit PCM WAV file (values clipped to [-1, 1])."""
    path = Path(path)
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(w.sample_rate)
            fh.writeframes(pcm.tobytes())
    except (wave.Error, OSError) as exc:
        raise DataError("cannot write %s: %s" % (path, exc)) from exc
