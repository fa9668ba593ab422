"""Source estimation: posterior-averaged Wiener masks applied to the mixture.

Each retained E-step draw yields per-bin variances for both speakers; the
estimate of speaker i is the mixture multiplied by the average over draws of
g_i * sigma_i / v_x. The three masks (two speakers + noise) partition unity
draw by draw, so the two estimates plus the implied noise estimate always
recompose the mixture exactly.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, Waveform, istft, n_frames, stft
from .errors import ConfigError, DataError
from .mcem import McemConfig, SampleBuffer, SeparationState, run_mcem
from .seeding import substream
from .vae import decode


@dataclass
class SourceEstimate:
    """One separated source: complex STFT and the matching waveform."""

    spectrogram: np.ndarray
    waveform: Waveform


def wiener_gain(state: SeparationState, model, n, f, z1, z2, speaker,
                var_floor=1e-6) -> float:
    """Mask value for one (frame, bin) at latents (z1, z2)."""
    if speaker not in (1, 2):
        raise ConfigError("speaker must be 1 or 2, got %r" % (speaker,))
    from .mcem import _pair

    m1, m2 = _pair(model)
    s1 = decode(m1, z1, state.vraw1[n])
    s2 = decode(m2, z2, state.vraw2[n])
    wh = state.noise.w @ state.noise.h[:, n]
    vx = np.maximum(state.g1[n] * s1 + state.g2[n] * s2 + wh, var_floor)
    num = state.g1[n] * s1[f] if speaker == 1 else state.g2[n] * s2[f]
    return float(num / vx[f])


def _masks(state: SeparationState, samples: SampleBuffer, var_floor):
    if samples is None or len(samples) == 0:
        raise ConfigError("need at least one retained sample to estimate sources")
    wh = state.noise.w @ state.noise.h
    vx = np.maximum(state.g1[None, None, :] * samples.sig1
                    + state.g2[None, None, :] * samples.sig2
                    + wh[None], var_floor)
    mask1 = np.mean(state.g1[None, None, :] * samples.sig1 / vx, axis=0)
    mask2 = np.mean(state.g2[None, None, :] * samples.sig2 / vx, axis=0)
    return mask1, mask2


def estimate_sources(x, state: SeparationState, samples: SampleBuffer,
                     stft_cfg: StftConfig, length, var_floor=1e-6):
    """Both speakers' estimates from the final EM state and sample buffer."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != stft_cfg.n_bins:
        raise DataError("mixture spectrogram shape %s does not match config"
                        % (x.shape,))
    mask1, mask2 = _masks(state, samples, var_floor)
    s1 = mask1 * x
    s2 = mask2 * x
    return (SourceEstimate(s1, istft(s1, stft_cfg, length)),
            SourceEstimate(s2, istft(s2, stft_cfg, length)))


def separate(mixture: Waveform, v1, v2, model, stft_cfg: StftConfig,
             cfg: McemConfig, rng=None, return_details=False):
    """Separate a two-speaker mixture waveform end to end.

    Runs MCEM on the mixture STFT under per-speaker embeddings v1, v2
    ((n_frames, raw_dim) each) and returns the two estimated waveforms.
    With return_details a dict carrying state, samples and the Q trace is
    appended to the return tuple.
    """
    if cfg.em_iters < 1:
        raise ConfigError("separation needs em_iters >= 1")
    x = stft(mixture, stft_cfg)
    count = n_frames(len(mixture), stft_cfg)
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape[0] != count or v2.shape[0] != count:
        raise DataError(
            "embeddings cover %d/%d frames but the mixture has %d"
            % (v1.shape[0], v2.shape[0], count)
        )
    if rng is None:
        rng = substream(cfg.seed, "mcem")
    state, samples, trace = run_mcem(x, v1, v2, model, cfg, rng)
    est1, est2 = estimate_sources(x, state, samples, stft_cfg, len(mixture),
                                  cfg.var_floor)
    if return_details:
        details = {"state": state, "samples": samples, "trace": trace,
                   "mixture_stft": x}
        return est1.waveform, est2.waveform, details
    return est1.waveform, est2.waveform
