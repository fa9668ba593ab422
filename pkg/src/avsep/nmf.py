"""Itakura-Saito NMF: the noise model and the NMF separation baseline.

A power spectrogram P (n_bins, n_frames) is modelled as W @ H with W, H
entrywise positive. Updates are the classical multiplicative ones for the IS
divergence (exponent 1), with every factor floored after each update so
entries can never reach zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

NMF_FLOOR = 1e-10


@dataclass
class NmfModel:
    """Dictionary w (n_bins, rank) and activations h (rank, n_frames)."""

    w: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.w.ndim != 2 or self.h.ndim != 2 or self.w.shape[1] != self.h.shape[0]:
            raise ConfigError(
                "incompatible factor shapes %s and %s" % (self.w.shape, self.h.shape)
            )
        if np.any(self.w <= 0.0) or np.any(self.h <= 0.0):
            raise ConfigError("NMF factors must be entrywise positive")

    @property
    def rank(self):
        return self.w.shape[1]


def noise_variance(m: NmfModel, n=None) -> np.ndarray:
    """Model variance W @ H, full (n_bins, n_frames) or one frame's (n_bins,)."""
    if n is None:
        return m.w @ m.h
    return m.w @ m.h[:, n]


def is_divergence(p, v) -> float:
    """Itakura-Saito divergence D(p || v) summed over all bins."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if p.shape != v.shape:
        raise ConfigError("shapes differ: %s vs %s" % (p.shape, v.shape))
    if np.any(p <= 0.0) or np.any(v <= 0.0):
        raise DataError("IS divergence needs strictly positive inputs")
    ratio = p / v
    return float(np.sum(ratio - np.log(ratio) - 1.0))


def _check_spectrogram(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise DataError("power spectrogram must be 2-D and non-empty")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise DataError("power spectrogram must be finite and non-negative")
    if np.all(p == 0.0):
        raise DataError("power spectrogram is identically zero")
    return p


def init_factors(n_bins, rank, n_frames, rng):
    """Uniform(0.1, 1.1) init keeps every entry well away from the floor."""
    return (rng.uniform(0.1, 1.1, size=(n_bins, rank)),
            rng.uniform(0.1, 1.1, size=(rank, n_frames)))


def _update_h(p, w, h):
    v = w @ h
    h = h * (w.T @ (p * v**-2)) / (w.T @ v**-1)
    return np.maximum(h, NMF_FLOOR)


def _update_w(p, w, h):
    v = w @ h
    w = w * ((p * v**-2) @ h.T) / (v**-1 @ h.T)
    return np.maximum(w, NMF_FLOOR)


def fit_is_nmf(p, rank, n_iters, rng, return_trace=False):
    """Fit W, H to `p` by alternating multiplicative updates (H first).

    With return_trace the IS divergence after each full iteration is returned
    alongside the model.
    """
    p = _check_spectrogram(p)
    if rank < 1:
        raise ConfigError("rank must be >= 1, got %d" % rank)
    if n_iters < 0:
        raise ConfigError("n_iters must be >= 0, got %d" % n_iters)
    w, h = init_factors(p.shape[0], rank, p.shape[1], rng)
    trace = []
    for _ in range(n_iters):
        h = _update_h(p, w, h)
        w = _update_w(p, w, h)
        if return_trace:
            trace.append(is_divergence(np.maximum(p, NMF_FLOOR), w @ h))
    model = NmfModel(w, h)
    if return_trace:
        return model, np.asarray(trace)
    return model


def baseline_separate(x, w1, w2, k_noise, n_iters, rng):
    """NMF-only separation of mixture spectrogram `x` (complex, n_bins x n_frames).

    Speaker dictionaries w1 and w2 stay frozen; activations for all parts and
    a fresh noise dictionary are learned on |x|^2. Returns the two Wiener-
    masked complex spectrograms; the three masks partition unity bin by bin.
    """
    x = np.asarray(x)
    p = _check_spectrogram(np.abs(x) ** 2)
    p = np.maximum(p, NMF_FLOOR)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.ndim != 2 or w2.ndim != 2 or w1.shape[0] != p.shape[0] \
            or w2.shape[0] != p.shape[0]:
        raise ConfigError("speaker dictionaries must be (n_bins, rank)")
    if k_noise < 1:
        raise ConfigError("k_noise must be >= 1, got %d" % k_noise)
    k1, k2 = w1.shape[1], w2.shape[1]
    n = p.shape[1]
    wb = rng.uniform(0.1, 1.1, size=(p.shape[0], k_noise))
    h_all = rng.uniform(0.1, 1.1, size=(k1 + k2 + k_noise, n))
    for _ in range(n_iters):
        h_all = _update_h(p, np.hstack([w1, w2, wb]), h_all)
        v = np.hstack([w1, w2, wb]) @ h_all
        hb = h_all[k1 + k2:]
        wb = wb * ((p * v**-2) @ hb.T) / (v**-1 @ hb.T)
        wb = np.maximum(wb, NMF_FLOOR)
    part1 = w1 @ h_all[:k1]
    part2 = w2 @ h_all[k1:k1 + k2]
    partb = wb @ h_all[k1 + k2:]
    total = part1 + part2 + partb
    return (part1 / total) * x, (part2 / total) * x
