"""Monte-Carlo EM for two-speaker separation.

The observed mixture STFT x (n_bins, n_frames) is modelled frame-wise as a
zero-mean proper complex Gaussian whose variance stacks three parts: each
speaker's decoder variance scaled by a per-frame gain, plus the NMF noise
variance W @ H. The E-step runs per-frame random-walk Metropolis chains over
both speakers' latents jointly (all randomness pre-drawn from per-frame
streams, the sweep loop delegated to the selected kernel backend); the M-step
applies multiplicative updates to H, W and the two gain tracks, each with the
1/2-power multiplier and a recomputed mixture variance.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ._kernels import run_chains
from .errors import ConfigError, DataError, NumericalError
from .nmf import NMF_FLOOR, NmfModel
from .seeding import substream
from .vae import CvaeModel, decode, visual_features

_ACT_CODES = {"tanh": 0, "relu": 1}


@dataclass
class McemConfig:
    """EM schedule, chain schedule and numerical floors.

    The first E-step runs mh_iters_per_estep sweeps discarding burn_in; later
    E-steps reuse the warm chains and run warm_mh_iters sweeps with
    warm_burn_in discarded. n_samples latent draws are retained per E-step.
    EM stops at em_iters or once the relative Q change drops below q_rtol
    (0 disables early stopping).
    """

    em_iters: int = 100
    mh_iters_per_estep: int = 40
    burn_in: int = 30
    warm_mh_iters: int = 10
    warm_burn_in: int = 0
    n_samples: int = 10
    epsilon: float = 0.01
    k_noise: int = 10
    var_floor: float = 1e-6
    q_rtol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.em_iters < 0:
            raise ConfigError("em_iters must be >= 0")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        for iters, burn, label in [
            (self.mh_iters_per_estep, self.burn_in, "first E-step"),
            (self.warm_mh_iters, self.warm_burn_in, "warm E-step"),
        ]:
            if burn < 0 or iters < 1:
                raise ConfigError("%s schedule must be positive" % label)
            if iters - burn < self.n_samples:
                raise ConfigError(
                    "%s: %d sweeps minus %d burn-in cannot yield %d samples"
                    % (label, iters, burn, self.n_samples)
                )
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if self.k_noise < 1:
            raise ConfigError("k_noise must be >= 1")
        if self.var_floor <= 0.0:
            raise ConfigError("var_floor must be positive")
        if self.q_rtol < 0.0:
            raise ConfigError("q_rtol must be >= 0")


@dataclass
class SeparationState:
    """Everything EM owns: noise factors, gains, chains and decoder caches.

    Spectrogram-like arrays are (n_bins, n_frames); chain state z1/z2 is
    (n_frames, latent); vraw/vfeat hold each speaker's conditioning per frame.
    """

    noise: NmfModel
    g1: np.ndarray
    g2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    sig1: np.ndarray
    sig2: np.ndarray
    vraw1: np.ndarray
    vraw2: np.ndarray
    vf1: np.ndarray
    vf2: np.ndarray
    pm1: np.ndarray
    pv1: np.ndarray
    pm2: np.ndarray
    pv2: np.ndarray


@dataclass
class SampleBuffer:
    """Retained E-step draws: latents (r, n_frames, latent) and the matching
    decoder variances (r, n_bins, n_frames), plus the chain acceptance rate."""

    z1: np.ndarray
    z2: np.ndarray
    sig1: np.ndarray
    sig2: np.ndarray
    acceptance_rate: float

    def __len__(self):
        return self.z1.shape[0]


def _pair(model):
    if isinstance(model, CvaeModel):
        return model, model
    m1, m2 = model
    if m1.n_bins != m2.n_bins or m1.latent_dim != m2.latent_dim:
        raise ConfigError("speaker models must share n_bins and latent_dim")
    return m1, m2


def _batched_prior(m, vf):
    (mean, var), _ = m.prior_net.forward(vf)
    # the gauss head hands out a strided view of the mean; the kernels want
    # contiguous buffers
    return np.ascontiguousarray(mean), np.ascontiguousarray(var)


def _batched_decode(m, z, vf):
    out, _ = m.decoder.forward(np.concatenate([z, vf], axis=1))
    return out


def init_state(x, v1, v2, model, cfg: McemConfig, rng) -> SeparationState:
    """Chains at the prior mean, unit gains, uniform-random noise factors."""
    m1, m2 = _pair(model)
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != m1.n_bins:
        raise DataError("mixture spectrogram shape %s does not match %d bins"
                        % (x.shape, m1.n_bins))
    n = x.shape[1]
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != (n, m1.raw_dim) or v2.shape != (n, m2.raw_dim):
        raise DataError("embeddings must be (n_frames, raw_dim) per speaker")
    vf1 = visual_features(m1, v1)
    vf2 = visual_features(m2, v2)
    pm1, pv1 = _batched_prior(m1, vf1)
    pm2, pv2 = _batched_prior(m2, vf2)
    z1 = pm1.copy()
    z2 = pm2.copy()
    sig1 = _batched_decode(m1, z1, vf1).T.copy()
    sig2 = _batched_decode(m2, z2, vf2).T.copy()
    w = rng.uniform(0.1, 1.1, size=(m1.n_bins, cfg.k_noise))
    h = rng.uniform(0.1, 1.1, size=(cfg.k_noise, n))
    return SeparationState(noise=NmfModel(w, h), g1=np.ones(n), g2=np.ones(n),
                           z1=z1, z2=z2, sig1=sig1, sig2=sig2,
                           vraw1=v1, vraw2=v2, vf1=vf1, vf2=vf2,
                           pm1=pm1, pv1=pv1, pm2=pm2, pv2=pv2)


def mixture_variance(state: SeparationState, model, n, z1, z2,
                     var_floor=1e-6) -> np.ndarray:
    """Per-bin mixture variance of frame `n` at latents (z1, z2)."""
    m1, m2 = _pair(model)
    s1 = decode(m1, z1, state.vraw1[n])
    s2 = decode(m2, z2, state.vraw2[n])
    wh = state.noise.w @ state.noise.h[:, n]
    return np.maximum(state.g1[n] * s1 + state.g2[n] * s2 + wh, var_floor)


def mixture_loglik(x_frame, vx) -> float:
    """log N_c(x; 0, diag(vx)) for one observed mixture frame."""
    x_frame = np.asarray(x_frame)
    vx = np.asarray(vx, dtype=np.float64)
    if x_frame.shape != vx.shape:
        raise ConfigError("frame and variance shapes differ: %s vs %s"
                          % (x_frame.shape, vx.shape))
    if np.any(vx <= 0.0):
        raise ConfigError("mixture variance must be positive")
    return float(np.sum(-np.log(np.pi * vx) - np.abs(x_frame) ** 2 / vx))


def _dec_arrays(m):
    return list(m.decoder.weights), list(m.decoder.biases)


def mh_sweep(state: SeparationState, model, x, cfg: McemConfig, rng, *,
             sweeps=1, burn_in=0, retain=0) -> SampleBuffer:
    """Advance every frame's chain by `sweeps` joint proposals (in place).

    After `burn_in` sweeps, evenly thinned states fill a buffer of `retain`
    samples. Per-frame randomness comes from streams spawned off `rng`, one
    per frame, each consumed as (xi1 block, xi2 block, log-u block).
    """
    m1, m2 = _pair(model)
    if sweeps < 1 or burn_in < 0 or retain < 0:
        raise ConfigError("sweeps must be >= 1, burn_in and retain >= 0")
    if sweeps - burn_in < retain:
        raise ConfigError("%d sweeps minus %d burn-in cannot yield %d samples"
                          % (sweeps, burn_in, retain))
    if m1.decoder.activation != m2.decoder.activation:
        raise ConfigError("speaker decoders must share an activation")
    n = state.z1.shape[0]
    lat = state.z1.shape[1]
    f = x.shape[0]
    x2_nm = np.ascontiguousarray((np.abs(x) ** 2).T)
    wh_nm = np.ascontiguousarray((state.noise.w @ state.noise.h).T)
    sig1_nm = np.ascontiguousarray(state.sig1.T)
    sig2_nm = np.ascontiguousarray(state.sig2.T)

    xi1 = np.empty((sweeps, n, lat))
    xi2 = np.empty((sweeps, n, lat))
    logu = np.empty((sweeps, n))
    for i, child in enumerate(rng.spawn(n)):
        xi1[:, i, :] = child.standard_normal((sweeps, lat))
        xi2[:, i, :] = child.standard_normal((sweeps, lat))
        logu[:, i] = np.log(child.random(sweeps))

    out_z1 = np.empty((retain, n, lat))
    out_z2 = np.empty((retain, n, lat))
    out_s1 = np.empty((retain, n, f))
    out_s2 = np.empty((retain, n, f))
    thin = max(1, (sweeps - burn_in) // retain) if retain else 1

    w1, b1 = _dec_arrays(m1)
    w2, b2 = _dec_arrays(m2)
    contig = np.ascontiguousarray
    n_acc, n_ret = run_chains(
        w1, b1, w2, b2, _ACT_CODES[m1.decoder.activation],
        x2_nm, wh_nm, contig(state.g1), contig(state.g2),
        contig(state.pm1), contig(state.pv1), contig(state.pm2),
        contig(state.pv2), contig(state.vf1), contig(state.vf2),
        state.z1, state.z2, sig1_nm, sig2_nm,
        xi1, xi2, logu,
        cfg.epsilon, cfg.var_floor, burn_in, thin,
        out_z1, out_z2, out_s1, out_s2,
    )
    if retain and n_ret != retain:
        raise NumericalError("kernel retained %d of %d samples" % (n_ret, retain))
    state.sig1 = sig1_nm.T
    state.sig2 = sig2_nm.T
    return SampleBuffer(z1=out_z1, z2=out_z2,
                        sig1=out_s1.transpose(0, 2, 1),
                        sig2=out_s2.transpose(0, 2, 1),
                        acceptance_rate=n_acc / float(sweeps * n))


def estep(state: SeparationState, model, x, cfg: McemConfig, rng,
          first=True) -> SampleBuffer:
    """One E-step under cfg's schedule (cold first, warm afterwards)."""
    if first:
        sweeps, burn = cfg.mh_iters_per_estep, cfg.burn_in
    else:
        sweeps, burn = cfg.warm_mh_iters, cfg.warm_burn_in
    return mh_sweep(state, model, x, cfg, rng, sweeps=sweeps, burn_in=burn,
                    retain=cfg.n_samples)


def _vx_samples(state: SeparationState, samples: SampleBuffer, var_floor):
    """Mixture variance per retained draw, (r, n_bins, n_frames)."""
    vx = (state.g1[None, None, :] * samples.sig1
          + state.g2[None, None, :] * samples.sig2
          + (state.noise.w @ state.noise.h)[None])
    return np.maximum(vx, var_floor)


def mc_q(state: SeparationState, x, samples: SampleBuffer,
         var_floor=1e-6) -> float:
    """Monte-Carlo EM objective: mean over draws of the complete-data loglik."""
    if len(samples) == 0:
        raise ConfigError("empty sample buffer")
    x2 = np.abs(np.asarray(x)) ** 2
    vx = _vx_samples(state, samples, var_floor)
    per_draw = np.sum(-np.log(np.pi * vx) - x2[None] / vx, axis=(1, 2))
    return float(np.mean(per_draw))


def mstep_h(state: SeparationState, x, samples: SampleBuffer, var_floor=1e-6):
    """Multiplicative update of the noise activations (in place)."""
    x2 = np.abs(np.asarray(x)) ** 2
    vx = _vx_samples(state, samples, var_floor)
    num = state.noise.w.T @ (x2 * np.sum(vx**-2, axis=0))
    den = state.noise.w.T @ np.sum(vx**-1, axis=0)
    state.noise.h = np.maximum(state.noise.h * (num / den) ** 0.5, NMF_FLOOR)


def mstep_w(state: SeparationState, x, samples: SampleBuffer, var_floor=1e-6):
    """Multiplicative update of the noise dictionary (in place)."""
    x2 = np.abs(np.asarray(x)) ** 2
    vx = _vx_samples(state, samples, var_floor)
    num = (x2 * np.sum(vx**-2, axis=0)) @ state.noise.h.T
    den = np.sum(vx**-1, axis=0) @ state.noise.h.T
    state.noise.w = np.maximum(state.noise.w * (num / den) ** 0.5, NMF_FLOOR)


def mstep_gains(state: SeparationState, x, samples: SampleBuffer, speaker,
                var_floor=1e-6):
    """Multiplicative update of one speaker's per-frame gains (in place)."""
    if speaker not in (1, 2):
        raise ConfigError("speaker must be 1 or 2, got %r" % (speaker,))
    x2 = np.abs(np.asarray(x)) ** 2
    vx = _vx_samples(state, samples, var_floor)
    sig = samples.sig1 if speaker == 1 else samples.sig2
    num = np.sum(np.sum(x2[None] * sig * vx**-2, axis=0), axis=0)
    den = np.sum(np.sum(sig * vx**-1, axis=0), axis=0)
    g = state.g1 if speaker == 1 else state.g2
    np.copyto(g, np.maximum(g * (num / den) ** 0.5, NMF_FLOOR))


def run_mcem(x, v1, v2, model, cfg: McemConfig, rng=None):
    """Full separation inference on mixture spectrogram `x`.

    Returns (state, last sample buffer, trace); trace rows are
    (iteration, Q, acceptance_rate). With em_iters=0 the initial state is
    returned with no samples and an empty trace.
    """
    if rng is None:
        rng = substream(cfg.seed, "mcem")
    state = init_state(x, v1, v2, model, cfg, rng)
    trace = []
    samples = None
    q_prev = None
    for it in range(cfg.em_iters):
        samples = estep(state, model, x, cfg, rng, first=(it == 0))
        mstep_h(state, x, samples, cfg.var_floor)
        mstep_w(state, x, samples, cfg.var_floor)
        mstep_gains(state, x, samples, 1, cfg.var_floor)
        mstep_gains(state, x, samples, 2, cfg.var_floor)
        q = mc_q(state, x, samples, cfg.var_floor)
        if not np.isfinite(q):
            raise NumericalError("non-finite Q at EM iteration %d" % it)
        trace.append((it, q, samples.acceptance_rate))
        if (q_prev is not None and cfg.q_rtol > 0.0
                and abs(q - q_prev) < cfg.q_rtol * abs(q_prev)):
            break
        q_prev = q
    return state, samples, np.asarray(trace).reshape(-1, 3)


def save_trace(path, trace) -> None:
    """Q trace as CSV with an iteration,q_value,acceptance_rate header."""
    trace = np.asarray(trace).reshape(-1, 3)
    lines = ["iteration,q_value,acceptance_rate"]
    for row in trace:
        lines.append("%d,%.17g,%.17g" % (int(row[0]), row[1], row[2]))
    Path(path).write_text("\n".join(lines) + "\n")


def save_mcem_config(path, cfg: McemConfig) -> None:
    """Flat key=value serialization, one field per line."""
    lines = ["%s=%r" % (f.name, getattr(cfg, f.name)) for f in fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mcem_config(path) -> McemConfig:
    """Parse a key=value file; unknown keys are an error, absent keys default."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc)) from exc
    types = {f.name: f.type for f in fields(McemConfig)}
    kwargs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected key=value" % (path, lineno))
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError("%s:%d: unknown key %r" % (path, lineno, key))
        caster = int if types[key] in ("int", int) else float
        try:
            kwargs[key] = caster(raw.strip())
        except ValueError as exc:
            raise ConfigError("%s:%d: bad value for %s: %s"
                              % (path, lineno, key, exc)) from exc
    return McemConfig(**kwargs)
