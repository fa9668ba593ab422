"""Conditional variational model of clean-speech spectrogram variance.

Four dense nets share a visual front end: raw per-frame embeddings v (R^raw)
map to features (R^feat); the encoder reads a mixture power frame plus the
features and returns q(z|x,v); the prior net returns p(z|v); the decoder maps
(z, features) to the per-bin variance of a zero-mean proper complex Gaussian
over the clean-speech STFT frame.

The training objective per frame is

    -alpha * E_q[log p(s|z,v)] - (1-alpha) * E_p[log p(s|z,v)] + alpha * KL(q||p)

minimized over all nets; alpha=1 recovers the standard negative ELBO, alpha<1
mixes in reconstruction from prior draws so the decoder stays usable when only
v (not the clean frame) is available at test time.
"""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import MAGIC_CHECKPOINT, read_arrays, write_arrays
from .errors import ConfigError, DataError
from .nets import Adam, DenseNet, add_grads, flatten_grads
from .seeding import substream

_HEAD_CODES = {"plain": 0, "logvar": 1, "gauss": 2}
_ACT_CODES = {"tanh": 0, "relu": 1}
_NET_ORDER = ("frontend", "encoder", "prior_net", "decoder")


@dataclass
class GaussDiag:
    """Diagonal Gaussian: mean and per-coordinate variance, same shape."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ConfigError(
                "mean/var shapes differ: %s vs %s" % (self.mean.shape, self.var.shape)
            )
        if np.any(self.var <= 0.0):
            raise ConfigError("variances must be positive")


@dataclass
class CvaeModel:
    """The four nets plus the sizes they were built for."""

    frontend: DenseNet    # raw_dim -> feat_dim
    encoder: DenseNet     # n_bins + feat_dim -> gauss over latent_dim
    prior_net: DenseNet   # feat_dim -> gauss over latent_dim
    decoder: DenseNet     # latent_dim + feat_dim -> variances over n_bins
    n_bins: int
    latent_dim: int
    feat_dim: int
    raw_dim: int
    var_floor: float = 1e-6


@dataclass
class TrainConfig:
    epochs: int = 45
    batch_size: int = 256
    lr: float = 1e-4
    alpha: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0, got %d" % self.epochs)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1, got %d" % self.batch_size)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1], got %g" % self.alpha)
        if self.lr <= 0.0:
            raise ConfigError("lr must be positive, got %g" % self.lr)


@dataclass
class FrameTriples:
    """Aligned per-frame training data: mixture power, clean power, embedding."""

    mix_power: np.ndarray    # (T, n_bins)
    clean_power: np.ndarray  # (T, n_bins)
    embeddings: np.ndarray   # (T, raw_dim)

    def __post_init__(self):
        self.mix_power = np.asarray(self.mix_power, dtype=np.float64)
        self.clean_power = np.asarray(self.clean_power, dtype=np.float64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        t = self.mix_power.shape[0]
        if (self.mix_power.ndim != 2 or self.clean_power.shape[0] != t
                or self.embeddings.shape[0] != t):
            raise ConfigError("triple arrays must share their first dimension")
        if np.any(self.mix_power < 0.0) or np.any(self.clean_power < 0.0):
            raise DataError("power frames must be non-negative")

    def __len__(self):
        return self.mix_power.shape[0]

    def subset(self, idx):
        return FrameTriples(self.mix_power[idx], self.clean_power[idx],
                            self.embeddings[idx])


def new_model(n_bins, latent_dim=16, feat_dim=8, raw_dim=16, hidden=64, *,
              seed, var_floor=1e-6) -> CvaeModel:
    """Fresh model with independently seeded per-net init streams."""
    if min(n_bins, latent_dim, feat_dim, raw_dim, hidden) < 1:
        raise ConfigError("all model sizes must be >= 1")
    nets = {}
    specs = {
        "frontend": ((raw_dim, hidden, feat_dim), "plain"),
        "encoder": ((n_bins + feat_dim, hidden, latent_dim), "gauss"),
        "prior_net": ((feat_dim, hidden, latent_dim), "gauss"),
        "decoder": ((latent_dim + feat_dim, hidden, n_bins), "logvar"),
    }
    for name, (dims, head) in specs.items():
        nets[name] = DenseNet.create(dims, head, substream(seed, "init", name),
                                     var_floor=var_floor)
    return CvaeModel(n_bins=n_bins, latent_dim=latent_dim, feat_dim=feat_dim,
                     raw_dim=raw_dim, var_floor=var_floor, **nets)


def _rows(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ConfigError("%s must have %d columns, got shape %s"
                          % (what, width, x.shape))
    return x


def visual_features(m: CvaeModel, v) -> np.ndarray:
    """Front-end features for raw embeddings `v` ((raw_dim,) or (B, raw_dim))."""
    v2 = _rows(v, m.raw_dim, "embedding")
    out, _ = m.frontend.forward(v2)
    return out[0] if np.asarray(v).ndim == 1 else out


def decode(m: CvaeModel, z, v) -> np.ndarray:
    """Clean-speech variance sigma(z, v) per bin, shape (n_bins,) or (B, n_bins)."""
    single = np.asarray(z).ndim == 1
    z2 = _rows(z, m.latent_dim, "latent")
    vf = _rows(visual_features(m, v), m.feat_dim, "features")
    if vf.shape[0] == 1 and z2.shape[0] > 1:
        vf = np.broadcast_to(vf, (z2.shape[0], m.feat_dim))
    out, _ = m.decoder.forward(np.concatenate([z2, vf], axis=1))
    return out[0] if single else out


def encode(m: CvaeModel, x_power, v) -> GaussDiag:
    """Posterior q(z | mixture power frame, v)."""
    x2 = _rows(x_power, m.n_bins, "power frame")
    if np.any(x2 < 0.0):
        raise DataError("power frame must be non-negative")
    vf = m.frontend.forward(_rows(v, m.raw_dim, "embedding"))[0]
    (mean, var), _ = m.encoder.forward(np.concatenate([x2, vf], axis=1))
    if np.asarray(x_power).ndim == 1:
        return GaussDiag(mean[0], var[0])
    return GaussDiag(mean, var)


def prior(m: CvaeModel, v) -> GaussDiag:
    """Conditional prior p(z | v)."""
    single = np.asarray(v).ndim == 1
    vf = m.frontend.forward(_rows(v, m.raw_dim, "embedding"))[0]
    (mean, var), _ = m.prior_net.forward(vf)
    return GaussDiag(mean[0], var[0]) if single else GaussDiag(mean, var)


def reparam_sample(g: GaussDiag, rng) -> np.ndarray:
    """One reparameterized draw z = mean + sqrt(var) * eps."""
    return g.mean + np.sqrt(g.var) * rng.standard_normal(g.mean.shape)


def kl_gauss_diag(q: GaussDiag, p: GaussDiag):
    """KL(q || p) between diagonal Gaussians; scalar, or (B,) for batches."""
    if q.mean.shape != p.mean.shape:
        raise ConfigError("KL requires matching shapes, got %s vs %s"
                          % (q.mean.shape, p.mean.shape))
    terms = (np.log(p.var / q.var) + (q.var + (q.mean - p.mean) ** 2) / p.var
             - 1.0)
    return 0.5 * np.sum(terms, axis=-1)


def recon_loglik(s_power, var):
    """log N_c(s; 0, diag(var)) evaluated through the power frame.

    Sum over bins of -log(pi * var) - s_power / var; scalar or (B,).
    """
    s_power = np.asarray(s_power, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0.0):
        raise ConfigError("variances must be positive")
    return np.sum(-np.log(np.pi * var) - s_power / var, axis=-1)


def _loss_core(m: CvaeModel, x, s, v, alpha, eps_q, eps_p, with_grads):
    """Batched loss forward (and backward when with_grads).

    Returns (mean loss, grads-by-net or None). The noise draws eps_q/eps_p are
    (B, latent_dim) standard normals supplied by the caller.
    """
    batch = x.shape[0]
    lat = m.latent_dim
    vf, c_f = m.frontend.forward(v)
    (mq, vq), c_e = m.encoder.forward(np.concatenate([x, vf], axis=1))
    (mp, vp), c_p = m.prior_net.forward(vf)
    zq = mq + np.sqrt(vq) * eps_q
    zp = mp + np.sqrt(vp) * eps_p
    sq, c_dq = m.decoder.forward(np.concatenate([zq, vf], axis=1))
    sp, c_dp = m.decoder.forward(np.concatenate([zp, vf], axis=1))
    ll_q = np.sum(-np.log(np.pi * sq) - s / sq, axis=1)
    ll_p = np.sum(-np.log(np.pi * sp) - s / sp, axis=1)
    delta2 = (mq - mp) ** 2
    kl = 0.5 * np.sum(np.log(vp / vq) + (vq + delta2) / vp - 1.0, axis=1)
    loss = float(np.mean(-alpha * ll_q - (1.0 - alpha) * ll_p + alpha * kl))
    if not with_grads:
        return loss, None

    c = 1.0 / batch
    d_sq = (-alpha * c) * (-1.0 / sq + s / sq**2)
    d_sp = (-(1.0 - alpha) * c) * (-1.0 / sp + s / sp**2)
    d_in_q, g_dec_q = m.decoder.backward(c_dq, d_sq)
    d_in_p, g_dec_p = m.decoder.backward(c_dp, d_sp)
    g_dec = add_grads(g_dec_q, g_dec_p)
    d_zq, d_vf = d_in_q[:, :lat], d_in_q[:, lat:].copy()
    d_zp = d_in_p[:, :lat]
    d_vf += d_in_p[:, lat:]

    d_kl = alpha * c
    d_mq = d_zq + d_kl * (mq - mp) / vp
    d_vq = d_zq * eps_q / (2.0 * np.sqrt(vq)) + d_kl * 0.5 * (1.0 / vp - 1.0 / vq)
    d_mp = d_zp - d_kl * (mq - mp) / vp
    d_vp = (d_zp * eps_p / (2.0 * np.sqrt(vp))
            + d_kl * 0.5 * (1.0 / vp - (vq + delta2) / vp**2))

    d_enc_in, g_enc = m.encoder.backward(c_e, (d_mq, d_vq))
    d_vf += d_enc_in[:, m.n_bins:]
    d_pri_in, g_pri = m.prior_net.backward(c_p, (d_mp, d_vp))
    d_vf += d_pri_in
    _, g_front = m.frontend.backward(c_f, d_vf)
    grads = {"frontend": g_front, "encoder": g_enc, "prior_net": g_pri,
             "decoder": g_dec}
    return loss, grads


def _draws(m, batch, rng):
    eps_q = rng.standard_normal((batch, m.latent_dim))
    eps_p = rng.standard_normal((batch, m.latent_dim))
    return eps_q, eps_p


def loss(m: CvaeModel, mix_frame, clean_frame, v, alpha, rng) -> float:
    """Single-frame training loss with one q-draw and one p-draw."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1], got %g" % alpha)
    x = _rows(mix_frame, m.n_bins, "mixture frame")
    s = _rows(clean_frame, m.n_bins, "clean frame")
    v2 = _rows(v, m.raw_dim, "embedding")
    eps_q, eps_p = _draws(m, x.shape[0], rng)
    value, _ = _loss_core(m, x, s, v2, alpha, eps_q, eps_p, with_grads=False)
    return value


def grad(m: CvaeModel, batch: FrameTriples, alpha, rng):
    """(mean loss, grads) over a batch; grads is {net name: [(dW, db), ...]}."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1], got %g" % alpha)
    if len(batch) == 0:
        raise ConfigError("empty batch")
    eps_q, eps_p = _draws(m, len(batch), rng)
    return _loss_core(m, batch.mix_power, batch.clean_power, batch.embeddings,
                      alpha, eps_q, eps_p, with_grads=True)


def _flat_grads(grads, names):
    out = []
    for name in names:
        out.extend(flatten_grads(grads[name]))
    return out


def _epoch(model, data, cfg, opt, names, rng):
    order = rng.permutation(len(data))
    total, seen = 0.0, 0
    for start in range(0, len(data), cfg.batch_size):
        batch = data.subset(order[start:start + cfg.batch_size])
        eps_q, eps_p = _draws(model, len(batch), rng)
        value, grads = _loss_core(model, batch.mix_power, batch.clean_power,
                                  batch.embeddings, cfg.alpha, eps_q, eps_p,
                                  with_grads=True)
        opt.step(_flat_grads(grads, names))
        total += value * len(batch)
        seen += len(batch)
    return total / seen


def train(m: CvaeModel, data: FrameTriples, cfg: TrainConfig):
    """Train all four nets; returns (trained model, per-epoch mean loss trace).

    The input model is left untouched; the same (model, data, cfg) always
    produces the same result.
    """
    if len(data) == 0:
        raise ConfigError("empty training set")
    model = copy.deepcopy(m)
    rng = substream(cfg.seed, "train")
    params = []
    for name in _NET_ORDER:
        params.extend(getattr(model, name).params())
    opt = Adam(params, lr=cfg.lr)
    trace = []
    for _ in range(cfg.epochs):
        trace.append(_epoch(model, data, cfg, opt, _NET_ORDER, rng))
    return model, np.asarray(trace)


def finetune_decoder(m: CvaeModel, data: FrameTriples, cfg: TrainConfig):
    """Speaker adaptation: update only the decoder, all else frozen.

    With cfg.epochs == 0 the returned model equals the input.
    """
    if len(data) == 0:
        raise ConfigError("empty adaptation set")
    model = copy.deepcopy(m)
    rng = substream(cfg.seed, "finetune")
    opt = Adam(model.decoder.params(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        _epoch(model, data, cfg, opt, ("decoder",), rng)
    return model


def _net_header(net: DenseNet):
    return np.array([_HEAD_CODES[net.head], _ACT_CODES[net.activation],
                     net.var_floor, float(len(net.dims)), *net.dims])


def save_checkpoint(path, m: CvaeModel, meta: dict | None = None) -> None:
    """Write the model to `path`; optional `meta` goes to a JSON sidecar."""
    arrays = [np.array([m.n_bins, m.latent_dim, m.feat_dim, m.raw_dim,
                        m.var_floor], dtype=np.float64)]
    for name in _NET_ORDER:
        net = getattr(m, name)
        arrays.append(_net_header(net))
        arrays.extend(net.params())
    write_arrays(path, MAGIC_CHECKPOINT, arrays)
    if meta is not None:
        sidecar = Path(str(path) + ".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (model, meta-or-None)."""
    arrays = read_arrays(path, MAGIC_CHECKPOINT)
    if not arrays or arrays[0].shape != (5,):
        raise DataError("%s: malformed checkpoint header" % path)
    n_bins, latent_dim, feat_dim, raw_dim = (int(x) for x in arrays[0][:4])
    var_floor = float(arrays[0][4])
    heads = {v: k for k, v in _HEAD_CODES.items()}
    acts = {v: k for k, v in _ACT_CODES.items()}
    nets = {}
    pos = 1
    try:
        for name in _NET_ORDER:
            header = arrays[pos]
            pos += 1
            head = heads[int(header[0])]
            activation = acts[int(header[1])]
            floor = float(header[2])
            n_dims = int(header[3])
            dims = tuple(int(d) for d in header[4:4 + n_dims])
            n_layers = n_dims - 1
            weights, biases = [], []
            for _ in range(n_layers):
                weights.append(arrays[pos])
                biases.append(arrays[pos + 1])
                pos += 2
            nets[name] = DenseNet(dims=dims, head=head, weights=weights,
                                  biases=biases, activation=activation,
                                  var_floor=floor)
    except (IndexError, KeyError) as exc:
        raise DataError("%s: malformed checkpoint body" % path) from exc
    if pos != len(arrays):
        raise DataError("%s: %d unexpected trailing arrays" % (path, len(arrays) - pos))
    model = CvaeModel(n_bins=n_bins, latent_dim=latent_dim, feat_dim=feat_dim,
                      raw_dim=raw_dim, var_floor=var_floor, **nets)
    sidecar = Path(str(path) + ".json")
    meta = None
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError("cannot read %s: %s" % (sidecar, exc)) from exc
    return model, meta
