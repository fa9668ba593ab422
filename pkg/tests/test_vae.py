import numpy as np
import pytest

from avsep.errors import ConfigError, DataError
from avsep.nets import flatten_grads
from avsep.seeding import substream
from avsep.vae import (
    CvaeModel,
    FrameTriples,
    GaussDiag,
    TrainConfig,
    decode,
    encode,
    finetune_decoder,
    grad,
    kl_gauss_diag,
    load_checkpoint,
    loss,
    new_model,
    prior,
    recon_loglik,
    reparam_sample,
    save_checkpoint,
    train,
    visual_features,
)

TOY = dict(n_bins=9, latent_dim=3, feat_dim=2, raw_dim=4, hidden=5)


def toy_model(seed=0, var_floor=1e-9):
    return new_model(seed=seed, var_floor=var_floor, **TOY)


def toy_batch(rng, t=32):
    s = rng.uniform(0.1, 2.0, size=(t, TOY["n_bins"]))
    x = s + rng.uniform(0.05, 0.5, size=(t, TOY["n_bins"]))
    v = rng.standard_normal((t, TOY["raw_dim"]))
    return FrameTriples(x, s, v)


def test_kl_frozen_values():
    # KL(N(1,1) || N(0,1)) = 1/2
    q = GaussDiag(np.array([1.0]), np.array([1.0]))
    p = GaussDiag(np.array([0.0]), np.array([1.0]))
    assert np.isclose(kl_gauss_diag(q, p), 0.5, rtol=1e-12)
    # KL(N(0,4) || N(0,1)) = (4 - log 4 - 1) / 2
    q = GaussDiag(np.array([0.0]), np.array([4.0]))
    assert np.isclose(kl_gauss_diag(q, p), 0.8068528194400547, rtol=1e-12)
    # identical distributions
    q = GaussDiag(np.array([0.3, -1.0]), np.array([2.0, 0.5]))
    assert kl_gauss_diag(q, q) == 0.0
    # sums over coordinates
    q = GaussDiag(np.array([1.0, 0.0]), np.array([1.0, 4.0]))
    p = GaussDiag(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert np.isclose(kl_gauss_diag(q, p), 0.5 + 0.8068528194400547, rtol=1e-12)


def test_kl_positive_and_monte_carlo():
    rng = np.random.default_rng(20)
    for _ in range(5):
        q = GaussDiag(rng.standard_normal(3), rng.uniform(0.3, 3.0, 3))
        p = GaussDiag(rng.standard_normal(3), rng.uniform(0.3, 3.0, 3))
        closed = kl_gauss_diag(q, p)
        assert closed >= 0.0
        z = q.mean + np.sqrt(q.var) * rng.standard_normal((200_000, 3))
        log_q = np.sum(-0.5 * np.log(2 * np.pi * q.var)
                       - (z - q.mean) ** 2 / (2 * q.var), axis=1)
        log_p = np.sum(-0.5 * np.log(2 * np.pi * p.var)
                       - (z - p.mean) ** 2 / (2 * p.var), axis=1)
        mc = np.mean(log_q - log_p)
        se = np.std(log_q - log_p) / np.sqrt(len(z))
        assert abs(closed - mc) < 5.0 * se + 1e-4


def test_recon_loglik_frozen_values():
    # single bin, var 1, power 0: -log(pi)
    assert np.isclose(recon_loglik(np.array([0.0]), np.array([1.0])),
                      -1.1447298858494002, rtol=1e-12)
    # var 2, power 4: -log(2 pi) - 2
    assert np.isclose(recon_loglik(np.array([4.0]), np.array([2.0])),
                      -3.8378770664093453, rtol=1e-12)
    # additivity over bins
    both = recon_loglik(np.array([0.0, 4.0]), np.array([1.0, 2.0]))
    assert np.isclose(both, -1.1447298858494002 - 3.8378770664093453, rtol=1e-12)


def test_recon_loglik_peaks_at_true_variance():
    # for fixed power p, the per-bin loglik is maximized at var = p
    p = np.array([2.5])
    best = recon_loglik(p, p)
    for v in [1.0, 2.0, 3.0, 10.0]:
        assert recon_loglik(p, np.array([v])) < best


def test_loss_alpha_one_is_negative_elbo():
    m = toy_model(1)
    rng = np.random.default_rng(21)
    x = rng.uniform(0.1, 1.0, TOY["n_bins"])
    s = rng.uniform(0.1, 1.0, TOY["n_bins"])
    v = rng.standard_normal(TOY["raw_dim"])
    value = loss(m, x, s, v, 1.0, substream(99, "draw"))
    # replay the same draws by hand: eps_q first, then eps_p
    rng2 = substream(99, "draw")
    eps_q = rng2.standard_normal((1, TOY["latent_dim"]))
    rng2.standard_normal((1, TOY["latent_dim"]))  # eps_p, unused at alpha=1
    q = encode(m, x, v)
    z_q = q.mean + np.sqrt(q.var) * eps_q[0]
    expected = -recon_loglik(s, decode(m, z_q, v)) + kl_gauss_diag(q, prior(m, v))
    assert np.isclose(value, expected, rtol=1e-12)


def test_loss_alpha_zero_is_prior_reconstruction():
    m = toy_model(2)
    rng = np.random.default_rng(22)
    x = rng.uniform(0.1, 1.0, TOY["n_bins"])
    s = rng.uniform(0.1, 1.0, TOY["n_bins"])
    v = rng.standard_normal(TOY["raw_dim"])
    value = loss(m, x, s, v, 0.0, substream(98, "draw"))
    rng2 = substream(98, "draw")
    rng2.standard_normal((1, TOY["latent_dim"]))  # eps_q, unused at alpha=0
    eps_p = rng2.standard_normal((1, TOY["latent_dim"]))
    p = prior(m, v)
    z_p = p.mean + np.sqrt(p.var) * eps_p[0]
    expected = -recon_loglik(s, decode(m, z_p, v))
    assert np.isclose(value, expected, rtol=1e-12)


def test_grad_matches_finite_differences():
    m = toy_model(3)
    data = toy_batch(np.random.default_rng(23), t=4)
    alpha = 0.9
    h = 1e-5

    def loss_at(seed=77):
        return grad(m, data, alpha, substream(seed, "fd"))[0]

    _, grads = grad(m, data, alpha, substream(77, "fd"))
    for name in ("frontend", "encoder", "prior_net", "decoder"):
        net = getattr(m, name)
        ana = flatten_grads(grads[name])
        for p, a in zip(net.params(), ana):
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                hi = loss_at()
                p[idx] = orig - h
                lo = loss_at()
                p[idx] = orig
                fd = (hi - lo) / (2.0 * h)
                denom = max(abs(a[idx]), abs(fd), 1e-6)
                assert abs(a[idx] - fd) / denom < 1e-4, (name, idx)
                it.iternext()


def test_grad_alpha_zero_leaves_encoder_untouched():
    m = toy_model(4)
    data = toy_batch(np.random.default_rng(24), t=8)
    _, grads = grad(m, data, 0.0, substream(0, "g"))
    for dw, db in grads["encoder"]:
        assert np.all(dw == 0.0)
        assert np.all(db == 0.0)
    # decoder still learns from prior draws
    assert any(np.any(dw != 0.0) for dw, _ in grads["decoder"])


def test_train_reduces_loss_and_is_deterministic():
    m = toy_model(5)
    data = toy_batch(np.random.default_rng(25), t=200)
    cfg = TrainConfig(epochs=25, batch_size=32, lr=5e-3, alpha=0.9, seed=42)
    before = [p.copy() for p in m.decoder.params()]
    m1, trace1 = train(m, data, cfg)
    m2, trace2 = train(m, data, cfg)
    assert trace1[-1] < trace1[0]
    assert np.array_equal(trace1, trace2)
    for p1, p2 in zip(m1.encoder.params(), m2.encoder.params()):
        assert np.array_equal(p1, p2)
    # the input model was not mutated
    for p, b in zip(m.decoder.params(), before):
        assert np.array_equal(p, b)


def test_finetune_touches_only_decoder():
    m = toy_model(6)
    data = toy_batch(np.random.default_rng(26), t=64)
    cfg = TrainConfig(epochs=1, batch_size=16, lr=1e-2, alpha=0.9, seed=7)
    tuned = finetune_decoder(m, data, cfg)
    for name in ("frontend", "encoder", "prior_net"):
        for p, q in zip(getattr(m, name).params(), getattr(tuned, name).params()):
            assert np.array_equal(p, q)
    changed = any(not np.array_equal(p, q)
                  for p, q in zip(m.decoder.params(), tuned.decoder.params()))
    assert changed


def test_finetune_zero_epochs_is_identity():
    m = toy_model(7)
    data = toy_batch(np.random.default_rng(27), t=16)
    cfg = TrainConfig(epochs=0, batch_size=8, seed=0)
    tuned = finetune_decoder(m, data, cfg)
    for name in ("frontend", "encoder", "prior_net", "decoder"):
        for p, q in zip(getattr(m, name).params(), getattr(tuned, name).params()):
            assert np.array_equal(p, q)


def test_checkpoint_round_trip(tmp_path):
    m = toy_model(8)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, m, meta={"epochs": 3, "alpha": 0.9})
    back, meta = load_checkpoint(path)
    assert meta == {"epochs": 3, "alpha": 0.9}
    assert (back.n_bins, back.latent_dim, back.feat_dim, back.raw_dim) == (
        TOY["n_bins"], TOY["latent_dim"], TOY["feat_dim"], TOY["raw_dim"])
    for name in ("frontend", "encoder", "prior_net", "decoder"):
        a, b = getattr(m, name), getattr(back, name)
        assert a.dims == b.dims
        assert a.head == b.head
        for p, q in zip(a.params(), b.params()):
            assert np.array_equal(p, q)
    # behavioural equality
    rng = np.random.default_rng(28)
    v = rng.standard_normal(TOY["raw_dim"])
    z = rng.standard_normal(TOY["latent_dim"])
    assert np.array_equal(decode(m, z, v), decode(back, z, v))


def test_checkpoint_without_meta(tmp_path):
    m = toy_model(9)
    path = tmp_path / "bare.ckpt"
    save_checkpoint(path, m)
    _, meta = load_checkpoint(path)
    assert meta is None


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"AVSC" + b"\x00" * 40)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_encode_rejects_negative_power():
    m = toy_model(10)
    bad = -np.ones(TOY["n_bins"])
    with pytest.raises(DataError):
        encode(m, bad, np.zeros(TOY["raw_dim"]))


def test_shape_validation():
    m = toy_model(11)
    with pytest.raises(ConfigError):
        decode(m, np.zeros(TOY["latent_dim"] + 1), np.zeros(TOY["raw_dim"]))
    with pytest.raises(ConfigError):
        prior(m, np.zeros(TOY["raw_dim"] + 2))
    with pytest.raises(ConfigError):
        loss(m, np.zeros(TOY["n_bins"]), np.zeros(TOY["n_bins"]),
             np.zeros(TOY["raw_dim"]), 1.5, np.random.default_rng(0))


def test_decode_positive_and_batched():
    m = toy_model(12)
    rng = np.random.default_rng(29)
    v = rng.standard_normal(TOY["raw_dim"])
    z = rng.standard_normal((5, TOY["latent_dim"]))
    out = decode(m, z, v)
    assert out.shape == (5, TOY["n_bins"])
    assert np.all(out >= m.var_floor)
    single = decode(m, z[2], v)
    assert np.allclose(single, out[2])


def test_visual_features_batch_consistency():
    m = toy_model(13)
    rng = np.random.default_rng(30)
    v = rng.standard_normal((6, TOY["raw_dim"]))
    batch = visual_features(m, v)
    assert batch.shape == (6, TOY["feat_dim"])
    for i in range(6):
        assert np.allclose(visual_features(m, v[i]), batch[i])


def test_reparam_sample_statistics():
    g = GaussDiag(np.array([1.0, -2.0]), np.array([4.0, 0.25]))
    rng = np.random.default_rng(31)
    draws = np.stack([reparam_sample(g, rng) for _ in range(20000)])
    assert np.allclose(draws.mean(axis=0), g.mean, atol=0.05)
    assert np.allclose(draws.var(axis=0), g.var, rtol=0.05)


def test_triples_validation():
    with pytest.raises(ConfigError):
        FrameTriples(np.zeros((3, 4)), np.zeros((2, 4)), np.zeros((3, 2)))
    with pytest.raises(DataError):
        FrameTriples(-np.ones((3, 4)), np.zeros((3, 4)), np.zeros((3, 2)))
