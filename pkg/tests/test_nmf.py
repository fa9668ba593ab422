import numpy as np
import pytest

from avsep.errors import ConfigError, DataError
from avsep.nmf import (
    NMF_FLOOR,
    NmfModel,
    baseline_separate,
    fit_is_nmf,
    init_factors,
    is_divergence,
    noise_variance,
)


def random_power(rng, n_bins=12, n_frames=20, rank=3):
    w = rng.uniform(0.2, 1.0, size=(n_bins, rank))
    h = rng.uniform(0.2, 1.0, size=(rank, n_frames))
    return w @ h, w, h


def test_is_divergence_frozen_values():
    # D(p||v) per bin: p/v - log(p/v) - 1; zero iff p == v
    p = np.array([[1.0, 2.0]])
    assert is_divergence(p, p) == 0.0
    # p=2, v=1: 2 - log 2 - 1 = 0.3068528194400547
    assert np.isclose(is_divergence(np.array([[2.0]]), np.array([[1.0]])),
                      0.3068528194400547, rtol=1e-12)
    # p=1, v=2: 0.5 - log 0.5 - 1 = 0.1931471805599453
    assert np.isclose(is_divergence(np.array([[1.0]]), np.array([[2.0]])),
                      0.1931471805599453, rtol=1e-12)
    # scale invariance, characteristic of IS
    rng = np.random.default_rng(0)
    p = rng.uniform(0.5, 2.0, (4, 5))
    v = rng.uniform(0.5, 2.0, (4, 5))
    assert np.isclose(is_divergence(p, v), is_divergence(10.0 * p, 10.0 * v),
                      rtol=1e-12)


def test_is_divergence_positive():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = rng.uniform(0.1, 3.0, (3, 3))
        v = rng.uniform(0.1, 3.0, (3, 3))
        assert is_divergence(p, v) >= 0.0


def test_is_divergence_input_checks():
    with pytest.raises(ConfigError):
        is_divergence(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(DataError):
        is_divergence(np.zeros((2, 2)), np.ones((2, 2)))


def test_fit_exact_factorization_fixed_point():
    # when P equals W @ H exactly the multipliers are 1 up to rounding, so one
    # update moves the factors by at most a few ulp
    rng = np.random.default_rng(2)
    p, w0, h0 = random_power(rng)

    from avsep.nmf import _update_h, _update_w

    h1 = _update_h(p, w0, h0)
    assert np.allclose(h1, h0, rtol=1e-12, atol=0.0)
    w1 = _update_w(p, w0, h1)
    assert np.allclose(w1, w0, rtol=1e-12, atol=0.0)


def test_fit_divergence_non_increasing():
    rng = np.random.default_rng(3)
    for trial in range(5):
        p = rng.uniform(0.05, 2.0, size=(10, 15))
        _, trace = fit_is_nmf(p, 3, 100, np.random.default_rng(100 + trial),
                              return_trace=True)
        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-9 * np.maximum(1.0, np.abs(trace[:-1])))


def test_fit_recovers_low_rank():
    rng = np.random.default_rng(4)
    p, _, _ = random_power(rng, rank=2)
    model = fit_is_nmf(p, 2, 500, np.random.default_rng(5))
    final = is_divergence(p, noise_variance(model))
    assert final < 1e-3 * p.size


def test_factors_respect_floor():
    rng = np.random.default_rng(6)
    # spectrogram with a silent region pushes activations toward zero
    p = np.full((8, 10), 1e-8)
    p[:, :5] = rng.uniform(0.5, 1.0, size=(8, 5))
    model = fit_is_nmf(p, 2, 200, np.random.default_rng(7))
    assert np.all(model.w >= NMF_FLOOR)
    assert np.all(model.h >= NMF_FLOOR)


def test_fit_is_deterministic():
    rng_p = np.random.default_rng(8)
    p = rng_p.uniform(0.1, 1.0, size=(6, 9))
    a = fit_is_nmf(p, 2, 50, np.random.default_rng(9))
    b = fit_is_nmf(p, 2, 50, np.random.default_rng(9))
    assert np.array_equal(a.w, b.w)
    assert np.array_equal(a.h, b.h)


def test_init_factors_range():
    w, h = init_factors(5, 3, 7, np.random.default_rng(10))
    assert w.shape == (5, 3) and h.shape == (3, 7)
    for arr in (w, h):
        assert np.all(arr >= 0.1) and np.all(arr <= 1.1)


def test_noise_variance_frame_vs_full():
    rng = np.random.default_rng(11)
    _, w, h = random_power(rng)
    m = NmfModel(w, h)
    full = noise_variance(m)
    assert full.shape == (12, 20)
    assert np.allclose(noise_variance(m, 4), full[:, 4])


def test_model_validation():
    with pytest.raises(ConfigError):
        NmfModel(np.ones((4, 2)), np.ones((3, 5)))
    with pytest.raises(ConfigError):
        NmfModel(np.zeros((4, 2)), np.ones((2, 5)))


def test_fit_input_checks():
    rng = np.random.default_rng(12)
    with pytest.raises(DataError):
        fit_is_nmf(np.zeros((4, 4)), 2, 10, rng)
    with pytest.raises(DataError):
        fit_is_nmf(-np.ones((4, 4)), 2, 10, rng)
    with pytest.raises(ConfigError):
        fit_is_nmf(np.ones((4, 4)), 0, 10, rng)


def test_baseline_masks_partition_unity():
    rng = np.random.default_rng(13)
    x = (rng.standard_normal((10, 16)) + 1j * rng.standard_normal((10, 16)))
    w1 = rng.uniform(0.2, 1.0, (10, 3))
    w2 = rng.uniform(0.2, 1.0, (10, 3))
    s1, s2 = baseline_separate(x, w1, w2, 2, 30, np.random.default_rng(14))
    assert s1.shape == x.shape and s2.shape == x.shape
    # the two speaker masks plus the implicit noise mask cover every bin
    m1 = np.where(x != 0, s1 / x, 0.0)
    m2 = np.where(x != 0, s2 / x, 0.0)
    assert np.all(m1.real >= -1e-12) and np.all(m1.real <= 1.0 + 1e-12)
    assert np.all(np.abs(m1.imag) < 1e-12)
    assert np.all(m1.real + m2.real <= 1.0 + 1e-12)


def test_baseline_assigns_energy_by_dictionary():
    # mixture whose low band matches speaker 1's dictionary and high band
    # speaker 2's: most of each band's energy must land on the right output
    rng = np.random.default_rng(15)
    n_bins, n_frames = 12, 30
    w1 = np.full((n_bins, 2), 1e-3)
    w2 = np.full((n_bins, 2), 1e-3)
    w1[:6] = rng.uniform(0.5, 1.0, (6, 2))
    w2[6:] = rng.uniform(0.5, 1.0, (6, 2))
    x = np.zeros((n_bins, n_frames), dtype=complex)
    phase = np.exp(2j * np.pi * rng.uniform(size=(n_bins, n_frames)))
    x[:6] = rng.uniform(0.5, 1.0, (6, n_frames)) * phase[:6]
    x[6:] = rng.uniform(0.5, 1.0, (6, n_frames)) * phase[6:]
    s1, s2 = baseline_separate(x, w1, w2, 1, 50, np.random.default_rng(16))
    e1_low = np.sum(np.abs(s1[:6]) ** 2)
    e2_low = np.sum(np.abs(s2[:6]) ** 2)
    e1_high = np.sum(np.abs(s1[6:]) ** 2)
    e2_high = np.sum(np.abs(s2[6:]) ** 2)
    assert e1_low > 10.0 * e2_low
    assert e2_high > 10.0 * e1_high


def test_baseline_input_checks():
    rng = np.random.default_rng(17)
    x = np.ones((5, 5), dtype=complex)
    with pytest.raises(ConfigError):
        baseline_separate(x, np.ones((4, 2)), np.ones((5, 2)), 1, 5, rng)
    with pytest.raises(ConfigError):
        baseline_separate(x, np.ones((5, 2)), np.ones((5, 2)), 0, 5, rng)
