import numpy as np
import pytest

from conftest import rel_err

from nsexit.loss import (LossConfig, SilentClipError, compressed_spectral_loss,
                         joint_loss, normalize_by_target_std, target_std)


def _rand_spec(rng, shape=(4, 6)):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_identical_spectra_zero_loss(rng):
    s = _rand_spec(rng)
    value, grad = compressed_spectral_loss(s, s.copy())
    assert value == 0.0
    assert np.allclose(grad, 0.0)


def test_single_bin_zero_estimate():
    s = np.array([[1.0 + 0.0j]])
    value, _ = compressed_spectral_loss(s, np.zeros_like(s))
    # both terms hit 1 up to the magnitude floor's (1e-12)^0.3 offset
    assert abs(value - 1.0) < 1e-3


def test_single_bin_pure_phase_error():
    s = np.array([[1.0 + 0.0j]])
    value, _ = compressed_spectral_loss(s, -s)
    assert np.isclose(value, 1.2)  # 0.3 * |1-(-1)|^2 + 0.7 * 0


def test_alpha_extremes(rng):
    s = _rand_spec(rng)
    e = _rand_spec(rng)
    c = 0.3
    comp = lambda x: np.abs(x) ** c * np.exp(1j * np.angle(x))
    complex_mse = float(np.mean(np.abs(comp(s) - comp(e)) ** 2))
    mag_mse = float(np.mean((np.abs(s) ** c - np.abs(e) ** c) ** 2))
    v1, _ = compressed_spectral_loss(s, e, LossConfig(alpha=1.0))
    v0, _ = compressed_spectral_loss(s, e, LossConfig(alpha=0.0))
    assert np.isclose(v1, complex_mse)
    assert np.isclose(v0, mag_mse)


def test_loss_nonnegative(rng):
    for _ in range(20):
        v, _ = compressed_spectral_loss(_rand_spec(rng), _rand_spec(rng))
        assert v >= 0.0


def test_gradient_matches_finite_differences(rng):
    cfg = LossConfig()
    for _ in range(20):
        s = _rand_spec(rng)
        e = _rand_spec(rng)
        _, grad = compressed_spectral_loss(s, e, cfg)
        eps = 1e-6
        fd = np.zeros_like(grad)
        for part, setter in ((fd.real, "real"), (fd.imag, "imag")):
            for i in range(s.shape[0]):
                for j in range(s.shape[1]):
                    bump = eps if setter == "real" else 1j * eps
                    up, _ = compressed_spectral_loss(s, _bumped(e, i, j, bump))
                    dn, _ = compressed_spectral_loss(s, _bumped(e, i, j, -bump))
                    part[i, j] = (up - dn) / (2 * eps)
        assert rel_err(np.concatenate([grad.real.ravel(), grad.imag.ravel()]),
                       np.concatenate([fd.real.ravel(), fd.imag.ravel()])) < 1e-4


def _bumped(e, i, j, delta):
    out = e.copy()
    out[i, j] += delta
    return out


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        compressed_spectral_loss(np.zeros((2, 3), complex), np.zeros((3, 2), complex))


def test_scale_associativity(rng):
    # dividing both inputs by the same constant == evaluating pre-divided inputs
    s = _rand_spec(rng)
    e = _rand_spec(rng)
    k = 3.7
    v1, _ = compressed_spectral_loss(s / k, e / k)
    v2, _ = compressed_spectral_loss((s / k).copy(), (e / k).copy())
    assert v1 == v2


# ------------------------------------------------------------- normalisation

def test_normalize_scale_invariance(rng):
    clean = rng.standard_normal(4000)
    spec = _rand_spec(rng, (4, 6))
    est = _rand_spec(rng, (4, 6))
    s1, e1 = normalize_by_target_std(clean, spec, est)
    s2, e2 = normalize_by_target_std(clean * 10.0, spec * 10.0, est * 10.0)
    assert np.allclose(s1, s2)
    assert np.allclose(e1, e2)


def test_normalize_unit_sigma_is_identity(rng):
    clean = rng.standard_normal(100000)
    clean = clean / np.std(clean)
    spec = _rand_spec(rng, (2, 3))
    s, e = normalize_by_target_std(clean, spec, spec * 0.5)
    assert np.allclose(s, spec)


def test_silent_clip_rejected():
    with pytest.raises(SilentClipError):
        target_std(np.zeros(1000))


def test_unit_variance_sampling_distribution():
    # std of 64000 iid unit-variance samples concentrates in [0.9, 1.1]
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(64000)
        assert 0.9 < target_std(x) < 1.1


# ---------------------------------------------------------------- joint loss

def test_joint_loss_sum():
    assert joint_loss([1.0, 2.0, 3.0], [1, 1, 1]) == 6.0
    assert joint_loss([1.0, 2.0, 3.0]) == 6.0


def test_joint_loss_selecting_weights():
    assert joint_loss([5.0, 7.0, 9.0], [0, 0, 1]) == 9.0


def test_joint_loss_four_terms():
    assert joint_loss([1.0] * 4) == 4.0


def test_joint_loss_length_mismatch():
    with pytest.raises(ValueError, match="weights"):
        joint_loss([1.0, 2.0], [1.0])
