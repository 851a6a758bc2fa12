"""Compressed complex+magnitude spectral loss and multi-exit scalarisation.

The loss compares power-law compressed spectra: a complex MSE term weighted
by alpha and a magnitude MSE term weighted by (1 - alpha), both averaged over
all time-frequency bins. Magnitudes are floored before exponentiation so the
c < 1 power law has no singular gradient at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsexit.dsp import as_samples


class SilentClipError(ValueError):
    """Raised when a clip's target is too quiet to normalise by."""


@dataclass
class LossConfig:
    alpha: float = 0.3
    compression: float = 0.3
    mag_floor: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError(f"compression must be in (0, 1], got {self.compression}")


def _compress(spec: np.ndarray, c: float, floor: float):
    """Return (floored magnitude, m^c, m^(c-1)); one pow, the rest divided out."""
    mag = np.maximum(np.abs(spec), floor)
    mag_c = mag ** c
    return mag, mag_c, mag_c / mag


def compressed_spectral_loss(target: np.ndarray, estimate: np.ndarray,
                             cfg: LossConfig | None = None):
    """Loss value and its analytic gradient d(loss)/d(estimate).

    The gradient is returned as a complex array: real part = d/d(Re),
    imaginary part = d/d(Im). Bins whose magnitude sits at the floor get the
    linear-continuation gradient (complex term only).
    """
    cfg = cfg or LossConfig()
    target = np.asarray(target)
    estimate = np.asarray(estimate)
    if target.shape != estimate.shape:
        raise ValueError(f"shape mismatch: target {target.shape} vs estimate {estimate.shape}")
    c, floor = cfg.compression, cfg.mag_floor

    _, t_mag_c, t_g = _compress(target, c, floor)
    e_mag, e_mag_c, e_g = _compress(estimate, c, floor)

    diff = estimate * e_g - target * t_g
    mag_diff = e_mag_c - t_mag_c
    n = diff.size
    loss = (cfg.alpha * np.mean(diff.real ** 2 + diff.imag ** 2)
            + (1.0 - cfg.alpha) * np.mean(mag_diff ** 2))

    # complex term: d|e_comp - t_comp|^2 = 2(diff*g + (c-1) m^(c-3) Re(diff conj(E)) E)
    above = e_mag > floor
    dot = diff.real * estimate.real + diff.imag * estimate.imag
    grad1 = 2.0 * (diff * e_g
                   + np.where(above, (c - 1.0) * (e_g / (e_mag * e_mag)) * dot, 0.0)
                   * estimate)
    # magnitude term: d(m^c - t^c)^2 = 2c (m^c - t^c) m^(c-2) E, zero at the floor
    grad2 = 2.0 * c * np.where(above, mag_diff * (e_g / e_mag), 0.0) * estimate

    grad = (cfg.alpha * grad1 + (1.0 - cfg.alpha) * grad2) / n
    return float(loss), grad


def target_std(clean) -> float:
    """Time-domain standard deviation of the clean clip; errors when silent."""
    sigma = float(np.std(as_samples(clean)))
    if sigma < 1e-8:
        raise SilentClipError(f"target std {sigma:.3e} below 1e-8; clip excluded")
    return sigma


def normalize_by_target_std(clean, target_spec: np.ndarray, estimate_spec: np.ndarray):
    """Divide both spectrograms by the clean signal's time-domain std."""
    sigma = target_std(clean)
    return target_spec / sigma, estimate_spec / sigma


def joint_loss(per_exit_losses, weights=None) -> float:
    """Linear scalarisation sum(w_i * L_i); weights default to all ones."""
    losses = list(per_exit_losses)
    if weights is None:
        weights = [1.0] * len(losses)
    weights = list(weights)
    if len(weights) != len(losses):
        raise ValueError(f"{len(losses)} losses but {len(weights)} weights")
    return float(sum(w * l for w, l in zip(weights, losses)))
