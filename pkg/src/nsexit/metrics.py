"""Reference-based quality metrics: SI-SDR and log-spectral distance."""

from __future__ import annotations

import numpy as np

from nsexit.dsp import as_samples, stft

SI_SDR_CAP_DB = 60.0
LSD_FLOOR_DB = -80.0


def si_sdr(reference, estimate, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +60.

    The estimate is projected onto the reference; the ratio of projection
    energy to residual energy is scale-free in the estimate's gain.
    """
    r = as_samples(reference)
    e = as_samples(estimate)
    if len(r) != len(e):
        raise ValueError(f"length mismatch: reference {len(r)} vs estimate {len(e)}")
    p_ref = float(np.dot(r, r))
    if p_ref < 1e-16:
        raise ValueError("silent reference")
    proj = (np.dot(e, r) / p_ref) * r
    resid = e - proj
    p_proj = float(np.dot(proj, proj))
    p_resid = float(np.dot(resid, resid))
    if p_proj <= 0.0:
        return -cap_db
    if p_resid <= p_proj * 10.0 ** (-cap_db / 10.0):
        return cap_db
    return min(10.0 * np.log10(p_proj / p_resid), cap_db)


def log_spectral_distance(reference, estimate) -> float:
    """RMS over frames of the per-frame RMS gap between dB power spectra,
    with spectra floored at -80 dB."""
    r = as_samples(reference)
    e = as_samples(estimate)
    if len(r) != len(e):
        raise ValueError(f"length mismatch: reference {len(r)} vs estimate {len(e)}")
    floor = 10.0 ** (LSD_FLOOR_DB / 10.0)
    p_ref = 10.0 * np.log10(np.maximum(np.abs(stft(r)) ** 2, floor))
    p_est = 10.0 * np.log10(np.maximum(np.abs(stft(e)) ** 2, floor))
    per_frame = np.sqrt(np.mean((p_ref - p_est) ** 2, axis=1))
    return float(np.sqrt(np.mean(per_frame ** 2)))
