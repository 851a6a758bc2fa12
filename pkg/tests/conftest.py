import numpy as np
import pytest


def finite_diff_grad(fn, arr, eps=1e-5):
    """Central finite differences of scalar fn w.r.t. every element of arr."""
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + eps
        up = fn()
        arr[idx] = old - eps
        down = fn()
        arr[idx] = old
        out[idx] = (up - down) / (2.0 * eps)
    return out


def rel_err(a, b):
    num = np.linalg.norm(np.asarray(a) - np.asarray(b))
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return num / den


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
