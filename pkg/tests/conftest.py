import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_diff(fn, arr, idx, h=1e-5):
    """Central finite difference of a scalar fn w.r.t. arr[idx] in place."""
    flat = arr.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + h
    fp = fn()
    flat[idx] = orig - h
    fm = fn()
    flat[idx] = orig
    return (fp - fm) / (2.0 * h)


def rel_err(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)
