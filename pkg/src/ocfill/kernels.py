"""Hot convolution kernels with a numba fast path and a pure-numpy fallback.

Three primitives are enough for arbitrarily deep differentiation of the
convolutional models: the forward correlation, the adjoint w.r.t. the input,
and the adjoint w.r.t. the kernel. Each partial derivative of each primitive
is again one of the three (with arguments permuted), so the autodiff tape can
differentiate through its own backward passes without extra kernels.

Both paths reduce the convolution to an im2col patch matrix followed by a
BLAS matmul; the numba path fuses padding and patch extraction into one pass.
Backend selection: environment variable ``OCFILL_KERNELS`` set to ``numba``,
``numpy`` or ``auto`` (default: numba when importable).
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

__all__ = [
    "conv2d_fwd",
    "conv2d_igrad",
    "conv2d_wgrad",
    "active_backend",
    "set_backend",
]


# ---------------------------------------------------------------------------
# numpy path

def _im2col_np(x, kh, kw):
    """(C*kh*kw, H*W) patch matrix of zero-padded x, (h, w) row-major."""
    C, H, W = x.shape
    xp = np.zeros((C, H + kh - 1, W + kw - 1), dtype=x.dtype)
    xp[:, kh // 2:kh // 2 + H, kw // 2:kw // 2 + W] = x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # C,H,W,kh,kw
    return win.transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, H * W)


def _conv2d_fwd_np(x, w):
    O, C, kh, kw = w.shape
    _, H, W = x.shape
    cols = _im2col_np(x, kh, kw)
    return (w.reshape(O, C * kh * kw) @ cols).reshape(O, H, W)


def _conv2d_igrad_np(g, w):
    return _conv2d_fwd_np(g, _flip_swap_np(w))


def _flip_swap_np(w):
    return np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def _conv2d_wgrad_np(x, g, kh, kw):
    C = x.shape[0]
    O, H, W = g.shape
    cols = _im2col_np(x, kh, kw)  # (C*kh*kw, H*W)
    return (g.reshape(O, H * W) @ cols.T).reshape(O, C, kh, kw)


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(x, kh, kw):
        C, H, W = x.shape
        ph, pw = kh // 2, kw // 2
        cols = np.empty((C * kh * kw, H * W))
        for c in range(C):
            for u in range(kh):
                for v in range(kw):
                    k = (c * kh + u) * kw + v
                    for i in range(H):
                        xi = i + u - ph
                        row = i * W
                        if xi < 0 or xi >= H:
                            for j in range(W):
                                cols[k, row + j] = 0.0
                        else:
                            for j in range(W):
                                xj = j + v - pw
                                cols[k, row + j] = x[c, xi, xj] if 0 <= xj < W else 0.0
        return cols

    @njit(cache=True)
    def _conv2d_fwd_nb(x, w):
        O, C, kh, kw = w.shape
        H, W = x.shape[1], x.shape[2]
        cols = _im2col_nb(x, kh, kw)
        w2 = np.ascontiguousarray(w).reshape(O, C * kh * kw)
        return np.dot(w2, cols).reshape(O, H, W)

    @njit(cache=True)
    def _flip_swap_nb(w):
        O, C, kh, kw = w.shape
        out = np.empty((C, O, kh, kw))
        for o in range(O):
            for c in range(C):
                for u in range(kh):
                    for v in range(kw):
                        out[c, o, u, v] = w[o, c, kh - 1 - u, kw - 1 - v]
        return out

    @njit(cache=True)
    def _conv2d_igrad_nb(g, w):
        return _conv2d_fwd_nb(g, _flip_swap_nb(w))

    @njit(cache=True)
    def _conv2d_wgrad_nb(x, g, kh, kw):
        C = x.shape[0]
        O, H, W = g.shape
        cols = _im2col_nb(x, kh, kw)  # (C*kh*kw, H*W)
        gt = np.ascontiguousarray(g.reshape(O, H * W).T)
        prod = np.dot(cols, gt)  # (C*kh*kw, O)
        return np.ascontiguousarray(prod.T).reshape(O, C, kh, kw)


_IMPLS = {"numpy": (_conv2d_fwd_np, _conv2d_igrad_np, _conv2d_wgrad_np)}
if HAVE_NUMBA:
    _IMPLS["numba"] = (_conv2d_fwd_nb, _conv2d_igrad_nb, _conv2d_wgrad_nb)


def _resolve(name):
    if name == "auto":
        name = "numba" if HAVE_NUMBA else "numpy"
    if name not in _IMPLS:
        raise RuntimeError(
            f"kernel backend {name!r} unavailable (numba installed: {HAVE_NUMBA})"
        )
    return name


_backend = _resolve(os.environ.get("OCFILL_KERNELS", "auto"))


def active_backend():
    return _backend


def set_backend(name):
    """Switch kernel backend ('numba' or 'numpy'); used by tests/benchmarks."""
    global _backend
    _backend = _resolve(name)


def _as_c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_fwd(x, w):
    """Same-padded 2D correlation: (C,H,W) x (O,C,kh,kw) -> (O,H,W)."""
    return _IMPLS[_backend][0](_as_c64(x), _as_c64(w))


def conv2d_igrad(g, w):
    """Adjoint of conv2d_fwd w.r.t. its input: (O,H,W) -> (C,H,W)."""
    return _IMPLS[_backend][1](_as_c64(g), _as_c64(w))


def conv2d_wgrad(x, g, kh, kw):
    """Adjoint of conv2d_fwd w.r.t. the kernel: -> (O,C,kh,kw)."""
    return _IMPLS[_backend][2](_as_c64(x), _as_c64(g), kh, kw)
