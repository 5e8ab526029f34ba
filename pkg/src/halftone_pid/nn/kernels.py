"""3x3 same-padded convolution kernels on channels-last arrays.

Two interchangeable backends compute identical quantities:

* ``numpy``: nine shifted matrix products per pass.
* ``torch``: PyTorch's CPU convolution routines on zero-copy views. Several
  times faster for the narrow layers used at desk scale.

The backend is chosen with :func:`set_backend` or the ``HALFTONE_PID_CONV``
environment variable; ``torch`` is the default when it imports.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import torch
    import torch.nn.functional as F
except ImportError:  # pragma: no cover - torch is optional
    torch = None

_backend = os.environ.get("HALFTONE_PID_CONV", "torch" if torch is not None else "numpy")


def set_backend(name: str) -> str:
    """Select the conv backend; returns the previous one."""
    global _backend
    if name not in ("numpy", "torch"):
        raise ValueError(f"unknown conv backend {name!r}")
    if name == "torch" and torch is None:
        raise RuntimeError("torch is not installed")
    previous, _backend = _backend, name
    return previous


def get_backend() -> str:
    return _backend


def out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


# -- numpy ----------------------------------------------------------------------

def _np_forward(x, w, b, stride):
    n, h, wd, c = x.shape
    ho, wo = out_size(h, stride), out_size(wd, stride)
    xp = np.zeros((n, h + 2, wd + 2, c), x.dtype)
    xp[:, 1:-1, 1:-1] = x
    wk = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (3, 3, C, O)
    y = np.zeros((n, ho, wo, w.shape[0]), np.result_type(x, w))
    for i in range(3):
        for j in range(3):
            y += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] @ wk[i, j]
    y += b.reshape(-1)
    return y


def _np_backward(g, x, w, stride, need_input, need_weight=True):
    n, ho, wo, o = g.shape
    _, h, wd, c = x.shape
    xp = np.zeros((n, h + 2, wd + 2, c), x.dtype)
    xp[:, 1:-1, 1:-1] = x
    wk = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    g2 = g.reshape(-1, o)
    dw = np.empty((3, 3, c, o), g.dtype)
    dxp = np.zeros_like(xp, dtype=g.dtype) if need_input else None
    for i in range(3):
        for j in range(3):
            sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            if need_weight:
                dw[i, j] = np.ascontiguousarray(xp[sl]).reshape(-1, c).T @ g2
            if need_input:
                dxp[sl] += g @ wk[i, j].T
    dx = dxp[:, 1:-1, 1:-1] if need_input else None
    if not need_weight:
        return dx, None, None
    return dx, dw.transpose(3, 2, 0, 1), g2.sum(axis=0).reshape(1, o, 1, 1)


# -- torch ----------------------------------------------------------------------

def _t(a: np.ndarray):
    # NHWC numpy -> NCHW-shaped torch view with channels-last strides
    return torch.from_numpy(np.ascontiguousarray(a)).permute(0, 3, 1, 2)


def _n(t) -> np.ndarray:
    return t.permute(0, 2, 3, 1).contiguous().numpy()


def _torch_forward(x, w, b, stride):
    with torch.no_grad():
        y = F.conv2d(_t(x), torch.from_numpy(np.ascontiguousarray(w)),
                     torch.from_numpy(np.ascontiguousarray(b.reshape(-1))), stride=stride, padding=1)
    return _n(y)


def _torch_backward(g, x, w, stride, need_input, need_weight=True):
    gt, xt = _t(g), _t(x)
    wt = torch.from_numpy(np.ascontiguousarray(w))
    with torch.no_grad():
        dx, dw, db = torch.ops.aten.convolution_backward(
            gt, xt, wt, [wt.shape[0]], [stride, stride], [1, 1], [1, 1],
            False, [0, 0], 1, [need_input, need_weight, need_weight],
        )
    dx = _n(dx) if need_input else None
    if not need_weight:
        return dx, None, None
    return dx, dw.numpy(), db.numpy().reshape(1, -1, 1, 1)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """x: (N, H, W, C), w: (O, C, 3, 3), b: (1, O, 1, 1) -> (N, Ho, Wo, O)."""
    dt = np.result_type(x, w)
    x, w, b = x.astype(dt, copy=False), w.astype(dt, copy=False), b.astype(dt, copy=False)
    if _backend == "torch":
        return _torch_forward(x, w, b, stride)
    return _np_forward(x, w, b, stride)


def conv_backward(
    g: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int, need_input: bool = True, need_weight: bool = True
):
    """Returns ``(dx, dw, db)`` for upstream gradient ``g`` (N, Ho, Wo, O); skipped parts are None."""
    dt = np.result_type(g, x, w)
    g, x, w = g.astype(dt, copy=False), x.astype(dt, copy=False), w.astype(dt, copy=False)
    if _backend == "torch":
        return _torch_backward(g, x, w, stride, need_input, need_weight)
    return _np_backward(g, x, w, stride, need_input, need_weight)
