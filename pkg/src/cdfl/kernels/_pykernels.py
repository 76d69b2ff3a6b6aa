"""Pure numpy implementations of the hot kernels.

These are the reference for the compiled versions in ``_ckernels.pyx`` and are
used whenever the extension is unavailable.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B, C, H, W, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * kh * kw)


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 'same' convolution. x: (B,Cin,H,W), w: (Cout,Cin,kh,kw) with odd kh, kw."""
    b, _, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    out = cols @ w.reshape(cout, -1).T + bias
    return np.ascontiguousarray(out.reshape(b, h, wd, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    """Gradients (dx, dw, dbias) of conv2d_forward given upstream gradient gout."""
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    g = gout.transpose(0, 2, 3, 1).reshape(b * h * wd, cout)
    cols = _im2col(x, kh, kw)
    dw = (g.T @ cols).reshape(w.shape)
    db = g.sum(axis=0)
    dcols = (g @ w.reshape(cout, -1)).reshape(b, h, wd, cin, kh, kw)
    dxp = np.zeros((b, cin, h + 2 * ph, wd + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, ph:ph + h, pw:pw + wd]
    return np.ascontiguousarray(dx), dw, db


def sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n_points, n_centers), computed by explicit differences."""
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
