"""Hot inner loops with a compiled backend and a numpy fallback.

The compiled module ``widr._kernels`` is used when it imports; set
``WIDR_PURE=1`` to force the fallback. Both backends accumulate in the same
order, so results are bitwise identical.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

try:
    if os.environ.get("WIDR_PURE"):
        raise ImportError("pure backend requested")
    from widr import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def py_im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = xp.strides
    view = as_strided(
        xp,
        shape=(n, oh, ow, c, k, k),
        strides=(s0, s2 * stride, s3 * stride, s1, s2, s3),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n * oh * ow, c * k * k)


def py_col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    blocks = cols.reshape(n, oh, ow, c, k, k)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                blocks[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])


def py_assign_nearest(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # per-dimension accumulation keeps the summation order of the compiled loop
    d2 = np.zeros((x.shape[0], centroids.shape[0]))
    for d in range(x.shape[1]):
        diff = x[:, d, None] - centroids[None, :, d]
        d2 += diff * diff
    labels = np.argmin(d2, axis=1).astype(np.int64)
    return labels, d2[np.arange(x.shape[0]), labels]


def py_vlad_accumulate(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    out = np.zeros_like(centroids)
    np.add.at(out, labels, x - centroids[labels])
    return out


def im2col(x: np.ndarray, k: int = 3, stride: int = 2, pad: int = 1) -> np.ndarray:
    """Unfold (N, C, H, W) into rows of receptive fields, (N*OH*OW, C*k*k)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _ext is not None:
        return _ext.im2col(x, k, stride, pad)
    return py_im2col(x, k, stride, pad)


def col2im(cols: np.ndarray, shape: tuple, k: int = 3, stride: int = 2, pad: int = 1) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add rows back onto an (N, C, H, W) grid."""
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if _ext is not None:
        return _ext.col2im(cols, *shape, k, stride, pad)
    return py_col2im(cols, shape, k, stride, pad)


def assign_nearest(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties to the lowest index) and its squared distance."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    if _ext is not None:
        return _ext.assign_nearest(x, centroids)
    return py_assign_nearest(x, centroids)


def vlad_accumulate(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-centroid sums of residuals ``x_i - c_{labels_i}``, shape (k, m)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _ext is not None:
        return _ext.vlad_accumulate(x, centroids, labels)
    return py_vlad_accumulate(x, centroids, labels)
