"""Vectorized histogram-of-oriented-gradients descriptor.

Unsigned gradients (0-180 degrees), orientation votes linearly split between
the two nearest bins, cell histograms averaged over the cell area, and
L2-Hys block normalization. Works on a batch of equally sized images.
"""
from __future__ import annotations

import numpy as np

_EPS = 1e-5


def hog_blocks(gray: np.ndarray, cell: int = 8, block: int = 2, orientations: int = 9) -> np.ndarray:
    """Block-normalized HOG of ``gray`` with shape ``(N, H, W)`` or ``(H, W)``.

    Returns ``(N, n_block_rows, n_block_cols, block, block, orientations)``
    (without the leading axis for a single image).
    """
    single = gray.ndim == 2
    g = np.asarray(gray, dtype=np.float64)
    if single:
        g = g[None]
    n, H, W = g.shape
    cr, cc = H // cell, W // cell
    g = g[:, : cr * cell, : cc * cell]

    gy = np.zeros_like(g)
    gx = np.zeros_like(g)
    gy[:, 1:-1, :] = g[:, 2:, :] - g[:, :-2, :]
    gx[:, :, 1:-1] = g[:, :, 2:] - g[:, :, :-2]
    mag = np.hypot(gx, gy)
    pos = (np.rad2deg(np.arctan2(gy, gx)) % 180.0) / (180.0 / orientations) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % orientations
    hi = (lo + 1) % orientations

    rows = np.arange(cr * cell) // cell
    cols = np.arange(cc * cell) // cell
    cell_idx = (rows[:, None] * cc + cols[None, :])[None]
    base = (np.arange(n)[:, None, None] * (cr * cc) + cell_idx) * orientations
    size = n * cr * cc * orientations
    hist = np.bincount((base + lo).ravel(), weights=(mag * (1 - frac)).ravel(), minlength=size)
    hist += np.bincount((base + hi).ravel(), weights=(mag * frac).ravel(), minlength=size)
    hist = hist.reshape(n, cr, cc, orientations) / (cell * cell)

    br, bc = cr - block + 1, cc - block + 1
    if br < 1 or bc < 1:
        out = np.zeros((n, 0, 0, block, block, orientations))
        return out[0] if single else out
    out = np.empty((n, br, bc, block, block, orientations))
    for i in range(block):
        for j in range(block):
            out[:, :, :, i, j, :] = hist[:, i : i + br, j : j + bc, :]
    norm = np.sqrt(np.sum(out**2, axis=(3, 4, 5), keepdims=True) + _EPS**2)
    out = np.minimum(out / norm, 0.2)
    norm = np.sqrt(np.sum(out**2, axis=(3, 4, 5), keepdims=True) + _EPS**2)
    out = out / norm
    return out[0] if single else out
