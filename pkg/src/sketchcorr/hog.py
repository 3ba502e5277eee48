"""Gradient-orientation-histogram descriptor for 32x32 patches.

Used by the retrieval-based matching baseline: 9 unsigned orientation bins
over a 4x4 grid of 8x8-pixel cells, 2x2-cell blocks with L2-hys
normalization, concatenated to a 324-D vector.
"""

from __future__ import annotations

import numpy as np

CELL = 8
GRID = 4          # 4x4 cells over a 32x32 patch
BINS = 9
_CLIP = 0.2
_EPS = 1e-9


def hog_descriptors(patches: np.ndarray) -> np.ndarray:
    """(B, 32, 32) patches -> (B, 324) block-normalized histograms."""
    p = np.asarray(patches, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    if p.shape[1:] != (GRID * CELL, GRID * CELL):
        raise ValueError(f"expected (B, 32, 32) patches, got {p.shape}")
    b = p.shape[0]
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    gx[:, :, 1:-1] = p[:, :, 2:] - p[:, :, :-2]
    gy[:, 1:-1, :] = p[:, 2:, :] - p[:, :-2, :]
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % np.pi
    bins = np.minimum((ang / (np.pi / BINS)).astype(np.int64), BINS - 1)

    hist = np.zeros((b, GRID, GRID, BINS))
    for k in range(BINS):
        m = np.where(bins == k, mag, 0.0)
        hist[:, :, :, k] = m.reshape(b, GRID, CELL, GRID, CELL).sum(axis=(2, 4))

    blocks = []
    for br in range(GRID - 1):
        for bc in range(GRID - 1):
            v = hist[:, br:br + 2, bc:bc + 2, :].reshape(b, -1)
            v = v / np.sqrt((v * v).sum(axis=1, keepdims=True) + _EPS)
            v = np.minimum(v, _CLIP)
            v = v / np.sqrt((v * v).sum(axis=1, keepdims=True) + _EPS)
            blocks.append(v)
    return np.concatenate(blocks, axis=1).astype(np.float32)


def hog_descriptor(patch32: np.ndarray) -> np.ndarray:
    return hog_descriptors(patch32[None])[0]
