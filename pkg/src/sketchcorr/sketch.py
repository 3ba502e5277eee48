"""Binary sketch images extracted from normal maps via Canny edge detection.

The edge detector runs on the 3-channel normal image: per-channel Sobel
gradients are combined through the structure tensor (Di Zenzo), followed by
non-maximum suppression, double thresholding relative to the max gradient
magnitude, and hysteresis. Because the normal map is depth-tested, hidden
lines never appear in the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .camera import Viewpoint
from .render import NormalMap, RenderError

SKETCH_SIZE = 480
DEFAULT_CANNY_LOW = 0.1
DEFAULT_CANNY_HIGH = 0.2
_GAUSS_SIGMA = 1.2


@dataclass
class SketchImage:
    """480x480 binary raster; 1 = ink."""

    pixels: np.ndarray  # (480, 480) uint8 in {0, 1}
    view: Viewpoint | None = None
    shape_id: str = ""

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        self.validate()

    def validate(self) -> None:
        if self.pixels.shape != (SKETCH_SIZE, SKETCH_SIZE):
            raise ValueError(f"sketch must be {SKETCH_SIZE}x{SKETCH_SIZE}, got {self.pixels.shape}")
        if not np.isin(self.pixels, (0, 1)).all():
            raise ValueError("sketch pixels must be binary {0, 1}")

    def ink_points(self) -> np.ndarray:
        """(K, 2) int array of (row, col) ink coordinates."""
        return np.argwhere(self.pixels == 1)

    def integral(self) -> np.ndarray:
        """Summed-area table with a zero row/col prefix: (H+1, W+1) int64."""
        sat = np.zeros((SKETCH_SIZE + 1, SKETCH_SIZE + 1), dtype=np.int64)
        sat[1:, 1:] = self.pixels.astype(np.int64).cumsum(0).cumsum(1)
        return sat


def window_ink_counts(sat: np.ndarray, centers: np.ndarray, scale: int) -> np.ndarray:
    """Ink counts of scale x scale windows centered at (row, col) points.

    Windows start at center - scale//2 and are clipped at the image border
    (outside area counts as blank).
    """
    centers = np.asarray(centers).reshape(-1, 2)
    half = scale // 2
    r0 = np.clip(centers[:, 0] - half, 0, SKETCH_SIZE)
    r1 = np.clip(centers[:, 0] - half + scale, 0, SKETCH_SIZE)
    c0 = np.clip(centers[:, 1] - half, 0, SKETCH_SIZE)
    c1 = np.clip(centers[:, 1] - half + scale, 0, SKETCH_SIZE)
    return sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]


def _structure_tensor_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multi-channel gradient magnitude and direction via the structure tensor."""
    jxx = np.zeros(img.shape[:2])
    jyy = np.zeros(img.shape[:2])
    jxy = np.zeros(img.shape[:2])
    for c in range(img.shape[2]):
        gx = ndimage.sobel(img[:, :, c], axis=1, mode="nearest")
        gy = ndimage.sobel(img[:, :, c], axis=0, mode="nearest")
        jxx += gx * gx
        jyy += gy * gy
        jxy += gx * gy
    trace = jxx + jyy
    diff = jxx - jyy
    disc = np.sqrt(diff * diff + 4.0 * jxy * jxy)
    magnitude = np.sqrt(np.maximum(0.5 * (trace + disc), 0.0))
    theta = 0.5 * np.arctan2(2.0 * jxy, diff)  # gradient direction, mod pi
    return magnitude, theta


def _non_max_suppression(mag: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their gradient direction."""
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    deg = np.degrees(theta) % 180.0
    # neighbor offsets per quantized direction, (dr, dc) with row down
    sector = np.zeros_like(deg, dtype=np.int8)
    sector[(deg >= 22.5) & (deg < 67.5)] = 1    # diagonal
    sector[(deg >= 67.5) & (deg < 112.5)] = 2   # vertical gradient
    sector[(deg >= 112.5) & (deg < 157.5)] = 3  # anti-diagonal
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dr, dc) in offsets.items():
        n1 = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        n2 = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (sector == s) & (mag >= n1) & (mag >= n2)
    return np.where(keep, mag, 0.0)


def _fit_to_sketch_size(edges: np.ndarray) -> np.ndarray:
    """Center-pad to square then nearest-resample to the sketch resolution."""
    h, w = edges.shape
    if (h, w) == (SKETCH_SIZE, SKETCH_SIZE):
        return edges
    side = max(h, w)
    sq = np.zeros((side, side), dtype=edges.dtype)
    r0, c0 = (side - h) // 2, (side - w) // 2
    sq[r0:r0 + h, c0:c0 + w] = edges
    idx = np.minimum((np.arange(SKETCH_SIZE) * side) // SKETCH_SIZE, side - 1)
    return sq[np.ix_(idx, idx)]


def extract_sketch(nm: NormalMap, canny_low: float = DEFAULT_CANNY_LOW,
                   canny_high: float = DEFAULT_CANNY_HIGH,
                   shape_id: str = "") -> SketchImage:
    """Binary edge image of a rendered normal map.

    Thresholds are fractions of the maximum gradient magnitude and must
    satisfy canny_low < canny_high.
    """
    if not canny_low < canny_high:
        raise ValueError(f"canny_low ({canny_low}) must be < canny_high ({canny_high})")
    if not nm.foreground.any():
        raise RenderError("empty render: normal map has no foreground")
    img = ndimage.gaussian_filter(nm.normals.astype(np.float64), sigma=(_GAUSS_SIGMA, _GAUSS_SIGMA, 0))
    mag, theta = _structure_tensor_gradient(img)
    mag = _non_max_suppression(mag, theta)
    peak = mag.max()
    if peak <= 0:
        raise RenderError("empty render: no gradient response")
    strong = mag >= canny_high * peak
    weak = mag >= canny_low * peak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=np.int8))
    if n:
        keep_ids = np.unique(labels[strong])
        keep_ids = keep_ids[keep_ids > 0]
        mask = np.isin(labels, keep_ids)
    else:
        mask = np.zeros_like(weak)
    edges = _fit_to_sketch_size(mask.astype(np.uint8))
    return SketchImage(pixels=edges, view=nm.view, shape_id=shape_id)


def save_sketch_png(sketch: SketchImage, path: str | Path) -> None:
    """8-bit single-channel PNG, ink black on white."""
    import cv2

    img = ((1 - sketch.pixels) * 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img):
        raise OSError(f"failed to write {path}")


def load_sketch_png(path: str | Path, view: Viewpoint | None = None,
                    shape_id: str = "") -> SketchImage:
    """Read a sketch PNG (dark pixels become ink). Must be 480x480."""
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise OSError(f"cannot read sketch image {path}")
    if img.shape != (SKETCH_SIZE, SKETCH_SIZE):
        raise ValueError(f"sketch {path} must be {SKETCH_SIZE}x{SKETCH_SIZE}, got {img.shape}")
    return SketchImage(pixels=(img < 128).astype(np.uint8), view=view, shape_id=shape_id)
