"""Viewpoints on the upper viewing hemisphere and the perspective camera.

Convention: +Y is up. A viewpoint is (azimuth, elevation) in degrees with
the eye placed at `distance` from the origin, looking at the origin. For a
mesh normalized to the unit bounding sphere, distance 2.5 with a focal
length fit to 90% of the frame keeps the whole sphere inside the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_DISTANCE = 2.5
DEFAULT_IMAGE_SIZE = 480
FRAME_FILL = 0.9

VALID_AZIMUTH_STEPS = (15, 30)
ELEVATION_RANGE = (15.0, 45.0)


class ViewpointError(ValueError):
    """Invalid viewpoint-sampler arguments."""


@dataclass(frozen=True)
class Viewpoint:
    azimuth: float
    elevation: float
    distance: float = DEFAULT_DISTANCE
    image_size: int = DEFAULT_IMAGE_SIZE

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "image_size": self.image_size,
        }

    @staticmethod
    def from_dict(d: dict) -> "Viewpoint":
        return Viewpoint(
            azimuth=float(d["azimuth"]),
            elevation=float(d["elevation"]),
            distance=float(d.get("distance", DEFAULT_DISTANCE)),
            image_size=int(d.get("image_size", DEFAULT_IMAGE_SIZE)),
        )


def sample_viewpoints(azimuth_step: int, elevation: float, count_limit: int,
                      distance: float = DEFAULT_DISTANCE,
                      image_size: int = DEFAULT_IMAGE_SIZE) -> list[Viewpoint]:
    """Viewpoints at ascending azimuths 0, step, 2*step, ... on one elevation ring.

    Returns min(count_limit, 360/azimuth_step) viewpoints; truncation drops
    the largest azimuths.
    """
    if azimuth_step not in VALID_AZIMUTH_STEPS:
        raise ViewpointError(f"azimuth_step must be one of {VALID_AZIMUTH_STEPS}, got {azimuth_step}")
    if not (ELEVATION_RANGE[0] <= elevation <= ELEVATION_RANGE[1]):
        raise ViewpointError(f"elevation must lie in {ELEVATION_RANGE}, got {elevation}")
    if count_limit < 0:
        raise ViewpointError("count_limit must be nonnegative")
    n = min(count_limit, 360 // azimuth_step)
    return [Viewpoint(float(i * azimuth_step), float(elevation), distance, image_size)
            for i in range(n)]


class Camera:
    """Perspective camera for a viewpoint, with pixel-space projection.

    Camera space is (right, up, toward-viewer): a surface normal pointing
    straight at the camera maps to (0, 0, 1). View depth is the distance
    along the viewing direction (positive in front of the eye). Continuous
    image coordinates (u, v) put pixel (row, col) at center (col+0.5, row+0.5).
    """

    def __init__(self, view: Viewpoint, fill: float = FRAME_FILL):
        az = math.radians(view.azimuth)
        el = math.radians(view.elevation)
        eye_dir = np.array([
            math.cos(el) * math.sin(az),
            math.sin(el),
            math.cos(el) * math.cos(az),
        ])
        self.view = view
        self.eye = view.distance * eye_dir
        self.forward = -eye_dir
        up_world = np.array([0.0, 1.0, 0.0])
        right = np.cross(self.forward, up_world)
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            right = np.array([1.0, 0.0, 0.0])
            norm = 1.0
        self.right = right / norm
        self.up = np.cross(self.right, self.forward)
        self.size = view.image_size
        self.cx = self.size / 2.0
        self.cy = self.size / 2.0
        # Focal length so a unit sphere at the origin spans `fill` of the half-frame.
        d = view.distance
        if d <= 1.0:
            raise ViewpointError("camera distance must exceed the unit bounding radius")
        self.focal = fill * (self.size / 2.0) * math.sqrt(d * d - 1.0)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N,3) -> camera coords (N,3): (x right, y up, z view depth)."""
        rel = np.asarray(points, dtype=np.float64) - self.eye
        return np.stack([rel @ self.right, rel @ self.up, rel @ self.forward], axis=-1)

    def normals_to_camera(self, normals: np.ndarray) -> np.ndarray:
        """World direction vectors -> camera space with +z toward the viewer."""
        n = np.asarray(normals, dtype=np.float64)
        return np.stack([n @ self.right, n @ self.up, n @ (-self.forward)], axis=-1)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> ((N,2) continuous (u, v), (N,) view depth)."""
        cam = self.to_camera(points)
        z = cam[..., 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = self.cx + self.focal * cam[..., 0] / safe
        v = self.cy - self.focal * cam[..., 1] / safe
        return np.stack([u, v], axis=-1), z

    def pixel_of(self, uv: np.ndarray) -> np.ndarray:
        """Continuous (u, v) -> integer (row, col) of the containing pixel."""
        uv = np.asarray(uv)
        col = np.floor(uv[..., 0]).astype(np.int64)
        row = np.floor(uv[..., 1]).astype(np.int64)
        return np.stack([row, col], axis=-1)

    def ray_directions(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """World-space ray directions through pixel centers, scaled so the
        segment parameter t equals view depth."""
        dx = (np.asarray(cols) + 0.5 - self.cx) / self.focal
        dy = (self.cy - (np.asarray(rows) + 0.5)) / self.focal
        return (dx[..., None] * self.right + dy[..., None] * self.up + self.forward)
