"""Z-buffered normal-map rasterization and visibility-tested vertex projection.

The rasterizer interpolates 1/depth across screen-space barycentrics
(perspective correct) and stores flat per-face normals in camera space,
flipped toward the viewer so shading is double-sided. Vertex visibility is
decided along each vertex's own viewing ray: a vertex is visible when no
surface lies more than ``eps_depth`` in front of it on that ray. Both the
per-pixel depth buffer and the per-vertex test share the same projected
geometry, so hidden-line removal and ground-truth visibility agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera, Viewpoint
from .mesh import TriangleMesh

NEAR_PLANE = 1e-6
DEFAULT_EPS_DEPTH = 1e-3  # in units of the (unit) bounding-sphere radius
_TILE = 16


class RenderError(RuntimeError):
    """Raised for renders that cannot produce usable output."""


@dataclass
class NormalMap:
    """Camera-space normals (0 at background) and view depths (+inf at background)."""

    normals: np.ndarray  # (H, W, 3) float32
    depth: np.ndarray    # (H, W) float64
    view: Viewpoint

    @property
    def foreground(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass
class VertexProjection:
    vertex_id: int
    view_id: int
    pixel: tuple[int, int]  # (row, col)
    depth: float
    visible: bool


class VertexProjections:
    """Per-vertex projection table for one view (one row per mesh vertex)."""

    def __init__(self, view_id: int, pixels: np.ndarray, depth: np.ndarray,
                 visible: np.ndarray):
        self.view_id = view_id
        self.pixels = pixels          # (N, 2) int64 (row, col), unclamped
        self.depth = depth            # (N,) float64
        self.visible = visible        # (N,) bool

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, i: int) -> VertexProjection:
        return VertexProjection(
            vertex_id=int(i),
            view_id=self.view_id,
            pixel=(int(self.pixels[i, 0]), int(self.pixels[i, 1])),
            depth=float(self.depth[i]),
            visible=bool(self.visible[i]),
        )


def _projected_triangles(mesh: TriangleMesh, cam: Camera):
    """Project all triangles; returns (uv (M,3,2), z (M,3), normals_cam (M,3), keep)."""
    uv, z = cam.project(mesh.vertices)
    tri_uv = uv[mesh.triangles]
    tri_z = z[mesh.triangles]
    normals = cam.normals_to_camera(mesh.face_normals())
    # Flip normals toward the viewer (double-sided surfaces).
    flip = normals[:, 2] < 0
    normals[flip] *= -1.0
    a, b, c = tri_uv[:, 0], tri_uv[:, 1], tri_uv[:, 2]
    denom = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = (tri_z > NEAR_PLANE).all(axis=1) & (np.abs(denom) > 1e-9) \
        & np.isfinite(tri_uv).all(axis=(1, 2)) & (np.linalg.norm(normals, axis=1) > 0.5)
    return tri_uv, tri_z, normals, denom, keep


def _barycentric(a, b, c, denom, px, py):
    """Screen-space barycentrics of points (px, py) w.r.t. triangle (a, b, c)."""
    lb = ((px - a[0]) * (c[1] - a[1]) - (py - a[1]) * (c[0] - a[0])) / denom
    lc = ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) / denom
    la = 1.0 - lb - lc
    return la, lb, lc


def render_normal_map(mesh: TriangleMesh, view: Viewpoint) -> NormalMap:
    """Rasterize depth-tested camera-space face normals for one viewpoint."""
    mesh.validate(require_triangles=True)
    cam = Camera(view)
    size = view.image_size
    depth = np.full((size, size), np.inf, dtype=np.float64)
    normals = np.zeros((size, size, 3), dtype=np.float32)

    tri_uv, tri_z, tri_n, denom, keep = _projected_triangles(mesh, cam)
    tol = 1e-10
    for t in np.nonzero(keep)[0]:
        a, b, c = tri_uv[t, 0], tri_uv[t, 1], tri_uv[t, 2]
        c0 = max(int(np.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        c1 = min(int(np.ceil(max(a[0], b[0], c[0]) + 0.5)), size - 1)
        r0 = max(int(np.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        r1 = min(int(np.ceil(max(a[1], b[1], c[1]) + 0.5)), size - 1)
        if c1 < c0 or r1 < r0:
            continue
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        px = cols[None, :] + 0.5
        py = rows[:, None] + 0.5
        la, lb, lc = _barycentric(a, b, c, denom[t], px, py)
        inside = (la >= -tol) & (lb >= -tol) & (lc >= -tol)
        if not inside.any():
            continue
        inv_z = la / tri_z[t, 0] + lb / tri_z[t, 1] + lc / tri_z[t, 2]
        with np.errstate(divide="ignore"):
            z = 1.0 / inv_z
        patch = depth[r0:r1 + 1, c0:c1 + 1]
        closer = inside & (z > NEAR_PLANE) & (z < patch)
        patch[closer] = z[closer]
        normals[r0:r1 + 1, c0:c1 + 1][closer] = tri_n[t].astype(np.float32)
    return NormalMap(normals=normals, depth=depth, view=view)


def _nearest_surface_depth(tri_uv, tri_z, denom, keep, query_uv, size):
    """Min surface depth along the viewing ray through each query point.

    Screen-space point-in-triangle with perspective-correct 1/z interpolation;
    returns +inf where no triangle covers the point. Triangles are bucketed
    into tiles so each query only tests nearby geometry.
    """
    nq = query_uv.shape[0]
    nearest = np.full(nq, np.inf)
    if nq == 0 or not keep.any():
        return nearest
    ntiles = (size + _TILE - 1) // _TILE
    q_tile_x = np.clip(query_uv[:, 0] // _TILE, 0, ntiles - 1).astype(np.int64)
    q_tile_y = np.clip(query_uv[:, 1] // _TILE, 0, ntiles - 1).astype(np.int64)
    tile_queries: dict[tuple[int, int], list[int]] = {}
    for qi in range(nq):
        tile_queries.setdefault((int(q_tile_y[qi]), int(q_tile_x[qi])), []).append(qi)

    mins = tri_uv.min(axis=1)
    maxs = tri_uv.max(axis=1)
    tol = 1e-10
    for (ty, tx), q_idx in tile_queries.items():
        x_lo, x_hi = tx * _TILE, (tx + 1) * _TILE
        y_lo, y_hi = ty * _TILE, (ty + 1) * _TILE
        cand = np.nonzero(keep & (mins[:, 0] <= x_hi) & (maxs[:, 0] >= x_lo)
                          & (mins[:, 1] <= y_hi) & (maxs[:, 1] >= y_lo))[0]
        if cand.size == 0:
            continue
        q = query_uv[q_idx]
        a = tri_uv[cand, 0][:, None, :]
        b = tri_uv[cand, 1][:, None, :]
        c = tri_uv[cand, 2][:, None, :]
        px, py = q[None, :, 0], q[None, :, 1]
        la, lb, lc = _barycentric(
            (a[..., 0], a[..., 1]), (b[..., 0], b[..., 1]), (c[..., 0], c[..., 1]),
            denom[cand][:, None], px, py)
        inside = (la >= -tol) & (lb >= -tol) & (lc >= -tol)
        inv_z = (la / tri_z[cand, 0][:, None] + lb / tri_z[cand, 1][:, None]
                 + lc / tri_z[cand, 2][:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(inside & (inv_z > 0), 1.0 / inv_z, np.inf)
        nearest[q_idx] = np.minimum(nearest[q_idx], z.min(axis=0))
    return nearest


def project_vertices(mesh: TriangleMesh, view: Viewpoint, depth: np.ndarray,
                     eps_depth: float = DEFAULT_EPS_DEPTH, view_id: int = 0) -> VertexProjections:
    """Project every vertex; visible iff nothing sits more than eps_depth
    closer on the vertex's viewing ray and the pixel is in bounds.

    ``depth`` must be the buffer rendered for the same mesh/view; it fixes
    the image bounds and is the same depth source used for sketch
    extraction, keeping hidden-line removal consistent with ground truth.
    """
    size = view.image_size
    if depth.shape != (size, size):
        raise ValueError(f"depth buffer shape {depth.shape} does not match view size {size}")
    cam = Camera(view)
    uv, z = cam.project(mesh.vertices)
    pixels = cam.pixel_of(uv)
    in_bounds = ((pixels[:, 0] >= 0) & (pixels[:, 0] < size)
                 & (pixels[:, 1] >= 0) & (pixels[:, 1] < size) & (z > NEAR_PLANE))

    tri_uv, tri_z, _, denom, keep = _projected_triangles(mesh, cam)
    idx = np.nonzero(in_bounds)[0]
    nearest = _nearest_surface_depth(tri_uv, tri_z, denom, keep, uv[idx], size)
    visible = np.zeros(len(mesh.vertices), dtype=bool)
    visible[idx] = z[idx] <= nearest + eps_depth
    return VertexProjections(view_id=view_id, pixels=pixels, depth=z, visible=visible)


def save_normal_map_png(nm: NormalMap, path: str | Path) -> None:
    """Debug output: 16-bit 3-channel PNG with normals mapped (n+1)/2."""
    import cv2

    mapped = ((nm.normals.astype(np.float64) + 1.0) / 2.0 * 65535.0).round()
    img = np.clip(mapped, 0, 65535).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img[:, :, ::-1]):
        raise RenderError(f"failed to write {path}")
