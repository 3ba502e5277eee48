"""Triangle mesh container, OBJ I/O and unit-sphere normalization.

Meshes use a fixed +Y-up convention. All rendering code assumes the mesh
has been normalized to a unit bounding sphere centered at the origin
(see :func:`normalize_mesh`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data (bad indices, empty geometry, non-finite coords)."""


@dataclass
class TriangleMesh:
    """Indexed triangle geometry.

    vertices: (N, 3) float64 positions in model units.
    triangles: (M, 3) int vertex-index triples.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"
    face_labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.face_labels is not None:
            self.face_labels = np.asarray(self.face_labels, dtype=np.int64).reshape(-1)
            if self.face_labels.shape[0] != self.triangles.shape[0]:
                raise MeshError("face_labels length must match triangle count")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def validate(self, require_triangles: bool = True) -> None:
        """Check invariants: index bounds, non-empty, finite coordinates."""
        if require_triangles and self.num_triangles == 0:
            raise MeshError("mesh has no triangles")
        if self.num_vertices == 0:
            raise MeshError("mesh has no vertices")
        if not np.isfinite(self.vertices).all():
            raise MeshError("mesh has non-finite vertex coordinates")
        if self.num_triangles and (
            self.triangles.min() < 0 or self.triangles.max() >= self.num_vertices
        ):
            raise MeshError("triangle index out of range")

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """(center, radius) of the bounding sphere used for normalization.

        Center is the midpoint of the axis-aligned bounding box; radius is
        the max vertex distance from that center.
        """
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        center = 0.5 * (lo + hi)
        radius = float(np.linalg.norm(self.vertices - center, axis=1).max())
        return center, radius

    def face_normals(self) -> np.ndarray:
        """(M, 3) unit face normals; zero vector for degenerate triangles."""
        tri = self.vertices[self.triangles]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        length = np.linalg.norm(n, axis=1)
        ok = length > 0
        n[ok] /= length[ok, None]
        n[~ok] = 0.0
        return n


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Rescale/translate so the bounding sphere is unit radius at the origin."""
    mesh.validate(require_triangles=False)
    center, radius = mesh.bounding_sphere()
    if radius <= 0:
        raise MeshError("mesh is degenerate (zero bounding radius)")
    verts = (mesh.vertices - center) / radius
    return TriangleMesh(verts, mesh.triangles.copy(), name=mesh.name,
                        face_labels=None if mesh.face_labels is None else mesh.face_labels.copy())


def load_obj(path: str | Path) -> TriangleMesh:
    """Read a Wavefront OBJ; polygons are fan-triangulated on load."""
    path = Path(path)
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v" and len(parts) >= 4:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f" and len(parts) >= 4:
                idx = []
                for token in parts[1:]:
                    raw = token.split("/")[0]
                    i = int(raw)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
    if not vertices:
        raise MeshError(f"no vertices in {path}")
    mesh = TriangleMesh(np.array(vertices), np.array(triangles).reshape(-1, 3), name=path.stem)
    mesh.validate(require_triangles=True)
    return mesh


def save_obj(mesh: TriangleMesh, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {mesh.name}: {mesh.num_vertices} vertices, {mesh.num_triangles} triangles\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
