"""Procedural desk-scale meshes (chairs, lamps, tables) for experiments.

Shapes are assembled from boxes and cone frustums sized so a category
yields roughly 80-120 vertices per shape: small enough for CPU training,
rich enough for cross-view correspondence. Large faces use centroid-fan
tessellation, which places vertices in the interior of blank sketch
regions (samples that pass OR- but not AND-sampling). Parts carry face
labels for label-transfer experiments.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

CATEGORIES = ("chair", "lamp", "table")

_BOX_FACES = [
    (0, +1, 1, 2), (0, -1, 1, 2),
    (1, +1, 0, 2), (1, -1, 0, 2),
    (2, +1, 0, 1), (2, -1, 0, 1),
]


def _box(center, size, div=(1, 1, 1), label: int = 0):
    """Grid-subdivided box surface; returns (verts, tris, labels)."""
    half = np.array(size) / 2.0
    c = np.array(center, dtype=np.float64)
    verts: list = []
    tris: list = []
    for axis, sign, ua, va in _BOX_FACES:
        du, dv = div[ua], div[va]
        base = len(verts)
        for i in range(du + 1):
            for j in range(dv + 1):
                p = np.zeros(3)
                p[axis] = sign * half[axis]
                p[ua] = (i / du - 0.5) * 2 * half[ua]
                p[va] = (j / dv - 0.5) * 2 * half[va]
                verts.append(tuple(c + p))
        for i in range(du):
            for j in range(dv):
                a = base + i * (dv + 1) + j
                b = a + dv + 1
                if sign > 0:
                    tris.extend([(a, b, a + 1), (b, b + 1, a + 1)])
                else:
                    tris.extend([(a, a + 1, b), (b, a + 1, b + 1)])
    return verts, tris, [label] * len(tris)


def _box_fan(center, size, label: int = 0):
    """Box with centroid-fan faces: 5 vertices per face, one strictly interior."""
    half = np.array(size) / 2.0
    c = np.array(center, dtype=np.float64)
    verts: list = []
    tris: list = []
    for axis, sign, ua, va in _BOX_FACES:
        base = len(verts)
        corners = []
        for i, j in ((0, 0), (0, 1), (1, 1), (1, 0)):
            p = np.zeros(3)
            p[axis] = sign * half[axis]
            p[ua] = (i - 0.5) * 2 * half[ua]
            p[va] = (j - 0.5) * 2 * half[va]
            corners.append(tuple(c + p))
        centroid = np.zeros(3)
        centroid[axis] = sign * half[axis]
        verts.extend(corners)
        verts.append(tuple(c + centroid))
        for k in range(4):
            a, b = base + k, base + (k + 1) % 4
            tris.append((a, b, base + 4) if sign > 0 else (b, a, base + 4))
    return verts, tris, [label] * len(tris)


def _box_weld(center, size, label: int = 0):
    """Minimal box: 8 shared corner vertices, 12 triangles."""
    half = np.array(size) / 2.0
    c = np.array(center, dtype=np.float64)
    verts = [tuple(c + half * np.array([sx, sy, sz]))
             for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    # index: bit2 = x, bit1 = y, bit0 = z
    quads = [
        (4, 5, 7, 6), (0, 2, 3, 1),  # +x, -x
        (2, 6, 7, 3), (0, 1, 5, 4),  # +y, -y
        (1, 3, 7, 5), (0, 4, 6, 2),  # +z, -z
    ]
    tris = []
    for a, b, cc, d in quads:
        tris.extend([(a, b, cc), (a, cc, d)])
    return verts, tris, [label] * len(tris)


def _frustum(center_y, r_bottom, r_top, height, segments=10, rings=2,
             cap_top=True, label: int = 0):
    """Open-bottom cone frustum around the +Y axis."""
    verts: list = []
    tris: list = []
    for ring in range(rings + 1):
        t = ring / rings
        y = center_y - height / 2 + t * height
        r = r_bottom + t * (r_top - r_bottom)
        for k in range(segments):
            a = 2 * np.pi * k / segments
            verts.append((r * np.cos(a), y, r * np.sin(a)))
    for ring in range(rings):
        for k in range(segments):
            a = ring * segments + k
            b = ring * segments + (k + 1) % segments
            c = a + segments
            d = b + segments
            tris.extend([(a, b, c), (b, d, c)])
    if cap_top:
        top = len(verts)
        verts.append((0.0, center_y + height / 2, 0.0))
        base = rings * segments
        for k in range(segments):
            tris.append((base + k, top, base + (k + 1) % segments))
    return verts, tris, [label] * len(tris)


def _merge(parts, name: str) -> TriangleMesh:
    verts: list = []
    tris: list = []
    labels: list = []
    for pv, pt, pl in parts:
        off = len(verts)
        verts.extend(pv)
        tris.extend([(a + off, b + off, c + off) for a, b, c in pt])
        labels.extend(pl)
    return TriangleMesh(np.array(verts), np.array(tris), name=name,
                        face_labels=np.array(labels))


def make_cube(size: float = 1.0, div: tuple[int, int, int] = (1, 1, 1)) -> TriangleMesh:
    return _merge([_box((0, 0, 0), (size, size, size), div)], "cube")


def make_chair(variant: int = 0, seed: int = 0) -> TriangleMesh:
    """Sled-style chair: fan-faced seat and back over two welded side panels."""
    rng = np.random.default_rng(seed * 101 + variant)
    w = rng.uniform(0.85, 1.15)      # seat width
    d = rng.uniform(0.8, 1.05)       # seat depth
    hs = rng.uniform(0.75, 0.95)     # seat height
    hb = rng.uniform(0.85, 1.2)      # back height
    panel = 0.08
    parts = [
        _box_fan((0, hs, 0), (w, 0.1, d), label=0),                                    # seat
        _box_fan((0, hs + hb / 2 + 0.05, -d / 2 + 0.05), (w, hb, 0.1), label=1),       # back
        _box_weld((0, hs * 0.45, 0.1), (w * 0.9, 0.09, 0.09), label=2),                # stretcher
        _box_weld((0, hs * 0.25, d * 0.46), (w * 0.8, 0.07, 0.07), label=2),           # front rail
    ]
    for sx in (-1, 1):
        parts.append(_box_weld((sx * (w / 2 - panel / 2), hs / 2, 0),
                               (panel, hs, d * 0.85), label=2))
    return _merge(parts, f"chair_{variant}")


def make_lamp(variant: int = 0, seed: int = 0) -> TriangleMesh:
    rng = np.random.default_rng(seed * 131 + variant)
    hp = rng.uniform(1.0, 1.3)       # pole height
    rb = rng.uniform(0.28, 0.38)     # shade bottom radius
    rt = rng.uniform(0.1, 0.16)      # shade top radius
    hs = rng.uniform(0.32, 0.45)     # shade height
    arm = rng.uniform(0.3, 0.45)     # arm length (breaks rotational symmetry)
    parts = [
        _box_fan((0, 0.05, 0), (0.55, 0.1, 0.55), label=0),                            # base
        _box_weld((0, 0.1 + hp / 2, 0), (0.09, hp, 0.09), label=0),                    # pole
        _box_weld((arm / 2, 0.1 + hp * 0.75, 0), (arm, 0.07, 0.07), label=0),          # arm
    ]
    parts.append(_frustum(0.1 + hp + hs / 2, rb, rt, hs, segments=10, rings=2, label=1))
    return _merge(parts, f"lamp_{variant}")


def make_table(variant: int = 0, seed: int = 0) -> TriangleMesh:
    rng = np.random.default_rng(seed * 151 + variant)
    w = rng.uniform(1.1, 1.4)
    d = rng.uniform(0.75, 0.95)
    h = rng.uniform(0.7, 0.85)
    leg = 0.09
    parts = [
        _box_fan((0, h, 0), (w, 0.08, d), label=0),                                    # top
        _box_weld((w / 4, h - 0.12, 0), (w / 2.2, 0.16, d * 0.8), label=1),            # drawer
    ]
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(_box_weld((sx * (w / 2 - leg), h / 2, sz * (d / 2 - leg)),
                                   (leg, h, leg), label=2))
    return _merge(parts, f"table_{variant}")


_MAKERS = {"chair": make_chair, "lamp": make_lamp, "table": make_table}


def procedural_category(category: str, count: int, seed: int = 0) -> list[tuple[str, TriangleMesh]]:
    """`count` parameter-jittered meshes of one category."""
    if category not in _MAKERS:
        raise ValueError(f"unknown procedural category {category!r}; valid: {sorted(_MAKERS)}")
    make = _MAKERS[category]
    return [(f"{category}_{i}", make(variant=i, seed=seed)) for i in range(count)]


def random_triangle_soup(rng: np.random.Generator, n_triangles: int,
                         spread: float = 0.8) -> TriangleMesh:
    """Random disconnected triangles inside the unit sphere (geometry tests)."""
    centers = rng.uniform(-spread / 2, spread / 2, (n_triangles, 1, 3))
    offsets = rng.uniform(-0.45, 0.45, (n_triangles, 3, 3))
    verts = (centers + offsets).reshape(-1, 3)
    norms = np.linalg.norm(verts, axis=1)
    verts[norms > 1] /= norms[norms > 1, None] * 1.001
    tris = np.arange(3 * n_triangles).reshape(-1, 3)
    return TriangleMesh(verts, tris, name="soup")
