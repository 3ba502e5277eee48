"""Cross-view ground-truth correspondences, sampling validity and splits.

A vertex visible in at least two views yields one correspondence record;
each unordered pair of its entries is one ground-truth pixel pair. Patch
validity (OR/AND over the four scales) gates which pixels participate in
training and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .render import VertexProjections
from .sketch import SketchImage, window_ink_counts

PATCH_SCALES = (32, 64, 128, 256)
SPLIT_RATIO = (8, 1, 1)
SPLIT_NAMES = ("train", "val", "test")


class DatasetError(ValueError):
    """Invalid dataset construction arguments."""


@dataclass
class CorrespondenceRecord:
    """One vertex's visible pixel projections across >= 2 views."""

    vertex_id: int
    entries: list[tuple[int, tuple[int, int]]] = field(default_factory=list)  # (view_id, (row, col))

    def views(self) -> list[int]:
        return [v for v, _ in self.entries]

    def pixel_in_view(self, view_id: int) -> tuple[int, int] | None:
        for v, px in self.entries:
            if v == view_id:
                return px
        return None

    def num_pairs(self) -> int:
        return math.comb(len(self.entries), 2)

    def validate(self) -> None:
        views = self.views()
        if len(views) < 2:
            raise DatasetError(f"record for vertex {self.vertex_id} has <2 views")
        if len(set(views)) != len(views):
            raise DatasetError(f"record for vertex {self.vertex_id} repeats a view")


def build_ground_truth(projections: dict[int, VertexProjections]) -> list[CorrespondenceRecord]:
    """Correspondence records from per-view projection tables of one shape."""
    if not projections:
        return []
    sizes = {len(p) for p in projections.values()}
    if len(sizes) != 1:
        raise DatasetError("projection tables disagree on vertex count")
    n = sizes.pop()
    records = []
    view_ids = sorted(projections)
    vis = np.stack([projections[v].visible for v in view_ids])  # (V, N)
    counts = vis.sum(axis=0)
    for vid in np.nonzero(counts >= 2)[0]:
        entries = []
        for k, view_id in enumerate(view_ids):
            if vis[k, vid]:
                px = projections[view_id].pixels[vid]
                entries.append((view_id, (int(px[0]), int(px[1]))))
        records.append(CorrespondenceRecord(vertex_id=int(vid), entries=entries))
    return records


def pairwise_count(records: list[CorrespondenceRecord]) -> int:
    return sum(r.num_pairs() for r in records)


def is_valid_sample(sketch: SketchImage, pixel: tuple[int, int], mode: str) -> bool:
    """OR: some scale's patch contains ink; AND: every scale's patch does."""
    mask = valid_mask(sketch, np.asarray([pixel]), mode)
    return bool(mask[0])


def valid_mask(sketch: SketchImage, pixels: np.ndarray, mode: str,
               sat: np.ndarray | None = None) -> np.ndarray:
    """Vectorized validity of many (row, col) pixels on one sketch."""
    if mode not in ("OR", "AND"):
        raise DatasetError(f"sampling mode must be OR or AND, got {mode!r}")
    pixels = np.asarray(pixels).reshape(-1, 2)
    if sat is None:
        sat = sketch.integral()
    per_scale = np.stack([window_ink_counts(sat, pixels, s) > 0 for s in PATCH_SCALES])
    return per_scale.any(axis=0) if mode == "OR" else per_scale.all(axis=0)


def split_dataset(shape_ids: list[str], seed: int,
                  ratio: tuple[int, int, int] = SPLIT_RATIO) -> dict[str, list[str]]:
    """Deterministic shape-level split by largest-remainder rounding.

    Every split receives at least one shape (taking from the largest split
    when rounding leaves one empty), so >= 3 shapes are required.
    """
    ids = list(shape_ids)
    if len(ids) < 3:
        raise DatasetError(f"need at least 3 shapes to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DatasetError("shape ids must be unique")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]

    total = len(ids)
    weight = sum(ratio)
    quotas = [total * r / weight for r in ratio]
    counts = [int(math.floor(q)) for q in quotas]
    remainders = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in range(total - sum(counts)):
        counts[remainders[i % 3]] += 1
    for i in range(3):
        while counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1

    splits: dict[str, list[str]] = {}
    at = 0
    for name, c in zip(SPLIT_NAMES, counts):
        splits[name] = sorted(order[at:at + c])
        at += c
    return splits


def save_correspondence_store(records: list[CorrespondenceRecord], shape_id: str,
                              path: str | Path) -> None:
    """Line-delimited store: header with counts, then vertex/view/row/col rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# shape {shape_id} records {len(records)} pairs {pairwise_count(records)}\n")
        for rec in records:
            for view_id, (row, col) in rec.entries:
                fh.write(f"{rec.vertex_id} {view_id} {row} {col}\n")


def load_correspondence_store(path: str | Path) -> tuple[str, list[CorrespondenceRecord]]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 7 or header[0] != "#" or header[1] != "shape":
            raise DatasetError(f"bad correspondence store header in {path}")
        shape_id = header[2]
        declared_records, declared_pairs = int(header[4]), int(header[6])
        records: list[CorrespondenceRecord] = []
        current: CorrespondenceRecord | None = None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            vid, view_id, row, col = (int(p) for p in parts)
            if current is None or current.vertex_id != vid:
                if current is not None:
                    current.validate()
                    records.append(current)
                current = CorrespondenceRecord(vertex_id=vid)
            current.entries.append((view_id, (row, col)))
        if current is not None:
            current.validate()
            records.append(current)
    if len(records) != declared_records or pairwise_count(records) != declared_pairs:
        raise DatasetError(f"correspondence store {path} counts disagree with header")
    return shape_id, records
