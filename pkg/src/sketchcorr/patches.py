"""Multi-scale patch extraction and triplet/batch assembly.

Every sample is four square crops (32/64/128/256) centered at one pixel,
each bilinearly rescaled to 32x32 and stacked smallest scale first.
Training batches use random in-batch negatives: each triplet's negative is
the positive patch of another triplet in the same batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspondence import PATCH_SCALES
from .dataset import ShapeData
from .sketch import SKETCH_SIZE, SketchImage


class BatchError(RuntimeError):
    """Not enough eligible data to assemble a batch."""


@dataclass
class MultiScalePatch:
    """Four 32x32 rasters summarizing the 32/64/128/256 neighborhoods of a pixel."""

    channels: np.ndarray                   # (4, 32, 32) float32 in [0, 1]
    center: tuple[int, int]                # (row, col)
    source: tuple[str, int] = ("", 0)      # (shape_id, view_id)
    vertex_id: int | None = None


@dataclass
class Triplet:
    anchor: MultiScalePatch
    positive: MultiScalePatch
    negative: MultiScalePatch


def extract_patch(sketch: SketchImage, center: tuple[int, int], scale: int) -> np.ndarray:
    """Axis-aligned scale x scale crop centered at (row, col), zero-padded."""
    if scale not in PATCH_SCALES:
        raise ValueError(f"scale must be one of {PATCH_SCALES}, got {scale}")
    r, c = center
    if not (0 <= r < SKETCH_SIZE and 0 <= c < SKETCH_SIZE):
        raise ValueError(f"center {center} out of bounds")
    half = scale // 2
    out = np.zeros((scale, scale), dtype=np.float32)
    r0, c0 = r - half, c - half
    sr0, sc0 = max(r0, 0), max(c0, 0)
    sr1, sc1 = min(r0 + scale, SKETCH_SIZE), min(c0 + scale, SKETCH_SIZE)
    if sr1 > sr0 and sc1 > sc0:
        out[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = sketch.pixels[sr0:sr1, sc0:sc1]
    return out


def rescale_to_32(patch: np.ndarray) -> np.ndarray:
    """Bilinear downsampling to 32x32 (half-pixel centers); identity for 32."""
    patch = np.asarray(patch)
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1] or patch.shape[0] not in PATCH_SCALES:
        raise ValueError(f"expected square patch with side in {PATCH_SCALES}, got {patch.shape}")
    side = patch.shape[0]
    if side == 32:
        return patch
    scale = side / 32.0
    coords = (np.arange(32) + 0.5) * scale - 0.5
    lo = np.floor(coords).astype(np.int64)
    frac = (coords - lo).astype(np.float32)
    lo0 = np.clip(lo, 0, side - 1)
    lo1 = np.clip(lo + 1, 0, side - 1)
    p = patch.astype(np.float32)
    top = p[np.ix_(lo0, lo0)] * (1 - frac)[None, :] + p[np.ix_(lo0, lo1)] * frac[None, :]
    bot = p[np.ix_(lo1, lo0)] * (1 - frac)[None, :] + p[np.ix_(lo1, lo1)] * frac[None, :]
    return top * (1 - frac)[:, None] + bot * frac[:, None]


def make_multiscale(sketch: SketchImage, center: tuple[int, int],
                    vertex_id: int | None = None, view_id: int = 0) -> MultiScalePatch:
    channels = np.stack([rescale_to_32(extract_patch(sketch, center, s)) for s in PATCH_SCALES])
    return MultiScalePatch(channels=channels.astype(np.float32), center=(int(center[0]), int(center[1])),
                           source=(sketch.shape_id, view_id), vertex_id=vertex_id)


@dataclass
class PoolItem:
    """One vertex of one shape with its sampling-valid visible entries."""

    shape_idx: int
    vertex_id: int
    entries: list[tuple[int, tuple[int, int]]]  # (view_id, pixel)


class TrainingPool:
    """Sampling-mode-filtered correspondence pairs over a list of shapes."""

    def __init__(self, shapes: list[ShapeData], mode: str):
        self.shapes = shapes
        self.mode = mode
        self.items: list[PoolItem] = []
        for si, shape in enumerate(shapes):
            for rec in shape.records:
                valid = shape.entry_validity(rec, mode)
                entries = [e for e, ok in zip(rec.entries, valid) if ok]
                if len(entries) >= 2:
                    self.items.append(PoolItem(si, rec.vertex_id, entries))
        # (item_idx, entry_a, entry_b) over all unordered valid entry pairs
        self.pairs: list[tuple[int, int, int]] = []
        for ii, item in enumerate(self.items):
            for a in range(len(item.entries)):
                for b in range(a + 1, len(item.entries)):
                    self.pairs.append((ii, a, b))

    def num_pairs(self) -> int:
        return len(self.pairs)

    def patch_for(self, item: PoolItem, entry_idx: int) -> MultiScalePatch:
        view_id, pixel = item.entries[entry_idx]
        shape = self.shapes[item.shape_idx]
        return make_multiscale(shape.sketch(view_id), pixel,
                               vertex_id=item.vertex_id, view_id=view_id)


def _negative_assignment(groups: list[int], rng: np.random.Generator) -> np.ndarray:
    """Random permutation with vertex(perm[i]) != vertex(i).

    For all-distinct batches this is a plain derangement. With repeated
    vertices (epoch batches), indices are shuffled with same-vertex entries
    kept consecutive and rotated by an offset of at least the largest group,
    which maps every entry into a different group. Requires the largest
    group to cover at most half the batch.
    """
    n = len(groups)
    if n < 2:
        raise BatchError("need at least 2 triplets for in-batch negatives")
    counts: dict[int, int] = {}
    for g in groups:
        counts[g] = counts.get(g, 0) + 1
    max_group = max(counts.values())
    if max_group > n // 2:
        raise BatchError("one vertex owns more than half the batch; negatives impossible")
    if max_group == 1:
        while True:
            perm = rng.permutation(n)
            if not (perm == np.arange(n)).any():
                return perm
    group_ids = list(counts)
    rng.shuffle(group_ids)
    order: list[int] = []
    for g in group_ids:
        members = [i for i in range(n) if groups[i] == g]
        rng.shuffle(members)
        order.extend(members)
    shift = int(rng.integers(max_group, n - max_group + 1))
    perm = np.empty(n, dtype=np.int64)
    for pos, i in enumerate(order):
        perm[i] = order[(pos + shift) % n]
    return perm


def _triplets_from_pairs(pool: TrainingPool, chosen: list[tuple[int, int, int]],
                         rng: np.random.Generator) -> list[Triplet]:
    anchors, positives = [], []
    for item_idx, a, b in chosen:
        if rng.random() < 0.5:
            a, b = b, a
        item = pool.items[item_idx]
        anchors.append(pool.patch_for(item, a))
        positives.append(pool.patch_for(item, b))
    perm = _negative_assignment([c[0] for c in chosen], rng)
    return [Triplet(anchor=anchors[i], positive=positives[i], negative=positives[perm[i]])
            for i in range(len(chosen))]


def assemble_batch(pool: TrainingPool, batch_size: int, rng: np.random.Generator) -> list[Triplet]:
    """One random batch: batch_size distinct vertices, in-batch negatives."""
    if batch_size < 2:
        raise BatchError("batch_size must be >= 2")
    if len(pool.items) < batch_size:
        raise BatchError(
            f"need {batch_size} distinct vertices with >=2 valid views, have {len(pool.items)}")
    idx = rng.choice(len(pool.items), size=batch_size, replace=False)
    chosen = []
    for ii in idx:
        k = len(pool.items[ii].entries)
        a, b = rng.choice(k, size=2, replace=False)
        chosen.append((int(ii), int(a), int(b)))
    return _triplets_from_pairs(pool, chosen, rng)


def iter_epoch_batches(pool: TrainingPool, batch_size: int, rng: np.random.Generator):
    """One shuffled pass over all correspondence pairs, packed into batches.

    A vertex may recur within an epoch batch (small datasets could not fill
    distinct batches otherwise) but never claims more than half of one, so
    a different-vertex negative assignment always exists. Trailing pairs
    that cannot complete a full batch are dropped.
    """
    if batch_size < 2:
        raise BatchError("batch_size must be >= 2")
    cap = batch_size // 2
    order = rng.permutation(len(pool.pairs))
    remaining = [pool.pairs[i] for i in order]
    while len(remaining) >= batch_size:
        batch: list[tuple[int, int, int]] = []
        used: dict[int, int] = {}
        rest: list[tuple[int, int, int]] = []
        for p in remaining:
            if len(batch) < batch_size and used.get(p[0], 0) < cap:
                batch.append(p)
                used[p[0]] = used.get(p[0], 0) + 1
            else:
                rest.append(p)
        if len(batch) < batch_size:
            break
        yield _triplets_from_pairs(pool, batch, rng)
        remaining = rest


# --- optional patch cache (byte-quantized, fixed-stride blocks) ---

_CACHE_MAGIC = b"SCPC"
_CACHE_VERSION = 1
_TAG_FORMAT = "<32sqiii"  # shape_id, vertex_id, view_id, row, col
_TAG_SIZE = struct.calcsize(_TAG_FORMAT)
_BLOCK_SIZE = _TAG_SIZE + 4 * 32 * 32


def save_patch_cache(patches: list[MultiScalePatch], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IQ", _CACHE_VERSION, len(patches)))
        for p in patches:
            sid = p.source[0].encode("utf-8")[:32].ljust(32, b"\0")
            vid = -1 if p.vertex_id is None else int(p.vertex_id)
            fh.write(struct.pack(_TAG_FORMAT, sid, vid, int(p.source[1]),
                                 int(p.center[0]), int(p.center[1])))
            fh.write(np.clip(np.round(p.channels * 255), 0, 255).astype(np.uint8).tobytes())


def load_patch_cache(path: str | Path) -> list[MultiScalePatch]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise ValueError(f"{path} is not a patch cache")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _CACHE_VERSION:
            raise ValueError(f"unsupported patch cache version {version}")
        out = []
        for _ in range(count):
            block = fh.read(_BLOCK_SIZE)
            if len(block) != _BLOCK_SIZE:
                raise ValueError(f"truncated patch cache {path}")
            sid, vid, view_id, row, col = struct.unpack_from(_TAG_FORMAT, block)
            raw = np.frombuffer(block, dtype=np.uint8, offset=_TAG_SIZE).reshape(4, 32, 32)
            out.append(MultiScalePatch(
                channels=raw.astype(np.float32) / 255.0,
                center=(row, col),
                source=(sid.rstrip(b"\0").decode("utf-8"), view_id),
                vertex_id=None if vid < 0 else vid))
    return out
