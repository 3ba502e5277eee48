"""Correspondence matching, distance maps, retrieval MAP, the retrieval
baseline, view-disparity sweeps and label transfer.

Matching is exhaustive nearest-neighbor over descriptor distances with
lexicographic (row, col) tie-breaking; a match within tau = 16 pixels of
the ground-truth pixel counts as a success. Retrieval ranks gallery pixels
by ascending distance and scores the ranking with average precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .camera import Viewpoint
from .correspondence import build_ground_truth, valid_mask
from .dataset import ShapeData
from .hog import hog_descriptors
from .mesh import TriangleMesh, normalize_mesh
from .network import DescriptorNet
from .patches import extract_patch, make_multiscale
from .render import project_vertices, render_normal_map
from .sketch import SKETCH_SIZE, SketchImage, extract_sketch

SUCCESS_RADIUS = 16.0


class EvaluationError(RuntimeError):
    pass


class ViewMismatchError(EvaluationError):
    """The baseline requires the test view to exist in the training view set."""


@dataclass
class MatchResult:
    query: tuple[int, int]
    matched: tuple[int, int]
    distance: float
    success: bool


def pixel_distance(a, b, metric: str = "euclidean") -> float:
    dr = float(a[0]) - float(b[0])
    dc = float(a[1]) - float(b[1])
    if metric == "chebyshev":
        return max(abs(dr), abs(dc))
    return math.hypot(dr, dc)


def descriptor_distances(a: np.ndarray, b: np.ndarray, chunk: int = 128) -> np.ndarray:
    """(Q, D) x (C, D) -> (Q, C) Euclidean distances.

    Computed from squared differences so d(x, y) and d(y, x) are bitwise
    equal (the distance-symmetry invariant).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for at in range(0, a.shape[0], chunk):
        d = a[at:at + chunk, None, :] - b[None, :, :]
        out[at:at + chunk] = np.sqrt((d * d).sum(axis=2))
    return out


def _lex_order(pixels: np.ndarray) -> np.ndarray:
    return np.lexsort((pixels[:, 1], pixels[:, 0]))


class DescriptorIndex:
    """Cached descriptors for a fixed candidate pixel set of one sketch."""

    def __init__(self, net: DescriptorNet, sketch: SketchImage, pixels: np.ndarray,
                 view_id: int = 0):
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        order = _lex_order(pixels)
        self.sketch = sketch
        self.pixels = pixels[order]
        patches = [make_multiscale(sketch, tuple(px), view_id=view_id) for px in self.pixels]
        self.descriptors = net.descriptors(patches) if patches else np.zeros((0, 1))


def match_correspondences(net: DescriptorNet, sketch_a: SketchImage, sketch_b: SketchImage,
                          query_pixels: np.ndarray, candidate_pixels: np.ndarray,
                          gt_pixels: np.ndarray, tau: float = SUCCESS_RADIUS,
                          metric: str = "euclidean",
                          candidate_index: DescriptorIndex | None = None) -> list[MatchResult]:
    """Exhaustive NN matching of queries in sketch A against candidates in B.

    ``gt_pixels`` holds the ground-truth pixel in B for each query; success
    means the matched pixel lies within tau of it. Ties break toward the
    lexicographically smallest (row, col).
    """
    query_pixels = np.asarray(query_pixels, dtype=np.int64).reshape(-1, 2)
    gt_pixels = np.asarray(gt_pixels, dtype=np.int64).reshape(-1, 2)
    if query_pixels.shape[0] != gt_pixels.shape[0]:
        raise EvaluationError("query and ground-truth pixel counts disagree")
    if candidate_index is None:
        candidate_pixels = np.asarray(candidate_pixels, dtype=np.int64).reshape(-1, 2)
        if candidate_pixels.shape[0] == 0:
            raise EvaluationError("empty candidate set")
        candidate_index = DescriptorIndex(net, sketch_b, candidate_pixels)
    elif candidate_index.pixels.shape[0] == 0:
        raise EvaluationError("empty candidate set")
    q_desc = net.descriptors([make_multiscale(sketch_a, tuple(px)) for px in query_pixels])
    dist = descriptor_distances(q_desc, candidate_index.descriptors)
    best = dist.argmin(axis=1)  # first minimum = lexicographic winner (pixels sorted)
    results = []
    for i, (qpx, gt) in enumerate(zip(query_pixels, gt_pixels)):
        mpx = candidate_index.pixels[best[i]]
        ok = pixel_distance(mpx, gt, metric) <= tau
        results.append(MatchResult(query=(int(qpx[0]), int(qpx[1])),
                                   matched=(int(mpx[0]), int(mpx[1])),
                                   distance=float(dist[i, best[i]]), success=ok))
    return results


def correspondence_accuracy(results: list[MatchResult]) -> float:
    if not results:
        raise EvaluationError("no match results to average")
    return float(np.mean([r.success for r in results]))


def paired_gt_queries(data: ShapeData, view_a: int, view_b: int, mode: str = "AND",
                      max_queries: int | None = None,
                      rng: np.random.Generator | None = None):
    """Query pixels in view A with known ground truth in view B.

    Returns (queries (Q,2), gt_pixels (Q,2), vertex_ids (Q,)). Queries are
    valid under ``mode`` in view A; their ground-truth pixel must exist in
    view B.
    """
    q_pixels, q_vids = data.gt_pixels_in_view(view_a, mode)
    vid_to_rec = {rec.vertex_id: rec for rec in data.records}
    rows = []
    for k in range(q_pixels.shape[0]):
        gt = vid_to_rec[int(q_vids[k])].pixel_in_view(view_b)
        if gt is not None:
            rows.append((q_pixels[k], gt, q_vids[k]))
    if not rows:
        return (np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
    queries = np.asarray([r[0] for r in rows], dtype=np.int64)
    gts = np.asarray([r[1] for r in rows], dtype=np.int64)
    vids = np.asarray([r[2] for r in rows], dtype=np.int64)
    if max_queries is not None and queries.shape[0] > max_queries:
        rng = rng or np.random.default_rng(0)
        sel = rng.choice(queries.shape[0], size=max_queries, replace=False)
        queries, gts, vids = queries[sel], gts[sel], vids[sel]
    return queries, gts, vids


@dataclass
class DistanceField:
    values: np.ndarray            # (480, 480) float64, NaN where absent
    query: tuple[int, int]
    candidates: np.ndarray        # (C, 2)

    def minimum(self) -> tuple[tuple[int, int], float]:
        """Lexicographically-first argmin over the evaluated candidates."""
        vals = self.values[self.candidates[:, 0], self.candidates[:, 1]]
        order = _lex_order(self.candidates)
        sorted_vals = vals[order]
        i = order[int(np.argmin(sorted_vals))]
        px = (int(self.candidates[i, 0]), int(self.candidates[i, 1]))
        return px, float(self.values[px])


def distance_map(net: DescriptorNet, sketch_a: SketchImage, pixel: tuple[int, int],
                 sketch_b: SketchImage, candidates: np.ndarray | None = None,
                 stride: int = 4, mode: str = "OR") -> DistanceField:
    """Descriptor distances from one pixel in A to candidate pixels in B.

    With explicit candidates the field covers exactly that evaluation
    domain (its minimum then agrees with match_correspondences). Without,
    a stride grid of sampling-valid pixels is used for visualization.
    """
    if candidates is None:
        rr, cc = np.meshgrid(np.arange(0, SKETCH_SIZE, stride),
                             np.arange(0, SKETCH_SIZE, stride), indexing="ij")
        grid = np.stack([rr.ravel(), cc.ravel()], axis=1)
        grid = grid[valid_mask(sketch_b, grid, mode)]
        candidates = grid
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1, 2)
    if candidates.shape[0] == 0:
        raise EvaluationError("empty candidate set")
    index = DescriptorIndex(net, sketch_b, candidates)
    q = net.descriptors([make_multiscale(sketch_a, pixel)])
    dist = descriptor_distances(q, index.descriptors)[0]
    values = np.full((SKETCH_SIZE, SKETCH_SIZE), np.nan)
    values[index.pixels[:, 0], index.pixels[:, 1]] = dist
    return DistanceField(values=values, query=(int(pixel[0]), int(pixel[1])),
                         candidates=index.pixels)


# --- retrieval MAP (ranked-list scoring) ---

def precision_at(labels: np.ndarray, i: int) -> float:
    """Precision at rank i (1-based) of a +-1 label list."""
    head = np.asarray(labels)[:i]
    return float(np.maximum(head, 0).sum() / np.abs(head).sum())


def average_precision(labels: np.ndarray) -> float:
    """AP of a ranked +-1 label list; requires at least one positive."""
    labels = np.asarray(labels)
    pos = labels == 1
    if not pos.any():
        raise EvaluationError("average precision undefined without positives")
    ranks = np.arange(1, labels.size + 1)
    cum_pos = np.cumsum(pos)
    precisions = cum_pos / ranks
    return float(precisions[pos].sum() / pos.sum())


@dataclass
class RetrievalResult:
    mean_ap: float
    aps: list[float] = field(default_factory=list)
    skipped: int = 0
    query_pixels: list[tuple[int, int]] = field(default_factory=list)


def pixelwise_retrieval_map(net: DescriptorNet, shapes: list[ShapeData],
                            query_shape: int, query_view: int, n_queries: int,
                            rng: np.random.Generator, mode: str = "AND") -> RetrievalResult:
    """MAP of retrieving corresponding pixels from all other-view sketches.

    Queries are sampled uniformly from the query sketch's sampling-valid
    ground-truth pixels. Gallery pixels across every other sketch are
    positive iff they project from the same vertex of the same shape.
    Queries without any positive in the gallery are skipped and counted.
    """
    qdata = shapes[query_shape]
    q_pixels, q_vids = qdata.gt_pixels_in_view(query_view, mode)
    if q_pixels.shape[0] == 0:
        raise EvaluationError("query sketch has no valid ground-truth pixels")
    take = min(n_queries, q_pixels.shape[0])
    sel = rng.choice(q_pixels.shape[0], size=take, replace=False)

    gallery_desc = []
    gallery_tags = []  # (shape_idx, vertex_id)
    for si, sdata in enumerate(shapes):
        for vi in range(len(sdata.sketches)):
            if si == query_shape and vi == query_view:
                continue
            pixels, vids = sdata.gt_pixels_in_view(vi, mode)
            if pixels.shape[0] == 0:
                continue
            index = DescriptorIndex(net, sdata.sketch(vi), pixels, view_id=vi)
            gallery_desc.append(index.descriptors)
            order_vids = vids[_lex_order(pixels)]
            gallery_tags.append(np.stack([np.full(order_vids.shape[0], si), order_vids], axis=1))
    if not gallery_desc:
        raise EvaluationError("empty retrieval gallery")
    gallery = np.concatenate(gallery_desc, axis=0)
    tags = np.concatenate(gallery_tags, axis=0)

    q_desc = net.descriptors([make_multiscale(qdata.sketch(query_view), tuple(px),
                                              view_id=query_view) for px in q_pixels[sel]])
    dists = descriptor_distances(q_desc, gallery)
    result = RetrievalResult(mean_ap=0.0)
    for k, qi in enumerate(sel):
        positive = (tags[:, 0] == query_shape) & (tags[:, 1] == q_vids[qi])
        if not positive.any():
            result.skipped += 1
            continue
        order = np.argsort(dists[k], kind="stable")
        labels = np.where(positive[order], 1, -1)
        result.aps.append(average_precision(labels))
        result.query_pixels.append((int(q_pixels[qi, 0]), int(q_pixels[qi, 1])))
    if not result.aps:
        raise EvaluationError("all retrieval queries lacked positives")
    result.mean_ap = float(np.mean(result.aps))
    return result


# --- retrieval-based baseline (train-set ground truth + HOG patch matching) ---

def _same_view(a: Viewpoint, b: Viewpoint) -> bool:
    return abs(a.azimuth - b.azimuth) < 1e-6 and abs(a.elevation - b.elevation) < 1e-6


def _find_view(shape: ShapeData, view: Viewpoint, role: str) -> int:
    for vi, v in enumerate(shape.views):
        if _same_view(v, view):
            return vi
    raise ViewMismatchError(
        f"{role}: view azimuth={view.azimuth} elevation={view.elevation} "
        f"is missing from training shape {shape.shape_id}")


def _hog_index(sketch: SketchImage, pixels: np.ndarray) -> np.ndarray:
    patches = np.stack([extract_patch(sketch, tuple(px), 32) for px in pixels])
    return hog_descriptors(patches)


def retrieval_baseline(train_shapes: list[ShapeData], test_shape: ShapeData,
                       view_a: int, view_b: int, query_pixels: np.ndarray,
                       gt_pixels: np.ndarray, tau: float = SUCCESS_RADIUS,
                       metric: str = "euclidean") -> list[MatchResult]:
    """Three-stage baseline: HOG-match into the train set under view A, jump
    through stored train ground truth to view B, HOG-match onto the test
    sketch. Requires the test views to exist in the training view set."""
    va = test_shape.views[view_a]
    vb = test_shape.views[view_b]

    # Stage-1 candidate pool: train pixels whose vertex is also visible in view B.
    pool_desc, pool_jump = [], []
    for sdata in train_shapes:
        tva = _find_view(sdata, va, "stage 1")
        tvb = _find_view(sdata, vb, "stage 2")
        pixels, vids = sdata.gt_pixels_in_view(tva, "AND")
        keep, jumps = [], []
        vid_to_rec = {rec.vertex_id: rec for rec in sdata.records}
        for i, vid in enumerate(vids):
            px_b = vid_to_rec[int(vid)].pixel_in_view(tvb)
            if px_b is not None:
                keep.append(i)
                jumps.append((sdata, tvb, px_b))
        if keep:
            pool_desc.append(_hog_index(sdata.sketch(tva), pixels[keep]))
            pool_jump.extend(jumps)
    if not pool_jump:
        raise EvaluationError("baseline: no usable train pixels for this view pair")
    pool = np.concatenate(pool_desc, axis=0)

    query_pixels = np.asarray(query_pixels, dtype=np.int64).reshape(-1, 2)
    gt_pixels = np.asarray(gt_pixels, dtype=np.int64).reshape(-1, 2)
    q_hog = _hog_index(test_shape.sketch(view_a), query_pixels)
    stage1 = descriptor_distances(q_hog, pool).argmin(axis=1)

    cand_pixels, _ = test_shape.gt_pixels_in_view(view_b, "AND")
    if cand_pixels.shape[0] == 0:
        raise EvaluationError("baseline: empty candidate set in view B")
    order = _lex_order(cand_pixels)
    cand_pixels = cand_pixels[order]
    cand_hog = _hog_index(test_shape.sketch(view_b), cand_pixels)

    results = []
    for qi in range(query_pixels.shape[0]):
        sdata, tvb, px_b = pool_jump[stage1[qi]]
        bridge = _hog_index(sdata.sketch(tvb), np.asarray([px_b]))
        d = descriptor_distances(bridge, cand_hog)[0]
        best = int(d.argmin())
        mpx = cand_pixels[best]
        ok = pixel_distance(mpx, gt_pixels[qi], metric) <= tau
        results.append(MatchResult(query=(int(query_pixels[qi, 0]), int(query_pixels[qi, 1])),
                                   matched=(int(mpx[0]), int(mpx[1])),
                                   distance=float(d[best]), success=ok))
    return results


# --- view-disparity sweep ---

@dataclass
class DisparityRow:
    disparity: float
    accuracy: float
    n_queries: int
    n_excluded: int


def view_disparity_sweep(net: DescriptorNet, mesh: TriangleMesh, anchor_view: Viewpoint,
                         disparities=(30, 60, 90, 150, 180), max_queries: int = 200,
                         rng: np.random.Generator | None = None,
                         tau: float = SUCCESS_RADIUS) -> list[DisparityRow]:
    """Correspondence accuracy from one anchor view to rotated views.

    Queries whose vertex is invisible in the target view are excluded and
    counted per disparity.
    """
    rng = rng or np.random.default_rng(0)
    mesh = normalize_mesh(mesh)
    views = [anchor_view] + [
        Viewpoint((anchor_view.azimuth + d) % 360.0, anchor_view.elevation,
                  anchor_view.distance, anchor_view.image_size) for d in disparities]
    sketches, projections = [], {}
    for vi, view in enumerate(views):
        nm = render_normal_map(mesh, view)
        sketches.append(extract_sketch(nm, shape_id=mesh.name))
        projections[vi] = project_vertices(mesh, view, nm.depth, view_id=vi)
    records = build_ground_truth(projections)
    data = ShapeData(mesh.name, views, sketches, records)

    q_pixels, q_vids = data.gt_pixels_in_view(0, "AND")
    if q_pixels.shape[0] == 0:
        raise EvaluationError("anchor view has no valid query pixels")
    if q_pixels.shape[0] > max_queries:
        sel = rng.choice(q_pixels.shape[0], size=max_queries, replace=False)
        q_pixels, q_vids = q_pixels[sel], q_vids[sel]

    rows = []
    for di, disp in enumerate(disparities):
        vi = di + 1
        visible = projections[vi].visible
        included = [k for k, vid in enumerate(q_vids) if visible[int(vid)]]
        excluded = len(q_vids) - len(included)
        if not included:
            rows.append(DisparityRow(float(disp), float("nan"), 0, excluded))
            continue
        vid_to_rec = {rec.vertex_id: rec for rec in records}
        gt = np.asarray([vid_to_rec[int(q_vids[k])].pixel_in_view(vi) for k in included])
        cands, _ = data.gt_pixels_in_view(vi, "AND")
        if cands.shape[0] == 0:
            rows.append(DisparityRow(float(disp), float("nan"), 0, excluded))
            continue
        results = match_correspondences(net, sketches[0], sketches[vi],
                                        q_pixels[included], cands, gt, tau=tau)
        rows.append(DisparityRow(float(disp), correspondence_accuracy(results),
                                 len(included), excluded))
    return rows


# --- segmentation label transfer ---

def transfer_labels(net: DescriptorNet, labeled_sketch: SketchImage,
                    source_points: np.ndarray, source_labels: np.ndarray,
                    target_sketch: SketchImage, target_points: np.ndarray | None = None,
                    smoothing: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-point labels on the target via nearest-descriptor transfer.

    Source points must cover the labeled sketch's ink points. Optional
    stroke-majority smoothing relabels each connected ink component of the
    target by the majority label among its transferred points.
    """
    source_points = np.asarray(source_points, dtype=np.int64).reshape(-1, 2)
    source_labels = np.asarray(source_labels, dtype=np.int64).reshape(-1)
    if source_points.shape[0] != source_labels.shape[0]:
        raise EvaluationError("source points and labels disagree in length")
    if source_points.shape[0] == 0:
        raise EvaluationError("unlabeled source sketch")
    ink = labeled_sketch.ink_points()
    covered = {(int(r), int(c)) for r, c in source_points}
    missing = [(int(r), int(c)) for r, c in ink if (int(r), int(c)) not in covered]
    if missing:
        raise EvaluationError(f"source labels miss {len(missing)} ink points (e.g. {missing[0]})")

    if target_points is None:
        target_points = target_sketch.ink_points()
    target_points = np.asarray(target_points, dtype=np.int64).reshape(-1, 2)
    src_index = DescriptorIndex(net, labeled_sketch, source_points)
    order = _lex_order(source_points)
    labels_sorted = source_labels[order]
    t_desc = net.descriptors([make_multiscale(target_sketch, tuple(px))
                              for px in target_points])
    nn = descriptor_distances(t_desc, src_index.descriptors).argmin(axis=1)
    out = labels_sorted[nn]

    if smoothing and target_points.shape[0]:
        comps, _ = ndimage.label(target_sketch.pixels, structure=np.ones((3, 3), dtype=np.int8))
        comp_of = comps[target_points[:, 0], target_points[:, 1]]
        for comp in np.unique(comp_of):
            if comp == 0:
                continue
            members = comp_of == comp
            values, counts = np.unique(out[members], return_counts=True)
            out[members] = values[np.argmax(counts)]
    return target_points, out


# --- visualizations ---

def render_distance_map_png(field: DistanceField, path: str | Path) -> None:
    """Heat image of a distance field; absent pixels gray, query unmarked."""
    import cv2

    vals = field.values
    finite = np.isfinite(vals)
    img = np.full((SKETCH_SIZE, SKETCH_SIZE), 128, dtype=np.uint8)
    if finite.any():
        v = vals[finite]
        lo, hi = float(v.min()), float(v.max())
        scaled = ((vals - lo) / (hi - lo + 1e-12) * 255.0)
        img[finite] = np.clip(scaled[finite], 0, 255).astype(np.uint8)
    color = cv2.applyColorMap(img, cv2.COLORMAP_JET)
    color[~finite] = (90, 90, 90)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), color)


def save_match_visualization(sketch_a: SketchImage, sketch_b: SketchImage,
                             results: list[MatchResult], path: str | Path,
                             box: int = 9) -> None:
    """Side-by-side sketches with query/match boxes (green success, red failure)."""
    import cv2

    def canvas(sk):
        g = ((1 - sk.pixels) * 255).astype(np.uint8)
        return np.stack([g, g, g], axis=2)

    left, right = canvas(sketch_a), canvas(sketch_b)
    for r in results:
        color = (0, 200, 0) if r.success else (0, 0, 255)  # BGR
        for img, (row, col) in ((left, r.query), (right, r.matched)):
            cv2.rectangle(img, (col - box // 2, row - box // 2),
                          (col + box // 2, row + box // 2), color, 1)
    combined = np.concatenate([left, right], axis=1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), combined)
