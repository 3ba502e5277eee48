"""Command-line pipeline: synthesis, dataset building, training, evaluation.

Every subcommand writes its artifacts under --out together with a
run-meta.json (command, resolved config, seed, versions, wall time) and
prints a one-line summary with the primary metric. A key=value config file
provides flag defaults; explicit flags override it. Exit codes: 0 success,
2 usage, 3 failed precondition/validation, 4 I/O error, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_IO = 4
EXIT_UNEXPECTED = 1


def _parse_config_file(path: str) -> dict:
    """key=value lines; values coerced to bool/int/float when they parse."""
    out: dict = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (need key=value): {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if value.lower() in ("true", "false"):
            out[key] = value.lower() == "true"
            continue
        for cast in (int, float):
            try:
                out[key] = cast(value)
                break
            except ValueError:
                continue
        else:
            out[key] = value
    return out


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _pixel(text: str) -> tuple[int, int]:
    r, c = (int(t) for t in text.split(","))
    return r, c


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
    p.add_argument("--threads", type=int, default=0,
                   help="BLAS thread cap; 1 = bitwise-reproducible, 0 = leave as is")
    p.add_argument("--config", default=None, help="key=value config file (flags override)")


def _add_render_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--azimuth-step", type=int, default=30, choices=(15, 30),
                   help="hemisphere sampler azimuth step in degrees (default 30)")
    p.add_argument("--azimuths", default=None,
                   help="explicit azimuth list 'a0,a1,...' (overrides --azimuth-step)")
    p.add_argument("--elevation", type=float, default=30.0,
                   help="viewing elevation in degrees, 15..45 (default 30)")
    p.add_argument("--views", type=int, default=12, help="max number of views (default 12)")
    p.add_argument("--canny-low", type=float, default=0.1,
                   help="Canny low threshold as fraction of max gradient (default 0.1)")
    p.add_argument("--canny-high", type=float, default=0.2,
                   help="Canny high threshold as fraction of max gradient (default 0.2)")
    p.add_argument("--eps-depth", type=float, default=1e-3,
                   help="visibility depth tolerance in bounding-radius units (default 1e-3)")
    p.add_argument("--save-normal-maps", action="store_true",
                   help="also write 16-bit normal-map PNGs (debug)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    p.add_argument("--batch", type=int, default=64, help="triplets per batch (default 64)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    p.add_argument("--margin", type=float, default=1.0, help="triplet margin (default 1.0)")
    p.add_argument("--beta1", type=float, default=0.9, help="Adam beta1 (default 0.9)")
    p.add_argument("--beta2", type=float, default=0.999, help="Adam beta2 (default 0.999)")
    p.add_argument("--adam-eps", type=float, default=1e-8, help="Adam epsilon (default 1e-8)")
    p.add_argument("--sampling-mode", choices=("OR", "AND"), default=None,
                   help="override the manifest's patch sampling mode")
    p.add_argument("--scales", default="32,64,128,256",
                   help="scale subset for the network input (default all four)")
    p.add_argument("--no-shared-weights", action="store_true",
                   help="ablation: independent branch weights per scale")
    p.add_argument("--val-batches", type=int, default=2,
                   help="fixed validation batches per epoch (default 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchcorr",
        description="Multi-view sketch synthesis, descriptor training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render sketches + ground truth for one mesh")
    p.add_argument("--mesh", default=None, help="input OBJ path")
    p.add_argument("--procedural", default=None, help="procedural shape 'category:index'")
    _add_render_flags(p)
    _add_common(p)

    p = sub.add_parser("build-dataset", help="build a category dataset with splits")
    p.add_argument("--meshes", default=None, help="directory of OBJ files")
    p.add_argument("--procedural", default=None, help="procedural set 'category:count'")
    p.add_argument("--category", default=None, help="category name (default inferred)")
    p.add_argument("--mode", choices=("OR", "AND"), default="OR",
                   help="patch sampling mode stored in the manifest (default OR)")
    _add_render_flags(p)
    _add_common(p)

    p = sub.add_parser("train", help="train the descriptor network")
    p.add_argument("--dataset", required=True, help="manifest.json path")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval-correspondence", help="sketch-correspondence accuracy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--max-queries", type=int, default=50, help="queries per view pair")
    p.add_argument("--tau", type=float, default=16.0, help="success radius in pixels")
    p.add_argument("--metric", choices=("euclidean", "chebyshev"), default="euclidean")
    p.add_argument("--pairs", choices=("adjacent", "all"), default="adjacent",
                   help="which view pairs to evaluate (default adjacent)")
    _add_common(p)

    p = sub.add_parser("eval-retrieval", help="pixel-wise retrieval MAP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", type=int, default=1000, help="query pixels (default 1000)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    _add_common(p)

    p = sub.add_parser("eval-baseline", help="retrieval-based baseline accuracy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--max-queries", type=int, default=50)
    p.add_argument("--tau", type=float, default=16.0)
    _add_common(p)

    p = sub.add_parser("disparity", help="accuracy vs view disparity sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", default=None)
    p.add_argument("--procedural", default=None, help="procedural shape 'category:index'")
    p.add_argument("--azimuth", type=float, default=0.0, help="anchor azimuth")
    p.add_argument("--elevation", type=float, default=30.0)
    p.add_argument("--disparities", default="30,60,90,150,180")
    p.add_argument("--max-queries", type=int, default=150)
    _add_common(p)

    p = sub.add_parser("match", help="match pixels between two sketch PNGs")
    p.add_argument("--sketch-a", required=True)
    p.add_argument("--sketch-b", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", type=int, default=30, help="ink query points (default 30)")
    p.add_argument("--mode", choices=("OR", "AND"), default="AND",
                   help="candidate validity rule (default AND)")
    _add_common(p)

    p = sub.add_parser("distance-map", help="descriptor distance field for one pixel")
    p.add_argument("--sketch-a", required=True)
    p.add_argument("--sketch-b", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pixel", required=True, help="query 'row,col' in sketch A")
    p.add_argument("--stride", type=int, default=4, help="candidate grid stride (default 4)")
    p.add_argument("--mode", choices=("OR", "AND"), default="OR")
    _add_common(p)

    p = sub.add_parser("transfer-labels", help="transfer per-point labels across sketches")
    p.add_argument("--source", required=True, help="labeled sketch PNG")
    p.add_argument("--labels", required=True, help="CSV of 'row,col,label' source points")
    p.add_argument("--target", required=True, help="target sketch PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stride", type=int, default=1, help="target ink subsample stride")
    p.add_argument("--no-smoothing", action="store_true", help="skip stroke-majority smoothing")
    _add_common(p)
    return parser


def _resolve_views(args) -> list:
    from .camera import Viewpoint, sample_viewpoints

    if args.azimuths:
        azis = [float(t) for t in args.azimuths.split(",") if t.strip()]
        return [Viewpoint(a % 360.0, args.elevation) for a in azis[:args.views]]
    return sample_viewpoints(args.azimuth_step, args.elevation, args.views)


def _resolve_meshes(args):
    from .mesh import load_obj
    from .shapes import procedural_category

    if getattr(args, "procedural", None):
        spec = args.procedural
        category, _, count = spec.partition(":")
        return procedural_category(category, int(count or "1"), seed=args.seed), category
    if getattr(args, "meshes", None):
        paths = sorted(Path(args.meshes).glob("*.obj"))
        if not paths:
            raise FileNotFoundError(f"no .obj files in {args.meshes}")
        return [str(p) for p in paths], Path(args.meshes).name
    if getattr(args, "mesh", None):
        return [str(args.mesh)], Path(args.mesh).stem
    raise ValueError("specify --mesh/--meshes or --procedural")


def _single_mesh(args):
    from .mesh import load_obj
    from .shapes import procedural_category

    if args.procedural:
        category, _, idx = args.procedural.partition(":")
        return procedural_category(category, int(idx or "0") + 1, seed=args.seed)[-1][1]
    if args.mesh:
        return load_obj(args.mesh)
    raise ValueError("specify --mesh or --procedural")


def _write_meta(out_dir: Path, args, summary: dict, t0: float) -> None:
    import numpy

    from . import __version__

    meta = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "command"},
        "seed": getattr(args, "seed", None),
        "versions": {"sketchcorr": __version__, "numpy": numpy.__version__,
                     "python": sys.version.split()[0]},
        "wall_seconds": round(time.time() - t0, 3),
        "summary": summary,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run-meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


# --- command handlers ---

def _cmd_synth(args) -> dict:
    from .correspondence import build_ground_truth, pairwise_count, save_correspondence_store
    from .dataset import build_category_dataset  # noqa: F401  (shared pipeline below)
    from .mesh import normalize_mesh
    from .render import project_vertices, render_normal_map, save_normal_map_png
    from .sketch import extract_sketch, save_sketch_png

    out = Path(args.out)
    mesh = _single_mesh(args)
    mesh = normalize_mesh(mesh)
    views = _resolve_views(args)
    projections = {}
    for vi, view in enumerate(views):
        nm = render_normal_map(mesh, view)
        sk = extract_sketch(nm, args.canny_low, args.canny_high, shape_id=mesh.name)
        save_sketch_png(sk, out / f"sketches/{mesh.name}_v{vi:02d}.png")
        if args.save_normal_maps:
            save_normal_map_png(nm, out / f"normals/{mesh.name}_v{vi:02d}.png")
        projections[vi] = project_vertices(mesh, view, nm.depth, args.eps_depth, view_id=vi)
    records = build_ground_truth(projections)
    save_correspondence_store(records, mesh.name, out / f"corr/{mesh.name}.txt")
    summary = {"views": len(views), "records": len(records), "pairs": pairwise_count(records)}
    print(f"synth: {len(views)} views, {len(records)} correspondence records, "
          f"{summary['pairs']} pairs -> {out}")
    return summary


def _cmd_build_dataset(args) -> dict:
    from .dataset import build_category_dataset

    meshes, default_category = _resolve_meshes(args)
    category = args.category or default_category
    views = _resolve_views(args)
    manifest = build_category_dataset(
        meshes, views, args.out, category, sampling_mode=args.mode, seed=args.seed,
        canny_low=args.canny_low, canny_high=args.canny_high, eps_depth=args.eps_depth,
        save_normal_maps=args.save_normal_maps)
    pairs = sum(s.pair_count for s in manifest.shapes)
    summary = {"category": category, "shapes": len(manifest.shapes),
               "views": len(views), "pairs": pairs,
               "splits": {k: len(v) for k, v in manifest.splits.items()}}
    print(f"build-dataset: {len(manifest.shapes)} shapes x {len(views)} views, "
          f"{pairs} ground-truth pairs, splits {summary['splits']} -> {args.out}")
    return summary


def _cmd_train(args) -> dict:
    from .dataset import load_manifest
    from .training import TrainConfig, train

    manifest = load_manifest(args.dataset)
    config = TrainConfig(
        batch_size=args.batch, learning_rate=args.lr, adam_beta1=args.beta1,
        adam_beta2=args.beta2, adam_eps=args.adam_eps, margin=args.margin,
        epochs=args.epochs, seed=args.seed, category=manifest.category,
        sampling_mode=args.sampling_mode or manifest.sampling_mode,
        scales=_csv_ints(args.scales), shared_weights=not args.no_shared_weights,
        val_batches=args.val_batches)
    result = train(manifest, config, args.out)
    summary = {"epochs": config.epochs, "final_train_loss": result.train_losses[-1],
               "final_val_loss": result.val_losses[-1],
               "checkpoint": str(result.checkpoint_final)}
    print(f"train: {config.epochs} epochs, final train loss "
          f"{result.train_losses[-1]:.4f} -> {result.checkpoint_final}")
    return summary


def _load_eval_shapes(manifest, split):
    from .dataset import load_shape_data

    ids = manifest.splits.get(split, [])
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    return [load_shape_data(manifest, sid) for sid in ids]


def _view_pairs(n_views: int, mode: str):
    if mode == "all":
        return [(i, j) for i in range(n_views) for j in range(n_views) if i != j]
    return [(i, (i + 1) % n_views) for i in range(n_views)]


def _cmd_eval_correspondence(args) -> dict:
    import numpy as np

    from .dataset import load_manifest
    from .evaluation import match_correspondences, paired_gt_queries
    from .network import load_checkpoint

    manifest = load_manifest(args.dataset)
    net, _ = load_checkpoint(args.checkpoint)
    shapes = _load_eval_shapes(manifest, args.split)
    rng = np.random.default_rng(args.seed)
    rows, successes = [], []
    for data in shapes:
        for va, vb in _view_pairs(len(data.sketches), args.pairs):
            queries, gts, _ = paired_gt_queries(data, va, vb, "AND", args.max_queries, rng)
            if queries.shape[0] == 0:
                continue
            cands, _ = data.gt_pixels_in_view(vb, "AND")
            if cands.shape[0] == 0:
                continue
            results = match_correspondences(net, data.sketch(va), data.sketch(vb),
                                            queries, cands, gts, tau=args.tau,
                                            metric=args.metric)
            for r in results:
                successes.append(r.success)
                rows.append(f"{data.shape_id},{va},{vb},{r.query[0]},{r.query[1]},"
                            f"{r.matched[0]},{r.matched[1]},{r.distance:.6f},{int(r.success)}")
    if not successes:
        raise ValueError("no evaluable queries in this split")
    acc = float(np.mean(successes))
    _write_csv(Path(args.out) / "correspondence.csv",
               "shape_id,view_a,view_b,query_row,query_col,match_row,match_col,distance,success",
               rows)
    print(f"eval-correspondence: accuracy {acc:.4f} over {len(successes)} queries "
          f"(tau={args.tau}, {args.metric})")
    return {"accuracy": acc, "queries": len(successes)}


def _cmd_eval_retrieval(args) -> dict:
    import numpy as np

    from .dataset import load_manifest
    from .evaluation import pixelwise_retrieval_map
    from .network import load_checkpoint

    manifest = load_manifest(args.dataset)
    net, _ = load_checkpoint(args.checkpoint)
    shapes = _load_eval_shapes(manifest, args.split)
    rng = np.random.default_rng(args.seed)
    per_query_budget = max(1, args.queries // (len(shapes) * len(shapes[0].sketches)))
    rows, aps, skipped = [], [], 0
    for si, data in enumerate(shapes):
        for vi in range(len(data.sketches)):
            res = pixelwise_retrieval_map(net, shapes, si, vi, per_query_budget, rng)
            skipped += res.skipped
            for (r, c), ap in zip(res.query_pixels, res.aps):
                aps.append(ap)
                rows.append(f"{data.shape_id},{vi},{r},{c},{ap:.6f}")
    mean_ap = float(np.mean(aps))
    _write_csv(Path(args.out) / "retrieval.csv", "shape_id,view,query_row,query_col,ap", rows)
    print(f"eval-retrieval: MAP {mean_ap:.4f} over {len(aps)} queries ({skipped} skipped)")
    return {"map": mean_ap, "queries": len(aps), "skipped": skipped}


def _cmd_eval_baseline(args) -> dict:
    import numpy as np

    from .dataset import load_manifest
    from .evaluation import paired_gt_queries, retrieval_baseline

    manifest = load_manifest(args.dataset)
    train_shapes = _load_eval_shapes(manifest, "train")
    shapes = _load_eval_shapes(manifest, args.split)
    rng = np.random.default_rng(args.seed)
    rows, successes = [], []
    for data in shapes:
        for va, vb in _view_pairs(len(data.sketches), "adjacent"):
            queries, gts, _ = paired_gt_queries(data, va, vb, "AND", args.max_queries, rng)
            if queries.shape[0] == 0:
                continue
            results = retrieval_baseline(train_shapes, data, va, vb, queries, gts,
                                         tau=args.tau)
            for r in results:
                successes.append(r.success)
                rows.append(f"{data.shape_id},{va},{vb},{r.query[0]},{r.query[1]},"
                            f"{r.matched[0]},{r.matched[1]},{r.distance:.6f},{int(r.success)}")
    if not successes:
        raise ValueError("no evaluable queries in this split")
    acc = float(np.mean(successes))
    _write_csv(Path(args.out) / "baseline.csv",
               "shape_id,view_a,view_b,query_row,query_col,match_row,match_col,distance,success",
               rows)
    print(f"eval-baseline: accuracy {acc:.4f} over {len(successes)} queries (tau={args.tau})")
    return {"accuracy": acc, "queries": len(successes)}


def _cmd_disparity(args) -> dict:
    import numpy as np

    from .camera import Viewpoint
    from .evaluation import view_disparity_sweep
    from .network import load_checkpoint

    net, _ = load_checkpoint(args.checkpoint)
    mesh = _single_mesh(args)
    anchor = Viewpoint(args.azimuth, args.elevation)
    disparities = [float(t) for t in args.disparities.split(",") if t.strip()]
    rows = view_disparity_sweep(net, mesh, anchor, disparities,
                                max_queries=args.max_queries,
                                rng=np.random.default_rng(args.seed))
    csv_rows = [f"{r.disparity:.0f},{r.accuracy:.6f},{r.n_queries},{r.n_excluded}"
                for r in rows]
    _write_csv(Path(args.out) / "disparity.csv",
               "disparity_deg,accuracy,n_queries,n_excluded", csv_rows)
    table = "  ".join(f"{r.disparity:.0f}deg={r.accuracy:.3f}" for r in rows)
    print(f"disparity: {table}")
    return {"rows": [vars(r) for r in rows]}


def _cmd_match(args) -> dict:
    import numpy as np

    from .correspondence import valid_mask
    from .evaluation import DescriptorIndex, descriptor_distances, save_match_visualization, MatchResult
    from .network import load_checkpoint
    from .patches import make_multiscale
    from .sketch import load_sketch_png

    net, _ = load_checkpoint(args.checkpoint)
    sketch_a = load_sketch_png(args.sketch_a)
    sketch_b = load_sketch_png(args.sketch_b)
    rng = np.random.default_rng(args.seed)
    ink = sketch_a.ink_points()
    if ink.shape[0] == 0:
        raise ValueError("sketch A has no ink to query")
    queries = ink[rng.choice(ink.shape[0], size=min(args.queries, ink.shape[0]),
                             replace=False)]
    cand = sketch_b.ink_points()
    cand = cand[valid_mask(sketch_b, cand, args.mode)]
    if cand.shape[0] == 0:
        raise ValueError("sketch B has no valid candidate pixels")
    index = DescriptorIndex(net, sketch_b, cand)
    q_desc = net.descriptors([make_multiscale(sketch_a, tuple(px)) for px in queries])
    dist = descriptor_distances(q_desc, index.descriptors)
    best = dist.argmin(axis=1)
    results = [MatchResult(query=(int(q[0]), int(q[1])),
                           matched=(int(index.pixels[b, 0]), int(index.pixels[b, 1])),
                           distance=float(dist[i, b]), success=True)
               for i, (q, b) in enumerate(zip(queries, best))]
    rows = [f"{r.query[0]},{r.query[1]},{r.matched[0]},{r.matched[1]},{r.distance:.6f}"
            for r in results]
    _write_csv(Path(args.out) / "matches.csv",
               "query_row,query_col,match_row,match_col,distance", rows)
    save_match_visualization(sketch_a, sketch_b, results, Path(args.out) / "matches.png")
    mean_d = float(np.mean([r.distance for r in results]))
    print(f"match: {len(results)} matches, mean descriptor distance {mean_d:.4f}")
    return {"matches": len(results), "mean_distance": mean_d}


def _cmd_distance_map(args) -> dict:
    from .evaluation import distance_map, render_distance_map_png
    from .network import load_checkpoint
    from .sketch import load_sketch_png

    net, _ = load_checkpoint(args.checkpoint)
    sketch_a = load_sketch_png(args.sketch_a)
    sketch_b = load_sketch_png(args.sketch_b)
    field = distance_map(net, sketch_a, _pixel(args.pixel), sketch_b,
                         stride=args.stride, mode=args.mode)
    render_distance_map_png(field, Path(args.out) / "distance_map.png")
    (px, val) = field.minimum()
    rows = [f"{r},{c},{field.values[r, c]:.6f}" for r, c in field.candidates]
    _write_csv(Path(args.out) / "distance_map.csv", "row,col,distance", rows)
    print(f"distance-map: minimum {val:.4f} at ({px[0]},{px[1]}) "
          f"over {field.candidates.shape[0]} candidates")
    return {"min_row": px[0], "min_col": px[1], "min_distance": val}


def _cmd_transfer_labels(args) -> dict:
    import numpy as np

    from .evaluation import transfer_labels
    from .network import load_checkpoint
    from .sketch import load_sketch_png

    net, _ = load_checkpoint(args.checkpoint)
    source = load_sketch_png(args.source)
    target = load_sketch_png(args.target)
    pts, labels = [], []
    for line in Path(args.labels).read_text(encoding="utf-8").splitlines()[1:]:
        if not line.strip():
            continue
        r, c, lab = (int(t) for t in line.split(","))
        pts.append((r, c))
        labels.append(lab)
    target_points = target.ink_points()[::max(1, args.stride)]
    out_points, out_labels = transfer_labels(net, source, np.asarray(pts), np.asarray(labels),
                                             target, target_points,
                                             smoothing=not args.no_smoothing)
    rows = [f"{r},{c},{lab}" for (r, c), lab in zip(out_points, out_labels)]
    _write_csv(Path(args.out) / "labels.csv", "row,col,label", rows)
    print(f"transfer-labels: {len(rows)} target points labeled "
          f"({len(np.unique(out_labels))} distinct labels)")
    return {"points": len(rows)}


_HANDLERS = {
    "synth": _cmd_synth,
    "build-dataset": _cmd_build_dataset,
    "train": _cmd_train,
    "eval-correspondence": _cmd_eval_correspondence,
    "eval-retrieval": _cmd_eval_retrieval,
    "eval-baseline": _cmd_eval_baseline,
    "disparity": _cmd_disparity,
    "match": _cmd_match,
    "distance-map": _cmd_distance_map,
    "transfer-labels": _cmd_transfer_labels,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    known, _ = parser.parse_known_args(argv)
    if getattr(known, "config", None):
        overrides = _parse_config_file(known.config)
        for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
            valid = {a.dest for a in action._actions}  # noqa: SLF001
            action.set_defaults(**{k: v for k, v in overrides.items() if k in valid})
    args = parser.parse_args(argv)

    if getattr(args, "threads", 0):
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=args.threads)
        except ImportError:
            pass

    import logging
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    t0 = time.time()
    out_dir = Path(args.out)
    try:
        summary = _HANDLERS[args.command](args)
    except (OSError,) as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"error (invalid): {exc}", file=sys.stderr)
        return EXIT_INVALID
    _write_meta(out_dir, args, summary, t0)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
