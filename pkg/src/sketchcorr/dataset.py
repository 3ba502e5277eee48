"""Dataset manifests and the end-to-end category builder.

One manifest JSON per category lists shapes (mesh, views, sketch paths,
correspondence store), the shape-level train/val/test split, the sampling
mode and the seed. Paths inside a manifest are relative to its directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Viewpoint
from .correspondence import (CorrespondenceRecord, DatasetError, build_ground_truth,
                             load_correspondence_store, pairwise_count,
                             save_correspondence_store, split_dataset, valid_mask)
from .mesh import TriangleMesh, load_obj, normalize_mesh, save_obj
from .render import DEFAULT_EPS_DEPTH, project_vertices, render_normal_map, save_normal_map_png
from .sketch import (DEFAULT_CANNY_HIGH, DEFAULT_CANNY_LOW, SketchImage, extract_sketch,
                     load_sketch_png, save_sketch_png)


@dataclass
class ShapeEntry:
    shape_id: str
    mesh_path: str
    views: list[Viewpoint]
    sketch_paths: list[str]
    corr_path: str
    num_vertices: int
    pair_count: int

    def to_dict(self) -> dict:
        return {
            "shape_id": self.shape_id,
            "mesh_path": self.mesh_path,
            "views": [v.to_dict() for v in self.views],
            "sketch_paths": list(self.sketch_paths),
            "corr_path": self.corr_path,
            "num_vertices": self.num_vertices,
            "pair_count": self.pair_count,
        }

    @staticmethod
    def from_dict(d: dict) -> "ShapeEntry":
        return ShapeEntry(
            shape_id=d["shape_id"],
            mesh_path=d["mesh_path"],
            views=[Viewpoint.from_dict(v) for v in d["views"]],
            sketch_paths=list(d["sketch_paths"]),
            corr_path=d["corr_path"],
            num_vertices=int(d["num_vertices"]),
            pair_count=int(d["pair_count"]),
        )


@dataclass
class DatasetManifest:
    category: str
    seed: int
    sampling_mode: str
    shapes: list[ShapeEntry]
    splits: dict[str, list[str]]
    root: Path = field(default_factory=Path, repr=False)

    def shape(self, shape_id: str) -> ShapeEntry:
        for s in self.shapes:
            if s.shape_id == shape_id:
                return s
        raise KeyError(shape_id)

    def split_of(self, shape_id: str) -> str:
        for name, ids in self.splits.items():
            if shape_id in ids:
                return name
        raise KeyError(shape_id)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "category": manifest.category,
        "seed": manifest.seed,
        "sampling_mode": manifest.sampling_mode,
        "shapes": [s.to_dict() for s in manifest.shapes],
        "splits": {k: sorted(v) for k, v in manifest.splits.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return DatasetManifest(
        category=doc["category"],
        seed=int(doc["seed"]),
        sampling_mode=doc["sampling_mode"],
        shapes=[ShapeEntry.from_dict(s) for s in doc["shapes"]],
        splits={k: list(v) for k, v in doc["splits"].items()},
        root=path.parent,
    )


class ShapeData:
    """Loaded sketches + ground truth of one shape, with validity caching."""

    def __init__(self, shape_id: str, views: list[Viewpoint], sketches: list[SketchImage],
                 records: list[CorrespondenceRecord]):
        self.shape_id = shape_id
        self.views = views
        self.sketches = sketches
        self.records = records
        self._sats = [s.integral() for s in sketches]

    def sketch(self, view_id: int) -> SketchImage:
        return self.sketches[view_id]

    def entry_validity(self, record: CorrespondenceRecord, mode: str) -> list[bool]:
        out = []
        for view_id, pixel in record.entries:
            m = valid_mask(self.sketches[view_id], np.asarray([pixel]), mode,
                           sat=self._sats[view_id])
            out.append(bool(m[0]))
        return out

    def gt_pixels_in_view(self, view_id: int, mode: str | None = "AND"):
        """(pixels (K,2), vertex_ids (K,)) of GT projections in one view,
        optionally filtered by sampling validity."""
        pixels, vids = [], []
        for rec in self.records:
            px = rec.pixel_in_view(view_id)
            if px is not None:
                pixels.append(px)
                vids.append(rec.vertex_id)
        if not pixels:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        pixels = np.asarray(pixels, dtype=np.int64)
        vids = np.asarray(vids, dtype=np.int64)
        if mode is not None:
            ok = valid_mask(self.sketches[view_id], pixels, mode, sat=self._sats[view_id])
            pixels, vids = pixels[ok], vids[ok]
        return pixels, vids


def load_shape_data(manifest: DatasetManifest, shape_id: str) -> ShapeData:
    entry = manifest.shape(shape_id)
    root = manifest.root
    sketches = [load_sketch_png(root / p, view=v, shape_id=shape_id)
                for p, v in zip(entry.sketch_paths, entry.views)]
    sid, records = load_correspondence_store(root / entry.corr_path)
    if sid != shape_id:
        raise DatasetError(f"correspondence store {entry.corr_path} belongs to {sid}")
    return ShapeData(shape_id, entry.views, sketches, records)


def build_category_dataset(meshes: list[tuple[str, TriangleMesh]] | list[str | Path],
                           views: list[Viewpoint], out_dir: str | Path, category: str,
                           sampling_mode: str = "OR", seed: int = 0,
                           canny_low: float = DEFAULT_CANNY_LOW,
                           canny_high: float = DEFAULT_CANNY_HIGH,
                           eps_depth: float = DEFAULT_EPS_DEPTH,
                           save_normal_maps: bool = False) -> DatasetManifest:
    """Render sketches, project ground truth and write one category dataset.

    ``meshes`` may be (shape_id, TriangleMesh) pairs or OBJ paths. Meshes are
    normalized to the unit bounding sphere before rendering.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(views) < 2:
        raise DatasetError("need at least 2 views for cross-view ground truth")

    shapes: list[ShapeEntry] = []
    for item in meshes:
        if isinstance(item, (str, Path)):
            mesh = load_obj(item)
            shape_id = Path(item).stem
        else:
            shape_id, mesh = item
        mesh = normalize_mesh(mesh)
        mesh_rel = f"meshes/{shape_id}.obj"
        save_obj(mesh, out_dir / mesh_rel)

        sketch_rels: list[str] = []
        projections = {}
        for view_id, view in enumerate(views):
            nm = render_normal_map(mesh, view)
            sk = extract_sketch(nm, canny_low, canny_high, shape_id=shape_id)
            rel = f"sketches/{shape_id}_v{view_id:02d}.png"
            save_sketch_png(sk, out_dir / rel)
            if save_normal_maps:
                save_normal_map_png(nm, out_dir / f"normals/{shape_id}_v{view_id:02d}.png")
            sketch_rels.append(rel)
            projections[view_id] = project_vertices(mesh, view, nm.depth, eps_depth,
                                                    view_id=view_id)
        records = build_ground_truth(projections)
        corr_rel = f"corr/{shape_id}.txt"
        save_correspondence_store(records, shape_id, out_dir / corr_rel)
        shapes.append(ShapeEntry(
            shape_id=shape_id, mesh_path=mesh_rel, views=list(views),
            sketch_paths=sketch_rels, corr_path=corr_rel,
            num_vertices=mesh.num_vertices, pair_count=pairwise_count(records)))

    splits = split_dataset([s.shape_id for s in shapes], seed=seed)
    manifest = DatasetManifest(category=category, seed=seed, sampling_mode=sampling_mode,
                               shapes=shapes, splits=splits, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
