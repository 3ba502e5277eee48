"""Multi-view sketch synthesis with pixel-level ground truth and
multi-scale patch descriptor learning."""

__version__ = "0.1.0"

from .camera import Viewpoint, sample_viewpoints
from .correspondence import (CorrespondenceRecord, build_ground_truth, is_valid_sample,
                             pairwise_count, split_dataset)
from .dataset import DatasetManifest, build_category_dataset, load_manifest, load_shape_data
from .mesh import TriangleMesh, load_obj, normalize_mesh, save_obj
from .network import DescriptorNet, NetConfig, load_checkpoint, save_checkpoint
from .patches import MultiScalePatch, Triplet, extract_patch, make_multiscale, rescale_to_32
from .render import NormalMap, VertexProjection, project_vertices, render_normal_map
from .sketch import SketchImage, extract_sketch, load_sketch_png, save_sketch_png
from .training import TrainConfig, adam_step, train, triplet_loss

__all__ = [
    "Viewpoint", "sample_viewpoints",
    "CorrespondenceRecord", "build_ground_truth", "is_valid_sample", "pairwise_count",
    "split_dataset",
    "DatasetManifest", "build_category_dataset", "load_manifest", "load_shape_data",
    "TriangleMesh", "load_obj", "normalize_mesh", "save_obj",
    "DescriptorNet", "NetConfig", "load_checkpoint", "save_checkpoint",
    "MultiScalePatch", "Triplet", "extract_patch", "make_multiscale", "rescale_to_32",
    "NormalMap", "VertexProjection", "project_vertices", "render_normal_map",
    "SketchImage", "extract_sketch", "load_sketch_png", "save_sketch_png",
    "TrainConfig", "adam_step", "train", "triplet_loss",
]
