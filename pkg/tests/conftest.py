import numpy as np
import pytest

from sketchcorr.camera import Viewpoint
from sketchcorr.correspondence import build_ground_truth
from sketchcorr.dataset import ShapeData
from sketchcorr.mesh import normalize_mesh
from sketchcorr.network import DescriptorNet, NetConfig
from sketchcorr.render import project_vertices, render_normal_map
from sketchcorr.shapes import make_chair
from sketchcorr.sketch import extract_sketch

TINY_CONFIG = NetConfig(widths=(8, 8, 16, 16, 32, 32), branch_dim=32, descriptor_dim=32)


def render_shape_data(mesh, views, shape_id=None) -> ShapeData:
    mesh = normalize_mesh(mesh)
    shape_id = shape_id or mesh.name
    sketches, projections = [], {}
    for vi, view in enumerate(views):
        nm = render_normal_map(mesh, view)
        sketches.append(extract_sketch(nm, shape_id=shape_id))
        projections[vi] = project_vertices(mesh, view, nm.depth, view_id=vi)
    return ShapeData(shape_id, list(views), sketches, build_ground_truth(projections))


@pytest.fixture(scope="session")
def chair_views():
    return [Viewpoint(a, 30.0) for a in range(0, 360, 45)]


@pytest.fixture(scope="session")
def chair_data(chair_views) -> ShapeData:
    return render_shape_data(make_chair(0), chair_views)


@pytest.fixture(scope="session")
def tiny_net() -> DescriptorNet:
    return DescriptorNet(TINY_CONFIG, seed=7)
