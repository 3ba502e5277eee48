import numpy as np
import pytest

from sketchcorr.camera import Camera, Viewpoint
from sketchcorr.mesh import normalize_mesh
from sketchcorr.render import NormalMap, RenderError, render_normal_map
from sketchcorr.shapes import make_cube, random_triangle_soup
from sketchcorr.sketch import (SketchImage, extract_sketch, load_sketch_png, save_sketch_png,
                               window_ink_counts)

from oracles import window_ink_count_bruteforce


def flat_square_normal_map(r0=140, r1=340, c0=160, c1=320) -> NormalMap:
    normals = np.zeros((480, 480, 3), dtype=np.float32)
    depth = np.full((480, 480), np.inf)
    normals[r0:r1, c0:c1] = [0, 0, 1]
    depth[r0:r1, c0:c1] = 2.0
    return NormalMap(normals=normals, depth=depth, view=Viewpoint(0, 30))


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


class TestExtractSketch:
    def test_flat_square_ink_only_near_silhouette(self):
        nm = flat_square_normal_map()
        sk = extract_sketch(nm)
        ink = sk.ink_points()
        assert ink.shape[0] > 100
        border_dist = np.minimum.reduce([
            np.abs(ink[:, 0] - 140), np.abs(ink[:, 0] - 339),
            np.abs(ink[:, 1] - 160), np.abs(ink[:, 1] - 319)])
        assert border_dist.max() <= 2
        interior = sk.pixels[145:335, 165:315]
        assert interior.sum() == 0

    def test_cube_ink_lies_on_projected_edges(self):
        view = Viewpoint(30.0, 30.0)
        mesh = normalize_mesh(make_cube(1.0))
        sk = extract_sketch(render_normal_map(mesh, view))
        cam = Camera(view)
        corners = mesh.vertices
        edges = [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7),
                 (0, 4), (1, 5), (2, 6), (3, 7)]
        uv, _ = cam.project(corners)
        ink = sk.ink_points().astype(np.float64)
        ink_xy = np.stack([ink[:, 1] + 0.5, ink[:, 0] + 0.5], axis=1)  # (u, v)
        dist = np.full(ink.shape[0], np.inf)
        for a, b in edges:
            dist = np.minimum(dist, segment_distance(ink_xy, uv[a], uv[b]))
        assert ink.shape[0] > 200
        assert dist.max() <= 2.0

    def test_empty_render_rejected(self):
        nm = NormalMap(normals=np.zeros((480, 480, 3), dtype=np.float32),
                       depth=np.full((480, 480), np.inf), view=Viewpoint(0, 30))
        with pytest.raises(RenderError, match="empty render"):
            extract_sketch(nm)

    def test_threshold_order_enforced(self):
        with pytest.raises(ValueError):
            extract_sketch(flat_square_normal_map(), canny_low=0.3, canny_high=0.2)

    def test_output_binary_on_random_scenes(self):
        rng = np.random.default_rng(2)
        for _ in range(3):
            mesh = normalize_mesh(random_triangle_soup(rng, 10))
            view = Viewpoint(float(rng.uniform(0, 360)), 30.0)
            sk = extract_sketch(render_normal_map(mesh, view))
            assert np.isin(sk.pixels, (0, 1)).all()
            assert sk.pixels.shape == (480, 480)

    def test_small_render_fitted_to_480(self):
        view = Viewpoint(30.0, 30.0, image_size=240)
        mesh = normalize_mesh(make_cube(1.0))
        sk = extract_sketch(render_normal_map(mesh, view))
        assert sk.pixels.shape == (480, 480)
        assert sk.pixels.sum() > 0


class TestSketchIO:
    def test_png_roundtrip(self, tmp_path, chair_data):
        sk = chair_data.sketch(0)
        save_sketch_png(sk, tmp_path / "s.png")
        back = load_sketch_png(tmp_path / "s.png")
        assert np.array_equal(back.pixels, sk.pixels)

    def test_ink_is_black_on_white(self, tmp_path, chair_data):
        import cv2

        sk = chair_data.sketch(0)
        save_sketch_png(sk, tmp_path / "s.png")
        img = cv2.imread(str(tmp_path / "s.png"), cv2.IMREAD_GRAYSCALE)
        assert img[sk.pixels == 1].max() == 0
        assert img[sk.pixels == 0].min() == 255

    def test_wrong_size_rejected(self, tmp_path):
        import cv2

        cv2.imwrite(str(tmp_path / "bad.png"), np.zeros((100, 100), dtype=np.uint8))
        with pytest.raises(ValueError):
            load_sketch_png(tmp_path / "bad.png")

    def test_binary_validation(self):
        with pytest.raises(ValueError):
            SketchImage(pixels=np.full((480, 480), 3, dtype=np.uint8))


class TestWindowCounts:
    def test_matches_bruteforce(self, chair_data):
        sk = chair_data.sketch(0)
        sat = sk.integral()
        rng = np.random.default_rng(0)
        centers = rng.integers(0, 480, size=(30, 2))
        for scale in (32, 64, 128, 256):
            fast = window_ink_counts(sat, centers, scale)
            slow = [window_ink_count_bruteforce(sk.pixels, tuple(c), scale) for c in centers]
            assert np.array_equal(fast, slow)
