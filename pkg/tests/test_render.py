import numpy as np
import pytest

from sketchcorr.camera import Camera, Viewpoint
from sketchcorr.mesh import MeshError, TriangleMesh, normalize_mesh
from sketchcorr.render import (DEFAULT_EPS_DEPTH, project_vertices, render_normal_map,
                               save_normal_map_png)
from sketchcorr.shapes import make_cube, random_triangle_soup

from oracles import raycast_depth_normals, vertex_visibility_oracle

EPS = DEFAULT_EPS_DEPTH


def facing_triangle(view: Viewpoint, depth_along_ray: float = 2.0, size: float = 0.8):
    """Triangle perpendicular to the view axis, centered on it."""
    cam = Camera(view)
    center = cam.eye + cam.forward * depth_along_ray
    return np.stack([
        center + size * (-cam.right - 0.5 * cam.up),
        center + size * (cam.right - 0.5 * cam.up),
        center + size * cam.up,
    ])


class TestRasterizer:
    def test_front_facing_triangle_center_normal(self):
        view = Viewpoint(40.0, 25.0)
        verts = facing_triangle(view)
        nm = render_normal_map(TriangleMesh(verts, [[0, 1, 2]]), view)
        c = view.image_size // 2
        assert np.allclose(nm.normals[c, c], [0, 0, 1], atol=1e-6)
        assert nm.depth[c, c] == pytest.approx(2.0, abs=1e-9)
        assert not nm.foreground[2, 2]
        assert nm.normals[2, 2] @ nm.normals[2, 2] == 0

    def test_zbuffer_keeps_nearer_of_two_parallel_triangles(self):
        view = Viewpoint(0.0, 30.0)
        cam = Camera(view)
        near = facing_triangle(view, 1.0, 0.6)
        far = facing_triangle(view, 2.0, 0.6)
        # tilt the far triangle slightly so its normal differs measurably
        far = far + 0.15 * cam.right * np.array([[0.0], [0.0], [1.0]])
        mesh = TriangleMesh(np.vstack([far, near]), [[0, 1, 2], [3, 4, 5]])
        nm = render_normal_map(mesh, view)
        c = view.image_size // 2
        assert nm.depth[c, c] == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(nm.normals[c, c], [0, 0, 1], atol=1e-6)

    def test_degenerate_triangles_skipped(self):
        view = Viewpoint(0.0, 30.0)
        verts = np.array([[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])  # collinear
        nm = render_normal_map(TriangleMesh(verts, [[0, 1, 2]]), view)
        assert not nm.foreground.any()

    def test_empty_mesh_rejected(self):
        with pytest.raises(MeshError):
            render_normal_map(TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3))), Viewpoint(0, 30))

    def test_cube_three_visible_faces_and_raycast_agreement(self):
        view = Viewpoint(30.0, 30.0)
        mesh = normalize_mesh(make_cube(1.0))
        nm = render_normal_map(mesh, view)
        fg = nm.foreground
        uniq = np.unique(np.round(nm.normals[fg], 4), axis=0)
        assert uniq.shape[0] == 3  # exactly three cube faces contribute
        depth_o, normals_o, second_o = raycast_depth_normals(mesh, view)
        both = fg & np.isfinite(depth_o)
        either = fg | np.isfinite(depth_o)
        assert both.sum() / either.sum() > 0.995
        dd = np.abs(nm.depth[both] - depth_o[both])
        assert (dd <= EPS).mean() > 0.995
        clear = both & (second_o > depth_o + EPS)
        dn = np.abs(nm.normals[clear] - normals_o[clear]).max()
        assert dn < 1e-4

    def test_random_soup_depth_agreement(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            mesh = normalize_mesh(random_triangle_soup(rng, 12))
            view = Viewpoint(float(rng.uniform(0, 360)), float(rng.uniform(15, 45)))
            nm = render_normal_map(mesh, view)
            depth_o, _, _ = raycast_depth_normals(mesh, view)
            both = nm.foreground & np.isfinite(depth_o)
            either = nm.foreground | np.isfinite(depth_o)
            assert both.sum() / either.sum() > 0.995
            assert (np.abs(nm.depth[both] - depth_o[both]) <= EPS).mean() > 0.995

    def test_normal_map_png(self, tmp_path):
        import cv2

        view = Viewpoint(30.0, 30.0)
        nm = render_normal_map(normalize_mesh(make_cube(1.0)), view)
        save_normal_map_png(nm, tmp_path / "nm.png")
        img = cv2.imread(str(tmp_path / "nm.png"), cv2.IMREAD_UNCHANGED)
        assert img.dtype == np.uint16 and img.shape == (480, 480, 3)


class TestProjectVertices:
    def test_front_face_vertex_visible(self):
        view = Viewpoint(0.0, 30.0)
        mesh = normalize_mesh(make_cube(1.0))
        nm = render_normal_map(mesh, view)
        proj = project_vertices(mesh, view, nm.depth, view_id=4)
        cam = Camera(view)
        # vertex most toward the camera must be visible
        toward = mesh.vertices @ (cam.eye / np.linalg.norm(cam.eye))
        vid = int(np.argmax(toward))
        assert proj.visible[vid]
        rec = proj[vid]
        assert rec.view_id == 4
        assert 0 <= rec.pixel[0] < 480 and 0 <= rec.pixel[1] < 480

    def test_occluded_vertex_invisible(self):
        view = Viewpoint(0.0, 30.0)
        cam = Camera(view)
        blocker = facing_triangle(view, 1.0, 0.25)
        behind = cam.eye + cam.forward * 2.0
        verts = np.vstack([blocker, behind, behind + 0.02 * cam.right, behind + 0.02 * cam.up])
        mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
        nm = render_normal_map(mesh, view)
        proj = project_vertices(mesh, view, nm.depth)
        assert not proj.visible[3] and not proj.visible[4] and not proj.visible[5]
        assert proj.visible[0] and proj.visible[1] and proj.visible[2]

    def test_offscreen_vertex_flagged(self):
        view = Viewpoint(0.0, 30.0)
        cam = Camera(view)
        offscreen = cam.eye + cam.forward * 2.0 + cam.right * 5.0
        verts = np.vstack([facing_triangle(view), offscreen])
        mesh = TriangleMesh(verts, [[0, 1, 2], [0, 1, 3]])
        nm = render_normal_map(mesh, view)
        proj = project_vertices(mesh, view, nm.depth)
        assert not proj.visible[3]
        r, c = proj.pixels[3]
        assert not (0 <= c < 480)

    def test_visibility_matches_segment_oracle_on_soups(self):
        rng = np.random.default_rng(5)
        for _ in range(4):
            mesh = normalize_mesh(random_triangle_soup(rng, 15))
            view = Viewpoint(float(rng.uniform(0, 360)), float(rng.uniform(15, 45)))
            nm = render_normal_map(mesh, view)
            proj = project_vertices(mesh, view, nm.depth)
            oracle = vertex_visibility_oracle(mesh, view, EPS)
            assert np.array_equal(proj.visible, oracle)

    def test_depth_buffer_shape_checked(self):
        view = Viewpoint(0.0, 30.0)
        mesh = normalize_mesh(make_cube(1.0))
        with pytest.raises(ValueError):
            project_vertices(mesh, view, np.zeros((10, 10)))
