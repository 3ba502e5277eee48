"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the library's computation paths:
ray casting instead of rasterization, scalar loops instead of vectorized
kernels, direct formula transcriptions instead of library calls.
"""

from __future__ import annotations

import numpy as np

from sketchcorr.camera import Camera, Viewpoint
from sketchcorr.mesh import TriangleMesh

_DET_EPS = 1e-14
_BARY_TOL = 1e-10


def ray_triangle_t(origin: np.ndarray, dirs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Moller-Trumbore intersection parameters for many rays and one triangle.

    Returns t per ray (+inf for misses). With unnormalized pixel-ray
    directions from Camera.ray_directions, t equals view depth.
    """
    a, b, c = tri
    e1 = b - a
    e2 = c - a
    pvec = np.cross(dirs, e2)
    det = pvec @ e1
    ok = np.abs(det) > _DET_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - a
    u = (pvec @ s) * inv
    qvec = np.cross(s[None, :], e1)[0]
    v = (dirs @ qvec) * inv
    t = (e2 @ qvec) * inv
    hit = ok & (u >= -_BARY_TOL) & (v >= -_BARY_TOL) & (u + v <= 1.0 + _BARY_TOL) & (t > 1e-9)
    return np.where(hit, t, np.inf)


def raycast_depth_normals(mesh: TriangleMesh, view: Viewpoint):
    """Per-pixel nearest-hit depth/normal by casting a ray through every
    pixel center. Returns (depth, normals, second_depth) full-image arrays;
    second_depth is the nearest hit of any *other* triangle (ambiguity
    marker for coincident surfaces)."""
    cam = Camera(view)
    size = view.image_size
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dirs = cam.ray_directions(rows.ravel(), cols.ravel())
    n_pix = dirs.shape[0]
    best = np.full(n_pix, np.inf)
    second = np.full(n_pix, np.inf)
    best_tri = np.full(n_pix, -1, dtype=np.int64)
    tris = mesh.vertices[mesh.triangles]
    for ti in range(len(tris)):
        t = ray_triangle_t(cam.eye, dirs, tris[ti])
        closer = t < best
        second = np.where(closer, best, np.minimum(second, t))
        best_tri = np.where(closer, ti, best_tri)
        best = np.where(closer, t, best)
    face_n = cam.normals_to_camera(mesh.face_normals())
    flip = face_n[:, 2] < 0
    face_n[flip] *= -1.0
    normals = np.zeros((n_pix, 3))
    hit = best_tri >= 0
    normals[hit] = face_n[best_tri[hit]]
    return (best.reshape(size, size), normals.reshape(size, size, 3),
            second.reshape(size, size))


def vertex_visibility_oracle(mesh: TriangleMesh, view: Viewpoint,
                             eps_depth: float) -> np.ndarray:
    """Segment-occlusion visibility: a vertex is visible iff its pixel is in
    bounds and no triangle intersects the eye-to-vertex ray more than
    eps_depth in front of it."""
    cam = Camera(view)
    uv, z = cam.project(mesh.vertices)
    pix = cam.pixel_of(uv)
    size = view.image_size
    in_bounds = ((pix[:, 0] >= 0) & (pix[:, 0] < size)
                 & (pix[:, 1] >= 0) & (pix[:, 1] < size) & (z > 0))
    dirs = (mesh.vertices - cam.eye) / z[:, None]  # t equals view depth
    tris = mesh.vertices[mesh.triangles]
    nearest = np.full(len(mesh.vertices), np.inf)
    for ti in range(len(tris)):
        t = ray_triangle_t(cam.eye, dirs, tris[ti])
        nearest = np.minimum(nearest, t)
    return in_bounds & (nearest > z - eps_depth)


# --- network oracles ---

def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Direct convolution: explicit loops over output positions and taps.

    x: (H, W, C), w: (kh, kw, C, OC) -> (Ho, Wo, OC).
    """
    kh, kw, cin, cout = w.shape
    h, wd, _ = x.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            acc = np.zeros(cout, dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    acc += x_tap(xp, oy * stride + i, ox * stride + j) @ w[i, j]
            out[oy, ox] = acc
    return out


def x_tap(xp: np.ndarray, r: int, c: int) -> np.ndarray:
    return xp[r, c].astype(np.float64)


def naive_branch_forward(net, patch32: np.ndarray) -> np.ndarray:
    """Straight-line re-implementation of the seven branch blocks in
    inference mode (running statistics, no tape, no im2col)."""
    x = ((np.asarray(patch32, dtype=np.float64) - net.config.input_mean)
         / net.config.input_std)[:, :, None]
    for block in net.branches[0].blocks:
        y = naive_conv2d(x, block.weight.data.astype(np.float64), block.stride, block.pad)
        y = (y - block.running_mean) / np.sqrt(block.running_var + 1e-5)
        if block.use_relu:
            y = np.maximum(y, 0.0)
        x = y
    return x.reshape(-1)


def bilinear_reference(patch: np.ndarray, out_side: int = 32) -> np.ndarray:
    """Textbook bilinear resampling with half-pixel centers, scalar loops."""
    src = np.asarray(patch, dtype=np.float64)
    side = src.shape[0]
    scale = side / out_side
    out = np.zeros((out_side, out_side))
    for r in range(out_side):
        for c in range(out_side):
            sy = (r + 0.5) * scale - 0.5
            sx = (c + 0.5) * scale - 0.5
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            fy = sy - y0
            fx = sx - x0
            y0c, y1c = max(min(y0, side - 1), 0), max(min(y0 + 1, side - 1), 0)
            x0c, x1c = max(min(x0, side - 1), 0), max(min(x0 + 1, side - 1), 0)
            out[r, c] = ((1 - fy) * (1 - fx) * src[y0c, x0c]
                         + (1 - fy) * fx * src[y0c, x1c]
                         + fy * (1 - fx) * src[y1c, x0c]
                         + fy * fx * src[y1c, x1c])
    return out


def window_ink_count_bruteforce(pixels: np.ndarray, center: tuple[int, int],
                                scale: int) -> int:
    """Double-loop ink count over a scale x scale window clipped to bounds."""
    h, w = pixels.shape
    half = scale // 2
    count = 0
    for r in range(center[0] - half, center[0] - half + scale):
        for c in range(center[1] - half, center[1] - half + scale):
            if 0 <= r < h and 0 <= c < w and pixels[r, c]:
                count += 1
    return count


def brute_average_precision(labels) -> float:
    """Direct transcription of the precision/AP formulas with loops."""
    labels = list(labels)
    n = len(labels)

    def precision(i):
        num = sum(max(y, 0) for y in labels[:i])
        den = sum(abs(y) for y in labels[:i])
        return num / den

    n_pos = sum(max(y, 0) for y in labels)
    if n_pos == 0:
        raise ValueError("no positives")
    return sum(precision(k + 1) for k in range(n) if labels[k] == 1) / n_pos


def adam_scalar_reference(grads: list[float], lr: float, beta1: float, beta2: float,
                          eps: float, theta0: float = 0.0) -> list[float]:
    """Scalar simulation of the Adam recurrences; returns theta after each step."""
    m = v = 0.0
    theta = theta0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def central_difference(f, arr: np.ndarray, index: tuple, h: float) -> float:
    """Central finite difference of scalar f w.r.t. one array element."""
    orig = arr[index]
    arr[index] = orig + h
    fp = f()
    arr[index] = orig - h
    fm = f()
    arr[index] = orig
    return (fp - fm) / (2 * h)
