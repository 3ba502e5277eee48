"""Reverse-mode automatic differentiation over dense numpy buffers.

A Tensor wraps an ndarray plus an optional recorded backward closure; ops
build the tape as they run. Calling ``backward()`` on a scalar consumes the
tape: gradients accumulate into leaf tensors created with
``requires_grad=True`` and a second backward without a new forward raises.
Arrays stay in whatever float dtype the caller supplies, so a whole graph
can run in float64 for gradient checks.

Convolutions use channels-last (N, H, W, C) layout with im2col + GEMM;
stride-1 input gradients reuse the forward path on spatially flipped
kernels, which is considerably faster than scatter-based col2im here.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _tune_allocator() -> None:
    """Keep large buffers on glibc's free list instead of fresh mmaps.

    The conv workhorse reallocates a few hundred MB per step; without this
    the page faults from remapping add roughly half a second per batch.
    Best effort: silently skipped on non-glibc platforms.
    """
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()


class AutodiffError(RuntimeError):
    """Misuse of the tape (double backward, missing graph, non-scalar root)."""


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager disabling tape recording (inference mode)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable requires_grad leaf."""
        if self.data.size != 1:
            raise AutodiffError("backward requires a scalar root")
        if self._spent:
            raise AutodiffError("graph already consumed; run a new forward pass")
        if self._backward is None:
            raise AutodiffError("no recorded computation to differentiate")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            node._spent = True
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._backward is None:  # leaf
                    p.grad = pg if p.grad is None else p.grad + pg
                else:
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
            node._backward = None  # release cached buffers
            node._parents = ()


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if _GRAD_ENABLED[0] and req:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, b.data.shape)
        if gb is ga:  # downstream ops may mutate their incoming grad in place
            gb = gb.copy()
        return (ga, gb)

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out = a.data - b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out = a.data * b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * out / b.data, b.data.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def backward(g):
        g *= mask  # g is owned by the tape at this point
        return (g,)

    return _make(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, np.asarray(1.0 / n, dtype=a.dtype))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), backward)


# --- convolution (channels-last) ---

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    s = xp.strides
    view = as_strided(xp, (n, ho, wo, kh, kw, c),
                      (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]))
    return np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * c)


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    kh, kw, _, oc = w.shape
    n, h, wd, _ = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = (cols @ w.reshape(-1, oc)).reshape(n, ho, wo, oc)
    return y, cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution: x (N, H, W, C), w (kh, kw, C, OC), no bias."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects NHWC input and (kh, kw, C, OC) weights")
    if x.data.shape[3] != w.data.shape[2]:
        raise ValueError(f"channel mismatch: input {x.data.shape} vs weight {w.data.shape}")
    kh, kw, _, oc = w.data.shape
    y, cols = _conv_raw(x.data, w.data, stride, pad)
    if not (_GRAD_ENABLED[0] and (x.requires_grad or w.requires_grad)):
        return Tensor(y)
    n, ho, wo, _ = y.shape
    x_shape = x.data.shape

    def backward(g):
        gf = g.reshape(-1, oc)
        gw = (cols.T @ gf).reshape(w.data.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            if ho == 1 and wo == 1 and pad == 0 and stride == 1:
                gx = (gf @ w.data.reshape(-1, oc).T).reshape(x_shape)
            elif stride == 1:
                wf = np.ascontiguousarray(w.data[::-1, ::-1].transpose(0, 1, 3, 2))
                gx, _ = _conv_raw(g, wf, 1, kh - 1 - pad)
            else:
                gcols = gf @ w.data.reshape(-1, oc).T
                gxp = np.zeros((n, x_shape[1] + 2 * pad, x_shape[2] + 2 * pad, x_shape[3]),
                               dtype=g.dtype)
                gr = gcols.reshape(n, ho, wo, kh, kw, x_shape[3])
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gr[:, :, :, i, j]
                gx = gxp[:, pad:pad + x_shape[1], pad:pad + x_shape[2], :] if pad else gxp
        return (gx, gw)

    return Tensor(y, requires_grad=True, _parents=(x, w), _backward=backward)


def batch_norm(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Channel normalization without affine terms (stats over all but the last axis).

    In training mode batch statistics normalize and update the running
    buffers in place; in inference mode the running buffers normalize.
    """
    c = x.data.shape[-1]
    flat = x.data.reshape(-1, c)
    if training:
        m = flat.shape[0]
        mu = flat.mean(axis=0)
        centered = flat - mu
        var = np.einsum("ij,ij->j", centered, centered) / m
        running_mean[...] = (1 - momentum) * running_mean + momentum * mu
        running_var[...] = (1 - momentum) * running_var + momentum * var
        ivar = 1.0 / np.sqrt(var + eps)
        centered *= ivar
        out = centered.reshape(x.data.shape)
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        ivar = 1.0 / np.sqrt(var + eps)
        out = ((flat - mu) * ivar).reshape(x.data.shape)
    if not (_GRAD_ENABLED[0] and x.requires_grad):
        return Tensor(out)
    out_flat = out.reshape(-1, c)
    x_shape = x.data.shape

    def backward(g):
        gf = g.reshape(-1, c)
        if training:
            m = gf.shape[0]
            s2 = np.einsum("ij,ij->j", gf, out_flat) / m
            corr = out_flat * s2
            corr += gf.mean(axis=0)
            gf -= corr  # in place: gf is owned by the tape
            gf *= ivar
        else:
            gf = gf * ivar
        return (gf.reshape(x_shape),)

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=backward)


def l2_normalize(x: Tensor, axis: int = 1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit Euclidean norm (composed from primitive ops)."""
    ssq = tsum(mul(x, x), axis=axis, keepdims=True)
    norm = sqrt(add(ssq, np.asarray(eps, dtype=x.dtype)))
    return div(x, norm)


def euclidean_distance(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise Euclidean distances between (N, D) tensors."""
    d = sub(a, b)
    ssq = tsum(mul(d, d), axis=1)
    return sqrt(add(ssq, np.asarray(eps, dtype=a.dtype)))
