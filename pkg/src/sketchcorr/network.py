"""Shared-weight multi-branch descriptor network and checkpoint I/O.

One branch (seven 3x3-style convolution blocks: widths 32,32,64,64,128,128
with stride 2 at the two width jumps, then a full 8x8 convolution to 128
channels, each followed by channel normalization and ReLU except the last)
maps a 32x32 patch to a 128-vector. The four scale channels of a
multi-scale patch pass through the *same* branch, are concatenated and
fused by a single fully-connected layer, and the result is scaled to unit
Euclidean norm. The default configuration has ~1.4M parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .correspondence import PATCH_SCALES
from .patches import MultiScalePatch

BRANCH_WIDTHS = (32, 32, 64, 64, 128, 128)
DESCRIPTOR_DIM = 128
INPUT_MEAN = 0.1
INPUT_STD = 0.3

_CKPT_MAGIC = b"SKDN"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    scales: tuple[int, ...] = PATCH_SCALES
    widths: tuple[int, ...] = BRANCH_WIDTHS
    branch_dim: int = DESCRIPTOR_DIM
    descriptor_dim: int = DESCRIPTOR_DIM
    shared_weights: bool = True
    input_mean: float = INPUT_MEAN
    input_std: float = INPUT_STD

    def __post_init__(self):
        for s in self.scales:
            if s not in PATCH_SCALES:
                raise ValueError(f"unknown scale {s}; valid: {PATCH_SCALES}")
        if len(self.widths) != 6:
            raise ValueError("widths must list the six pre-fusion channel counts")

    def to_dict(self) -> dict:
        return {
            "scales": list(self.scales),
            "widths": list(self.widths),
            "branch_dim": self.branch_dim,
            "descriptor_dim": self.descriptor_dim,
            "shared_weights": self.shared_weights,
            "input_mean": self.input_mean,
            "input_std": self.input_std,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        return NetConfig(
            scales=tuple(d["scales"]), widths=tuple(d["widths"]),
            branch_dim=int(d["branch_dim"]), descriptor_dim=int(d["descriptor_dim"]),
            shared_weights=bool(d["shared_weights"]),
            input_mean=float(d["input_mean"]), input_std=float(d["input_std"]))


class _ConvBlock:
    """Convolution + channel normalization (+ ReLU except on the last block)."""

    def __init__(self, name: str, kernel: int, cin: int, cout: int, stride: int,
                 pad: int, use_relu: bool, rng: np.random.Generator, dtype):
        fan_in = kernel * kernel * cin
        fan_out = kernel * kernel * cout
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.name = name
        self.stride = stride
        self.pad = pad
        self.use_relu = use_relu
        self.weight = Tensor(rng.uniform(-limit, limit, (kernel, kernel, cin, cout)).astype(dtype),
                             requires_grad=True)
        self.running_mean = np.zeros(cout, dtype=dtype)
        self.running_var = np.ones(cout, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = ad.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        y = ad.batch_norm(y, self.running_mean, self.running_var, training)
        return ad.relu(y) if self.use_relu else y


class BranchNetwork:
    """Seven-block tower from one 32x32 raster to a branch_dim vector."""

    def __init__(self, widths: tuple[int, ...], branch_dim: int,
                 rng: np.random.Generator, dtype, prefix: str = "branch"):
        w = widths
        spec = [
            (3, 1, w[0], 1, 1, True),
            (3, w[0], w[1], 1, 1, True),
            (3, w[1], w[2], 2, 1, True),
            (3, w[2], w[3], 1, 1, True),
            (3, w[3], w[4], 2, 1, True),
            (3, w[4], w[5], 1, 1, True),
            (8, w[5], branch_dim, 1, 0, False),
        ]
        self.branch_dim = branch_dim
        self.blocks = [_ConvBlock(f"{prefix}.conv{i + 1}", k, cin, cout, s, p, r, rng, dtype)
                       for i, (k, cin, cout, s, p, r) in enumerate(spec)]

    def forward(self, x: Tensor, training: bool) -> Tensor:
        """x: (N, 32, 32, 1) -> (N, branch_dim)."""
        if x.data.ndim != 4 or x.data.shape[1:] != (32, 32, 1):
            raise ValueError(f"branch expects (N, 32, 32, 1) input, got {x.data.shape}")
        y = x
        for b in self.blocks:
            y = b.forward(y, training)
        return ad.reshape(y, (x.data.shape[0], self.branch_dim))

    def parameters(self):
        return [(b.name + ".weight", b.weight) for b in self.blocks]

    def buffers(self):
        out = []
        for b in self.blocks:
            out.append((b.name + ".running_mean", b.running_mean))
            out.append((b.name + ".running_var", b.running_var))
        return out


class DescriptorNet:
    """Multi-scale patch -> unit-norm descriptor, with shared branch weights."""

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        if config.shared_weights:
            self.branches = [BranchNetwork(config.widths, config.branch_dim, rng, self.dtype)]
        else:
            self.branches = [BranchNetwork(config.widths, config.branch_dim, rng, self.dtype,
                                           prefix=f"branch{k}")
                             for k in range(len(config.scales))]
        fusion_in = len(config.scales) * config.branch_dim
        limit = np.sqrt(6.0 / (fusion_in + config.descriptor_dim))
        self.fusion_w = Tensor(rng.uniform(-limit, limit, (fusion_in, config.descriptor_dim))
                               .astype(self.dtype), requires_grad=True)
        self.fusion_b = Tensor(np.zeros(config.descriptor_dim, dtype=self.dtype),
                               requires_grad=True)
        self._scale_idx = [PATCH_SCALES.index(s) for s in config.scales]

    # --- forward paths ---

    def forward_channels(self, channels: np.ndarray, training: bool = False) -> Tensor:
        """channels: (B, 4, 32, 32) raw multi-scale stacks -> (B, D) descriptors."""
        channels = np.asarray(channels, dtype=self.dtype)
        if channels.ndim != 4 or channels.shape[1] != len(PATCH_SCALES) \
                or channels.shape[2:] != (32, 32):
            raise ValueError(f"expected (B, 4, 32, 32) channels, got {channels.shape}")
        b = channels.shape[0]
        sel = channels[:, self._scale_idx]  # (B, S, 32, 32), smallest scale first
        norm = (sel - self.config.input_mean) / self.config.input_std
        n_scales = len(self._scale_idx)
        if self.config.shared_weights:
            stacked = Tensor(np.ascontiguousarray(norm.reshape(b * n_scales, 32, 32, 1)))
            feats = self.branches[0].forward(stacked, training)
            fused_in = ad.reshape(feats, (b, n_scales * self.config.branch_dim))
        else:
            parts = [self.branches[k].forward(
                Tensor(np.ascontiguousarray(norm[:, k, :, :, None])), training)
                for k in range(n_scales)]
            fused_in = ad.concat(parts, axis=1)
        out = ad.add(ad.matmul(fused_in, self.fusion_w), self.fusion_b)
        return ad.l2_normalize(out, axis=1)

    def descriptors(self, patches, chunk: int = 256) -> np.ndarray:
        """Inference descriptors for MultiScalePatch list or (B,4,32,32) array."""
        if isinstance(patches, np.ndarray):
            channels = patches
        else:
            channels = np.stack([p.channels for p in patches])
        out = []
        with ad.no_grad():
            for at in range(0, channels.shape[0], chunk):
                out.append(self.forward_channels(channels[at:at + chunk], training=False).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.descriptor_dim))

    def descriptor(self, patch: MultiScalePatch) -> np.ndarray:
        """128-D unit-norm descriptor of one multi-scale patch."""
        return self.descriptors([patch])[0]

    def branch_forward(self, patch32: np.ndarray) -> np.ndarray:
        """Single branch applied to one (normalized-on-entry) 32x32 raster."""
        patch32 = np.asarray(patch32, dtype=self.dtype)
        if patch32.shape != (32, 32):
            raise ValueError(f"branch_forward expects a 32x32 raster, got {patch32.shape}")
        norm = (patch32 - self.config.input_mean) / self.config.input_std
        with ad.no_grad():
            out = self.branches[0].forward(Tensor(norm[None, :, :, None]), training=False)
        return out.data[0]

    # --- parameter registry (declaration order) ---

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for br in self.branches:
            out.extend(br.parameters())
        out.append(("fusion.weight", self.fusion_w))
        out.append(("fusion.bias", self.fusion_b))
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for br in self.branches:
            out.extend(br.buffers())
        return out

    def num_parameters(self) -> int:
        return sum(int(t.data.size) for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def astype(self, dtype) -> "DescriptorNet":
        """Convert all parameters and buffers in place (for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for _, t in self.parameters():
            t.data = t.data.astype(dtype)
        for br in self.branches:
            for b in br.blocks:
                b.running_mean = b.running_mean.astype(dtype)
                b.running_var = b.running_var.astype(dtype)
        return self

    def arch_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "params": [[n, list(t.data.shape)] for n, t in self.parameters()],
                "buffers": [[n, list(a.shape)] for n, a in self.buffers()]}

    def arch_hash(self) -> str:
        blob = json.dumps(self.arch_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def expected_parameter_count(config: NetConfig = NetConfig()) -> int:
    """Parameter count from the architecture formula (convs are bias-free)."""
    w = config.widths
    chain = [(3, 1, w[0]), (3, w[0], w[1]), (3, w[1], w[2]), (3, w[2], w[3]),
             (3, w[3], w[4]), (3, w[4], w[5]), (8, w[5], config.branch_dim)]
    per_branch = sum(k * k * cin * cout for k, cin, cout in chain)
    n_branches = 1 if config.shared_weights else len(config.scales)
    fusion_in = len(config.scales) * config.branch_dim
    return n_branches * per_branch + fusion_in * config.descriptor_dim + config.descriptor_dim


def save_checkpoint(net: DescriptorNet, path: str | Path, seed: int | None = None,
                    extra: dict | None = None) -> None:
    """Versioned header (arch hash, input transform, seed) + raw little-endian
    parameter and buffer payload in declaration order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype_code = "<f8" if net.dtype == np.float64 else "<f4"
    header = {
        "version": _CKPT_VERSION,
        "arch": net.arch_dict(),
        "arch_hash": net.arch_hash(),
        "dtype": dtype_code,
        "input_mean": net.config.input_mean,
        "input_std": net.config.input_std,
        "seed": net.seed if seed is None else seed,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in net.parameters():
            fh.write(np.ascontiguousarray(t.data, dtype=dtype_code).tobytes())
        for _, a in net.buffers():
            fh.write(np.ascontiguousarray(a, dtype=dtype_code).tobytes())


def load_checkpoint(path: str | Path) -> tuple[DescriptorNet, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = NetConfig.from_dict(header["arch"]["config"])
        dtype = np.float64 if header["dtype"] == "<f8" else np.float32
        net = DescriptorNet(config, seed=int(header["seed"]), dtype=dtype)
        if net.arch_hash() != header["arch_hash"]:
            raise ValueError(f"architecture hash mismatch in {path}")
        for _, t in net.parameters():
            raw = fh.read(t.data.size * dtype().itemsize)
            t.data = np.frombuffer(raw, dtype=header["dtype"]).reshape(t.data.shape).astype(dtype)
        for br in net.branches:
            for b in br.blocks:
                for attr in ("running_mean", "running_var"):
                    a = getattr(b, attr)
                    raw = fh.read(a.size * dtype().itemsize)
                    setattr(b, attr, np.frombuffer(raw, dtype=header["dtype"])
                            .reshape(a.shape).astype(dtype))
    return net, header
