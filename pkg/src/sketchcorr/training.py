"""Triplet-loss training of the descriptor network with Adam.

The loss over a batch of descriptor triplets (f_a, f_p, f_n) is
mean(max(0, d(f_a, f_p) - d(f_a, f_n) + margin)) with Euclidean d. One
epoch is one shuffled pass over all train-split correspondence pairs;
validation uses a fixed set of pre-assembled batches so epochs stay
comparable. Runs are deterministic given the seed (fixed thread count).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .correspondence import PATCH_SCALES
from .dataset import DatasetManifest, load_shape_data
from .network import DescriptorNet, NetConfig, save_checkpoint
from .patches import BatchError, TrainingPool, Triplet, assemble_batch, iter_epoch_batches

logger = logging.getLogger(__name__)


class NanGradientError(RuntimeError):
    """A non-finite gradient reached the optimizer; the step was aborted."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    margin: float = 1.0
    epochs: int = 100
    seed: int = 0
    category: str = ""
    sampling_mode: str = "OR"
    scales: tuple[int, ...] = PATCH_SCALES
    shared_weights: bool = True
    val_batches: int = 2

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.sampling_mode not in ("OR", "AND"):
            raise ValueError(f"sampling_mode must be OR or AND, got {self.sampling_mode!r}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def init_like(params: list[np.ndarray]) -> "AdamState":
        return AdamState(m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction; aborts on non-finite grads."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state lengths disagree")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NanGradientError("non-finite gradient; step aborted")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = beta1 * m + (1.0 - beta1) * g
        v[...] = beta2 * v + (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def triplet_loss(anchors, positives, negatives, margin: float) -> Tensor:
    """Batch triplet hinge loss over descriptor rows (any length >= 1)."""
    a = anchors if isinstance(anchors, Tensor) else Tensor(np.asarray(anchors))
    p = positives if isinstance(positives, Tensor) else Tensor(np.asarray(positives))
    n = negatives if isinstance(negatives, Tensor) else Tensor(np.asarray(negatives))
    if a.data.ndim != 2 or a.data.shape[0] == 0:
        raise ValueError("triplet_loss needs a non-empty (n, d) descriptor batch")
    if a.data.shape != p.data.shape or a.data.shape != n.data.shape:
        raise ValueError("descriptor batches must share one shape")
    d_ap = ad.euclidean_distance(a, p)
    d_an = ad.euclidean_distance(a, n)
    violation = ad.relu(ad.add(ad.sub(d_ap, d_an), np.asarray(margin, dtype=a.dtype)))
    return ad.tmean(violation)


def batch_descriptor_loss(net: DescriptorNet, batch: list[Triplet], margin: float,
                          training: bool) -> Tensor:
    """Forward the batch's unique patches once and gather triplet rows.

    In-batch negatives share patch objects with positives, so deduping by
    object identity avoids redundant branch passes.
    """
    uniq: dict[int, int] = {}
    stack = []
    for t in batch:
        for patch in (t.anchor, t.positive, t.negative):
            if id(patch) not in uniq:
                uniq[id(patch)] = len(stack)
                stack.append(patch)
    channels = np.stack([p.channels for p in stack])
    desc = net.forward_channels(channels, training=training)
    a_idx = [uniq[id(t.anchor)] for t in batch]
    p_idx = [uniq[id(t.positive)] for t in batch]
    n_idx = [uniq[id(t.negative)] for t in batch]
    return triplet_loss(ad.take_rows(desc, a_idx), ad.take_rows(desc, p_idx),
                        ad.take_rows(desc, n_idx), margin)


@dataclass
class TrainResult:
    out_dir: Path
    log_path: Path
    checkpoint_final: Path
    checkpoint_best: Path
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    skipped_steps: int = 0


def _load_pool(manifest: DatasetManifest, split: str, mode: str) -> TrainingPool | None:
    ids = manifest.splits.get(split, [])
    if not ids:
        return None
    shapes = [load_shape_data(manifest, sid) for sid in ids]
    return TrainingPool(shapes, mode)


def train(manifest: DatasetManifest, config: TrainConfig, out_dir: str | Path,
          net: DescriptorNet | None = None) -> TrainResult:
    """Full training run: per-epoch loss log, best-val and final checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = _load_pool(manifest, "train", config.sampling_mode)
    if pool is None:
        raise BatchError("manifest has an empty train split")
    if len(pool.items) < config.batch_size:
        raise BatchError(f"need {config.batch_size} distinct eligible vertices in the train "
                         f"split, have {len(pool.items)} ({pool.num_pairs()} pairs)")
    val_pool = _load_pool(manifest, "val", config.sampling_mode)

    if net is None:
        net = DescriptorNet(NetConfig(scales=config.scales,
                                      shared_weights=config.shared_weights),
                            seed=config.seed)
    params = net.parameters()
    datas = [t.data for _, t in params]
    state = AdamState.init_like(datas)
    rng = np.random.default_rng(config.seed)

    val_batches: list[list[Triplet]] = []
    if val_pool is not None and len(val_pool.items) >= 2:
        rng_val = np.random.default_rng(config.seed + 1_000_003)
        bs_val = min(config.batch_size, len(val_pool.items))
        for _ in range(config.val_batches):
            val_batches.append(assemble_batch(val_pool, bs_val, rng_val))

    log_path = out_dir / "metrics.csv"
    ckpt_last = out_dir / "checkpoint_last.bin"
    ckpt_best = out_dir / "checkpoint_best.bin"
    ckpt_final = out_dir / "checkpoint_final.bin"
    result = TrainResult(out_dir=out_dir, log_path=log_path,
                         checkpoint_final=ckpt_final, checkpoint_best=ckpt_best)
    best_val = np.inf
    rows = ["epoch,train_loss,val_loss,seconds"]
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for batch in iter_epoch_batches(pool, config.batch_size, rng):
            loss = batch_descriptor_loss(net, batch, config.margin, training=True)
            net.zero_grad()
            loss.backward()
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
                     for _, t in params]
            try:
                adam_step(datas, grads, state, config.learning_rate,
                          config.adam_beta1, config.adam_beta2, config.adam_eps)
            except NanGradientError:
                result.skipped_steps += 1
                logger.warning("epoch %d: non-finite gradient, step skipped", epoch)
            losses.append(loss.item())
        if not losses:
            raise BatchError(f"train split yields no full batch of {config.batch_size} "
                             f"({pool.num_pairs()} pairs over {len(pool.items)} vertices)")
        train_loss = float(np.mean(losses))
        if val_batches:
            with ad.no_grad():
                val_loss = float(np.mean([
                    batch_descriptor_loss(net, b, config.margin, training=False).item()
                    for b in val_batches]))
        else:
            val_loss = float("nan")
        seconds = time.perf_counter() - t0
        result.train_losses.append(train_loss)
        result.val_losses.append(val_loss)
        rows.append(f"{epoch},{train_loss!r},{val_loss!r},{seconds:.3f}")
        save_checkpoint(net, ckpt_last, seed=config.seed)
        if val_batches and val_loss < best_val:
            best_val = val_loss
            save_checkpoint(net, ckpt_best, seed=config.seed)
        logger.info("epoch %d/%d train %.4f val %.4f (%.1fs)",
                    epoch, config.epochs, train_loss, val_loss, seconds)

    save_checkpoint(net, ckpt_final, seed=config.seed)
    if not ckpt_best.exists():
        save_checkpoint(net, ckpt_best, seed=config.seed)
    log_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return result
