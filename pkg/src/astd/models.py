"""The two detection models and their training loop.

The bearing model is a small conv net over the per-frame phase matrix of a
4-element ring (classes on a uniform bearing grid, soft or multi-label
targets). The distance model is a patch transformer with a learnable
classification token that scores 1-second segments for target presence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .nn import Tensor
from .nn.autograd import concat
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import PlateauTracker

PHASE_BINS = 1501
ARRAY_ELEMENTS = 4


@dataclass(frozen=True)
class DoaGrid:
    """Uniform bearing grid with the score codec used to decode it.

    softmax_expectation: single bearing from the circular mean of the
    softmax distribution (sub-grid resolution). one_hot_multilabel:
    every class whose sigmoid exceeds the threshold (multi-target).
    """

    class_count: int = 36
    codec: str = "softmax_expectation"
    threshold: float = 0.5

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least 2 bearing classes")
        if self.codec not in ("softmax_expectation", "one_hot_multilabel"):
            raise ValueError(f"unknown codec {self.codec!r}")

    @property
    def step(self) -> float:
        return 360.0 / self.class_count

    @property
    def bearings_deg(self) -> np.ndarray:
        return np.arange(self.class_count) * self.step


def encode_labels(bearings_deg, grid: DoaGrid) -> np.ndarray:
    """Target vector for a set of true bearings.

    one_hot_multilabel: 1 at the nearest class of each target. The softmax
    codec produces a circular Gaussian bump (sigma = one grid step,
    normalized to sum 1) and only supports a single target.
    """
    bearings = np.atleast_1d(np.asarray(bearings_deg, dtype=np.float64)) % 360.0
    if grid.codec == "one_hot_multilabel":
        target = np.zeros(grid.class_count)
        for b in bearings:
            target[round(b / grid.step) % grid.class_count] = 1.0
        return target
    if len(bearings) != 1:
        raise ValueError("softmax encoding supports exactly one target")
    diff = (grid.bearings_deg - bearings[0] + 180.0) % 360.0 - 180.0
    bump = np.exp(-0.5 * (diff / grid.step) ** 2)
    return bump / bump.sum()


def decode_angle(scores: np.ndarray, grid: DoaGrid) -> list[float]:
    """Bearings in degrees decoded from raw class scores (logits)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (grid.class_count,):
        raise ValueError(f"expected {grid.class_count} scores, got {scores.shape}")
    if grid.codec == "softmax_expectation":
        p = np.exp(scores - scores.max())
        p /= p.sum()
        z = np.sum(p * np.exp(1j * np.deg2rad(grid.bearings_deg)))
        return [float(np.rad2deg(np.angle(z)) % 360.0)]
    probs = 1.0 / (1.0 + np.exp(-scores))
    return [float(b) for b, p in zip(grid.bearings_deg, probs) if p > grid.threshold]


def class_scores(scores: np.ndarray, grid: DoaGrid) -> np.ndarray:
    """Per-class detection scores in [0, 1] (softmax probs or sigmoids)."""
    scores = np.asarray(scores, dtype=np.float64)
    if grid.codec == "softmax_expectation":
        p = np.exp(scores - scores.max())
        return p / p.sum()
    return 1.0 / (1.0 + np.exp(-scores))


def decode_class_scores(probs: np.ndarray, grid: DoaGrid) -> list[float]:
    """Decode bearings from [0, 1] class scores (e.g. frame-averaged)."""
    probs = np.asarray(probs, dtype=np.float64)
    if grid.codec == "softmax_expectation":
        p = probs / probs.sum()
        z = np.sum(p * np.exp(1j * np.deg2rad(grid.bearings_deg)))
        return [float(np.rad2deg(np.angle(z)) % 360.0)]
    return [float(b) for b, p in zip(grid.bearings_deg, probs) if p > grid.threshold]


class AngleDnn(nn.Module):
    """Phase-matrix classifier over the bearing grid.

    Stack for a (1, 4, F) input: 2x1 conv to 4 channels, two 2x7 convs
    (frequency padding 3) each followed by width-2 max pooling, then two
    fully connected layers. With F = 1501 the stage widths are
    1501 -> 750 -> 375 and the flattened size is 32*375.

    A fixed shape-preserving input stage subtracts element 0's phase per
    bin (rewrapped) and optionally masks bins outside the ping band. The
    common per-frame phase ramp carries no bearing information and swamps
    small-data training; out-of-band bins are noise-only.
    """

    def __init__(self, n_classes: int = 36, n_bins: int = PHASE_BINS,
                 seed: int = 0, dtype=np.float32, relative_phase: bool = True,
                 band_bins: tuple[int, int] | None = None):
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.n_bins = n_bins
        self.dtype = dtype
        self.relative_phase = relative_phase
        self.band_bins = band_bins
        self.conv1 = nn.Conv2d(1, 4, (2, 1), rng, dtype=dtype)
        self.conv2 = nn.Conv2d(4, 16, (2, 7), rng, padding=(0, 3), dtype=dtype)
        self.conv3 = nn.Conv2d(16, 32, (2, 7), rng, padding=(0, 3), dtype=dtype)
        self.pool = nn.MaxPoolWidth2()
        flat = 32 * (n_bins // 2 // 2)
        self.fc1 = nn.Linear(flat, 144, rng, dtype=dtype)
        self.fc2 = nn.Linear(144, n_classes, rng, dtype=dtype)

    def preprocess(self, phases: np.ndarray) -> np.ndarray:
        """Fixed input normalization on a (..., N, F) phase array."""
        out = np.asarray(phases, dtype=self.dtype)
        if self.relative_phase:
            rel = out - out[..., 0:1, :]
            out = ((rel + np.pi) % (2.0 * np.pi) - np.pi).astype(self.dtype)
        if self.band_bins is not None:
            lo, hi = self.band_bins
            mask = np.zeros(out.shape[-1], dtype=self.dtype)
            mask[lo:hi + 1] = 1.0
            out = out * mask
        return out

    def __call__(self, x: Tensor) -> Tensor:
        h = Tensor(self.preprocess(x.data))
        h = self.conv1(h).relu()
        h = self.pool(self.conv2(h).relu())
        h = self.pool(self.conv3(h).relu())
        h = h.reshape(h.shape[0], -1)
        return self.fc2(self.fc1(h).relu())

    def stage_shapes(self, x: Tensor) -> list[tuple[str, tuple[int, ...]]]:
        """Per-sample output shape of each stage, for conformance checks."""
        stages = []
        h = Tensor(self.preprocess(x.data))
        h = self.conv1(h).relu()
        stages.append(("conv1", h.shape[1:]))
        h = self.pool(self.conv2(h).relu())
        stages.append(("conv2+pool", h.shape[1:]))
        h = self.pool(self.conv3(h).relu())
        stages.append(("conv3+pool", h.shape[1:]))
        h = self.fc1(h.reshape(h.shape[0], -1)).relu()
        stages.append(("fc1", h.shape[1:]))
        h = self.fc2(h)
        stages.append(("fc2", h.shape[1:]))
        return stages

    def logits(self, phases: np.ndarray) -> np.ndarray:
        """Score a single (4, F) phase matrix."""
        x = Tensor(phases[None, None].astype(self.dtype))
        return self(x).data[0]

    def hyperparameters(self) -> dict[str, str]:
        lo, hi = self.band_bins if self.band_bins else (-1, -1)
        return {"kind": "angle", "n_classes": str(self.n_classes),
                "n_bins": str(self.n_bins),
                "relative_phase": "1" if self.relative_phase else "0",
                "band_lo": str(lo), "band_hi": str(hi)}


class SegmentTransformer(nn.Module):
    """Binary presence classifier over flattened spectrogram patches."""

    def __init__(self, d_model: int = 64, depth: int = 2, heads: int = 4,
                 max_patches: int = 256, patch_dim: int = 256, ff_mult: int = 4,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.d_model = d_model
        self.depth = depth
        self.heads = heads
        self.max_patches = max_patches
        self.patch_dim = patch_dim
        self.ff_mult = ff_mult
        self.dtype = dtype
        self.patch_embed = nn.Linear(patch_dim, d_model, rng, dtype=dtype)
        self.cls_token = Tensor(
            (0.02 * rng.standard_normal(d_model)).astype(dtype), requires_grad=True)
        self.pos_embed = Tensor(
            (0.02 * rng.standard_normal((1 + max_patches, d_model))).astype(dtype),
            requires_grad=True)
        self.blocks = [nn.TransformerBlock(d_model, heads, rng, ff_mult, dtype)
                       for _ in range(depth)]
        self.head = nn.Linear(d_model, 1, rng, dtype=dtype)

    def __call__(self, patches) -> Tensor:
        """Probability of target presence per batch item.

        patches: (B, L, patch_dim) array or Tensor, L <= max_patches.
        """
        if not isinstance(patches, Tensor):
            patches = Tensor(np.asarray(patches, dtype=self.dtype))
        b, length, _ = patches.shape
        if length > self.max_patches:
            raise ValueError(f"{length} patches exceed the maximum {self.max_patches}")
        x = self.patch_embed(patches)
        cls = Tensor(np.zeros((b, 1, self.d_model), dtype=x.dtype)) + \
            self.cls_token.reshape(1, 1, self.d_model)
        seq = concat([cls, x], axis=1)
        seq = seq + self.pos_embed[:length + 1].reshape(1, length + 1, self.d_model)
        for block in self.blocks:
            seq = block(seq)
        return self.head(seq[:, 0]).sigmoid().reshape(b)

    def score(self, patches: np.ndarray) -> float:
        """Presence probability of a single (L, patch_dim) patch sequence."""
        return float(self(patches[None]).data[0])

    def hyperparameters(self) -> dict[str, str]:
        return {"kind": "segment", "d_model": str(self.d_model),
                "depth": str(self.depth), "heads": str(self.heads),
                "max_patches": str(self.max_patches),
                "patch_dim": str(self.patch_dim), "ff_mult": str(self.ff_mult)}


# -- losses per task ---------------------------------------------------------


def angle_loss(grid: DoaGrid) -> Callable[[nn.Module, np.ndarray, np.ndarray], Tensor]:
    """Training loss matching the grid codec: soft cross-entropy for the
    softmax codec, per-class binary cross-entropy for multi-label."""
    if grid.codec == "softmax_expectation":
        def soft(model, inputs, targets):
            return nn.soft_target_cross_entropy(model(Tensor(inputs)), targets)
        return soft

    def multilabel(model, inputs, targets):
        return nn.binary_cross_entropy(model(Tensor(inputs)).sigmoid(), targets)
    return multilabel


def presence_loss(model, inputs, targets) -> Tensor:
    return nn.binary_cross_entropy(model(inputs), targets)


# -- training loop -----------------------------------------------------------


@dataclass
class ModelDataset:
    """Arrays for one supervised task; inputs are model-ready batches."""

    train_inputs: np.ndarray
    train_targets: np.ndarray
    val_inputs: np.ndarray
    val_targets: np.ndarray

    def __post_init__(self):
        if len(self.train_inputs) == 0 or len(self.val_inputs) == 0:
            raise ValueError("empty train or validation split")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_metric: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = math.inf
    stopped_early: bool = False

    def rows(self) -> list[dict]:
        return [vars(e) for e in self.epochs]


def train(model: nn.Module, dataset: ModelDataset, adam_cfg: nn.AdamConfig,
          sched_cfg: nn.SchedulerConfig, epochs: int,
          loss_fn: Callable[[nn.Module, np.ndarray, np.ndarray], Tensor],
          val_metric_fn: Callable[[nn.Module], float] | None = None,
          batch_size: int = 32, seed: int = 0) -> TrainingHistory:
    """Minimize loss_fn over the train split with Adam.

    The validation metric (default: loss over the validation split) drives
    the scheduler, early stopping, and best-checkpoint retention; the best
    parameters are restored into the model before returning.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    params = model.parameters()
    opt = nn.Adam(params, adam_cfg)
    tracker = PlateauTracker(sched_cfg, adam_cfg.lr)
    rng = np.random.default_rng(seed)
    history = TrainingHistory()
    best_state = model.state()
    n = len(dataset.train_inputs)

    def validation_metric() -> float:
        if val_metric_fn is not None:
            return val_metric_fn(model)
        total = 0.0
        count = 0
        for lo in range(0, len(dataset.val_inputs), batch_size):
            batch = slice(lo, lo + batch_size)
            loss = loss_fn(model, dataset.val_inputs[batch], dataset.val_targets[batch])
            size = len(dataset.val_inputs[batch])
            total += float(loss.data) * size
            count += size
        return total / count

    for epoch in range(epochs):
        if sched_cfg.kind == "step_decay":
            opt.lr = adam_cfg.lr * sched_cfg.factor**epoch
        else:
            opt.lr = tracker.lr
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            opt.zero_grad()
            loss = loss_fn(model, dataset.train_inputs[idx], dataset.train_targets[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        val = validation_metric()
        history.epochs.append(EpochRecord(epoch, opt.lr, total / n, val))
        if val < history.best_metric - sched_cfg.min_delta:
            history.best_metric = val
            history.best_epoch = epoch
            best_state = model.state()
        tracker.update(val)
        if tracker.should_stop:
            history.stopped_early = True
            break
    model.load_state(best_state)
    return history


# -- checkpoint adapters -------------------------------------------------------


def save_model(path, model: nn.Module, extra: dict[str, str] | None = None) -> None:
    header = model.hyperparameters()
    if extra:
        header.update(extra)
    save_checkpoint(path, {k: v.data for k, v in model.parameters().items()}, header)


def load_model(path):
    """Rebuild a model (and its grid, for the bearing task) from a checkpoint."""
    header, params = load_checkpoint(path)
    kind = header.get("kind")
    if kind == "angle":
        lo, hi = int(header.get("band_lo", -1)), int(header.get("band_hi", -1))
        model = AngleDnn(n_classes=int(header["n_classes"]),
                         n_bins=int(header["n_bins"]),
                         relative_phase=header.get("relative_phase", "0") == "1",
                         band_bins=(lo, hi) if lo >= 0 else None)
        model.load_state(params)
        grid = DoaGrid(class_count=int(header["n_classes"]),
                       codec=header.get("codec", "softmax_expectation"))
        return model, grid
    if kind == "segment":
        model = SegmentTransformer(
            d_model=int(header["d_model"]), depth=int(header["depth"]),
            heads=int(header["heads"]), max_patches=int(header["max_patches"]),
            patch_dim=int(header["patch_dim"]), ff_mult=int(header["ff_mult"]))
        model.load_state(params)
        return model, None
    raise ValueError(f"{path}: unknown model kind {kind!r}")
