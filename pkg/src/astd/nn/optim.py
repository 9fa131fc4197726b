"""Adam optimizer and learning-rate schedules (per-epoch step decay and
reduce-on-plateau with early stopping). Monitored metrics are minimized."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor

MIN_DELTA = 1e-4  # absolute improvement needed to reset patience


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0.0:
            raise ValueError("learning rate must be nonnegative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: AdamConfig):
        self.params = params
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass(frozen=True)
class SchedulerConfig:
    """Learning-rate schedule plus optional early stopping.

    step_decay multiplies the rate by `factor` every epoch; plateau
    multiplies by `factor` (floored at min_lr) after `patience` epochs
    without metric improvement.
    """

    kind: str
    factor: float
    patience: int = 3
    min_lr: float = 1e-4
    early_stop_patience: int | None = None
    min_delta: float = MIN_DELTA

    def __post_init__(self):
        if self.kind not in ("step_decay", "plateau"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    @staticmethod
    def step_decay(factor: float = 0.85) -> "SchedulerConfig":
        return SchedulerConfig("step_decay", factor)

    @staticmethod
    def plateau(factor: float = 0.1, patience: int = 3, min_lr: float = 1e-4,
                early_stop_patience: int | None = 6) -> "SchedulerConfig":
        return SchedulerConfig("plateau", factor, patience, min_lr,
                               early_stop_patience)


def schedule_lr(cfg: SchedulerConfig, lr0: float, history) -> np.ndarray:
    """Trace the learning rate over epochs 0..len(history).

    Entry e is the rate used for epoch e given the validation metrics of
    epochs 0..e-1 (lower metric is better).
    """
    history = list(history)
    if cfg.kind == "step_decay":
        return lr0 * cfg.factor ** np.arange(len(history) + 1)
    lrs = [lr0]
    tracker = PlateauTracker(cfg, lr0)
    for metric in history:
        tracker.update(metric)
        lrs.append(tracker.lr)
    return np.asarray(lrs)


@dataclass
class PlateauTracker:
    """Stateful reduce-on-plateau with an early-stop counter."""

    cfg: SchedulerConfig
    lr: float
    best: float = field(default=np.inf)
    stall: int = 0
    lr_stall: int = 0

    def update(self, metric: float) -> None:
        if metric < self.best - self.cfg.min_delta:
            self.best = metric
            self.stall = 0
            self.lr_stall = 0
            return
        self.stall += 1
        self.lr_stall += 1
        if self.lr_stall >= self.cfg.patience:
            self.lr = max(self.lr * self.cfg.factor, self.cfg.min_lr)
            self.lr_stall = 0

    @property
    def should_stop(self) -> bool:
        return (self.cfg.early_stop_patience is not None
                and self.stall >= self.cfg.early_stop_patience)
