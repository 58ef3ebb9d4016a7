"""Mini-batch training with Adam and a one-cycle learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..formats import Dataset, DatasetRecord
from ..graph import build_graph
from .autodiff import sigmoid
from .model import GnnConfig, GnnParams, Task, forward_batch, init_params, loss_and_grad


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    seed: int = 0
    batch_size: int = 16
    max_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def one_cycle_lr(step: int, total: int, tcfg: TrainConfig) -> float:
    """Linear ramp from max/start_div to max over the warmup, then cosine to max/final_div."""
    top = tcfg.max_lr
    lo, floor = top / tcfg.start_div, top / tcfg.final_div
    warm = max(1, int(round(tcfg.warmup_frac * total)))
    if step < warm:
        return lo + (top - lo) * step / warm
    span = max(1, total - 1 - warm)
    frac = min(1.0, (step - warm) / span)
    return floor + (top - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, size: int, tcfg: TrainConfig):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0
        self.cfg = tcfg

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        c = self.cfg
        self.k += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        mhat = self.m / (1 - c.beta1**self.k)
        vhat = self.v / (1 - c.beta2**self.k)
        return theta - lr * mhat / (np.sqrt(vhat) + c.eps)


def record_label(r: DatasetRecord, task: Task):
    if task is Task.FEASIBILITY:
        y = r.label_feasibility
    elif task is Task.OBJECTIVE:
        y = r.label_objective
    else:
        y = r.label_solution
    if y is None:
        raise LabelError(f"record {r.instance.name!r} has no {task.value} label")
    return np.atleast_1d(np.asarray(y, dtype=float))


def _prepare(ds: Dataset, task: Task):
    sizes = {(r.instance.n, r.instance.m) for r in ds.records}
    if len(sizes) > 1:
        raise LabelError(f"heterogeneous sizes {sorted(sizes)}")
    graphs = [build_graph(r.instance) for r in ds.records]
    labels = [record_label(r, task) for r in ds.records]
    return graphs, labels


def evaluate(params: GnnParams, cfg: GnnConfig, ds: Dataset, task: Task | str | None = None,
             batch_size: int = 64) -> dict:
    """Mean loss (and accuracy for feasibility) over a dataset."""
    task = cfg.task if task is None else Task(task)
    graphs, labels = _prepare(ds, task)
    return _evaluate(params, cfg, graphs, labels, task, batch_size)


def _evaluate(params, cfg, graphs, labels, task: Task, batch_size: int = 64) -> dict:
    if not graphs:
        return {"loss": math.nan, "count": 0}
    preds = []
    for i in range(0, len(graphs), batch_size):
        preds += forward_batch(params, cfg, graphs[i:i + batch_size])
    z = np.concatenate(preds)
    y = np.concatenate(labels)
    out = {"count": len(graphs)}
    if task is Task.FEASIBILITY:
        out["loss"] = float(np.mean(np.logaddexp(0.0, z) - z * y))
        out["accuracy"] = float(np.mean((sigmoid(z) >= 0.5) == (y >= 0.5)))
    else:
        out["loss"] = float(np.mean((z - y) ** 2))
    return out


def train(ds: Dataset, cfg: GnnConfig, tcfg: TrainConfig, val: Optional[Dataset] = None,
          params: Optional[GnnParams] = None, log=None) -> tuple[GnnParams, list[dict]]:
    """Train from ``init_params(cfg, tcfg.seed)`` (or ``params``); returns final params and the loss curve.

    Each curve entry holds the epoch's full-pass train loss (and validation
    loss when ``val`` is given) measured after that epoch's updates.
    """
    task = cfg.task
    if task.mode is not cfg.output_mode:
        raise LabelError(f"task {task.value} needs {task.mode.value} output")
    graphs, labels = _prepare(ds, task)
    vg, vl = _prepare(val, task) if val is not None and len(val) else (None, None)
    params = init_params(cfg, tcfg.seed) if params is None else params.copy()
    curve: list[dict] = []
    if tcfg.epochs == 0 or not graphs:
        return params, curve
    rng = np.random.default_rng(tcfg.seed)
    n = len(graphs)
    per_epoch = math.ceil(n / tcfg.batch_size)
    total = per_epoch * tcfg.epochs
    theta = params.flat()
    opt = Adam(theta.size, tcfg)
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n)
        for s in range(per_epoch):
            idx = order[s * tcfg.batch_size:(s + 1) * tcfg.batch_size]
            _, grad = loss_and_grad(params, cfg, [graphs[i] for i in idx], [labels[i] for i in idx], task)
            lr = one_cycle_lr(step, total, tcfg)
            theta = opt.step(theta, grad.flat(), lr)
            params = params.with_flat(theta)
            step += 1
        entry = {"epoch": epoch, "lr": lr}
        tr = _evaluate(params, cfg, graphs, labels, task)
        entry["train_loss"] = tr["loss"]
        if "accuracy" in tr:
            entry["train_accuracy"] = tr["accuracy"]
        if vg is not None:
            va = _evaluate(params, cfg, vg, vl, task)
            entry["val_loss"] = va["loss"]
            if "accuracy" in va:
                entry["val_accuracy"] = va["accuracy"]
        curve.append(entry)
        if log is not None:
            log(entry)
    return params, curve
