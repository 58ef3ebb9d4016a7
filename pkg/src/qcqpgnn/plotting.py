"""Figures and delimited tables for the train and eval reports."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "qcqpgnn",
}


def _save(fig, path: Path, digest: str = "") -> None:
    # pinned metadata so repeated runs write identical files
    ext = path.suffix.lstrip(".").lower()
    meta = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}}.get(ext)
    if digest and meta is not None:
        meta["Description"] = f"run_digest={digest}"
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)


def write_table(rows: Sequence[dict], path, delimiter: str = ",") -> None:
    """Write rows as CSV (or TSV); ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_rows(rows, path, delimiter)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(rows, fh, delimiter)


def _write_rows(rows, fh, delimiter):
    if not rows:
        return
    fields = list(rows[0])
    w = csv.DictWriter(fh, fieldnames=fields, delimiter=delimiter, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in fields})


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6e}"
    return "" if v is None else v


def plot_loss_curve(curve: Sequence[dict], path, title: str = "", digest: str = "") -> None:
    """Train (and validation, when present) loss per epoch on a log scale."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ep = [c["epoch"] for c in curve]
        ax.semilogy(ep, [c["train_loss"] for c in curve], label="train")
        if curve and "val_loss" in curve[0]:
            ax.semilogy(ep, [c["val_loss"] for c in curve], "--", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        ax.legend()
        _save(fig, Path(path), digest)


def plot_eval_table(rows: Sequence[dict], path, digest: str = "") -> None:
    """Grouped bars of train and validation loss per task."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [r["task"] for r in rows]
        xs = range(len(rows))
        w = 0.38
        ax.bar([x - w / 2 for x in xs], [r["train_loss"] for r in rows], w, label="train")
        ax.bar([x + w / 2 for x in xs], [r["validation_loss"] for r in rows], w, label="validation")
        ax.set_yscale("log")
        ax.set_xticks(list(xs), labels)
        ax.set_ylabel("loss")
        ax.legend()
        _save(fig, Path(path), digest)
