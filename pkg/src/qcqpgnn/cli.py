"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad input file, failed check), 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .core import check_convexity, convexify
from .counterexamples import verify_pair
from .datagen import GenerationError, GenSpec, generate, synth_base
from .formats import (
    DatasetFormatError,
    QplibFormatError,
    instance_from_dict,
    read_dataset,
    read_qplib,
    size_summary,
    write_dataset,
)
from .gnn import (
    CheckpointError,
    GnnConfig,
    LabelError,
    ShapeError,
    Task,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .graph import MalformedGraphError, build_graph, graph_to_dot, graph_to_json
from .plotting import plot_eval_table, plot_loss_curve, write_table
from .solver import NonConvexInput, SolveOptions, solve
from .wl import wl_report

DOMAIN_ERRORS = (
    QplibFormatError, DatasetFormatError, NonConvexInput, GenerationError, CheckpointError,
    LabelError, ShapeError, MalformedGraphError, ValueError, OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# Manifests ----------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        # everything that determines the outputs, and nothing that varies run to run
        return hashlib.sha256(_canonical({
            "config": self.config, "seeds": self.seeds, "inputs": self.inputs, "version": __version__,
        })).hexdigest()

    def write(self, path) -> None:
        body = {
            "schema": "qcqp-run-manifest-v1",
            "digest": self.digest,
            "toolkit_version": __version__,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": {k: {"path": k, "sha256": _sha256(k)} for k in self.outputs},
            # isolated so the rest stays reproducible
            "wall_clock": self.wall_clock,
        }
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _inputs(*paths) -> dict:
    out = {}
    for p in paths:
        if p is not None and Path(p).is_file():
            out[str(p)] = _sha256(p)
    return out


# Helpers --------------------------------------------------------------------------

def load_instance(path: str):
    """QPLib text, or a JSON instance as written by ``instance_to_dict``."""
    if path.endswith(".json"):
        with open(path) as fh:
            return instance_from_dict(json.load(fh))
    return read_qplib(path)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _base_instance(spec: str, seed: int):
    if spec.startswith("synth:"):
        try:
            n, m, dens = spec[len("synth:"):].split(",")
            return synth_base(int(n), int(m), float(dens), seed)
        except ValueError as exc:
            raise UsageError(f"--base synth:n,m,density expected, got {spec!r}") from exc
    return load_instance(spec)


# Subcommands ---------------------------------------------------------------------

def cmd_parse(a) -> int:
    inst = load_instance(a.file)
    _emit({
        "name": inst.name,
        "n": inst.n,
        "m": inst.m,
        "sizes": size_summary(inst),
        "convex": check_convexity(inst),
        "objective_constant": inst.meta.get("objective_constant", 0.0),
        "problem_type": inst.meta.get("problem_type"),
    })
    return 0


def cmd_graph(a) -> int:
    g = build_graph(load_instance(a.file))
    sys.stdout.write(graph_to_dot(g) if a.dot else graph_to_json(g) + "\n")
    return 0


def cmd_wl(a) -> int:
    g1 = build_graph(load_instance(a.file_a))
    g2 = build_graph(load_instance(a.file_b)) if a.file_b else None
    _emit(wl_report(g1, g2))
    return 0


def cmd_solve(a) -> int:
    inst = load_instance(a.file)
    if a.convexify:
        inst = convexify(inst)
    res = solve(inst, SolveOptions(tol_kkt=a.tol))
    _emit(res.to_dict(inst.meta.get("objective_constant", 0.0)))
    return 0


def cmd_gen(a) -> int:
    t0 = time.time()
    base = _base_instance(a.base, a.seed)
    tasks = frozenset(Task(t) for t in a.task)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(
        sys.argv[:1] + list(a.argv),
        {"command": "gen", "base": a.base, "train": a.train, "test": a.test, "tasks": sorted(t.value for t in tasks),
         "reject_nonstrict": not a.keep_nonstrict},
        {"seed": a.seed},
        _inputs(None if a.base.startswith("synth:") else a.base),
    )
    spec = GenSpec(base, a.train, a.test, a.seed, tasks, reject_nonstrict=not a.keep_nonstrict)
    tr, te, log = generate(spec)
    for ds in (tr, te):
        ds.provenance["run_digest"] = man.digest
    paths = {"train": out / "train.json", "test": out / "test.json", "provenance": out / "provenance.json"}
    write_dataset(tr, paths["train"])
    write_dataset(te, paths["test"])
    paths["provenance"].write_text(json.dumps(
        {"run_digest": man.digest, "provenance": tr.provenance, "rejection_log": log}, indent=2, sort_keys=True
    ) + "\n")
    man.outputs = {str(p): None for p in paths.values()}
    man.wall_clock = {"seconds": round(time.time() - t0, 3)}
    man.write(out / "manifest.json")
    _emit({"train": len(tr), "test": len(te), "rejections": len(log), "digest": man.digest, "out": str(out)})
    return 0


def cmd_train(a) -> int:
    t0 = time.time()
    data = Path(a.data)
    train_path, test_path = data / "train.json", data / "test.json"
    tr = read_dataset(train_path)
    te = read_dataset(test_path) if test_path.exists() else None
    task = Task(a.task)
    cfg = GnnConfig(rounds=a.rounds, width=a.width, output_mode=task.mode, task=task)
    tcfg = TrainConfig(epochs=a.epochs, seed=a.seed, batch_size=a.batch_size, max_lr=a.lr)
    ckpt = Path(a.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    man = RunManifest(
        sys.argv[:1] + list(a.argv),
        {"command": "train", "model": cfg.to_dict(), "train": tcfg.to_dict()},
        {"seed": a.seed},
        _inputs(train_path, test_path),
    )
    params, curve = train(tr, cfg, tcfg, val=te)
    save_checkpoint(ckpt, params, cfg, a.seed, a.epochs, {"run_digest": man.digest, "curve": curve})
    curve_csv = ckpt.with_suffix(".curve.csv")
    fig = ckpt.with_suffix(".loss.png")
    write_table([{"run_digest": man.digest, **c} for c in curve], curve_csv)
    plot_loss_curve(curve, fig, title=f"{task.value} (T={a.rounds}, d={a.width})", digest=man.digest)
    man.outputs = {str(p): None for p in (ckpt, curve_csv, fig)}
    man.wall_clock = {"seconds": round(time.time() - t0, 3)}
    man.write(ckpt.with_suffix(".manifest.json"))
    last = curve[-1] if curve else {}
    _emit({"epochs": len(curve), "final": last, "checkpoint": str(ckpt), "digest": man.digest})
    return 0


def cmd_eval(a) -> int:
    t0 = time.time()
    data = Path(a.data)
    train_path, test_path = data / "train.json", data / "test.json"
    tr = read_dataset(train_path)
    te = read_dataset(test_path) if test_path.exists() else None
    man = RunManifest(
        sys.argv[:1] + list(a.argv), {"command": "eval"}, {}, _inputs(train_path, test_path, *a.ckpt)
    )
    rows = []
    for path in a.ckpt:
        params, cfg, _ = load_checkpoint(path)
        rtr = evaluate(params, cfg, tr)
        rte = evaluate(params, cfg, te) if te is not None and len(te) else {"loss": float("nan")}
        rows.append({
            "checkpoint": Path(path).name,
            "task": cfg.task.value,
            "loss_kind": "BCE" if cfg.task is Task.FEASIBILITY else "MSE",
            "train_loss": rtr["loss"],
            "validation_loss": rte["loss"],
            "train_accuracy": rtr.get("accuracy"),
            "validation_accuracy": rte.get("accuracy"),
            "run_digest": man.digest,
        })
    out = Path(a.out) if a.out else data
    out.mkdir(parents=True, exist_ok=True)
    table = out / "eval.csv"
    fig = out / "eval.png"
    write_table(rows, table)
    plot_eval_table(rows, fig, digest=man.digest)
    man.outputs = {str(table): None, str(fig): None}
    man.wall_clock = {"seconds": round(time.time() - t0, 3)}
    man.write(out / "eval.manifest.json")
    write_table(rows, sys.stdout, delimiter="\t")
    return 0


def cmd_counterexample(a) -> int:
    rep = verify_pair(a.kind, draws=a.draws, seed=a.seed)
    _emit(rep.to_dict())
    return 0 if rep.ok else 1


# Parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qcqp-gnn", description="Tripartite-graph GNN toolkit for QCQPs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("parse", help="validate a QPLib or JSON instance and report sizes")
    s.add_argument("file")
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("graph", help="print the tripartite graph")
    s.add_argument("file")
    fmt = s.add_mutually_exclusive_group()
    fmt.add_argument("--dot", action="store_true")
    fmt.add_argument("--json", action="store_true", help="default")
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("wl", help="run WL refinement on one graph or compare two")
    s.add_argument("file_a")
    s.add_argument("file_b", nargs="?")
    s.set_defaults(fn=cmd_wl)

    s = sub.add_parser("solve", help="solve a convex instance")
    s.add_argument("file")
    s.add_argument("--convexify", action="store_true", help="shift indefinite matrices first")
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("gen", help="generate train/test datasets")
    s.add_argument("--base", required=True, help="instance file or synth:n,m,density")
    s.add_argument("--train", type=int, required=True)
    s.add_argument("--test", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--task", action="append", required=True, choices=[t.value for t in Task])
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--keep-nonstrict", action="store_true")
    s.set_defaults(fn=cmd_gen)

    s = sub.add_parser("train", help="train a model on a generated dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--task", required=True, choices=[t.value for t in Task])
    s.add_argument("--epochs", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--rounds", type=int, default=2)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--lr", type=float, default=1e-4, help="peak learning rate")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="loss/accuracy table for one or more checkpoints")
    s.add_argument("--ckpt", action="append", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="report directory (default: the data directory)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("counterexample", help="verify a non-separable instance pair")
    s.add_argument("--kind", required=True, choices=["objective", "feasibility"])
    s.add_argument("--draws", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_counterexample)
    return p


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
