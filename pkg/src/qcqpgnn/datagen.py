"""Dataset generation by coefficient perturbation of a base instance.

Pipeline per sample: perturb -> convexify -> label with the solver. Samples
that cannot be labeled are logged and redrawn, so requested counts are met.
Every sample draws from its own seed stream keyed by (seed, split, index,
attempt), so output is reproducible and splits never share a stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .core import Constraint, QcqpInstance, SparseSymMatrix, check_convexity, convexify, objective_value
from .formats import Dataset, DatasetRecord
from .gnn.model import Task
from .solver import SolveOptions, Status, kkt_residual, phase1, solve

SPLIT_CODES = {"train": 0, "test": 1}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenSpec:
    base: QcqpInstance
    n_train: int
    n_test: int
    seed: int
    tasks: frozenset = frozenset({Task.OBJECTIVE})
    reject_nonstrict: bool = True
    # alternate target classes and tighten constraints to reach infeasible ones
    balance_feasibility: bool = True
    max_attempts: int = 200
    strict_tol: float = 1e-6

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be >= 0")
        object.__setattr__(self, "tasks", frozenset(Task(t) for t in self.tasks))
        if not self.tasks:
            raise ValueError("at least one task is required")


def _generator(seed) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


def _resample(values: Iterable[float], u: np.ndarray) -> list[float]:
    return [float((2.0 * ui - 1.0) * abs(a)) for a, ui in zip(values, u)]


def perturb(base: QcqpInstance, seed) -> QcqpInstance:
    """Redraw every stored nonzero coefficient a uniformly from (-|a|, |a|).

    Draws follow the fixed coefficient order Q, p, then (Q^i, p^i, b^i) per
    constraint. Bounds and the sparsity pattern are kept.
    """
    rng = _generator(seed)

    def mat(M: SparseSymMatrix) -> SparseSymMatrix:
        u = rng.random(M.nnz)
        vals = _resample((v for _, _, v in M.entries), u)
        return SparseSymMatrix.from_triplets(M.dim, ((j, k, v) for (j, k, _), v in zip(M.entries, vals)))

    def vec(p) -> tuple[float, ...]:
        u = rng.random(len(p))
        return tuple(_resample(p, u))

    Q = mat(base.Q)
    p = vec(base.p)
    cons = []
    for c in base.cons:
        Qi, pi = mat(c.Q), vec(c.p)
        bi = _resample([c.b], rng.random(1))[0]
        cons.append(Constraint(Qi, pi, bi))
    return replace(base, Q=Q, p=p, cons=tuple(cons), meta=dict(base.meta))


def synth_base(n: int, m: int, density: float, seed: int) -> QcqpInstance:
    """Random convex instance with box [-1, 1] and x = 0 strictly feasible (b^i <= -0.1)."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)

    def psd() -> np.ndarray:
        M = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
        if density >= 1.0:
            M = rng.normal(size=(n, n))
        A = M.T @ M + 0.1 * np.eye(n)
        A = np.round((A + A.T) / 2.0, 12)
        return A

    cons = [(psd(), rng.normal(size=n), -float(rng.uniform(0.1, 1.0))) for _ in range(m)]
    return QcqpInstance.build(
        psd(), rng.normal(size=n), cons, -np.ones(n), np.ones(n),
        name=f"synth_n{n}_m{m}_d{density:g}_s{seed}",
        meta={"synthetic": {"n": n, "m": m, "density": density, "seed": seed}},
    )


def _box_minimum(inst: QcqpInstance, i: int, opts: SolveOptions) -> float:
    """min over the bound box of g_i (its constant included); inf-free boxes only."""
    c = inst.cons[i]
    aux = QcqpInstance(c.Q, c.p, (), inst.lower, inst.upper)
    res = solve(aux, opts)
    if res.status is not Status.OPTIMAL:
        return -math.inf
    return res.value + c.b


def _tighten(inst: QcqpInstance, rng: np.random.Generator, opts: SolveOptions):
    """Shift one constraint's constant so that it is violated everywhere in the box."""
    order = rng.permutation(inst.m)
    for i in order:
        low = _box_minimum(inst, int(i), opts)
        if not math.isfinite(low):
            continue
        margin = float(rng.uniform(0.05, 0.5)) * max(1.0, abs(inst.cons[i].b))
        cons = list(inst.cons)
        cons[i] = replace(cons[i], b=cons[i].b - low + margin)
        return replace(inst, cons=tuple(cons), meta=dict(inst.meta)), int(i)
    return None, None


def strictly_convex_at(inst: QcqpInstance, x, mult, tol: float = 1e-6, active_tol: float = 1e-8) -> bool:
    """Lagrangian Hessian positive definite on the coordinates not pinned by a bound.

    A convex problem whose Lagrangian Hessian is definite on that subspace has
    a unique optimum, so the solver's point is also the least-norm one.
    """
    n, m = inst.n, inst.m
    lam = np.asarray(mult[:m])
    H = inst.Q_dense.copy()
    for li, (Qi, _, _) in zip(lam, inst.cons_dense):
        H += li * Qi
    pinned = (np.asarray(mult[m:m + n]) > active_tol) | (np.asarray(mult[m + n:]) > active_tol)
    free = ~pinned
    if not free.any():
        return True
    return float(np.linalg.eigvalsh(H[np.ix_(free, free)])[0]) >= tol


def _label(inst: QcqpInstance, spec: GenSpec, want_feasible, rng, opts):
    """Label one candidate. Returns (record, tightened) or (None, reason)."""
    tightened = False
    p1 = phase1(inst, opts)
    feasible = p1.feasible
    if want_feasible is False and feasible:
        tight, _ = _tighten(inst, rng, opts)
        if tight is None:
            return None, "cannot_tighten"
        inst, tightened = tight, True
        if phase1(inst, opts).feasible:
            return None, "tighten_failed"
        feasible = False
    if want_feasible is True and not feasible:
        return None, "infeasible"
    needs_opt = bool(spec.tasks & {Task.OBJECTIVE, Task.SOLUTION})
    rec = DatasetRecord(inst, label_feasibility=int(feasible) if Task.FEASIBILITY in spec.tasks else None)
    if not needs_opt:
        return (rec, tightened), None
    if not feasible:
        if Task.FEASIBILITY not in spec.tasks:
            return None, "infeasible"
        return (rec, tightened), None
    res = solve(inst, opts)
    if res.status is not Status.OPTIMAL:
        return None, f"solver_{res.status.value}"
    if kkt_residual(inst, res.x, res.multipliers) > 1e-6:
        return None, "kkt_audit"
    if spec.reject_nonstrict and not strictly_convex_at(inst, res.x, res.multipliers, spec.strict_tol):
        return None, "nonstrict"
    rec.label_feasibility = 1 if Task.FEASIBILITY in spec.tasks else None
    if Task.OBJECTIVE in spec.tasks:
        rec.label_objective = float(objective_value(inst, res.x))
    if Task.SOLUTION in spec.tasks:
        rec.label_solution = tuple(float(v) for v in res.x)
    return (rec, tightened), None


def _split(spec: GenSpec, split: str, count: int, opts: SolveOptions, log: list, stats: dict) -> list[DatasetRecord]:
    records = []
    solver_calls = solver_fail = 0
    for index in range(count):
        want = None
        if Task.FEASIBILITY in spec.tasks and spec.balance_feasibility:
            want = index % 2 == 0  # even indices feasible, odd infeasible
        if want is None and spec.tasks & {Task.OBJECTIVE, Task.SOLUTION} and Task.FEASIBILITY not in spec.tasks:
            want = True
        for attempt in range(spec.max_attempts):
            ss = np.random.SeedSequence([spec.seed, SPLIT_CODES[split], index, attempt])
            pert_seed, aux_seed = ss.spawn(2)
            inst = convexify(perturb(spec.base, pert_seed))
            inst = replace(inst, name=f"{spec.base.name or 'base'}_{split}_{index}", meta=dict(inst.meta))
            out, reason = _label(inst, spec, want, _generator(aux_seed), opts)
            if reason is not None and reason.startswith(("solver_", "kkt_", "nonstrict")):
                solver_calls += 1
                solver_fail += 1
            elif spec.tasks & {Task.OBJECTIVE, Task.SOLUTION} and out is not None:
                solver_calls += 1
            if out is not None:
                rec, tightened = out
                stats["tightened"] += int(tightened)
                records.append(rec)
                break
            log.append({"split": split, "index": index, "attempt": attempt, "reason": reason})
            stats["rejections"][reason] = stats["rejections"].get(reason, 0) + 1
            if solver_calls >= 20 and solver_fail > 0.5 * solver_calls:
                raise GenerationError(
                    f"solver failure rate {solver_fail}/{solver_calls} exceeds 50% "
                    f"(split {split}, rejections {stats['rejections']})"
                )
        else:
            raise GenerationError(
                f"sample {split}/{index}: no acceptable instance in {spec.max_attempts} attempts "
                f"(rejections {stats['rejections']})"
            )
    return records


def generate(spec: GenSpec, opts: SolveOptions = SolveOptions()) -> tuple[Dataset, Dataset, list[dict]]:
    log: list[dict] = []
    stats = {"tightened": 0, "rejections": {}}
    train = _split(spec, "train", spec.n_train, opts, log, stats)
    test = _split(spec, "test", spec.n_test, opts, log, stats)
    provenance = {
        "generator": "perturb-convexify-solve",
        "seed": spec.seed,
        "seed_stream": "SeedSequence([seed, split, index, attempt]) -> Philox",
        "perturbed": ["Q", "p", "Q^i", "p^i", "b^i"],
        "bounds_perturbed": False,
        "convexified": True,
        "tasks": sorted(t.value for t in spec.tasks),
        "reject_nonstrict": spec.reject_nonstrict,
        "balance_feasibility": spec.balance_feasibility and Task.FEASIBILITY in spec.tasks,
        "tightened_constraints": stats["tightened"],
        "rejections": dict(sorted(stats["rejections"].items())),
        "counts": {"train": len(train), "test": len(test)},
    }
    name = spec.base.name
    return (
        Dataset(train, name, spec.seed, "train", dict(provenance)),
        Dataset(test, name, spec.seed, "test", dict(provenance)),
        log,
    )


def audit_dataset(ds: Dataset, tol: float = 1e-6) -> list[str]:
    """Post-hoc checks: convexity and label/solution consistency. Returns problems found."""
    problems = []
    for k, r in enumerate(ds.records):
        inst = r.instance
        if not check_convexity(inst, 1e-8):
            problems.append(f"record {k}: not convex")
        if r.label_solution is not None and r.label_objective is not None:
            v = objective_value(inst, r.label_solution)
            if abs(v - r.label_objective) > tol * (1.0 + abs(v)):
                problems.append(f"record {k}: objective label {r.label_objective} vs {v}")
    return problems
