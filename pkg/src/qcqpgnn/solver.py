"""Log-barrier interior-point solver for convex QCQPs.

Used as the label oracle for dataset generation. Phase I minimizes a common
slack ``s`` with ``g_i(x) <= s``; the main phase follows the barrier central
path with damped Newton steps from the phase-I point.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .core import QcqpInstance, check_convexity, constraint_values, objective_value

SOLVE_SCHEMA = "qcqp-solve-v1"


class NonConvexInput(ValueError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED_SUSPECTED = "UnboundedSuspected"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SolveOptions:
    tol_kkt: float = 1e-8
    max_newton: int = 200
    barrier_mu0: float = 10.0
    barrier_shrink: float = 0.2
    divergence_norm: float = 1e8
    feas_slack_tol: float = 1e-6
    convexity_tol: float = 1e-8

    def __post_init__(self):
        for name in ("tol_kkt", "max_newton", "barrier_mu0", "barrier_shrink", "divergence_norm", "feas_slack_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SolveResult:
    """``multipliers`` concatenates constraint, lower-bound and upper-bound multipliers (m + 2n)."""

    status: Status
    x: np.ndarray
    value: float
    kkt_residual: float
    multipliers: np.ndarray
    newton_steps: int = 0
    path_values: tuple[float, ...] = ()
    relaxation: float = 0.0

    def to_dict(self, objective_constant: float = 0.0) -> dict:
        finite = self.status == Status.OPTIMAL
        return {
            "schema": SOLVE_SCHEMA,
            "status": self.status.value,
            "x": [float(v) for v in self.x],
            "value": float(self.value) if finite else None,
            "reported_value": float(self.value + objective_constant) if finite else None,
            "kkt_residual": float(self.kkt_residual) if finite else None,
            "multipliers": [float(v) for v in self.multipliers],
            "newton_steps": self.newton_steps,
        }


@dataclass(frozen=True)
class Phase1Result:
    feasible: bool
    x: np.ndarray
    min_slack: float
    lower_bound: float


class _Diverged(Exception):
    pass


@dataclass
class _Problem:
    """min 1/2 z'H0 z + c0'z  s.t.  1/2 z'Hi z + ci'z + di <= 0,  A z <= r."""

    H0: np.ndarray
    c0: np.ndarray
    quad: list[tuple[np.ndarray, np.ndarray, float]]
    A: np.ndarray
    r: np.ndarray
    n_ineq: int = field(init=False)

    def __post_init__(self):
        self.n_ineq = len(self.quad) + self.A.shape[0]

    def f0(self, z):
        return 0.5 * z @ self.H0 @ z + self.c0 @ z

    def gvals(self, z):
        return np.array([0.5 * z @ H @ z + c @ z + d for H, c, d in self.quad])

    def slacks(self, z):
        return self.r - self.A @ z

    def strictly_inside(self, z) -> bool:
        g = self.gvals(z)
        return bool(np.all(g < 0) and np.all(self.slacks(z) > 0))

    def barrier_value(self, z, t):
        g = self.gvals(z)
        s = self.slacks(z)
        if np.any(g >= 0) or np.any(s <= 0):
            return math.inf
        return t * self.f0(z) - np.log(-g).sum() - np.log(s).sum()


def _newton_direction(prob: _Problem, z, t):
    grad = t * (prob.H0 @ z + prob.c0)
    hess = t * prob.H0.copy()
    for H, c, d in prob.quad:
        gz = H @ z + c
        val = 0.5 * z @ H @ z + c @ z + d
        grad += gz / (-val)
        hess += H / (-val) + np.outer(gz, gz) / val**2
    if prob.A.shape[0]:
        s = prob.slacks(z)
        grad += prob.A.T @ (1.0 / s)
        hess += (prob.A.T * (1.0 / s**2)) @ prob.A
    try:
        L = np.linalg.cholesky(hess)
        dz = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
    except np.linalg.LinAlgError:
        reg = 1e-12 * max(1.0, float(np.abs(hess).max()))
        dz = -np.linalg.lstsq(hess + reg * np.eye(len(z)), grad, rcond=None)[0]
    return grad, dz


def _center(prob: _Problem, z, t, opts: SolveOptions, stop=None):
    """Damped Newton on the barrier function at parameter t. Returns (z, steps, converged)."""
    steps = 0
    for _ in range(opts.max_newton):
        grad, dz = _newton_direction(prob, z, t)
        decrement = -grad @ dz
        # ||grad phi|| / t bounds the stationarity residual; a decrement at the
        # rounding floor means no further progress is possible
        if decrement / 2.0 <= 1e-14 or (decrement / 2.0 <= 1e-12 and np.abs(grad).max() <= 0.1 * opts.tol_kkt * t):
            return z, steps, True
        phi = prob.barrier_value(z, t)
        step = 1.0
        while step > 1e-20:
            cand = z + step * dz
            val = prob.barrier_value(cand, t)
            if val <= phi - 1e-4 * step * decrement:
                break
            step *= 0.5
        else:
            return z, steps, True
        z_new = z + step * dz
        if np.array_equal(z_new, z) or val >= phi:  # rounding floor reached
            return z, steps, True
        z = z_new
        steps += 1
        if stop is not None and stop(z):
            return z, steps, True
        if np.linalg.norm(z, np.inf) > opts.divergence_norm:
            raise _Diverged(z)
    return z, steps, False


def _barrier_solve(prob: _Problem, z0, opts: SolveOptions, gap_tol: float, stop=None, record=None,
                   total_gap: bool = True):
    """Follow the central path from a strictly feasible z0.

    Stops when the duality gap m/t (or, with ``total_gap=False``, the
    per-constraint complementarity 1/t) drops below ``gap_tol``.
    """
    z = z0
    t = 1.0 / opts.barrier_mu0
    total = 0
    while True:
        z, steps, ok = _center(prob, z, t, opts, stop)
        total += steps
        if record is not None:
            record.append(float(prob.f0(z)))
        if not ok:
            return z, t, total, False
        if stop is not None and stop(z):
            return z, t, total, True
        gap = (prob.n_ineq if total_gap else 1.0) / t
        if prob.n_ineq == 0 or gap <= gap_tol:
            return z, t, total, True
        t /= opts.barrier_shrink


def _bound_rows(inst: QcqpInstance, extra: int = 0):
    """Rows of A x <= r for the finite bounds; equal bounds are widened by 1e-9."""
    n = inst.n
    rows, rhs, kinds = [], [], []
    for j, (lo, hi) in enumerate(zip(inst.lower, inst.upper)):
        widen = 1e-9 if (lo.is_finite and hi.is_finite and lo.value == hi.value) else 0.0
        if lo.is_finite:
            e = np.zeros(n + extra)
            e[j] = -1.0
            rows.append(e), rhs.append(-(lo.value - widen)), kinds.append(("L", j))
        if hi.is_finite:
            e = np.zeros(n + extra)
            e[j] = 1.0
            rows.append(e), rhs.append(hi.value + widen), kinds.append(("U", j))
    A = np.array(rows).reshape(len(rows), n + extra)
    return A, np.array(rhs, dtype=float), kinds


def _interior_start(inst: QcqpInstance) -> np.ndarray:
    x = np.zeros(inst.n)
    for j, (lo, hi) in enumerate(zip(inst.lower, inst.upper)):
        if lo.is_finite and hi.is_finite:
            x[j] = 0.5 * (lo.value + hi.value)
        elif lo.is_finite:
            x[j] = lo.value + 1.0
        elif hi.is_finite:
            x[j] = hi.value - 1.0
    return x


def _require_convex(inst: QcqpInstance, opts: SolveOptions):
    if not check_convexity(inst, opts.convexity_tol):
        raise NonConvexInput(f"instance {inst.name!r} is not convex (tol {opts.convexity_tol})")


def phase1(inst: QcqpInstance, opts: SolveOptions = SolveOptions()) -> Phase1Result:
    """Find a point with max_i g_i(x) <= feas_slack_tol, or certify that none exists."""
    _require_convex(inst, opts)
    n = inst.n
    x0 = _interior_start(inst)
    if inst.m == 0:
        return Phase1Result(True, x0, -math.inf, -math.inf)
    g0 = constraint_values(inst, x0)
    if np.all(g0 < 0):
        return Phase1Result(True, x0, float(g0.max()), -math.inf)

    # variables z = (x, s); objective s
    quad = []
    for Qi, pi, bi in inst.cons_dense:
        H = np.zeros((n + 1, n + 1))
        H[:n, :n] = Qi
        c = np.append(pi, -1.0)
        quad.append((H, c, bi))
    A, r, _ = _bound_rows(inst, extra=1)
    # floor s >= -1 keeps the phase-I barrier bounded below
    floor = np.zeros(n + 1)
    floor[n] = -1.0
    A = np.vstack([A, floor])
    r = np.append(r, 1.0)
    c0 = np.zeros(n + 1)
    c0[n] = 1.0
    prob = _Problem(np.zeros((n + 1, n + 1)), c0, quad, A, r)
    z0 = np.append(x0, float(g0.max()) + 1.0)

    def found(z):
        return z[n] < 0.0

    try:
        z, t, _, _ = _barrier_solve(prob, z0, opts, gap_tol=0.1 * opts.feas_slack_tol, stop=found)
    except _Diverged as exc:  # s can only diverge to -inf, i.e. strictly feasible
        z = exc.args[0]
    x = z[:n]
    slack = float(constraint_values(inst, x).max())
    lower = float(z[n]) - prob.n_ineq / t if slack >= 0 else slack
    feasible = slack <= opts.feas_slack_tol or lower <= opts.feas_slack_tol
    return Phase1Result(bool(feasible), x, slack, float(lower))


def kkt_residual(inst: QcqpInstance, x, multipliers) -> float:
    """Max of stationarity, primal violation, dual-sign breach and complementarity.

    ``multipliers`` is ``[lambda (m), nu_lower (n), nu_upper (n)]``; bound
    multipliers for infinite bounds must be zero.
    """
    x = np.asarray(x, dtype=float)
    n, m = inst.n, inst.m
    mult = np.asarray(multipliers, dtype=float)
    if mult.shape != (m + 2 * n,):
        raise ValueError(f"multipliers must have length m + 2n = {m + 2 * n}")
    lam, nu_l, nu_u = mult[:m], mult[m:m + n], mult[m + n:]
    grad = inst.Q_dense @ x + inst.p_array
    g = constraint_values(inst, x)
    for li, (Qi, pi, _) in zip(lam, inst.cons_dense):
        grad = grad + li * (Qi @ x + pi)
    grad = grad - nu_l + nu_u
    lo, hi = inst.lower_array, inst.upper_array
    fin_l, fin_u = np.isfinite(lo), np.isfinite(hi)
    gap_l = np.where(fin_l, lo - x, 0.0)
    gap_u = np.where(fin_u, x - hi, 0.0)
    parts = [
        np.abs(grad).max(initial=0.0),
        max(g.max(initial=0.0), gap_l.max(initial=0.0), gap_u.max(initial=0.0), 0.0),
        max((-mult).max(initial=0.0), 0.0),
        np.abs(lam * g).max(initial=0.0),
        np.abs(nu_l * gap_l).max(initial=0.0),
        np.abs(nu_u * gap_u).max(initial=0.0),
        np.abs(nu_l[~fin_l]).max(initial=0.0),
        np.abs(nu_u[~fin_u]).max(initial=0.0),
    ]
    return float(max(parts))


def _scale(inst: QcqpInstance) -> float:
    vals = [np.abs(inst.Q_dense).max(initial=0.0), np.abs(inst.p_array).max(initial=0.0)]
    for Qi, pi, bi in inst.cons_dense:
        vals += [np.abs(Qi).max(initial=0.0), np.abs(pi).max(initial=0.0), abs(bi)]
    return float(max(vals))


def _polish_multipliers(inst: QcqpInstance, x, mult, rel: float = 1e-6):
    """Refit multipliers by nonnegative least squares on stationarity.

    Barrier multipliers carry rounding noise of order t * eps; refitting over
    the constraints they mark as active removes it.
    """
    n, m = inst.n, inst.m
    top = float(np.abs(mult).max(initial=0.0))
    if top == 0.0:
        return None
    active = np.flatnonzero(mult > rel * top)
    cols = []
    for i in active:
        if i < m:
            Qi, pi, _ = inst.cons_dense[i]
            cols.append(Qi @ x + pi)
        else:
            e = np.zeros(n)
            e[(i - m) % n] = -1.0 if i < m + n else 1.0
            cols.append(e)
    J = np.column_stack(cols)
    target = -(inst.Q_dense @ x + inst.p_array)
    coef, _ = nnls(J, target, maxiter=50 * J.shape[1])
    out = np.zeros_like(mult)
    out[active] = coef
    return out


def _polish_active_set(inst: QcqpInstance, x, mult, rel: float = 1e-6, iters: int = 5):
    """Newton on the KKT equations of the active set guessed from ``mult``.

    Active bounds are pinned and active constraints become equalities. This
    removes the error the barrier's ill-conditioning leaves in free coordinates.
    Returns (x, multipliers) or None when the guess is unusable.
    """
    n, m = inst.n, inst.m
    top = float(np.abs(mult).max(initial=0.0))
    thr = rel * top if top > 0 else np.inf
    lam0 = mult[:m]
    act = [i for i in range(m) if lam0[i] > thr]
    lo, hi = inst.lower_array, inst.upper_array
    at_lo = mult[m:m + n] > thr
    at_hi = mult[m + n:] > thr
    if np.any(at_lo & at_hi):
        return None
    x = np.array(x, dtype=float)
    x[at_lo] = lo[at_lo]
    x[at_hi] = hi[at_hi]
    free = ~(at_lo | at_hi)
    nf, na = int(free.sum()), len(act)
    lam = lam0[act].copy()
    cons = inst.cons_dense
    for _ in range(iters):
        grads = [cons[i][0] @ x + cons[i][1] for i in act]
        H = inst.Q_dense + sum((l * cons[i][0] for l, i in zip(lam, act)), np.zeros((n, n)))
        gL = inst.Q_dense @ x + inst.p_array + sum((l * g for l, g in zip(lam, grads)), np.zeros(n))
        G = np.array([g[free] for g in grads]).reshape(na, nf)
        gvals = np.array([0.5 * x @ cons[i][0] @ x + cons[i][1] @ x + cons[i][2] for i in act])
        K = np.block([[H[np.ix_(free, free)], G.T], [G, np.zeros((na, na))]])
        rhs = -np.concatenate([gL[free], gvals])
        if not np.all(np.isfinite(K)) or np.abs(rhs).max(initial=0.0) < 1e-15:
            break
        d = np.linalg.lstsq(K, rhs, rcond=None)[0]
        x[free] += d[:nf]
        lam += d[nf:]
    if np.any(lam < 0):
        return None
    grads = [cons[i][0] @ x + cons[i][1] for i in act]
    gL = inst.Q_dense @ x + inst.p_array + sum((l * g for l, g in zip(lam, grads)), np.zeros(n))
    out = np.zeros(m + 2 * n)
    out[act] = lam
    out[m:m + n][at_lo] = np.maximum(gL[at_lo], 0.0)
    out[m + n:][at_hi] = np.maximum(-gL[at_hi], 0.0)
    return x, out


def solve(inst: QcqpInstance, opts: SolveOptions = SolveOptions()) -> SolveResult:
    _require_convex(inst, opts)
    n, m = inst.n, inst.m
    empty = np.zeros(m + 2 * n)
    p1 = phase1(inst, opts)
    if not p1.feasible:
        return SolveResult(Status.INFEASIBLE, p1.x, math.nan, math.nan, empty)
    # no strict interior: relax every constraint by the phase-I slack
    relax = 0.0 if p1.min_slack < 0 else p1.min_slack + 1e-9
    quad = [(Qi, pi, bi - relax) for Qi, pi, bi in inst.cons_dense]
    A, r, kinds = _bound_rows(inst)
    prob = _Problem(inst.Q_dense, inst.p_array, quad, A, r)
    x0 = p1.x
    if not prob.strictly_inside(x0):
        x0 = _interior_start(inst)
        if not prob.strictly_inside(x0):
            return SolveResult(Status.ITER_LIMIT, p1.x, math.nan, math.nan, empty)
    path: list[float] = []
    try:
        x, t, steps, ok = _barrier_solve(prob, x0, opts, gap_tol=0.5 * opts.tol_kkt, record=path,
                                         total_gap=False)
    except _Diverged as exc:
        x = exc.args[0]
        return SolveResult(Status.UNBOUNDED_SUSPECTED, x, objective_value(inst, x), math.nan, empty,
                           path_values=tuple(path), relaxation=relax)

    lam = np.array([1.0 / (t * (-v)) for v in prob.gvals(x)]) if m else np.zeros(0)
    nu_l, nu_u = np.zeros(n), np.zeros(n)
    for (kind, j), s in zip(kinds, prob.slacks(x)):
        (nu_l if kind == "L" else nu_u)[j] = 1.0 / (t * s)
    mult = np.concatenate([lam, nu_l, nu_u])
    res = kkt_residual(inst, x, mult)
    polished = _polish_multipliers(inst, x, mult)
    if polished is not None:
        res_p = kkt_residual(inst, x, polished)
        if res_p < res:
            mult, res = polished, res_p
    refined = _polish_active_set(inst, x, mult)
    if refined is not None:
        res_r = kkt_residual(inst, *refined)
        if res_r < res:
            (x, mult), res = refined, res_r
    status = Status.OPTIMAL if ok else Status.ITER_LIMIT
    if ok and res > opts.tol_kkt * (1.0 + _scale(inst)) + relax:
        status = Status.ITER_LIMIT
    return SolveResult(status, x, objective_value(inst, x), res, mult, steps, tuple(path), relax)
