"""QCQP data model, evaluation and convexification.

Problems have the form::

    min  1/2 x^T Q x + p^T x
    s.t. 1/2 x^T Q^i x + p^i^T x + b^i <= 0,   i = 1..m
         lower <= x <= upper

Quadratic matrices are stored as upper triangles (``j <= k``) with implied
symmetric completion. Indices are 0-based in memory; the I/O layer converts.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

MAX_DENSE_DIM = 512


class SizeError(ValueError):
    """Raised when an instance is too large for dense linear algebra."""


class Finiteness(enum.IntEnum):
    NEG_INF = -1
    FINITE = 0
    POS_INF = 1


@dataclass(frozen=True)
class Bound:
    value: float = 0.0
    finiteness: Finiteness = Finiteness.FINITE

    def __post_init__(self):
        if self.finiteness != Finiteness.FINITE:
            object.__setattr__(self, "value", 0.0)
        else:
            object.__setattr__(self, "value", float(self.value))

    @classmethod
    def finite(cls, value: float) -> "Bound":
        return cls(float(value), Finiteness.FINITE)

    @classmethod
    def neg_inf(cls) -> "Bound":
        return cls(0.0, Finiteness.NEG_INF)

    @classmethod
    def pos_inf(cls) -> "Bound":
        return cls(0.0, Finiteness.POS_INF)

    @classmethod
    def from_float(cls, x: float) -> "Bound":
        if x == math.inf:
            return cls.pos_inf()
        if x == -math.inf:
            return cls.neg_inf()
        return cls.finite(x)

    @property
    def is_finite(self) -> bool:
        return self.finiteness == Finiteness.FINITE

    def to_float(self) -> float:
        if self.finiteness == Finiteness.NEG_INF:
            return -math.inf
        if self.finiteness == Finiteness.POS_INF:
            return math.inf
        return self.value

    def encode(self) -> tuple[float, float]:
        """(value, indicator) pair; the value is 0 when the bound is infinite."""
        return (self.value, float(int(self.finiteness)))


@dataclass(frozen=True)
class SparseSymMatrix:
    """Symmetric matrix stored as sorted upper-triangle triplets ``(j, k, v)``, ``j <= k``."""

    dim: int
    entries: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError("dimension must be non-negative")
        seen = set()
        for j, k, v in self.entries:
            if not (0 <= j <= k < self.dim):
                raise ValueError(f"entry ({j}, {k}) outside upper triangle of dim {self.dim}")
            if (j, k) in seen:
                raise ValueError(f"duplicate entry ({j}, {k})")
            if v == 0.0:
                raise ValueError(f"stored zero at ({j}, {k})")
            seen.add((j, k))

    @classmethod
    def from_triplets(cls, dim: int, triplets: Iterable[tuple[int, int, float]]) -> "SparseSymMatrix":
        """Canonicalize ``(j, k, v)`` triplets given in either triangle. Zeros are dropped."""
        acc: dict[tuple[int, int], float] = {}
        for j, k, v in triplets:
            j, k = int(j), int(k)
            key = (j, k) if j <= k else (k, j)
            if key in acc:
                raise ValueError(f"duplicate entry {key}")
            acc[key] = float(v)
        return cls(dim, tuple((j, k, v) for (j, k), v in sorted(acc.items()) if v != 0.0))

    @classmethod
    def from_dense(cls, A, tol: float = 0.0) -> "SparseSymMatrix":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        n = A.shape[0]
        if not np.array_equal(A, A.T):
            raise ValueError("matrix is not symmetric")
        jj, kk = np.triu_indices(n)
        vals = A[jj, kk]
        keep = np.abs(vals) > tol
        return cls(n, tuple((int(j), int(k), float(v)) for j, k, v in zip(jj[keep], kk[keep], vals[keep])))

    @classmethod
    def zeros(cls, dim: int) -> "SparseSymMatrix":
        return cls(dim, ())

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(j, k): v for j, k, v in self.entries}

    def dense(self) -> np.ndarray:
        A = np.zeros((self.dim, self.dim))
        for j, k, v in self.entries:
            A[j, k] = v
            A[k, j] = v
        return A

    def scaled(self, c: float) -> "SparseSymMatrix":
        return SparseSymMatrix.from_triplets(self.dim, ((j, k, c * v) for j, k, v in self.entries))

    def shift_diagonal(self, delta: float) -> "SparseSymMatrix":
        d = self.as_dict()
        for j in range(self.dim):
            d[(j, j)] = d.get((j, j), 0.0) + delta
        return SparseSymMatrix.from_triplets(self.dim, ((j, k, v) for (j, k), v in d.items()))


@dataclass(frozen=True)
class Constraint:
    Q: SparseSymMatrix
    p: tuple[float, ...]
    b: float


@dataclass(frozen=True)
class QcqpInstance:
    """One QCQP. ``meta`` carries provenance (objective constant, sense flip, source sizes)."""

    Q: SparseSymMatrix
    p: tuple[float, ...]
    cons: tuple[Constraint, ...]
    lower: tuple[Bound, ...]
    upper: tuple[Bound, ...]
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        n = self.Q.dim
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if len(self.p) != n or len(self.lower) != n or len(self.upper) != n:
            raise ValueError("objective vector and bounds must have length n")
        for i, c in enumerate(self.cons):
            if c.Q.dim != n or len(c.p) != n:
                raise ValueError(f"constraint {i} has wrong dimension")
        for j, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if lo.finiteness == Finiteness.POS_INF or hi.finiteness == Finiteness.NEG_INF:
                raise ValueError(f"variable {j}: lower bound +inf or upper bound -inf")
            if lo.is_finite and hi.is_finite and lo.value > hi.value:
                raise ValueError(f"variable {j}: lower bound {lo.value} > upper bound {hi.value}")

    @classmethod
    def build(cls, Q, p, cons=(), lower=None, upper=None, name: str = "", meta=None) -> "QcqpInstance":
        """Convenience constructor from dense arrays.

        ``cons`` is a sequence of ``(Qi, pi, bi)``; bounds are float arrays
        where ``±inf`` marks a missing side (defaults: free variables).
        """
        Qs = Q if isinstance(Q, SparseSymMatrix) else SparseSymMatrix.from_dense(Q)
        n = Qs.dim
        crecs = []
        for Qi, pi, bi in cons:
            Qi = Qi if isinstance(Qi, SparseSymMatrix) else SparseSymMatrix.from_dense(Qi)
            crecs.append(Constraint(Qi, tuple(float(v) for v in pi), float(bi)))
        lo = [-math.inf] * n if lower is None else lower
        hi = [math.inf] * n if upper is None else upper
        return cls(
            Qs,
            tuple(float(v) for v in p),
            tuple(crecs),
            tuple(b if isinstance(b, Bound) else Bound.from_float(float(b)) for b in lo),
            tuple(b if isinstance(b, Bound) else Bound.from_float(float(b)) for b in hi),
            name,
            dict(meta or {}),
        )

    @property
    def n(self) -> int:
        return self.Q.dim

    @property
    def m(self) -> int:
        return len(self.cons)

    @cached_property
    def Q_dense(self) -> np.ndarray:
        return self.Q.dense()

    @cached_property
    def p_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)

    @cached_property
    def cons_dense(self) -> tuple[tuple[np.ndarray, np.ndarray, float], ...]:
        return tuple((c.Q.dense(), np.asarray(c.p, dtype=float), c.b) for c in self.cons)

    @cached_property
    def lower_array(self) -> np.ndarray:
        return np.array([b.to_float() for b in self.lower])

    @cached_property
    def upper_array(self) -> np.ndarray:
        return np.array([b.to_float() for b in self.upper])

    def same_coefficients(self, other: "QcqpInstance") -> bool:
        return (
            self.Q == other.Q
            and self.p == other.p
            and self.cons == other.cons
            and self.lower == other.lower
            and self.upper == other.upper
        )


@dataclass(frozen=True)
class EvalReport:
    objective: float
    constraint_values: np.ndarray
    bound_violation: float
    max_constraint_violation: float


def _check_point(inst: QcqpInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,):
        raise ValueError(f"point has shape {x.shape}, expected ({inst.n},)")
    return x


def objective_value(inst: QcqpInstance, x) -> float:
    """1/2 x^T Q x + p^T x (the objective constant in ``meta`` is not included)."""
    x = _check_point(inst, x)
    return float(0.5 * x @ inst.Q_dense @ x + inst.p_array @ x)


def constraint_values(inst: QcqpInstance, x) -> np.ndarray:
    x = _check_point(inst, x)
    return np.array([0.5 * x @ Qi @ x + pi @ x + bi for Qi, pi, bi in inst.cons_dense])


def bound_violation(inst: QcqpInstance, x) -> float:
    x = _check_point(inst, x)
    viol = 0.0
    for xj, lo, hi in zip(x, inst.lower, inst.upper):
        if lo.is_finite:
            viol = max(viol, lo.value - xj)
        if hi.is_finite:
            viol = max(viol, xj - hi.value)
    return float(viol)


def evaluate(inst: QcqpInstance, x) -> EvalReport:
    x = _check_point(inst, x)
    g = constraint_values(inst, x)
    return EvalReport(
        objective=objective_value(inst, x),
        constraint_values=g,
        bound_violation=bound_violation(inst, x),
        max_constraint_violation=float(g.max()) if g.size else 0.0,
    )


def is_feasible_point(inst: QcqpInstance, x, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    rep = evaluate(inst, x)
    return rep.max_constraint_violation <= tol and rep.bound_violation <= tol


def jacobi_eigenvalues(A, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    scale = max(np.abs(A).max(), 1.0)
    for _ in range(max_sweeps):
        off = math.sqrt(max(float((A**2).sum() - (np.diag(A) ** 2).sum()), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) > 1e150 * abs(apq):
                    t = apq / diff  # theta**2 would overflow
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp_ = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp_ - s * cq
                A[:, q] = s * cp_ + c * cq
    return np.sort(np.diag(A))


def min_eigenvalue(M: SparseSymMatrix | np.ndarray) -> float:
    A = M.dense() if isinstance(M, SparseSymMatrix) else np.asarray(M, dtype=float)
    n = A.shape[0]
    if n == 0:
        raise ValueError("min_eigenvalue of a 0x0 matrix")
    if n > MAX_DENSE_DIM:
        raise SizeError(f"dimension {n} exceeds dense limit {MAX_DENSE_DIM}")
    return float(np.linalg.eigvalsh(A)[0])


def check_convexity(inst: QcqpInstance, tol: float = 1e-8) -> bool:
    if inst.n == 0:
        return True
    mats = [inst.Q] + [c.Q for c in inst.cons]
    # an empty matrix is PSD; skip the decomposition
    return all(M.nnz == 0 or min_eigenvalue(M) >= -tol for M in mats)


def _shift_psd(M: SparseSymMatrix) -> SparseSymMatrix:
    if M.nnz == 0:
        return M
    alpha = min_eigenvalue(M)
    if alpha >= 0.0:
        return M
    return M.shift_diagonal(-alpha)


def convexify(inst: QcqpInstance) -> QcqpInstance:
    """Replace each indefinite matrix M by M - lambda_min(M) I."""
    cons = tuple(replace(c, Q=_shift_psd(c.Q)) for c in inst.cons)
    return replace(inst, Q=_shift_psd(inst.Q), cons=cons, meta=dict(inst.meta))


def reindex(inst: QcqpInstance, var_perm: Sequence[int], cons_perm: Sequence[int]) -> QcqpInstance:
    """Instance with variable j moved to ``var_perm[j]`` and constraint i to ``cons_perm[i]``."""
    n, m = inst.n, inst.m
    pi = list(var_perm)
    if sorted(pi) != list(range(n)) or sorted(cons_perm) != list(range(m)):
        raise ValueError("permutation size mismatch or not a bijection")

    def move_mat(M: SparseSymMatrix) -> SparseSymMatrix:
        return SparseSymMatrix.from_triplets(n, ((pi[j], pi[k], v) for j, k, v in M.entries))

    def move_vec(v):
        out = [0.0] * n
        for j, val in enumerate(v):
            out[pi[j]] = val
        return tuple(out)

    new_cons = [None] * m
    for i, c in enumerate(inst.cons):
        new_cons[cons_perm[i]] = Constraint(move_mat(c.Q), move_vec(c.p), c.b)
    lower = [None] * n
    upper = [None] * n
    for j in range(n):
        lower[pi[j]] = inst.lower[j]
        upper[pi[j]] = inst.upper[j]
    return QcqpInstance(move_mat(inst.Q), move_vec(inst.p), tuple(new_cons), tuple(lower), tuple(upper),
                        inst.name, dict(inst.meta))
