"""Tripartite graph encoding of a QCQP.

Nodes: variables (V1), quadratic terms (V2, one per upper-triangle pair
``(j, k)`` that is nonzero in the objective or any constraint), constraints
(V3). Diagonal terms and cross terms use different conventions:

=================  =================  ==================
quantity           diagonal (j == k)  cross (j < k)
=================  =================  ==================
quad feature       q_jj               2 q_jk
E12 weight         2 (one edge)       1 (two edges)
E23 weight         q^i_jj             2 q^i_jk
=================  =================  ==================

With these, 1/2 x^T Q x equals the sum over quad nodes of
``feature * x_j * x_k / 2``, and the encoding is lossless.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Bound, Constraint, QcqpInstance, SparseSymMatrix

GRAPH_SCHEMA = "qcqp-graph-v1"


class MalformedGraphError(ValueError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TripartiteGraph:
    """Immutable tripartite graph in canonical node order.

    Edge arrays hold ``(src_index, dst_index, weight)`` columns:
    ``e12`` is (var, quad), ``e13`` is (var, cons), ``e23`` is (quad, cons).
    """

    var_p: np.ndarray
    lower: tuple[Bound, ...]
    upper: tuple[Bound, ...]
    quad_pairs: tuple[tuple[int, int], ...]
    quad_feat: np.ndarray
    cons_b: np.ndarray
    e12: tuple[np.ndarray, np.ndarray, np.ndarray]
    e13: tuple[np.ndarray, np.ndarray, np.ndarray]
    e23: tuple[np.ndarray, np.ndarray, np.ndarray]
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.var_p)

    @property
    def n_quad(self) -> int:
        return len(self.quad_pairs)

    @property
    def m(self) -> int:
        return len(self.cons_b)

    @property
    def num_nodes(self) -> int:
        return self.n + self.n_quad + self.m

    def var_features(self) -> np.ndarray:
        """(n, 5) array: p, lower value, lower indicator, upper value, upper indicator."""
        rows = [(p, *lo.encode(), *hi.encode()) for p, lo, hi in zip(self.var_p, self.lower, self.upper)]
        return np.array(rows, dtype=float).reshape(self.n, 5)

    def quad_features(self) -> np.ndarray:
        return np.asarray(self.quad_feat, dtype=float).reshape(self.n_quad, 1)

    def cons_features(self) -> np.ndarray:
        return np.asarray(self.cons_b, dtype=float).reshape(self.m, 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TripartiteGraph):
            return NotImplemented
        same_edges = all(
            all(np.array_equal(a, b) for a, b in zip(ea, eb))
            for ea, eb in ((self.e12, other.e12), (self.e13, other.e13), (self.e23, other.e23))
        )
        return (
            np.array_equal(self.var_p, other.var_p)
            and self.lower == other.lower
            and self.upper == other.upper
            and self.quad_pairs == other.quad_pairs
            and np.array_equal(self.quad_feat, other.quad_feat)
            and np.array_equal(self.cons_b, other.cons_b)
            and same_edges
        )

    __hash__ = None


@dataclass(frozen=True)
class IndexPermutation:
    """Variable j goes to ``var_perm[j]``; constraint i goes to ``cons_perm[i]``."""

    var_perm: tuple[int, ...]
    cons_perm: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "var_perm", tuple(int(v) for v in self.var_perm))
        object.__setattr__(self, "cons_perm", tuple(int(v) for v in self.cons_perm))
        for name, perm in (("var_perm", self.var_perm), ("cons_perm", self.cons_perm)):
            if sorted(perm) != list(range(len(perm))):
                raise ValueError(f"{name} is not a bijection")

    @classmethod
    def identity(cls, n: int, m: int) -> "IndexPermutation":
        return cls(tuple(range(n)), tuple(range(m)))

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "IndexPermutation":
        return cls(tuple(rng.permutation(n)), tuple(rng.permutation(m)))

    def inverse(self) -> "IndexPermutation":
        return IndexPermutation(tuple(np.argsort(self.var_perm)), tuple(np.argsort(self.cons_perm)))

    def compose(self, other: "IndexPermutation") -> "IndexPermutation":
        """``self ∘ other``: apply ``other`` first."""
        return IndexPermutation(
            tuple(self.var_perm[j] for j in other.var_perm),
            tuple(self.cons_perm[i] for i in other.cons_perm),
        )


def _edges(src, dst, w):
    return (_frozen(src, np.int64), _frozen(dst, np.int64), _frozen(w))


def _sorted_edges(src, dst, w):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.asarray(w, dtype=float)
    idx = np.lexsort((dst, src))
    return _edges(src[idx], dst[idx], w[idx])


def build_graph(inst: QcqpInstance) -> TripartiteGraph:
    n = inst.n
    qobj = inst.Q.as_dict()
    qcons = [c.Q.as_dict() for c in inst.cons]
    support = set(qobj)
    for d in qcons:
        support.update(d)
    pairs = tuple(sorted(support))

    quad_feat = []
    s12, d12, w12 = [], [], []
    s23, d23, w23 = [], [], []
    for v, (j, k) in enumerate(pairs):
        q = qobj.get((j, k), 0.0)
        if j == k:
            quad_feat.append(q)
            s12.append(j), d12.append(v), w12.append(2.0)
        else:
            quad_feat.append(2.0 * q)
            s12 += [j, k]
            d12 += [v, v]
            w12 += [1.0, 1.0]
        for i, d in enumerate(qcons):
            qi = d.get((j, k), 0.0)
            if qi != 0.0:
                s23.append(v), d23.append(i), w23.append(qi if j == k else 2.0 * qi)

    s13, d13, w13 = [], [], []
    for j in range(n):
        for i, c in enumerate(inst.cons):
            if c.p[j] != 0.0:
                s13.append(j), d13.append(i), w13.append(c.p[j])

    return TripartiteGraph(
        var_p=_frozen(inst.p),
        lower=tuple(inst.lower),
        upper=tuple(inst.upper),
        quad_pairs=pairs,
        quad_feat=_frozen(quad_feat),
        cons_b=_frozen([c.b for c in inst.cons]),
        e12=_sorted_edges(s12, d12, w12),
        e13=_sorted_edges(s13, d13, w13),
        e23=_sorted_edges(s23, d23, w23),
        name=inst.name,
    )


def graph_to_instance(g: TripartiteGraph) -> QcqpInstance:
    """Invert :func:`build_graph` exactly."""
    n, L, m = g.n, g.n_quad, g.m
    ends: list[list[tuple[int, float]]] = [[] for _ in range(L)]
    for u, v, w in zip(*g.e12):
        if not (0 <= u < n and 0 <= v < L):
            raise MalformedGraphError(f"dangling E12 edge ({u}, {v})")
        ends[v].append((int(u), float(w)))
    for v, (j, k) in enumerate(g.quad_pairs):
        expect = [(j, 2.0)] if j == k else [(j, 1.0), (k, 1.0)]
        if sorted(ends[v]) != expect:
            raise MalformedGraphError(f"quad node {(j, k)} has endpoints {ends[v]}, expected {expect}")

    def coef(v: int, val: float) -> float:
        j, k = g.quad_pairs[v]
        return val if j == k else val / 2.0

    Q = SparseSymMatrix.from_triplets(
        n, ((j, k, coef(v, f)) for v, ((j, k), f) in enumerate(zip(g.quad_pairs, g.quad_feat))))
    cq: list[list[tuple[int, int, float]]] = [[] for _ in range(m)]
    for v, i, w in zip(*g.e23):
        if not (0 <= v < L and 0 <= i < m):
            raise MalformedGraphError(f"dangling E23 edge ({v}, {i})")
        j, k = g.quad_pairs[v]
        cq[i].append((j, k, coef(int(v), float(w))))
    cp = [[0.0] * n for _ in range(m)]
    for u, i, w in zip(*g.e13):
        if not (0 <= u < n and 0 <= i < m):
            raise MalformedGraphError(f"dangling E13 edge ({u}, {i})")
        cp[i][u] = float(w)
    cons = tuple(
        Constraint(SparseSymMatrix.from_triplets(n, cq[i]), tuple(cp[i]), float(g.cons_b[i])) for i in range(m)
    )
    return QcqpInstance(Q, tuple(float(v) for v in g.var_p), cons, g.lower, g.upper, g.name)


def permute(g: TripartiteGraph, perm: IndexPermutation) -> TripartiteGraph:
    """Graph of the re-indexed instance, in canonical node order."""
    if len(perm.var_perm) != g.n or len(perm.cons_perm) != g.m:
        raise ValueError(f"permutation sizes ({len(perm.var_perm)}, {len(perm.cons_perm)}) "
                         f"do not match graph ({g.n}, {g.m})")
    pi, sigma = perm.var_perm, perm.cons_perm
    var_p = np.empty(g.n)
    lower: list = [None] * g.n
    upper: list = [None] * g.n
    for j in range(g.n):
        var_p[pi[j]] = g.var_p[j]
        lower[pi[j]] = g.lower[j]
        upper[pi[j]] = g.upper[j]
    moved = [tuple(sorted((pi[j], pi[k]))) for j, k in g.quad_pairs]
    order = sorted(range(g.n_quad), key=lambda v: moved[v])
    new_index = np.empty(g.n_quad, dtype=np.int64)
    new_index[order] = np.arange(g.n_quad)
    cons_b = np.empty(g.m)
    for i in range(g.m):
        cons_b[sigma[i]] = g.cons_b[i]

    pi_arr = np.asarray(pi, dtype=np.int64)
    sig_arr = np.asarray(sigma, dtype=np.int64)
    e12 = _sorted_edges(pi_arr[g.e12[0]], new_index[g.e12[1]], g.e12[2])
    e13 = _sorted_edges(pi_arr[g.e13[0]], sig_arr[g.e13[1]], g.e13[2])
    e23 = _sorted_edges(new_index[g.e23[0]], sig_arr[g.e23[1]], g.e23[2])
    return TripartiteGraph(
        var_p=_frozen(var_p),
        lower=tuple(lower),
        upper=tuple(upper),
        quad_pairs=tuple(moved[v] for v in order),
        quad_feat=_frozen(np.asarray(g.quad_feat)[order]),
        cons_b=_frozen(cons_b),
        e12=e12,
        e13=e13,
        e23=e23,
        name=g.name,
    )


def canonical(g: TripartiteGraph) -> TripartiteGraph:
    """Re-sort edge lists; node order is already canonical by construction."""
    return permute(g, IndexPermutation.identity(g.n, g.m))


def quadratic_objective_from_graph(g: TripartiteGraph, x) -> float:
    """1/2 x^T Q x + p^T x computed from quad-node features and variable features only."""
    x = np.asarray(x, dtype=float)
    total = float(np.dot(g.var_p, x))
    for (j, k), f in zip(g.quad_pairs, g.quad_feat):
        total += 0.5 * f * x[j] * x[k]
    return total


def graph_to_dict(g: TripartiteGraph) -> dict:
    def bound(b: Bound):
        return b.to_float() if b.is_finite else ("+inf" if b.finiteness > 0 else "-inf")

    return {
        "schema": GRAPH_SCHEMA,
        "name": g.name,
        "variables": [
            {"id": j + 1, "p": float(p), "lower": bound(lo), "upper": bound(hi)}
            for j, (p, lo, hi) in enumerate(zip(g.var_p, g.lower, g.upper))
        ],
        "quadratic": [
            {"id": v + 1, "j": j + 1, "k": k + 1, "feature": float(f)}
            for v, ((j, k), f) in enumerate(zip(g.quad_pairs, g.quad_feat))
        ],
        "constraints": [{"id": i + 1, "b": float(b)} for i, b in enumerate(g.cons_b)],
        "edges": {
            name: [[int(s) + 1, int(d) + 1, float(w)] for s, d, w in zip(*e)]
            for name, e in (("var_quad", g.e12), ("var_cons", g.e13), ("quad_cons", g.e23))
        },
    }


def graph_to_json(g: TripartiteGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1)


def graph_to_dot(g: TripartiteGraph) -> str:
    lines = [f'graph "{g.name or "qcqp"}" {{']
    for j, p in enumerate(g.var_p):
        lines.append(f'  u{j + 1} [shape=circle, label="x{j + 1}\\np={p:g}"];')
    for v, ((j, k), f) in enumerate(zip(g.quad_pairs, g.quad_feat)):
        lines.append(f'  v{v + 1} [shape=box, label="x{j + 1}x{k + 1}\\n{f:g}"];')
    for i, b in enumerate(g.cons_b):
        lines.append(f'  c{i + 1} [shape=diamond, label="c{i + 1}\\nb={b:g}"];')
    for (a, b_), e in (("u", "v"), g.e12), (("u", "c"), g.e13), (("v", "c"), g.e23):
        for s, d, w in zip(*e):
            lines.append(f'  {a}{s + 1} -- {b_}{d + 1} [label="{w:g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def disjoint_union(graphs: Sequence[TripartiteGraph]) -> TripartiteGraph:
    """Side-by-side union; node blocks are concatenated in argument order."""
    var_p, lower, upper, pairs, qf, cb = [], [], [], [], [], []
    e = {k: ([], [], []) for k in ("12", "13", "23")}
    on = oq = oc = 0
    for g in graphs:
        var_p.extend(g.var_p)
        lower.extend(g.lower)
        upper.extend(g.upper)
        pairs.extend((j + on, k + on) for j, k in g.quad_pairs)
        qf.extend(g.quad_feat)
        cb.extend(g.cons_b)
        for key, edges, (a, b) in (("12", g.e12, (on, oq)), ("13", g.e13, (on, oc)), ("23", g.e23, (oq, oc))):
            e[key][0].extend(edges[0] + a)
            e[key][1].extend(edges[1] + b)
            e[key][2].extend(edges[2])
        on, oq, oc = on + g.n, oq + g.n_quad, oc + g.m
    return TripartiteGraph(
        _frozen(var_p), tuple(lower), tuple(upper), tuple(pairs), _frozen(qf), _frozen(cb),
        _edges(*e["12"]), _edges(*e["13"]), _edges(*e["23"]), "union",
    )
