"""Tripartite Weisfeiler-Lehman color refinement.

Each sub-update recolors one node class from its old color and, for every
incoming neighbor class, the map ``neighbor color -> summed edge weight``.
This is the exact, collision-free form of aggregating ``sum w * HASH(color)``
with a generic real-valued hash: two weighted hash sums agree iff the
per-color weight totals agree. Sums use ``math.fsum`` so they do not depend
on neighbor order, and are rounded to ``digits`` significant digits.

Colors are interned by sorting the distinct signatures, so ids are invariant
under re-indexing of nodes.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import is_feasible_point, objective_value
from .graph import TripartiteGraph, disjoint_union, graph_to_instance

DEFAULT_FEATURE_TOL = 1e-12  # compare at 12 significant digits
WL_REPORT_SCHEMA = "wl-report-v1"


class WellDefinednessViolation(RuntimeError):
    """Nodes of one stable color disagree on a weight sum (a refinement bug)."""


def _digits_from_tol(feature_tol: float) -> Optional[int]:
    if feature_tol <= 0:
        return None
    return max(1, int(math.ceil(-math.log10(feature_tol))))


def _canon(x: float, digits: Optional[int]) -> float:
    x = float(x)
    if digits is not None and x != 0.0 and math.isfinite(x):
        x = float(f"{x:.{digits}g}")
    return 0.0 if x == 0.0 else x


def _intern(signatures: Sequence) -> list[int]:
    palette = {sig: i for i, sig in enumerate(sorted(set(signatures)))}
    return [palette[s] for s in signatures]


@dataclass(frozen=True)
class Coloring:
    """Class-disjoint dense color ids: variables first, then quad nodes, then constraints."""

    var_colors: tuple[int, ...]
    quad_colors: tuple[int, ...]
    cons_colors: tuple[int, ...]

    @classmethod
    def from_local(cls, var: Sequence[int], quad: Sequence[int], cons: Sequence[int]) -> "Coloring":
        a = (max(var) + 1) if len(var) else 0
        b = (max(quad) + 1) if len(quad) else 0
        return cls(tuple(int(c) for c in var), tuple(int(c) + a for c in quad), tuple(int(c) + a + b for c in cons))

    @property
    def palette_size(self) -> int:
        return len(set(self.var_colors) | set(self.quad_colors) | set(self.cons_colors))

    def local(self) -> tuple[list[int], list[int], list[int]]:
        """Per-class ids starting at 0 (inverse of :meth:`from_local`)."""
        out = []
        for cols in (self.var_colors, self.quad_colors, self.cons_colors):
            base = min(cols) if cols else 0
            out.append([c - base for c in cols])
        return out[0], out[1], out[2]

    def partition_key(self):
        return self.var_colors, self.quad_colors, self.cons_colors


@dataclass(frozen=True)
class WlResult:
    """``rounds`` is the smallest depth T >= 1 whose coloring is already stable.

    ``productive_rounds`` counts rounds that split at least one class and
    ``history`` lists palette sizes from round 0 through the confirming round.
    """

    stable: Coloring
    rounds: int
    productive_rounds: int
    history: tuple[int, ...] = ()


def initial_coloring(g: TripartiteGraph, feature_tol: float = DEFAULT_FEATURE_TOL) -> Coloring:
    digits = _digits_from_tol(feature_tol)
    var = _intern([tuple(_canon(v, digits) for v in row) for row in g.var_features()])
    quad = _intern([_canon(f, digits) for f in g.quad_feat])
    cons = _intern([_canon(b, digits) for b in g.cons_b])
    return Coloring.from_local(var, quad, cons)


def _weight_sums(n_dst: int, dst, src, w, src_colors, digits) -> list[tuple]:
    buckets: list[dict[int, list[float]]] = [defaultdict(list) for _ in range(n_dst)]
    for d, s, wt in zip(dst, src, w):
        buckets[d][src_colors[s]].append(wt)
    out = []
    for b in buckets:
        items = ((c, _canon(math.fsum(ws), digits)) for c, ws in b.items())
        out.append(tuple(sorted((c, s) for c, s in items if s != 0.0)))
    return out


def refine_round(g: TripartiteGraph, c: Coloring, feature_tol: float = DEFAULT_FEATURE_TOL) -> Coloring:
    """One iteration of the four sub-updates: V1->V2, V1+V2->V3, V3->V2, V3+V2->V1."""
    digits = _digits_from_tol(feature_tol)
    cu, cv, cc = c.local()
    u12, v12, w12 = g.e12
    u13, c13, w13 = g.e13
    v23, c23, w23 = g.e23

    from_vars = _weight_sums(g.n_quad, v12, u12, w12, cu, digits)
    cv_bar = _intern(list(zip(cv, from_vars)))

    cons_from_vars = _weight_sums(g.m, c13, u13, w13, cu, digits)
    cons_from_quads = _weight_sums(g.m, c23, v23, w23, cv_bar, digits)
    cc_new = _intern(list(zip(cc, cons_from_vars, cons_from_quads)))

    quad_from_cons = _weight_sums(g.n_quad, v23, c23, w23, cc_new, digits)
    cv_new = _intern(list(zip(cv_bar, quad_from_cons)))

    var_from_cons = _weight_sums(g.n, u13, c13, w13, cc_new, digits)
    var_from_quads = _weight_sums(g.n, u12, v12, w12, cv_new, digits)
    cu_new = _intern(list(zip(cu, var_from_cons, var_from_quads)))
    return Coloring.from_local(cu_new, cv_new, cc_new)


def run_wl(
    g: TripartiteGraph, feature_tol: float = DEFAULT_FEATURE_TOL, max_rounds: Optional[int] = None
) -> WlResult:
    """Refine until a full round leaves the number of colors unchanged."""
    limit = g.num_nodes + 1 if max_rounds is None else max_rounds
    c = initial_coloring(g, feature_tol)
    history = [c.palette_size]
    productive = 0
    for _ in range(limit):
        nxt = refine_round(g, c, feature_tol)
        history.append(nxt.palette_size)
        if nxt.palette_size == c.palette_size:
            c = nxt
            break
        productive += 1
        c = nxt
    else:
        raise RuntimeError(f"WL did not stabilize within {limit} rounds")
    return WlResult(c, max(1, productive), productive, tuple(history))


@dataclass(frozen=True)
class JointWl:
    result: WlResult
    colorings: tuple[Coloring, Coloring]


def joint_wl(g1: TripartiteGraph, g2: TripartiteGraph, feature_tol: float = DEFAULT_FEATURE_TOL) -> JointWl:
    """WL on the disjoint union; returns each graph's slice of the shared coloring."""
    res = run_wl(disjoint_union([g1, g2]), feature_tol)
    s = res.stable
    parts = []
    for lo_n, hi_n, lo_q, hi_q, lo_c, hi_c in (
        (0, g1.n, 0, g1.n_quad, 0, g1.m),
        (g1.n, g1.n + g2.n, g1.n_quad, g1.n_quad + g2.n_quad, g1.m, g1.m + g2.m),
    ):
        parts.append(Coloring(s.var_colors[lo_n:hi_n], s.quad_colors[lo_q:hi_q], s.cons_colors[lo_c:hi_c]))
    return JointWl(res, (parts[0], parts[1]))


def _multisets(c: Coloring):
    return tuple(tuple(sorted(cols)) for cols in (c.var_colors, c.quad_colors, c.cons_colors))


def separates(g1: TripartiteGraph, g2: TripartiteGraph, feature_tol: float = DEFAULT_FEATURE_TOL) -> bool:
    if (g1.n, g1.n_quad, g1.m) != (g2.n, g2.n_quad, g2.m):
        return True
    c1, c2 = joint_wl(g1, g2, feature_tol).colorings
    return _multisets(c1) != _multisets(c2)


def node_correspondence(
    g1: TripartiteGraph, g2: TripartiteGraph, feature_tol: float = DEFAULT_FEATURE_TOL
) -> Optional[list[int]]:
    """``corr[j] = j'`` pairing variables with equal stable colors, or None if impossible."""
    if g1.n != g2.n:
        return None
    c1, c2 = joint_wl(g1, g2, feature_tol).colorings
    return _pair_by_color(c1.var_colors, c2.var_colors)


def _pair_by_color(a: Sequence[int], b: Sequence[int]) -> Optional[list[int]]:
    pool: dict[int, list[int]] = defaultdict(list)
    for j, col in enumerate(b):
        pool[col].append(j)
    corr = []
    for col in a:
        if not pool[col]:
            return None
        corr.append(pool[col].pop(0))
    return corr


@dataclass
class ColorSumTable:
    """``entries[(J, K)]``: total edge weight from one node of color J into color class K."""

    entries: dict[tuple[int, int], float] = field(default_factory=dict)
    class_sizes: dict[int, int] = field(default_factory=dict)
    max_spread: float = 0.0
    max_identity_gap: float = 0.0


def _all_edges(g: TripartiteGraph):
    """Undirected edges as (node_a, node_b, weight) with global node ids."""
    off_q, off_c = g.n, g.n + g.n_quad
    ids = []
    for (s, d, w), (oa, ob) in ((g.e12, (0, off_q)), (g.e13, (0, off_c)), (g.e23, (off_q, off_c))):
        ids.extend(zip((s + oa).tolist(), (d + ob).tolist(), w.tolist()))
    return ids


def color_sum_table(g: TripartiteGraph, stable: Coloring, tol: float = 1e-9) -> ColorSumTable:
    colors = list(stable.var_colors) + list(stable.quad_colors) + list(stable.cons_colors)
    sums: list[dict[int, list[float]]] = [defaultdict(list) for _ in colors]
    for a, b, w in _all_edges(g):
        sums[a][colors[b]].append(w)
        sums[b][colors[a]].append(w)
    class_sizes: dict[int, int] = defaultdict(int)
    members: dict[int, list[int]] = defaultdict(list)
    for node, col in enumerate(colors):
        class_sizes[col] += 1
        members[col].append(node)

    table = ColorSumTable(class_sizes=dict(class_sizes))
    targets = sorted(class_sizes)
    for J, nodes in sorted(members.items()):
        for K in targets:
            vals = [math.fsum(sums[v].get(K, ())) for v in nodes]
            spread = max(vals) - min(vals)
            scale = max(1.0, max(abs(v) for v in vals))
            table.max_spread = max(table.max_spread, spread / scale)
            if spread > tol * scale:
                raise WellDefinednessViolation(
                    f"color {J}: weight sums into color {K} range over [{min(vals)}, {max(vals)}]")
            if any(K in sums[v] for v in nodes):
                table.entries[(J, K)] = vals[0]
    for (J, K), s in table.entries.items():
        lhs = class_sizes[J] * s
        rhs = class_sizes[K] * table.entries.get((K, J), 0.0)
        gap = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
        table.max_identity_gap = max(table.max_identity_gap, gap)
        if gap > tol:
            raise WellDefinednessViolation(f"|G({J})| S({J},{K}) = {lhs} but |G({K})| S({K},{J}) = {rhs}")
    return table


def average_solution_by_color(
    g_src: TripartiteGraph,
    g_dst: TripartiteGraph,
    correspondence: Optional[Sequence[int]],
    x,
    feature_tol: float = DEFAULT_FEATURE_TOL,
) -> np.ndarray:
    """Destination point whose j-th entry is the mean of ``x`` over source variables of j's stable color."""
    x = np.asarray(x, dtype=float)
    if x.shape != (g_src.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({g_src.n},)")
    joint = joint_wl(g_src, g_dst, feature_tol)
    c_src, c_dst = joint.colorings
    if _multisets(c_src) != _multisets(c_dst):
        raise ValueError("graphs are separated by WL; averaging is undefined")
    if correspondence is not None:
        for j, jp in enumerate(correspondence):
            if c_src.var_colors[j] != c_dst.var_colors[jp]:
                raise ValueError(f"correspondence pairs variables {j} and {jp} of different colors")
    groups: dict[int, list[float]] = defaultdict(list)
    for j, col in enumerate(c_src.var_colors):
        groups[col].append(x[j])
    means = {col: math.fsum(v) / len(v) for col, v in groups.items()}
    return np.array([means[col] for col in c_dst.var_colors])


def check_solution_transfer(g_src: TripartiteGraph, g_dst: TripartiteGraph, x, tol: float = 1e-8) -> dict:
    """Average a feasible source point onto the destination and measure feasibility, objective, norm."""
    src, dst = graph_to_instance(g_src), graph_to_instance(g_dst)
    xbar = average_solution_by_color(g_src, g_dst, node_correspondence(g_src, g_dst), x)
    return {
        "x_bar": xbar,
        "feasible": is_feasible_point(dst, xbar, tol),
        "objective_src": objective_value(src, x),
        "objective_dst": objective_value(dst, xbar),
        "norm_src": float(np.linalg.norm(x)),
        "norm_dst": float(np.linalg.norm(xbar)),
    }


def wl_report(
    g1: TripartiteGraph, g2: Optional[TripartiteGraph] = None, feature_tol: float = DEFAULT_FEATURE_TOL
) -> dict:
    res = run_wl(g1 if g2 is None else disjoint_union([g1, g2]), feature_tol)
    rep = {
        "schema": WL_REPORT_SCHEMA,
        "rounds": res.rounds,
        "productive_rounds": res.productive_rounds,
        "palette_history": list(res.history),
        "palette_size": res.stable.palette_size,
    }
    if g2 is not None:
        rep["separated"] = separates(g1, g2, feature_tol)
        corr = None if rep["separated"] else node_correspondence(g1, g2, feature_tol)
        rep["correspondence"] = None if corr is None else [j + 1 for j in corr]
    return rep
