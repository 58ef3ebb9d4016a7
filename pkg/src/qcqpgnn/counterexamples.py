"""Non-convex instance pairs that no tripartite message-passing network can tell apart.

Objective pair: two disjoint triangles versus one 6-cycle, with a cross term
x_j x_k per edge, over the unit ball and the box [-1, 1]. Both graphs are
regular in the same way, so WL colors them identically, yet their optima
differ (-1/2 against -1).

Feasibility pair: the same quadratic bodies moved into a constraint
``body <= -3/4`` with a zero objective. Only the 6-cycle body reaches -3/4.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    QcqpInstance,
    check_convexity,
    constraint_values,
    is_feasible_point,
    min_eigenvalue,
    objective_value,
)
from .gnn.model import GnnConfig, OutputMode, forward, init_params
from .graph import build_graph
from .wl import joint_wl, node_correspondence, run_wl, separates

TRIANGLES = ((0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3))
HEXAGON = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0))
N = 6
FEAS_RHS = 0.75


def adjacency(edges, n: int = N) -> np.ndarray:
    A = np.zeros((n, n))
    for j, k in edges:
        A[j, k] = A[k, j] = 1.0
    return A


def _ball():
    # 1/2 x^T (2I) x - 1 = |x|^2 - 1 <= 0
    return (2.0 * np.eye(N), np.zeros(N), -1.0)


def _box():
    return -np.ones(N), np.ones(N)


def build_objective_pair() -> tuple[QcqpInstance, QcqpInstance]:
    """min sum_{edges} x_j x_k  s.t.  |x|^2 <= 1, -1 <= x <= 1."""
    lo, hi = _box()
    return tuple(
        QcqpInstance.build(adjacency(E), np.zeros(N), [_ball()], lo, hi, name=name)
        for E, name in ((TRIANGLES, "objective_triangles"), (HEXAGON, "objective_hexagon"))
    )


def build_feasibility_pair() -> tuple[QcqpInstance, QcqpInstance]:
    """Find x with sum_{edges} x_j x_k <= -3/4, |x|^2 <= 1, -1 <= x <= 1."""
    lo, hi = _box()
    return tuple(
        QcqpInstance.build(
            np.zeros((N, N)), np.zeros(N), [(adjacency(E), np.zeros(N), FEAS_RHS), _ball()], lo, hi, name=name
        )
        for E, name in ((TRIANGLES, "feasibility_triangles"), (HEXAGON, "feasibility_hexagon"))
    )


def ball_minimum(A: np.ndarray) -> float:
    """min of 1/2 x^T A x over |x| <= 1, which is min(0, lambda_min(A) / 2)."""
    return min(0.0, 0.5 * min_eigenvalue(np.asarray(A, dtype=float)))


def candidate_points() -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Hand-built minimizers: zero-sum unit vectors per triangle; the alternating vector for the cycle."""
    s2, s6 = 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(6.0)
    tri = [
        np.array([s2, -s2, 0.0, 0.0, 0.0, 0.0]),
        np.array([0.0, 0.0, 0.0, 0.0, s2, -s2]),
        np.array([0.5, -0.5, 0.0, 0.5, -0.5, 0.0]),
        np.array([1.0, 1.0, -2.0, 0.0, 0.0, 0.0]) * s6,
    ]
    alt = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) * s6
    return tri, [alt, -alt]


@dataclass
class PairReport:
    kind: str
    wl_separated: bool
    wl_rounds: tuple[int, int]
    gnn_max_gap: float
    param_draws: int
    opt_value_1: float | None = None
    opt_value_2: float | None = None
    feas_1: bool | None = None
    feas_2: bool | None = None
    candidate_values: dict | None = None
    min_candidate_distance: float | None = None
    checks: dict | None = None

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wl_rounds"] = list(self.wl_rounds)
        d["ok"] = self.ok
        return d


def gnn_gap(g1, g2, draws: int = 100, seed: int = 0, widths=(4, 16), rounds=(1, 2, 3)) -> float:
    """Largest output difference over random parameter draws in both output modes.

    NodeVector outputs are compared through the WL variable correspondence.
    """
    corr = node_correspondence(g1, g2)
    if corr is None:
        return math.inf
    ss = np.random.SeedSequence(seed)
    worst = 0.0
    for k, child in enumerate(ss.spawn(draws)):
        T = rounds[k % len(rounds)]
        d = widths[(k // len(rounds)) % len(widths)]
        s = int(child.generate_state(1)[0])
        for mode in (OutputMode.GRAPH_SCALAR, OutputMode.NODE_VECTOR):
            cfg = GnnConfig(rounds=T, width=d, output_mode=mode)
            params = init_params(cfg, s)
            y1, y2 = forward(params, cfg, g1), forward(params, cfg, g2)
            if mode is OutputMode.NODE_VECTOR:
                y2 = y2[corr]
            worst = max(worst, float(np.abs(y1 - y2).max()))
    return worst


def verify_pair(kind: str, draws: int = 100, seed: int = 0) -> PairReport:
    if kind not in ("objective", "feasibility"):
        raise ValueError(f"unknown pair kind {kind!r}")
    a, b = build_objective_pair() if kind == "objective" else build_feasibility_pair()
    ga, gb = build_graph(a), build_graph(b)
    sep = separates(ga, gb)
    rounds = (run_wl(ga).rounds, run_wl(gb).rounds)
    joint = joint_wl(ga, gb).result.rounds
    gap = gnn_gap(ga, gb, draws, seed)
    A1, A2 = adjacency(TRIANGLES), adjacency(HEXAGON)
    m1, m2 = ball_minimum(A1), ball_minimum(A2)
    tri, hexa = candidate_points()
    dist = min(float(np.linalg.norm(x - y)) for x in tri for y in hexa)
    rep = PairReport(kind, sep, rounds, gap, draws, min_candidate_distance=dist)
    checks = {
        "wl_not_separated": not sep,
        "wl_one_round": rounds == (1, 1) and joint == 1,
        "gnn_gap": gap <= 1e-6,
        "not_convex": not check_convexity(a) and not check_convexity(b),
    }
    if kind == "objective":
        rep.opt_value_1, rep.opt_value_2 = m1, m2
        v1 = [objective_value(a, x) for x in tri]
        v2 = [objective_value(b, x) for x in hexa]
        rep.candidate_values = {"instance_1": v1, "instance_2": v2}
        checks["optimal_values"] = abs(m1 + 0.5) <= 1e-9 and abs(m2 + 1.0) <= 1e-9
        checks["candidates_attain"] = (
            all(abs(v - m1) <= 1e-9 for v in v1)
            and all(abs(v - m2) <= 1e-9 for v in v2)
            and all(is_feasible_point(a, x, 1e-12) for x in tri)
            and all(is_feasible_point(b, x, 1e-12) for x in hexa)
        )
        checks["candidate_sets_apart"] = dist >= 0.1
    else:
        # feasible iff the body's minimum over the ball reaches -3/4
        rep.feas_1 = m1 + FEAS_RHS <= 0.0
        rep.feas_2 = m2 + FEAS_RHS <= 0.0
        witness = hexa[0]
        rep.candidate_values = {"instance_2_witness": constraint_values(b, witness).tolist()}
        checks["verdicts"] = rep.feas_1 is False and rep.feas_2 is True
        checks["witness_feasible"] = is_feasible_point(b, witness, 1e-12)
    rep.checks = checks
    return rep
