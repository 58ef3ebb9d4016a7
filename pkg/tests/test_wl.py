import numpy as np
import pytest

from qcqpgnn.core import QcqpInstance, is_feasible_point
from qcqpgnn.counterexamples import build_feasibility_pair, build_objective_pair
from qcqpgnn.graph import IndexPermutation, build_graph, permute
from qcqpgnn.solver import solve
from qcqpgnn.wl import (
    Coloring,
    WellDefinednessViolation,
    average_solution_by_color,
    check_solution_transfer,
    color_sum_table,
    initial_coloring,
    node_correspondence,
    refine_round,
    run_wl,
    separates,
    wl_report,
)

from conftest import dominant_instance, random_instance, two_lift


def test_counterexample_pairs_not_separated_in_one_round():
    for a, b in (build_objective_pair(), build_feasibility_pair()):
        g1, g2 = build_graph(a), build_graph(b)
        assert not separates(g1, g2)
        assert run_wl(g1).rounds == 1
        rep = wl_report(g1, g2)
        assert rep["separated"] is False and rep["rounds"] == 1


def test_different_graphs_are_separated():
    # path vs triangle on three variables
    path = QcqpInstance.build([[1, 1, 0], [1, 1, 1], [0, 1, 1]], [0, 0, 0])
    tri = QcqpInstance.build([[1, 1, 1], [1, 1, 1], [1, 1, 1]], [0, 0, 0])
    assert not separates(build_graph(path), build_graph(path))
    assert separates(build_graph(path), build_graph(tri))
    # a single differing coefficient separates too
    other = QcqpInstance.build([[1, 1, 0], [1, 1, 1], [0, 1, 1.5]], [0, 0, 0])
    assert separates(build_graph(path), build_graph(other))


def test_path_refines_ends_from_middle():
    path = QcqpInstance.build([[1, 1, 0], [1, 1, 1], [0, 1, 1]], [0, 0, 0])
    res = run_wl(build_graph(path))
    v = res.stable.var_colors
    assert v[0] == v[2] != v[1]
    assert res.history[0] < res.history[-1]


def test_permutation_never_separates(rng):
    for _ in range(30):
        inst = random_instance(rng)
        g = build_graph(inst)
        h = permute(g, IndexPermutation.random(inst.n, inst.m, rng))
        assert not separates(g, h)
        corr = node_correspondence(g, h)
        assert corr is not None and sorted(corr) == list(range(inst.n))


def test_lifts_are_not_separated(rng):
    for _ in range(10):
        base = dominant_instance(rng, 4, 2)
        assert not separates(build_graph(two_lift(base, rng, cross=False)), build_graph(two_lift(base, rng)))


def test_coloring_ids_invariant_under_reindexing(rng):
    inst = random_instance(rng, n=6, m=3)
    g = build_graph(inst)
    perm = IndexPermutation.random(6, 3, rng)
    a = run_wl(g).stable
    b = run_wl(permute(g, perm)).stable
    assert [b.var_colors[perm.var_perm[j]] for j in range(6)] == list(a.var_colors)


def test_refine_is_monotone(rng):
    g = build_graph(random_instance(rng, n=6, m=3))
    c = initial_coloring(g)
    for _ in range(4):
        nxt = refine_round(g, c)
        assert nxt.palette_size >= c.palette_size
        # refinement: equal new colors imply equal old colors
        pairs = set(zip(nxt.var_colors + nxt.quad_colors + nxt.cons_colors, c.var_colors + c.quad_colors + c.cons_colors))
        assert len({n for n, _ in pairs}) == len(pairs)
        c = nxt


def test_coloring_local_round_trip():
    c = Coloring.from_local([0, 1, 0], [0, 0], [1, 0])
    assert c.local() == ([0, 1, 0], [0, 0], [1, 0])
    assert c.palette_size == 5


def test_color_sum_table_on_counterexample():
    a, _ = build_objective_pair()
    g = build_graph(a)
    res = run_wl(g)
    table = color_sum_table(g, res.stable)
    assert table.max_spread == 0.0 and table.max_identity_gap == 0.0
    # every variable has the same color; six of them
    assert len(set(res.stable.var_colors)) == 1
    assert table.class_sizes[res.stable.var_colors[0]] == 6


def test_color_sum_table_detects_bad_coloring(rng):
    g = build_graph(QcqpInstance.build([[1, 1, 0], [1, 1, 1], [0, 1, 1]], [0, 0, 0]))
    coarse = initial_coloring(g)  # path ends and middle share a color here
    with pytest.raises(WellDefinednessViolation):
        color_sum_table(g, coarse)


def test_color_sum_identities_random(rng):
    for _ in range(20):
        g = build_graph(random_instance(rng, n=int(rng.integers(1, 11)), m=int(rng.integers(0, 6))))
        table = color_sum_table(g, run_wl(g).stable, tol=1e-9)
        assert table.max_spread <= 1e-9 and table.max_identity_gap <= 1e-9


def test_average_solution_on_lift(rng):
    base = dominant_instance(rng, 3, 1)
    src, dst = two_lift(base, rng, cross=False), two_lift(base, rng)
    res = solve(src)
    rep = check_solution_transfer(build_graph(src), build_graph(dst), res.x)
    assert rep["feasible"]
    assert rep["objective_dst"] <= rep["objective_src"] + 1e-8
    assert rep["norm_dst"] <= rep["norm_src"] + 1e-8
    assert is_feasible_point(dst, rep["x_bar"], 1e-8)


def test_average_rejects_separated_graphs():
    path = QcqpInstance.build([[1, 1, 0], [1, 1, 1], [0, 1, 1]], [0, 0, 0])
    tri = QcqpInstance.build([[1, 1, 1], [1, 1, 1], [1, 1, 1]], [0, 0, 0])
    with pytest.raises(ValueError):
        average_solution_by_color(build_graph(path), build_graph(tri), None, np.zeros(3))
