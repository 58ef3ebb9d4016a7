import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcqpgnn.core import QcqpInstance, objective_value, reindex
from qcqpgnn.graph import (
    IndexPermutation,
    MalformedGraphError,
    TripartiteGraph,
    build_graph,
    canonical,
    disjoint_union,
    graph_to_dict,
    graph_to_dot,
    graph_to_instance,
    permute,
    quadratic_objective_from_graph,
)

from conftest import random_instance


def small_instance():
    # 1/2 x^T Q x with q11 = 2, q12 = 3 (so 3 x1 x2), constraint with q22 = 4, q12 = -1
    Q = np.array([[2.0, 3.0], [3.0, 0.0]])
    Q1 = np.array([[0.0, -1.0], [-1.0, 4.0]])
    return QcqpInstance.build(Q, [1.0, 0.0], [(Q1, [0.0, 5.0], -1.0)], [-1, -1], [1, np.inf])


def test_hand_built_encoding():
    g = build_graph(small_instance())
    assert g.quad_pairs == ((0, 0), (0, 1), (1, 1))
    # diagonal feature q_jj, cross feature 2 q_jk
    assert g.quad_feat.tolist() == [2.0, 6.0, 0.0]
    src, dst, w = g.e12
    assert list(zip(src.tolist(), dst.tolist(), w.tolist())) == [(0, 0, 2.0), (0, 1, 1.0), (1, 1, 1.0), (1, 2, 2.0)]
    src, dst, w = g.e23
    assert list(zip(src.tolist(), dst.tolist(), w.tolist())) == [(1, 0, -2.0), (2, 0, 4.0)]
    src, dst, w = g.e13
    assert list(zip(src.tolist(), dst.tolist(), w.tolist())) == [(1, 0, 5.0)]
    assert g.var_features().tolist() == [[1.0, -1.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 0.0, 1.0]]
    assert g.cons_features().tolist() == [[-1.0]]


def test_round_trip_random(rng):
    for _ in range(50):
        inst = random_instance(rng)
        assert graph_to_instance(build_graph(inst)).same_coefficients(inst)


def test_objective_from_graph(rng):
    for _ in range(20):
        inst = random_instance(rng)
        x = rng.normal(size=inst.n)
        assert quadratic_objective_from_graph(build_graph(inst), x) == pytest.approx(
            objective_value(inst, x), rel=1e-12, abs=1e-12)


def test_permute_matches_reindexed_instance(rng):
    for _ in range(20):
        inst = random_instance(rng)
        perm = IndexPermutation.random(inst.n, inst.m, rng)
        expect = build_graph(reindex(inst, perm.var_perm, perm.cons_perm))
        assert permute(build_graph(inst), perm) == expect


def test_permutation_group_laws(rng):
    inst = random_instance(rng, n=5, m=3)
    g = build_graph(inst)
    a = IndexPermutation.random(5, 3, rng)
    b = IndexPermutation.random(5, 3, rng)
    assert permute(permute(g, a), a.inverse()) == g
    assert permute(permute(g, b), a) == permute(g, a.compose(b))
    assert canonical(g) == g


def test_permutation_validation():
    with pytest.raises(ValueError):
        IndexPermutation((0, 0), ())
    g = build_graph(small_instance())
    with pytest.raises(ValueError):
        permute(g, IndexPermutation.identity(3, 1))


def test_malformed_graph_rejected():
    g = build_graph(small_instance())
    s, d, w = g.e12
    bad = TripartiteGraph(g.var_p, g.lower, g.upper, g.quad_pairs, g.quad_feat, g.cons_b,
                          (s[1:], d[1:], w[1:]), g.e13, g.e23)
    with pytest.raises(MalformedGraphError):
        graph_to_instance(bad)


def test_serializers():
    g = build_graph(small_instance())
    d = json.loads(json.dumps(graph_to_dict(g)))
    assert d["schema"] == "qcqp-graph-v1"
    assert d["variables"][1]["upper"] == "+inf"
    assert d["edges"]["var_quad"][0] == [1, 1, 2.0]
    dot = graph_to_dot(g)
    assert dot.startswith("graph") and "u2 -- c1" in dot


def test_disjoint_union_sizes(rng):
    a, b = build_graph(random_instance(rng, n=3, m=1)), build_graph(random_instance(rng, n=4, m=2))
    u = disjoint_union([a, b])
    assert (u.n, u.n_quad, u.m) == (a.n + b.n, a.n_quad + b.n_quad, a.m + b.m)
    assert graph_to_instance(u).n == 7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    r = np.random.default_rng(seed)
    inst = random_instance(r)
    g = build_graph(inst)
    assert graph_to_instance(g).same_coefficients(inst)
    perm = IndexPermutation.random(inst.n, inst.m, r)
    assert graph_to_instance(permute(g, perm)).same_coefficients(reindex(inst, perm.var_perm, perm.cons_perm))
