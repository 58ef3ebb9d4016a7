import math

import numpy as np
import pytest

from qcqpgnn.core import (
    Bound,
    Finiteness,
    QcqpInstance,
    SizeError,
    SparseSymMatrix,
    check_convexity,
    constraint_values,
    convexify,
    evaluate,
    is_feasible_point,
    jacobi_eigenvalues,
    min_eigenvalue,
    objective_value,
    reindex,
)

from conftest import random_instance, random_symmetric


def test_bound_encoding():
    assert Bound.finite(2.5).encode() == (2.5, 0.0)
    assert Bound.neg_inf().encode() == (0.0, -1.0)
    assert Bound.pos_inf().encode() == (0.0, 1.0)
    assert Bound.from_float(-math.inf).finiteness is Finiteness.NEG_INF
    assert Bound.from_float(1.0).to_float() == 1.0


def test_sparse_matrix_canonicalizes_and_validates():
    M = SparseSymMatrix.from_triplets(3, [(2, 0, 1.5), (1, 1, 0.0), (0, 1, -2.0)])
    assert M.entries == ((0, 1, -2.0), (0, 2, 1.5))
    with pytest.raises(ValueError):
        SparseSymMatrix.from_triplets(3, [(0, 1, 1.0), (1, 0, 2.0)])
    with pytest.raises(ValueError):
        SparseSymMatrix(2, ((1, 0, 1.0),))
    with pytest.raises(ValueError):
        SparseSymMatrix.from_dense([[1.0, 2.0], [0.0, 1.0]])


def test_dense_round_trip(rng):
    A = random_symmetric(rng, 5)
    assert np.array_equal(SparseSymMatrix.from_dense(A).dense(), A)


def test_instance_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        QcqpInstance.build(np.eye(1), [0.0], [], [2.0], [1.0])
    with pytest.raises(ValueError):
        QcqpInstance.build(np.eye(2), [0.0], [])


def test_objective_and_constraints_match_formula(rng):
    inst = random_instance(rng, n=4, m=2)
    x = rng.normal(size=4)
    Q, p = inst.Q_dense, inst.p_array
    assert objective_value(inst, x) == pytest.approx(0.5 * x @ Q @ x + p @ x, rel=1e-12)
    for gi, (Qi, pi, bi) in zip(constraint_values(inst, x), inst.cons_dense):
        assert gi == pytest.approx(0.5 * x @ Qi @ x + pi @ x + bi, rel=1e-12, abs=1e-12)


def test_feasibility_checks():
    inst = QcqpInstance.build(np.zeros((2, 2)), [0, 0], [(2 * np.eye(2), [0, 0], -1.0)], [-1, -1], [1, 1])
    assert is_feasible_point(inst, [0.6, 0.6])
    assert not is_feasible_point(inst, [0.8, 0.8])
    assert is_feasible_point(inst, [0.8, 0.8], tol=0.3)
    assert not is_feasible_point(inst, [1.1, 0.0], tol=0.05)
    rep = evaluate(inst, [0.8, 0.8])
    assert rep.max_constraint_violation == pytest.approx(0.28)


def test_jacobi_matches_closed_forms():
    # path graph P3 has eigenvalues 0, +-sqrt(2)
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    assert np.allclose(jacobi_eigenvalues(A), [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-12)
    assert np.allclose(jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0])), [-1, 2, 3])


def test_min_eigenvalue_against_jacobi(rng):
    for _ in range(30):
        n = int(rng.integers(1, 12))
        A = random_symmetric(rng, n, density=0.7)
        assert min_eigenvalue(A) == pytest.approx(jacobi_eigenvalues(A)[0], abs=1e-10)


def test_min_eigenvalue_limits():
    with pytest.raises(ValueError):
        min_eigenvalue(np.zeros((0, 0)))
    with pytest.raises(SizeError):
        min_eigenvalue(SparseSymMatrix.zeros(600))


def test_convexify_example_and_property(rng):
    # off-diagonal 1/2 entries of a 3-cycle: lambda_min = -1/2, so the diagonal becomes 1/2
    A = 0.5 * (np.ones((3, 3)) - np.eye(3))
    inst = QcqpInstance.build(A, [0, 0, 0])
    assert not check_convexity(inst)
    cv = convexify(inst)
    assert np.allclose(np.diag(cv.Q_dense), 0.5)
    assert check_convexity(cv)
    for _ in range(20):
        inst = random_instance(rng, n=5, m=2)
        out = convexify(inst)
        assert check_convexity(out, 1e-8)
        assert out.lower == inst.lower and out.p == inst.p


def test_convexify_keeps_psd_matrices():
    inst = QcqpInstance.build(np.eye(2), [1, 0])
    assert convexify(inst).Q == inst.Q


def test_reindex_preserves_values(rng):
    inst = random_instance(rng, n=5, m=3)
    perm = rng.permutation(5)
    cperm = rng.permutation(3)
    out = reindex(inst, perm, cperm)
    x = rng.normal(size=5)
    y = np.empty(5)
    y[perm] = x
    assert objective_value(out, y) == pytest.approx(objective_value(inst, x), rel=1e-12)
    g_in = constraint_values(inst, x)
    g_out = constraint_values(out, y)
    assert np.allclose(g_out[cperm], g_in)
