import math

import numpy as np
import pytest

from qcqpgnn.core import QcqpInstance


def random_symmetric(rng, n, density=0.5, scale=1.0):
    A = rng.normal(size=(n, n)) * scale
    A = (A + A.T) / 2.0
    mask = rng.random((n, n)) < density
    mask = np.triu(mask) | np.triu(mask, 1).T
    return np.where(mask, A, 0.0)


def random_psd(rng, n, density=0.6, shift=0.0):
    M = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
    A = M.T @ M + shift * np.eye(n)
    return (A + A.T) / 2.0


def random_instance(rng, n=None, m=None, convex=False, infinite_bounds=True, name="rand"):
    """Random instance; bounds mix finite and infinite sides."""
    n = int(rng.integers(1, 7)) if n is None else n
    m = int(rng.integers(0, 4)) if m is None else m
    mat = (lambda: random_psd(rng, n)) if convex else (lambda: random_symmetric(rng, n))
    cons = [(mat(), rng.normal(size=n) * (rng.random(n) < 0.7), float(rng.normal())) for _ in range(m)]
    lo = -rng.uniform(0.5, 3.0, size=n)
    hi = rng.uniform(0.5, 3.0, size=n)
    if infinite_bounds:
        lo = np.where(rng.random(n) < 0.25, -math.inf, lo)
        hi = np.where(rng.random(n) < 0.25, math.inf, hi)
    return QcqpInstance.build(mat(), rng.normal(size=n), cons, lo, hi, name=name)


def strictly_convex_instance(rng, n=None, m=None):
    """Strictly convex objective, convex constraints, x = 0 strictly feasible, finite box."""
    n = int(rng.integers(1, 7)) if n is None else n
    m = int(rng.integers(0, 4)) if m is None else m
    Q = random_psd(rng, n, density=1.0, shift=0.1)
    cons = [(random_psd(rng, n, density=1.0), rng.normal(size=n), -float(rng.uniform(0.1, 2.0))) for _ in range(m)]
    lo = -rng.uniform(0.5, 2.0, size=n)
    hi = rng.uniform(0.5, 2.0, size=n)
    return QcqpInstance.build(Q, rng.normal(size=n), cons, lo, hi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dominant_instance(rng, n, m):
    """Convex instance whose lifts stay convex: diagonally dominant Q, diagonal constraint matrices."""
    A = random_symmetric(rng, n, density=0.6)
    np.fill_diagonal(A, 0.0)
    Q = A + np.diag(np.abs(A).sum(axis=1) + rng.uniform(0.1, 1.0, size=n))
    cons = [(np.diag(rng.uniform(0.0, 2.0, size=n) * (rng.random(n) < 0.7)),
             rng.normal(size=n) * (rng.random(n) < 0.7), -float(rng.uniform(0.2, 2.0))) for _ in range(m)]
    lo = -rng.uniform(0.5, 2.0, size=n)
    hi = rng.uniform(0.5, 2.0, size=n)
    return QcqpInstance.build(Q, rng.normal(size=n), cons, lo, hi)


def two_lift(inst, rng, cross=True):
    """Double cover of ``inst``: each coupling either stays inside a copy or crosses between the copies.

    With ``cross=False`` this is the plain disjoint duplicate. Any two lifts of the same
    instance receive identical refinement colors.
    """
    n, m = inst.n, inst.m
    flip = (lambda: int(rng.integers(0, 2))) if cross else (lambda: 0)
    Q = np.zeros((2 * n, 2 * n))
    for j, k, q in inst.Q.entries:
        s = 0 if j == k else flip()
        for r in (0, 1):
            a, b = j + r * n, k + ((r ^ s) * n)
            Q[a, b] = Q[b, a] = q
    cons = []
    for c in inst.cons:
        pair = []
        for _ in range(2):
            pair.append([np.zeros((2 * n, 2 * n)), np.zeros(2 * n), c.b])
        for j, k, q in c.Q.entries:
            assert j == k
            t = flip()
            for r in (0, 1):
                pair[r ^ t][0][j + r * n, j + r * n] = q
        for j, v in enumerate(c.p):
            if v != 0.0:
                t = flip()
                for r in (0, 1):
                    pair[r ^ t][1][j + r * n] = v
        cons.extend(tuple(x) for x in pair)
    lo = [b.to_float() for b in inst.lower] * 2
    hi = [b.to_float() for b in inst.upper] * 2
    return QcqpInstance.build(Q, list(inst.p) * 2, cons, lo, hi)
