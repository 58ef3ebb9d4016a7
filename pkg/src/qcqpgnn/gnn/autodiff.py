"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the GNN needs are provided. Every op records
a closure mapping the output adjoint to parent adjoints; ``backward`` walks
the tape in reverse creation order, so accumulation order is fixed and
results are bit-reproducible.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class Var:
    __slots__ = ("value", "grad", "_parents", "_id")

    def __init__(self, value, parents=(), tape: "Tape | None" = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[tuple[Var, Callable[[np.ndarray], np.ndarray]], ...] = tuple(parents)
        self._id = -1
        if tape is not None:
            tape.record(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def record(self, v: Var) -> None:
        v._id = len(self.nodes)
        self.nodes.append(v)

    def leaf(self, value) -> Var:
        return Var(value, (), self)

    def const(self, value) -> Var:
        # constants are not recorded; they never receive gradients
        return Var(value)

    def backward(self, out: Var) -> None:
        if out.value.size != 1:
            raise ValueError("backward needs a scalar output")
        for v in self.nodes:
            v.grad = None
        out.grad = np.ones_like(out.value)
        for v in reversed(self.nodes[: out._id + 1]):
            if v.grad is None:
                continue
            for parent, vjp in v._parents:
                if parent._id < 0:
                    continue
                g = vjp(v.grad)
                parent.grad = g if parent.grad is None else parent.grad + g

    # ops -----------------------------------------------------------------

    def _new(self, value, parents) -> Var:
        return Var(value, parents, self)

    def matmul(self, x: Var, w: Var) -> Var:
        return self._new(x.value @ w.value, (
            (x, lambda g: g @ w.value.T),
            (w, lambda g: x.value.T @ g),
        ))

    def add_bias(self, x: Var, b: Var) -> Var:
        return self._new(x.value + b.value, (
            (x, lambda g: g),
            (b, lambda g: g.sum(axis=0)),
        ))

    def add(self, a: Var, b: Var) -> Var:
        return self._new(a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))

    def sub(self, a: Var, b: Var) -> Var:
        return self._new(a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        return self._new(np.where(mask, x.value, 0.0), ((x, lambda g: np.where(mask, g, 0.0)),))

    def concat(self, parts: Sequence[Var]) -> Var:
        widths = [p.value.shape[1] for p in parts]
        edges = np.cumsum([0] + widths)
        parents = tuple(
            (p, (lambda lo, hi: lambda g: g[:, lo:hi])(int(edges[i]), int(edges[i + 1])))
            for i, p in enumerate(parts)
        )
        return self._new(np.concatenate([p.value for p in parts], axis=1), parents)

    def spmm(self, S: sp.csr_matrix, x: Var) -> Var:
        """Constant sparse matrix times ``x``."""
        St = S.T.tocsr()
        return self._new(np.asarray(S @ x.value), ((x, lambda g: np.asarray(St @ g)),))

    def mse(self, pred: Var, target: np.ndarray) -> Var:
        diff = pred.value - target
        k = diff.size
        return self._new(np.array(np.mean(diff**2)), ((pred, lambda g: g * 2.0 * diff / k),))

    def bce_logits(self, logit: Var, target: np.ndarray) -> Var:
        z, y = logit.value, target
        # log(1 + exp(-|z|)) + max(z, 0) - z*y, stable for any z
        val = np.mean(np.logaddexp(0.0, z) - z * y)
        sig = _sigmoid(z)
        k = z.size
        return self._new(np.array(val), ((logit, lambda g: g * (sig - y) / k),))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


sigmoid = _sigmoid
