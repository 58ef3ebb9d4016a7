"""Tripartite message-passing network: parameters, batched forward, losses, gradients."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..graph import TripartiteGraph
from .autodiff import Tape, Var, sigmoid

VAR_ARITY, QUAD_ARITY, CONS_ARITY = 5, 1, 1


class OutputMode(str, enum.Enum):
    GRAPH_SCALAR = "GraphScalar"
    NODE_VECTOR = "NodeVector"


class Task(str, enum.Enum):
    FEASIBILITY = "Feasibility"
    OBJECTIVE = "Objective"
    SOLUTION = "Solution"

    @property
    def mode(self) -> OutputMode:
        return OutputMode.NODE_VECTOR if self is Task.SOLUTION else OutputMode.GRAPH_SCALAR


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class GnnConfig:
    rounds: int = 2
    width: int = 64
    embed_dim: int | None = None
    output_mode: OutputMode = OutputMode.GRAPH_SCALAR
    task: Task = Task.OBJECTIVE
    # pooled [d, n] readout for NodeVector mode; needs n_out
    pooled_readout: bool = False
    n_out: int | None = None

    def __post_init__(self):
        if self.rounds < 1 or self.width < 1:
            raise ValueError("rounds and width must be >= 1")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))
        object.__setattr__(self, "task", Task(self.task))
        if self.pooled_readout and (self.output_mode is not OutputMode.NODE_VECTOR or not self.n_out):
            raise ValueError("pooled readout needs NodeVector mode and n_out >= 1")

    @property
    def h0(self) -> int:
        return self.width if self.embed_dim is None else self.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_mode"] = self.output_mode.value
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GnnConfig":
        return cls(**d)


# Layer inventory -------------------------------------------------------------
# Each entry maps a layer name to its (fan_in, fan_out) list; a layer with two
# entries is a two-layer perceptron.

def layer_plan(cfg: GnnConfig) -> dict[str, list[tuple[int, int]]]:
    d, h0 = cfg.width, cfg.h0
    plan: dict[str, list[tuple[int, int]]] = {
        "embed1": [(VAR_ARITY, h0)],
        "embed2": [(QUAD_ARITY, h0)],
        "embed3": [(CONS_ARITY, h0)],
    }
    for t in range(cfg.rounds):
        k = h0 if t == 0 else d
        # f1: V1->V2, f2: V1->V3, f3: V2->V3, f4: V3->V2, f5: V3->V1, f6: V2->V1
        # f1, f2 read the round's variable state; the rest read updated states
        for name, src in (("f1", k), ("f2", k), ("f3", d), ("f4", d), ("f5", d), ("f6", d)):
            plan[f"r{t}.{name}"] = [(src, d)]
        plan[f"r{t}.g1"] = [(k + d, d), (d, d)]
        plan[f"r{t}.g2"] = [(k + 2 * d, d), (d, d)]
        plan[f"r{t}.g3"] = [(2 * d, d), (d, d)]
        plan[f"r{t}.g4"] = [(k + 2 * d, d), (d, d)]
    if cfg.output_mode is OutputMode.GRAPH_SCALAR:
        plan["out"] = [(3 * d, d), (d, 1)]
    elif cfg.pooled_readout:
        plan["out"] = [(3 * d, d), (d, int(cfg.n_out))]
    else:
        plan["out"] = [(4 * d, d), (d, 1)]
    return plan


def param_shapes(cfg: GnnConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, layers in layer_plan(cfg).items():
        for i, (fi, fo) in enumerate(layers):
            shapes[f"{name}.{i}.W"] = (fi, fo)
            shapes[f"{name}.{i}.b"] = (fo,)
    return shapes


@dataclass
class GnnParams:
    """Named float64 tensors in a fixed order."""

    tensors: dict[str, np.ndarray]

    def names(self) -> list[str]:
        return list(self.tensors)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in self.tensors]) if self.tensors else np.zeros(0)

    def with_flat(self, vec: np.ndarray) -> "GnnParams":
        out, pos = {}, 0
        for k, a in self.tensors.items():
            out[k] = np.array(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape)
            pos += a.size
        if pos != len(vec):
            raise ShapeError(f"flat vector has {len(vec)} entries, expected {pos}")
        return GnnParams(out)

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))

    def copy(self) -> "GnnParams":
        return GnnParams({k: v.copy() for k, v in self.tensors.items()})

    def equals(self, other: "GnnParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def audit(params: GnnParams, cfg: GnnConfig) -> None:
    expected = param_shapes(cfg)
    if list(expected) != params.names():
        raise ShapeError("parameter names do not match the configuration")
    for k, shape in expected.items():
        if params.tensors[k].shape != shape:
            raise ShapeError(f"{k}: shape {params.tensors[k].shape}, expected {shape}")


def init_params(cfg: GnnConfig, seed: int) -> GnnParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for k, shape in param_shapes(cfg).items():
        if k.endswith(".W"):
            bound = 1.0 / np.sqrt(shape[0])
            tensors[k] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[k] = np.zeros(shape)
    params = GnnParams(tensors)
    audit(params, cfg)
    return params


# Batching ----------------------------------------------------------------------

def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=shape))


@dataclass
class GraphBatch:
    """Disjoint union of graphs with the aggregation operators precomputed."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    a12: sp.csr_matrix  # quad <- var
    a13: sp.csr_matrix  # cons <- var
    a23: sp.csr_matrix  # cons <- quad
    a32: sp.csr_matrix  # quad <- cons
    a31: sp.csr_matrix  # var <- cons
    a21: sp.csr_matrix  # var <- quad
    p1: sp.csr_matrix  # graph <- var (sum pooling)
    p2: sp.csr_matrix
    p3: sp.csr_matrix
    var_graph: np.ndarray
    sizes: list[tuple[int, int, int]]

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)


def make_batch(graphs: Sequence[TripartiteGraph]) -> GraphBatch:
    n1 = n2 = n3 = 0
    r12, c12, w12, r13, c13, w13, r23, c23, w23 = ([] for _ in range(9))
    g1, g2, g3 = [], [], []
    x1, x2, x3, sizes = [], [], [], []
    for gi, g in enumerate(graphs):
        x1.append(g.var_features())
        x2.append(g.quad_features())
        x3.append(g.cons_features())
        s, t, w = g.e12
        r12.append(t + n2); c12.append(s + n1); w12.append(w)
        s, t, w = g.e13
        r13.append(t + n3); c13.append(s + n1); w13.append(w)
        s, t, w = g.e23
        r23.append(t + n3); c23.append(s + n2); w23.append(w)
        g1 += [gi] * g.n; g2 += [gi] * g.n_quad; g3 += [gi] * g.m
        sizes.append((g.n, g.n_quad, g.m))
        n1 += g.n; n2 += g.n_quad; n3 += g.m

    def cat(parts, dtype=float):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    a12 = _coo(cat(r12, int), cat(c12, int), cat(w12), (n2, n1))
    a13 = _coo(cat(r13, int), cat(c13, int), cat(w13), (n3, n1))
    a23 = _coo(cat(r23, int), cat(c23, int), cat(w23), (n3, n2))
    B = len(graphs)

    def pool(owner, count):
        return _coo(np.asarray(owner, dtype=int), np.arange(count), np.ones(count), (B, count))

    return GraphBatch(
        x1=np.vstack(x1) if x1 else np.zeros((0, VAR_ARITY)),
        x2=np.vstack(x2) if x2 else np.zeros((0, QUAD_ARITY)),
        x3=np.vstack(x3) if x3 else np.zeros((0, CONS_ARITY)),
        a12=a12, a13=a13, a23=a23,
        a32=a23.T.tocsr(), a31=a13.T.tocsr(), a21=a12.T.tocsr(),
        p1=pool(g1, n1), p2=pool(g2, n2), p3=pool(g3, n3),
        var_graph=np.asarray(g1, dtype=int),
        sizes=sizes,
    )


# Forward -----------------------------------------------------------------------

class _Net:
    """Binds parameter leaves on a tape and evaluates the network."""

    def __init__(self, params: GnnParams, cfg: GnnConfig, tape: Tape):
        self.cfg = cfg
        self.tape = tape
        self.leaves = {k: tape.leaf(v) for k, v in params.tensors.items()}

    def dense(self, name: str, i: int, x: Var) -> Var:
        t = self.tape
        return t.add_bias(t.matmul(x, self.leaves[f"{name}.{i}.W"]), self.leaves[f"{name}.{i}.b"])

    def layer(self, name: str, x: Var) -> Var:
        # affine + rectifier
        return self.tape.relu(self.dense(name, 0, x))

    def mlp(self, name: str, parts: Sequence[Var], last_relu: bool = True) -> Var:
        t = self.tape
        x = t.concat(parts) if len(parts) > 1 else parts[0]
        y = self.dense(name, 1, t.relu(self.dense(name, 0, x)))
        return t.relu(y) if last_relu else y

    def run(self, b: GraphBatch) -> Var:
        t, cfg = self.tape, self.cfg
        h1 = self.layer("embed1", t.const(b.x1))
        h2 = self.layer("embed2", t.const(b.x2))
        h3 = self.layer("embed3", t.const(b.x3))
        for r in range(cfg.rounds):
            p = f"r{r}."
            h2_bar = self.mlp(p + "g1", [h2, t.spmm(b.a12, self.layer(p + "f1", h1))])
            h3_new = self.mlp(p + "g2", [
                h3,
                t.spmm(b.a13, self.layer(p + "f2", h1)),
                t.spmm(b.a23, self.layer(p + "f3", h2_bar)),
            ])
            h2_new = self.mlp(p + "g3", [h2_bar, t.spmm(b.a32, self.layer(p + "f4", h3_new))])
            h1_new = self.mlp(p + "g4", [
                h1,
                t.spmm(b.a31, self.layer(p + "f5", h3_new)),
                t.spmm(b.a21, self.layer(p + "f6", h2_new)),
            ])
            h1, h2, h3 = h1_new, h2_new, h3_new
        s1, s2, s3 = t.spmm(b.p1, h1), t.spmm(b.p2, h2), t.spmm(b.p3, h3)
        if cfg.output_mode is OutputMode.GRAPH_SCALAR or cfg.pooled_readout:
            return self.mlp("out", [s1, s2, s3], last_relu=False)
        bcast = b.p1.T.tocsr()
        others = t.sub(t.spmm(bcast, s1), h1)
        return self.mlp("out", [h1, others, t.spmm(bcast, s2), t.spmm(bcast, s3)], last_relu=False)


def _check_graphs(cfg: GnnConfig, graphs: Sequence[TripartiteGraph]) -> None:
    if cfg.pooled_readout:
        for g in graphs:
            if g.n != cfg.n_out:
                raise ShapeError(f"pooled readout expects n = {cfg.n_out}, got {g.n}")


def _shape_output(cfg: GnnConfig, b: GraphBatch, raw: np.ndarray) -> list[np.ndarray]:
    if cfg.output_mode is OutputMode.GRAPH_SCALAR:
        return [raw[i, :1].copy() for i in range(b.num_graphs)]
    if cfg.pooled_readout:
        return [raw[i].copy() for i in range(b.num_graphs)]
    out, pos = [], 0
    for n, _, _ in b.sizes:
        out.append(raw[pos:pos + n, 0].copy())
        pos += n
    return out


def forward_batch(params: GnnParams, cfg: GnnConfig, graphs: Sequence[TripartiteGraph]) -> list[np.ndarray]:
    audit(params, cfg)
    _check_graphs(cfg, graphs)
    b = make_batch(graphs)
    raw = _Net(params, cfg, Tape()).run(b).value
    return _shape_output(cfg, b, raw)


def forward(params: GnnParams, cfg: GnnConfig, g: TripartiteGraph) -> np.ndarray:
    """Network output for one graph: length 1 (GraphScalar) or n (NodeVector)."""
    return forward_batch(params, cfg, [g])[0]


# Losses --------------------------------------------------------------------------

def loss(pred, label, task: Task | str) -> float:
    task = Task(task)
    pred = np.asarray(pred, dtype=float).ravel()
    label = np.asarray(label, dtype=float).ravel()
    if pred.shape != label.shape:
        raise ShapeError(f"pred shape {pred.shape} differs from label shape {label.shape}")
    if task is Task.FEASIBILITY:
        return float(np.mean(np.logaddexp(0.0, pred) - pred * label))
    return float(np.mean((pred - label) ** 2))


def _targets(cfg: GnnConfig, b: GraphBatch, labels: Sequence) -> np.ndarray:
    if cfg.output_mode is OutputMode.GRAPH_SCALAR:
        return np.asarray([float(np.ravel(y)[0]) for y in labels], dtype=float).reshape(-1, 1)
    rows = [np.asarray(y, dtype=float).ravel() for y in labels]
    for (n, _, _), y in zip(b.sizes, rows):
        if y.size != n:
            raise ShapeError(f"solution label has length {y.size}, expected {n}")
    if cfg.pooled_readout:
        return np.vstack(rows)
    return np.concatenate(rows).reshape(-1, 1)


def loss_and_grad(params: GnnParams, cfg: GnnConfig, graphs: Sequence[TripartiteGraph], labels: Sequence,
                  task: Task | str | None = None) -> tuple[float, GnnParams]:
    """Mean loss over a batch and its exact gradient with respect to every parameter."""
    task = cfg.task if task is None else Task(task)
    if task.mode is not cfg.output_mode:
        raise ShapeError(f"task {task.value} needs {task.mode.value} output")
    audit(params, cfg)
    _check_graphs(cfg, graphs)
    b = make_batch(graphs)
    tape = Tape()
    net = _Net(params, cfg, tape)
    out = net.run(b)
    y = _targets(cfg, b, labels)
    lv = tape.bce_logits(out, y) if task is Task.FEASIBILITY else tape.mse(out, y)
    tape.backward(lv)
    grads = {
        k: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value))
        for k, leaf in net.leaves.items()
    }
    return float(lv.value), GnnParams(grads)


def gradient(params: GnnParams, cfg: GnnConfig, g: TripartiteGraph, label, task: Task | str | None = None) -> GnnParams:
    return loss_and_grad(params, cfg, [g], [label], task)[1]


def predict(params: GnnParams, cfg: GnnConfig, g: TripartiteGraph, task: Task | str | None = None):
    """Feasibility -> 0/1 (probability >= 0.5 counts as feasible); Objective -> float; Solution -> vector."""
    task = cfg.task if task is None else Task(task)
    if task.mode is not cfg.output_mode:
        raise ShapeError(f"task {task.value} needs {task.mode.value} output")
    y = forward(params, cfg, g)
    if task is Task.FEASIBILITY:
        return int(sigmoid(y[0]) >= 0.5)
    if task is Task.OBJECTIVE:
        return float(y[0])
    return y
