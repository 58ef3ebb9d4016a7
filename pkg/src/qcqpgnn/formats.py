"""QPLib ASCII reader/writer and the ``qcqp-dataset-v1`` JSON format.

QPLib stores ``cl <= 1/2 x^T Q^i x + b_i^T x <= cu`` with lower-triangle
quadratic entries. Two-sided rows are split into one or two ``<= 0``
records on read; the mapping back to source rows is kept in
``meta["record_origin"]``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .core import Bound, Constraint, QcqpInstance, SparseSymMatrix

DATASET_SCHEMA = "qcqp-dataset-v1"
QPLIB_INFINITY = 1e30


class QplibFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetFormatError(ValueError):
    pass


class _Lines:
    """Data lines of a QPLib file with ``#`` comments stripped."""

    def __init__(self, text: str):
        self.items: list[tuple[int, list[str]]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            data = raw.split("#", 1)[0].strip()
            if data:
                self.items.append((lineno, data.split()))
        self.pos = 0

    @property
    def lineno(self) -> Optional[int]:
        if self.pos < len(self.items):
            return self.items[self.pos][0]
        return self.items[-1][0] + 1 if self.items else 1

    def next(self, what: str, ntok: Optional[int] = None) -> tuple[int, list[str]]:
        if self.pos >= len(self.items):
            raise QplibFormatError(f"unexpected end of file while reading {what}", self.lineno)
        lineno, toks = self.items[self.pos]
        self.pos += 1
        if ntok is not None and len(toks) < ntok:
            raise QplibFormatError(f"expected {ntok} fields for {what}, got {len(toks)}", lineno)
        return lineno, toks

    def number(self, what: str, kind=float):
        lineno, toks = self.next(what, 1)
        return _num(toks[0], kind, what, lineno), lineno

    def count(self, what: str) -> int:
        val, lineno = self.number(what, int)
        if val < 0:
            raise QplibFormatError(f"negative count for {what}", lineno)
        return val

    def entries(self, what: str, nidx: int, count: int) -> Iterator[tuple[int, tuple[int, ...], float]]:
        for _ in range(count):
            lineno, toks = self.next(what, nidx + 1)
            idx = tuple(_num(t, int, what, lineno) for t in toks[:nidx])
            yield lineno, idx, _num(toks[nidx], float, what, lineno)


def _num(tok: str, kind, what: str, lineno: int):
    try:
        if kind is int:
            return int(tok)
        return float(tok.replace("D", "E").replace("d", "e"))
    except ValueError:
        raise QplibFormatError(f"cannot parse {tok!r} as {kind.__name__} in {what}", lineno) from None


def _check_index(i: int, hi: int, what: str, lineno: int) -> int:
    if not 1 <= i <= hi:
        raise QplibFormatError(f"{what} index {i} out of range 1..{hi}", lineno)
    return i - 1


def parse_qplib(text) -> QcqpInstance:
    """Parse a continuous QPLib problem into minimization form."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    lines = _Lines(text)
    _, toks = lines.next("problem name")
    name = toks[0]
    lineno, toks = lines.next("problem type")
    ptype = toks[0].upper()
    if len(ptype) != 3 or ptype[0] not in "LDCQ" or ptype[1] not in "CMBIG" or ptype[2] not in "NBLDCQ":
        raise QplibFormatError(f"malformed problem type {toks[0]!r}", lineno)
    if ptype[1] != "C":
        raise QplibFormatError(f"unsupported variable type code {ptype[1]!r} (only continuous)", lineno)
    obj_quadratic = ptype[0] != "L"
    has_cons = ptype[2] not in "NB"
    cons_quadratic = ptype[2] not in "NBL"

    lineno, toks = lines.next("objective sense")
    sense = toks[0].lower()
    if sense not in ("minimize", "maximize"):
        raise QplibFormatError(f"objective sense must be minimize or maximize, got {toks[0]!r}", lineno)
    n = lines.count("number of variables")
    m_src = lines.count("number of constraints") if has_cons else 0

    nnz = {"objective_quadratic": 0, "objective_linear": 0, "constraint_quadratic": 0, "constraint_linear": 0}
    q0: dict[tuple[int, int], float] = {}
    if obj_quadratic:
        for ln, (i, j), v in lines.entries("objective quadratic term", 2, lines.count("objective quadratic count")):
            i, j = _check_index(i, n, "variable", ln), _check_index(j, n, "variable", ln)
            key = (min(i, j), max(i, j))
            if key in q0:
                raise QplibFormatError(f"duplicate objective quadratic entry {key}", ln)
            q0[key] = v
            nnz["objective_quadratic"] += v != 0.0
    default_b0, _ = lines.number("default linear objective coefficient")
    b0 = [default_b0] * n
    for ln, (j,), v in lines.entries("objective linear term", 1, lines.count("objective linear count")):
        b0[_check_index(j, n, "variable", ln)] = v
    nnz["objective_linear"] = sum(v != 0.0 for v in b0)
    const, _ = lines.number("objective constant")

    qc: list[dict[tuple[int, int], float]] = [{} for _ in range(m_src)]
    bc: list[list[float]] = [[0.0] * n for _ in range(m_src)]
    if cons_quadratic:
        for ln, (i, j, k), v in lines.entries("constraint quadratic term", 3,
                                              lines.count("constraint quadratic count")):
            i = _check_index(i, m_src, "constraint", ln)
            j, k = _check_index(j, n, "variable", ln), _check_index(k, n, "variable", ln)
            key = (min(j, k), max(j, k))
            if key in qc[i]:
                raise QplibFormatError(f"duplicate quadratic entry {key} in constraint {i + 1}", ln)
            qc[i][key] = v
            nnz["constraint_quadratic"] += v != 0.0
    if has_cons:
        for ln, (i, j), v in lines.entries("constraint linear term", 2, lines.count("constraint linear count")):
            i, j = _check_index(i, m_src, "constraint", ln), _check_index(j, n, "variable", ln)
            bc[i][j] = v
            nnz["constraint_linear"] += v != 0.0

    inf, inf_line = lines.number("value for infinity")
    if inf <= 0:
        raise QplibFormatError("value for infinity must be positive", inf_line)

    def vector(what: str, size: int, index_kind: str) -> list[float]:
        default, _ = lines.number(f"default {what}")
        vals = [default] * size
        for ln, (i,), v in lines.entries(what, 1, lines.count(f"{what} count")):
            vals[_check_index(i, size, index_kind, ln)] = v
        return vals

    cl = vector("constraint lower side", m_src, "constraint") if has_cons else []
    cu = vector("constraint upper side", m_src, "constraint") if has_cons else []
    xl = vector("variable lower bound", n, "variable")
    xu = vector("variable upper bound", n, "variable")
    # trailing sections (starting points, names) are not needed

    sign = -1.0 if sense == "maximize" else 1.0
    Q = SparseSymMatrix.from_triplets(n, ((j, k, sign * v) for (j, k), v in q0.items()))
    p = [sign * v for v in b0]
    records: list[Constraint] = []
    origin: list[list] = []
    for i in range(m_src):
        Qi = SparseSymMatrix.from_triplets(n, ((j, k, v) for (j, k), v in qc[i].items()))
        if cu[i] < inf:
            records.append(Constraint(Qi, tuple(bc[i]), -cu[i]))
            origin.append([i + 1, "upper"])
        if cl[i] > -inf:
            records.append(Constraint(Qi.scaled(-1.0), tuple(-v for v in bc[i]), cl[i]))
            origin.append([i + 1, "lower"])

    def bound(v: float, lower: bool) -> Bound:
        if lower and v <= -inf:
            return Bound.neg_inf()
        if not lower and v >= inf:
            return Bound.pos_inf()
        return Bound.finite(v)

    meta = {
        "objective_constant": sign * const,
        "sense_flipped": sense == "maximize",
        "source_constraints": m_src,
        "record_origin": origin,
        "nonzeros": nnz,
        "problem_type": ptype,
    }
    try:
        return QcqpInstance(Q, tuple(p), tuple(records), tuple(bound(v, True) for v in xl),
                            tuple(bound(v, False) for v in xu), name, meta)
    except ValueError as exc:
        raise QplibFormatError(f"invalid instance: {exc}") from exc


def _fmt(v: float) -> str:
    return repr(float(v))


def write_qplib(inst: QcqpInstance) -> bytes:
    """Serialize as a ``QCQ`` minimization problem with one-sided rows ``g_i(x) <= 0``."""
    n, m = inst.n, inst.m
    out = [
        f"{inst.name or 'QCQP'} # problem name",
        "QCQ # problem type",
        "minimize # objective sense",
        f"{n} # number of variables",
        f"{m} # number of constraints",
        f"{inst.Q.nnz} # number of quadratic terms in objective",
    ]
    # QPLib lists lower-triangle entries (row >= column)
    out += [f"{k + 1} {j + 1} {_fmt(v)}" for j, k, v in inst.Q.entries]
    lin = [(j, v) for j, v in enumerate(inst.p) if v != 0.0]
    out += ["0.0 # default linear objective coefficient", f"{len(lin)} # non-default linear objective terms"]
    out += [f"{j + 1} {_fmt(v)}" for j, v in lin]
    out.append(f"{_fmt(inst.meta.get('objective_constant', 0.0))} # objective constant")
    qterms = [(i, j, k, v) for i, c in enumerate(inst.cons) for j, k, v in c.Q.entries]
    out.append(f"{len(qterms)} # number of quadratic terms in constraints")
    out += [f"{i + 1} {k + 1} {j + 1} {_fmt(v)}" for i, j, k, v in qterms]
    lterms = [(i, j, v) for i, c in enumerate(inst.cons) for j, v in enumerate(c.p) if v != 0.0]
    out.append(f"{len(lterms)} # number of linear terms in constraints")
    out += [f"{i + 1} {j + 1} {_fmt(v)}" for i, j, v in lterms]
    out.append(f"{_fmt(QPLIB_INFINITY)} # value for infinity")
    out += [f"{_fmt(-QPLIB_INFINITY)} # default constraint lower side", "0 # non-default lower sides"]
    out += ["0.0 # default constraint upper side"]
    rhs = [(i, -c.b) for i, c in enumerate(inst.cons) if c.b != 0.0]
    out.append(f"{len(rhs)} # non-default upper sides")
    out += [f"{i + 1} {_fmt(v)}" for i, v in rhs]
    for what, bounds, default in (("lower", inst.lower, -QPLIB_INFINITY), ("upper", inst.upper, QPLIB_INFINITY)):
        fin = [(j, b.value) for j, b in enumerate(bounds) if b.is_finite]
        out += [f"{_fmt(default)} # default variable {what} bound", f"{len(fin)} # non-default {what} bounds"]
        out += [f"{j + 1} {_fmt(v)}" for j, v in fin]
    return ("\n".join(out) + "\n").encode("utf-8")


def read_qplib(path) -> QcqpInstance:
    with open(path, "rb") as fh:
        return parse_qplib(fh.read())


# ---- JSON ---------------------------------------------------------------


def _bound_json(b: Bound):
    if b.is_finite:
        return b.value
    return "+inf" if b.finiteness > 0 else "-inf"


def _bound_from_json(v) -> Bound:
    if v == "+inf":
        return Bound.pos_inf()
    if v == "-inf":
        return Bound.neg_inf()
    if isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v):
        return Bound.finite(float(v))
    raise DatasetFormatError(f"invalid bound {v!r}")


def _mat_json(M: SparseSymMatrix) -> list:
    return [[j + 1, k + 1, v] for j, k, v in M.entries]


def _mat_from_json(n: int, rows) -> SparseSymMatrix:
    return SparseSymMatrix.from_triplets(n, ((int(j) - 1, int(k) - 1, float(v)) for j, k, v in rows))


def instance_to_dict(inst: QcqpInstance) -> dict:
    return {
        "name": inst.name,
        "n": inst.n,
        "m": inst.m,
        "Q": _mat_json(inst.Q),
        "p": list(inst.p),
        "constraints": [{"Q": _mat_json(c.Q), "p": list(c.p), "b": c.b} for c in inst.cons],
        "lower": [_bound_json(b) for b in inst.lower],
        "upper": [_bound_json(b) for b in inst.upper],
        "meta": inst.meta,
    }


def instance_from_dict(d: dict) -> QcqpInstance:
    try:
        n = int(d["n"])
        cons = tuple(
            Constraint(_mat_from_json(n, c["Q"]), tuple(float(v) for v in c["p"]), float(c["b"]))
            for c in d["constraints"]
        )
        if len(cons) != int(d["m"]):
            raise DatasetFormatError(f"m={d['m']} but {len(cons)} constraints listed")
        return QcqpInstance(
            _mat_from_json(n, d["Q"]),
            tuple(float(v) for v in d["p"]),
            cons,
            tuple(_bound_from_json(v) for v in d["lower"]),
            tuple(_bound_from_json(v) for v in d["upper"]),
            d.get("name", ""),
            dict(d.get("meta", {})),
        )
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed instance: {exc!r}") from exc
    except DatasetFormatError:
        raise
    except ValueError as exc:
        raise DatasetFormatError(f"invalid instance: {exc}") from exc


@dataclass
class DatasetRecord:
    instance: QcqpInstance
    label_feasibility: Optional[int] = None
    label_objective: Optional[float] = None
    label_solution: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.label_feasibility not in (None, 0, 1):
            raise DatasetFormatError(f"label_feasibility must be 0 or 1, got {self.label_feasibility!r}")
        if self.label_feasibility == 0 and (self.label_objective is not None or self.label_solution is not None):
            raise DatasetFormatError("infeasible record cannot carry objective or solution labels")
        if self.label_solution is not None:
            self.label_solution = tuple(float(v) for v in self.label_solution)
            if len(self.label_solution) != self.instance.n:
                raise DatasetFormatError("label_solution length differs from n")


@dataclass
class Dataset:
    records: list[DatasetRecord]
    base_name: str = ""
    seed: int = 0
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DatasetFormatError(f"split must be train or test, got {self.split!r}")
        sizes = {(r.instance.n, r.instance.m) for r in self.records}
        if len(sizes) > 1:
            raise DatasetFormatError(f"records have heterogeneous sizes {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def size(self) -> Optional[tuple[int, int]]:
        if not self.records:
            return None
        inst = self.records[0].instance
        return inst.n, inst.m


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "schema": DATASET_SCHEMA,
        "base_name": ds.base_name,
        "seed": ds.seed,
        "split": ds.split,
        "provenance": ds.provenance,
        "records": [
            {
                "instance": instance_to_dict(r.instance),
                "label_feasibility": r.label_feasibility,
                "label_objective": r.label_objective,
                "label_solution": None if r.label_solution is None else list(r.label_solution),
            }
            for r in ds.records
        ],
    }


def dataset_from_dict(d: dict) -> Dataset:
    if not isinstance(d, dict) or d.get("schema") != DATASET_SCHEMA:
        found = d.get("schema") if isinstance(d, dict) else type(d).__name__
        raise DatasetFormatError(f"expected schema {DATASET_SCHEMA!r}, found {found!r}")
    try:
        records = [
            DatasetRecord(
                instance_from_dict(r["instance"]),
                r.get("label_feasibility"),
                r.get("label_objective"),
                r.get("label_solution"),
            )
            for r in d["records"]
        ]
        return Dataset(records, d.get("base_name", ""), int(d.get("seed", 0)), d.get("split", "train"),
                       dict(d.get("provenance", {})))
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed dataset: {exc!r}") from exc


def write_dataset(ds: Dataset, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(ds), fh, allow_nan=False)
        fh.write("\n")


def read_dataset(path) -> Dataset:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: malformed JSON: {exc}") from exc
    return dataset_from_dict(d)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if (a.base_name, a.seed, a.split, len(a)) != (b.base_name, b.seed, b.split, len(b)):
        return False
    for ra, rb in zip(a.records, b.records):
        if not ra.instance.same_coefficients(rb.instance):
            return False
        if (ra.label_feasibility, ra.label_objective, ra.label_solution) != (
            rb.label_feasibility, rb.label_objective, rb.label_solution
        ):
            return False
    return True


def size_summary(inst: QcqpInstance) -> dict:
    """Variables, source constraints and nonzero counts under several conventions."""
    nnz = inst.meta.get("nonzeros", {})
    quad = nnz.get("objective_quadratic", 0) + nnz.get("constraint_quadratic", 0)
    lin = nnz.get("objective_linear", 0) + nnz.get("constraint_linear", 0)
    return {
        "variables": inst.n,
        "source_constraints": inst.meta.get("source_constraints", inst.m),
        "records": inst.m,
        "nonzeros_quadratic": quad,
        "nonzeros_linear": lin,
        "nonzeros_total": quad + lin,
        "nonzeros_constraints": nnz.get("constraint_quadratic", 0) + nnz.get("constraint_linear", 0),
    }

