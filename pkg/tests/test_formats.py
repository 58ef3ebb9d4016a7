import json

import pytest

from qcqpgnn.core import Bound
from qcqpgnn.formats import (
    Dataset,
    DatasetFormatError,
    DatasetRecord,
    QplibFormatError,
    dataset_from_dict,
    dataset_to_dict,
    datasets_equal,
    instance_from_dict,
    instance_to_dict,
    parse_qplib,
    read_dataset,
    size_summary,
    write_dataset,
    write_qplib,
)

from conftest import random_instance

TOY = """\
toy  # problem name
QCQ  # problem type
maximize
2    # variables
1    # constraints
2    # objective quadratic terms
1 1 2.0
2 1 -1.0
0.5  # default linear coefficient
1
2 3.0
7.0  # objective constant
1    # constraint quadratic terms
1 2 2 4.0
2    # constraint linear terms
1 1 1.0
1 2 -1.0
1e30
-1.0 # default constraint lower side
0
5.0  # default constraint upper side
0
-2   # default variable lower bound
0
1e30 # default variable upper bound
1
1 4.0
"""


def test_parse_toy_decodes_every_section():
    inst = parse_qplib(TOY)
    assert (inst.n, inst.m) == (2, 2)
    # maximize is turned into minimize by negation
    assert inst.Q.entries == ((0, 0, -2.0), (0, 1, 1.0))
    assert inst.p == (-0.5, -3.0)
    assert inst.meta["objective_constant"] == -7.0
    assert inst.meta["sense_flipped"] is True
    up, lo = inst.cons
    assert up.Q.entries == ((1, 1, 4.0),) and up.p == (1.0, -1.0) and up.b == -5.0
    assert lo.Q.entries == ((1, 1, -4.0),) and lo.p == (-1.0, 1.0) and lo.b == -1.0
    assert inst.meta["record_origin"] == [[1, "upper"], [1, "lower"]]
    assert inst.lower == (Bound.finite(-2.0), Bound.finite(-2.0))
    assert inst.upper == (Bound.finite(4.0), Bound.pos_inf())
    sizes = size_summary(inst)
    assert sizes["variables"] == 2 and sizes["source_constraints"] == 1
    assert sizes["nonzeros_quadratic"] == 3 and sizes["nonzeros_linear"] == 4


def test_parse_truncated_reports_line():
    text = "\n".join(TOY.splitlines()[:12]) + "\n"
    with pytest.raises(QplibFormatError) as exc:
        parse_qplib(text)
    assert exc.value.line == 13
    assert "end of file" in str(exc.value)


def test_parse_rejects_integer_variables_and_bad_index():
    with pytest.raises(QplibFormatError) as exc:
        parse_qplib(TOY.replace("QCQ  #", "QIQ  #"))
    assert exc.value.line == 2
    with pytest.raises(QplibFormatError):
        parse_qplib(TOY.replace("2 1 -1.0", "3 1 -1.0"))


def test_qplib_round_trip_random(rng):
    for k in range(50):
        inst = random_instance(rng, name=f"r{k}")
        back = parse_qplib(write_qplib(inst))
        assert back.same_coefficients(inst)
        assert back.name == inst.name


def test_qplib_round_trip_keeps_objective_constant():
    inst = parse_qplib(TOY)
    back = parse_qplib(write_qplib(inst))
    assert back.meta["objective_constant"] == inst.meta["objective_constant"]
    assert back.same_coefficients(inst)


def test_json_round_trip_random(rng):
    for k in range(50):
        inst = random_instance(rng, name=f"j{k}")
        text = json.dumps(instance_to_dict(inst), allow_nan=False)
        assert instance_from_dict(json.loads(text)).same_coefficients(inst)


def _dataset(rng, split="train"):
    recs = []
    for k in range(4):
        inst = random_instance(rng, n=3, m=2, name=f"d{k}")
        if k % 2:
            recs.append(DatasetRecord(inst, label_feasibility=0))
        else:
            recs.append(DatasetRecord(inst, 1, float(rng.normal()), tuple(rng.normal(size=3))))
    return Dataset(recs, "base", 7, split, {"note": "test"})


def test_dataset_round_trip(tmp_path, rng):
    ds = _dataset(rng)
    path = tmp_path / "ds.json"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert datasets_equal(ds, back)
    assert back.provenance == {"note": "test"}
    assert dataset_from_dict(dataset_to_dict(ds)).split == "train"


def test_dataset_validation(rng):
    inst = random_instance(rng, n=3, m=1)
    with pytest.raises(DatasetFormatError):
        DatasetRecord(inst, label_feasibility=0, label_objective=1.0)
    with pytest.raises(DatasetFormatError):
        DatasetRecord(inst, label_solution=(1.0,))
    with pytest.raises(DatasetFormatError):
        Dataset([DatasetRecord(inst), DatasetRecord(random_instance(rng, n=2, m=1))])
    with pytest.raises(DatasetFormatError):
        Dataset([], split="valid")


def test_read_dataset_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DatasetFormatError):
        read_dataset(path)
