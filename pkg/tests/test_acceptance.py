"""The ten acceptance criteria, one test each, at their stated tolerances and time limits.

Every test prints a single ``PASS n ...`` or ``FAIL n ...`` line (visible with ``-s`` or ``-v``).
"""
import contextlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from qcqpgnn.cli import dispatch
from qcqpgnn.core import is_feasible_point, jacobi_eigenvalues, objective_value
from qcqpgnn.counterexamples import HEXAGON, TRIANGLES, adjacency, build_feasibility_pair, build_objective_pair
from qcqpgnn.counterexamples import gnn_gap
from qcqpgnn.datagen import GenSpec, generate, synth_base
from qcqpgnn.formats import datasets_equal, instance_from_dict, instance_to_dict, parse_qplib, size_summary, write_qplib
from qcqpgnn.gnn import GnnConfig, OutputMode, Task, TrainConfig, forward, init_params, loss_and_grad, train
from qcqpgnn.graph import IndexPermutation, build_graph, permute
from qcqpgnn.solver import Status, solve
from qcqpgnn.wl import check_solution_transfer, color_sum_table, run_wl, separates

from conftest import dominant_instance, random_instance, strictly_convex_instance, two_lift
from oracles import projected_gradient_qcqp


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title, limit_s):
        t0 = time.perf_counter()
        info = {}
        try:
            yield info
            elapsed = time.perf_counter() - t0
            assert elapsed < limit_s, f"took {elapsed:.1f} s, limit {limit_s} s"
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nFAIL {number} {title}: {exc}")
            raise
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        with capsys.disabled():
            print(f"\nPASS {number} {title} ({time.perf_counter() - t0:.1f} s{', ' + detail if detail else ''})")
    return run


def test_01_counterexample_optima(criterion, capsys):
    with criterion(1, "counterexample optima", 5.0) as info:
        code = dispatch(["counterexample", "--kind", "objective"])
        rep = json.loads(capsys.readouterr().out)
        assert code == 0 and rep["ok"]
        assert abs(rep["opt_value_1"] - (-0.5)) <= 1e-9
        assert abs(rep["opt_value_2"] - (-1.0)) <= 1e-9
        # independent oracle: Jacobi spectrum, min over the unit ball is min(0, lambda_min / 2)
        for edges, expect, got in ((TRIANGLES, -0.5, rep["opt_value_1"]), (HEXAGON, -1.0, rep["opt_value_2"])):
            oracle = min(0.0, jacobi_eigenvalues(adjacency(edges))[0] / 2)
            assert abs(oracle - expect) <= 1e-9 and abs(oracle - got) <= 1e-9
        info["values"] = (rep["opt_value_1"], rep["opt_value_2"])


def test_02_counterexample_not_separated(criterion):
    with criterion(2, "counterexample non-separation", 120.0) as info:
        worst = 0.0
        for a, b in (build_objective_pair(), build_feasibility_pair()):
            ga, gb = build_graph(a), build_graph(b)
            assert not separates(ga, gb)
            assert run_wl(ga).rounds == 1 and run_wl(gb).rounds == 1
            gap = gnn_gap(ga, gb, draws=100, seed=0, widths=(4, 16), rounds=(1, 2, 3))
            assert gap <= 1e-6
            worst = max(worst, gap)
        info["max_gap"] = f"{worst:.2e}"


def test_03_feasibility_counterexample(criterion, capsys):
    with criterion(3, "feasibility counterexample", 5.0):
        code = dispatch(["counterexample", "--kind", "feasibility"])
        rep = json.loads(capsys.readouterr().out)
        assert code == 0 and rep["ok"]
        assert rep["feas_1"] is False and rep["feas_2"] is True
        # witness for the cycle; the triangles body never reaches -3/4 on the ball (lambda_min = -1)
        _, cyc = build_feasibility_pair()
        w = np.array([1, -1, 1, -1, 1, -1]) / np.sqrt(6)
        assert is_feasible_point(cyc, w, 1e-12)
        assert min(0.0, jacobi_eigenvalues(adjacency(TRIANGLES))[0] / 2) + 0.75 > 0


def test_04_wl_color_class_identities(criterion):
    rng = np.random.default_rng(404)
    with criterion(4, "WL color-class identities", 60.0) as info:
        spread = gap = 0.0
        for k in range(50):
            if k % 2:
                inst = random_instance(rng, n=int(rng.integers(1, 11)), m=int(rng.integers(0, 6)))
            else:
                # symmetric graphs with large color classes
                inst = two_lift(dominant_instance(rng, int(rng.integers(1, 6)), int(rng.integers(0, 3))), rng)
            assert inst.n <= 10 and inst.m <= 5
            g = build_graph(inst)
            table = color_sum_table(g, run_wl(g).stable, tol=1e-9)
            spread, gap = max(spread, table.max_spread), max(gap, table.max_identity_gap)
        assert spread <= 1e-9 and gap <= 1e-9
        info["max_spread"], info["max_identity_gap"] = f"{spread:.1e}", f"{gap:.1e}"


def test_05_solution_transfer(criterion):
    rng = np.random.default_rng(505)
    with criterion(5, "solution transfer", 60.0) as info:
        for k in range(20):
            if k % 2:
                src = strictly_convex_instance(rng)
                dst_graph = permute(build_graph(src), IndexPermutation.random(src.n, src.m, rng))
            else:
                base = dominant_instance(rng, int(rng.integers(2, 5)), int(rng.integers(0, 3)))
                src = two_lift(base, rng, cross=False)
                dst_graph = build_graph(two_lift(base, rng))
            g_src = build_graph(src)
            assert not separates(g_src, dst_graph)
            res = solve(src)
            assert res.status is Status.OPTIMAL
            rep = check_solution_transfer(g_src, dst_graph, res.x)
            assert rep["feasible"]
            assert rep["objective_dst"] <= rep["objective_src"] + 1e-8
            assert rep["norm_dst"] <= rep["norm_src"] + 1e-8
        info["pairs"] = 20


def test_06_equivariance(criterion):
    rng = np.random.default_rng(606)
    with criterion(6, "equivariance", 60.0) as info:
        worst = 0.0
        for k in range(30):
            inst = random_instance(rng, n=int(rng.integers(1, 9)), m=int(rng.integers(0, 4)))
            g = build_graph(inst)
            perm = IndexPermutation.random(inst.n, inst.m, rng)
            h = permute(g, perm)
            T, d = int(rng.integers(1, 4)), int(rng.choice([4, 8, 16]))
            cs = GnnConfig(rounds=T, width=d)
            ps = init_params(cs, k)
            worst = max(worst, abs(float(forward(ps, cs, g)[0] - forward(ps, cs, h)[0])))
            cv = GnnConfig(rounds=T, width=d, output_mode=OutputMode.NODE_VECTOR, task=Task.SOLUTION)
            pv = init_params(cv, k)
            y, z = forward(pv, cv, g), forward(pv, cv, h)
            worst = max(worst, float(np.abs(z[list(perm.var_perm)] - y).max()))
        assert worst <= 1e-9
        info["max_diff"] = f"{worst:.1e}"


def test_07_gradients(criterion):
    rng = np.random.default_rng(707)
    setups = [
        (Task.OBJECTIVE, 1, 3, 2), (Task.FEASIBILITY, 1, 3, 2), (Task.SOLUTION, 1, 3, 2),
        (Task.OBJECTIVE, 2, 2, 2), (Task.FEASIBILITY, 2, 2, None), (Task.SOLUTION, 2, 2, 2),
        (Task.OBJECTIVE, 1, 4, 2), (Task.FEASIBILITY, 1, 2, 3), (Task.SOLUTION, 1, 3, None),
        (Task.OBJECTIVE, 3, 2, 1),
    ]
    with criterion(7, "gradient correctness", 120.0) as info:
        worst, total = 0.0, 0
        for k, (task, T, d, h0) in enumerate(setups):
            cfg = GnnConfig(rounds=T, width=d, embed_dim=h0, output_mode=task.mode, task=task)
            p = init_params(cfg, k)
            # shift away from zero so the rectifiers sit on smooth pieces
            p = p.with_flat(p.flat() + 0.3 * rng.normal(size=p.size) + 0.1)
            assert p.size <= 500
            graphs = [build_graph(random_instance(rng, n=int(rng.integers(2, 5)), m=int(rng.integers(1, 3))))
                      for _ in range(2)]
            if task is Task.SOLUTION:
                labels = [rng.normal(size=g.n) for g in graphs]
            elif task is Task.FEASIBILITY:
                labels = [1, 0]
            else:
                labels = list(rng.normal(size=2))
            _, grad = loss_and_grad(p, cfg, graphs, labels)
            theta, gvec = p.flat(), grad.flat()
            for i in range(p.size):
                h = 1e-6 * max(1.0, abs(theta[i]))
                e = np.zeros(p.size)
                e[i] = h
                lp = loss_and_grad(p.with_flat(theta + e), cfg, graphs, labels)[0]
                lm = loss_and_grad(p.with_flat(theta - e), cfg, graphs, labels)[0]
                fd = (lp - lm) / (2 * h)
                scale = max(abs(fd), abs(gvec[i]), 1e-6)
                rel = abs(fd - gvec[i]) / scale
                assert rel <= 1e-4, f"net {k} parameter {i}: reverse {gvec[i]!r} vs central {fd!r}"
                worst = max(worst, rel)
            total += p.size
        info["parameters"], info["max_rel"] = total, f"{worst:.1e}"


def test_08_solver_oracle(criterion):
    rng = np.random.default_rng(808)
    with criterion(8, "solver oracle agreement", 300.0) as info:
        worst_gap = worst_kkt = 0.0
        for _ in range(100):
            inst = strictly_convex_instance(rng)
            res = solve(inst)
            assert res.status is Status.OPTIMAL
            assert res.kkt_residual <= 1e-6
            _, value, viol = projected_gradient_qcqp(inst)
            assert viol <= 1e-8
            assert abs(res.value - value) <= 1e-4
            worst_gap = max(worst_gap, abs(res.value - value))
            worst_kkt = max(worst_kkt, res.kkt_residual)
        info["max_value_gap"], info["max_kkt"] = f"{worst_gap:.1e}", f"{worst_kkt:.1e}"


def _smoke(task):
    base = synth_base(10, 3, 0.3, seed=0)
    train_ds, test_ds, _ = generate(GenSpec(base, 200, 50, seed=1, tasks={task}))
    cfg = GnnConfig(rounds=2, width=64, output_mode=task.mode, task=task)
    params, curve = train(train_ds, cfg, TrainConfig(epochs=50, seed=0), val=test_ds)
    return train_ds, test_ds, params, curve


def test_09_training_smoke(criterion):
    with criterion(9, "training smoke", 900.0) as info:
        tr_o, te_o, p_o, curve_o = _smoke(Task.OBJECTIVE)
        assert len(curve_o) == 50
        assert curve_o[-1]["train_loss"] <= 0.5 * curve_o[0]["train_loss"]
        tr_f, te_f, p_f, curve_f = _smoke(Task.FEASIBILITY)
        labels = [r.label_feasibility for r in tr_f.records]
        assert sum(labels) == len(labels) // 2  # balanced
        assert curve_f[-1]["train_accuracy"] >= 0.9
        # same seed, same bits
        tr_o2, te_o2, p_o2, curve_o2 = _smoke(Task.OBJECTIVE)
        assert datasets_equal(tr_o, tr_o2) and datasets_equal(te_o, te_o2)
        assert p_o.equals(p_o2) and curve_o == curve_o2
        tr_f2, _, p_f2, curve_f2 = _smoke(Task.FEASIBILITY)
        assert datasets_equal(tr_f, tr_f2) and p_f.equals(p_f2) and curve_f == curve_f2
        info["mse"] = f"{curve_o[0]['train_loss']:.4g}->{curve_o[-1]['train_loss']:.4g}"
        info["feas_train_acc"] = f"{curve_f[-1]['train_accuracy']:.3f}"


def test_10_io_round_trips(criterion):
    rng = np.random.default_rng(1010)
    with criterion(10, "I/O round trips", 60.0) as info:
        for k in range(100):
            inst = random_instance(rng, n=int(rng.integers(1, 9)), m=int(rng.integers(0, 5)), name=f"io{k}")
            assert parse_qplib(write_qplib(inst)).same_coefficients(inst)
            assert instance_from_dict(json.loads(json.dumps(instance_to_dict(inst)))).same_coefficients(inst)
            x = rng.normal(size=inst.n)
            assert objective_value(parse_qplib(write_qplib(inst)), x) == objective_value(inst, x)
        root = os.environ.get("QCQP_QPLIB_DIR")
        path = Path(root) / "QPLIB_1157.qplib" if root else None
        if path is not None and path.exists():
            sizes = size_summary(parse_qplib(path.read_bytes()))
            assert sizes["variables"] == 40
            assert sizes["source_constraints"] == 9
            assert sizes["nonzeros_total"] == 399
            info["qplib_1157"] = "checked"
        else:
            info["qplib_1157"] = "skipped (QCQP_QPLIB_DIR not set)"
