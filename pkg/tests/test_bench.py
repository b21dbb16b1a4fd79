import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detfilt import bench
from detfilt.bench import (
    BenchGrid,
    EvalRecord,
    compute_collapse_rates,
    compute_eqmcp99,
    cost_equal_speed_m,
    cost_model,
    ecdf,
    ecdf_at,
    eqmcp99_from_records,
    grid_from_dict,
    observation_for,
    read_eval_csv,
    run_eval_grid,
)
from detfilt.distcore import NoiseSpec
from detfilt.errors import ConfigurationError, DetfiltError
from detfilt.likelihood import EstimatorSpec
from detfilt.statespace import gss_config

from oracles import gss_f, gss_h


def rec(method="mc", param=20, estimate=0.0, gt=1.0, o_scale=0.05, x=0.0, eps=0.5, rep=0):
    return EvalRecord("cfg", "gaussian", 3.0, "uniform", o_scale, x, 1, eps, 0.0, method, param, rep,
                      estimate, gt, 0.0)


def small_grid(**kw):
    base = dict(
        transition_families=["gaussian"], observation_families=["uniform"],
        transition_scales=[3.0], observation_scales=[0.5],
        locations=[-10.0, 0.0, 10.0], errors=[0.5, -0.1],
        methods=[EstimatorSpec("pointwise"), EstimatorSpec("uxhw", 8), EstimatorSpec("mc", 20),
                 EstimatorSpec("mc", 76)],
        reps=5, M_gt=10**5,
    )
    base.update(kw)
    return BenchGrid(**base)


# -- ecdf ------------------------------------------------------------------

def test_ecdf_examples():
    assert ecdf([1, 1, 1]) == [(1.0, 1.0)]
    assert ecdf_at(ecdf([1, 2, 3, 4]), 2.5) == 0.5
    assert ecdf_at(ecdf([1, 2, 3, 4]), 0.5) == 0.0


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=300))
def test_ecdf_monotone(errs):
    curve = ecdf(errs)
    t = [a for a, _ in curve]
    f = [b for _, b in curve]
    assert t == sorted(set(t))
    assert all(b > a for a, b in zip(f, f[1:]))
    assert f[-1] == 1.0


def test_ecdf_empty():
    with pytest.raises(ValueError):
        ecdf([])


# -- collapse rates --------------------------------------------------------

def test_collapse_rate_examples():
    rows = [rec(estimate=1.0)] * 3
    assert compute_collapse_rates(rows) == [("mc", 20, 0.05, 0.0)]
    rows = [rec(estimate=0.0)] + [rec(estimate=0.5)] * 3
    assert compute_collapse_rates(rows) == [("mc", 20, 0.05, 25.0)]
    assert compute_collapse_rates([]) == []


def test_false_zero_needs_positive_truth():
    assert not rec(estimate=0.0, gt=0.0).false_zero
    assert rec(estimate=0.0, gt=1e-30).false_zero


# -- EqMCp99 ---------------------------------------------------------------

def test_eqmcp99_constructed_ordering():
    pts = [(i,) for i in range(5)]
    ux = {p: 0.1 for p in pts}
    mc = {10: {p: [0.2] * 4 for p in pts}, 100: {p: [0.05] * 4 for p in pts}}
    assert compute_eqmcp99(ux, mc) == 100


def test_eqmcp99_none_when_uxhw_exact():
    pts = [(i,) for i in range(5)]
    ux = {p: 0.0 for p in pts}
    mc = {m: {p: [1e-3 / m] * 4 for p in pts} for m in [10, 100, 1000]}
    assert compute_eqmcp99(ux, mc) is None


def test_eqmcp99_coverage_mismatch_lists_points():
    ux = {(0,): 0.1, (1,): 0.1}
    mc = {10: {(0,): [0.0]}}
    with pytest.raises(ConfigurationError, match=r"missing MC point \(1,\)"):
        compute_eqmcp99(ux, mc)


# -- cost model ------------------------------------------------------------

def test_cost_model_examples():
    assert cost_model("mc", 20).total == 20
    assert cost_model("uxhw", 8).stages["add"] == 2 * 64
    for eta in [8, 16, 32]:
        assert cost_model("uxhw", eta).stages["add"] / cost_model("uxhw", 2 * eta).stages["add"] < 0.5
    assert cost_equal_speed_m(8) == (16 + 128 + 8 + 8) // 2


# -- grid ------------------------------------------------------------------

def test_default_grid_shape():
    g = BenchGrid()
    assert len(g.configs()) == 108
    assert len(g.locations) == 61 and g.locations[0] == -30.0 and g.locations[-1] == 30.0
    assert sorted(g.errors) == [-1, -0.5, -0.1, -0.05, 0.05, 0.1, 0.5, 1]
    per_point = 2 + 4 + 4 * 200
    assert g.expected_rows() == 108 * 61 * 8 * per_point
    assert g.paper_scale().reps == 1000 and g.paper_scale().M_gt == 10**7


def test_grid_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        grid_from_dict({"reps": 3, "colour": 1})
    with pytest.raises(ConfigurationError):
        grid_from_dict({"methods": [{"method": "mc", "param": 20, "seed": 3}]})


def test_grid_json_roundtrip():
    g = small_grid()
    assert grid_from_dict(json.loads(json.dumps(g.to_dict()))) == g


def test_observation_for():
    cfg = gss_config(NoiseSpec("gaussian", 0.0, 3.0), NoiseSpec("uniform", 0.0, 0.5))
    assert observation_for(cfg, 4.0, 1, 0.1) == gss_h(gss_f(4.0, 1)) - 0.1


def test_run_eval_grid_rows_audit_and_determinism(tmp_path):
    g = small_grid()
    s1 = run_eval_grid(g, tmp_path / "a", seed=3)
    s2 = run_eval_grid(g, tmp_path / "b", seed=3)
    a = (tmp_path / "a" / "eval.csv").read_bytes()
    assert a == (tmp_path / "b" / "eval.csv").read_bytes()
    assert s1["rows"] == s2["rows"] == g.expected_rows()
    records = read_eval_csv(tmp_path / "a")
    assert len(records) == g.expected_rows()
    cfg = g.configs()[0]
    for r in records:
        assert r.z == observation_for(cfg, r.x, r.k, r.eps)
        assert r.abs_error == abs(r.estimate - r.ground_truth)
        assert not r.false_zero or r.estimate == 0.0
    # A rerun in place reuses cached ground truth and reproduces the bytes.
    run_eval_grid(g, tmp_path / "a", seed=3)
    assert (tmp_path / "a" / "eval.csv").read_bytes() == a
    assert run_eval_grid(g, tmp_path / "c", seed=4)["rows"] == g.expected_rows()
    assert (tmp_path / "c" / "eval.csv").read_bytes() != a


def test_run_eval_grid_parallel_matches_serial(tmp_path):
    g = small_grid(locations=[-5.0, 5.0])
    run_eval_grid(g, tmp_path / "s", seed=1)
    run_eval_grid(g, tmp_path / "p", seed=1, workers=2)
    assert (tmp_path / "s" / "eval.csv").read_bytes() == (tmp_path / "p" / "eval.csv").read_bytes()


def test_degenerate_smoke_grid(tmp_path):
    g = small_grid(transition_scales=[1e-12], observation_scales=[1e-12],
                   observation_families=["uniform", "gaussian"], reps=1,
                   methods=[EstimatorSpec("pointwise"), EstimatorSpec("varsum"), EstimatorSpec("uxhw", 8),
                            EstimatorSpec("mc", 20)])
    run_eval_grid(g, tmp_path, seed=0)
    records = read_eval_csv(tmp_path)
    pw = {(r.config_id, r.x, r.eps): r.estimate for r in records if r.method == "pointwise"}
    for r in records:
        assert abs(r.estimate - pw[(r.config_id, r.x, r.eps)]) < 1e-6


def test_truncation_marker(tmp_path, monkeypatch):
    calls = []
    real = bench._eval_cell

    def flaky(task):
        calls.append(1)
        if len(calls) == 2:
            raise KeyboardInterrupt
        return real(task)

    monkeypatch.setattr(bench, "_eval_cell", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_eval_grid(small_grid(), tmp_path)
    assert (tmp_path / "eval.csv").read_text().splitlines()[-1].startswith(bench.TRUNCATED)
    with pytest.raises(DetfiltError, match="truncated"):
        read_eval_csv(tmp_path)


def test_abs_error_audit_on_read(tmp_path):
    run_eval_grid(small_grid(locations=[0.0]), tmp_path)
    p = tmp_path / "eval.csv"
    lines = p.read_text().splitlines()
    head = lines[0].split(",")
    cells = lines[1].split(",")
    cells[head.index("abs_error")] = "123"
    p.write_text("\n".join([lines[0], ",".join(cells)] + lines[2:]) + "\n")
    with pytest.raises(DetfiltError):
        read_eval_csv(p)


def test_eqmcp99_from_grid_monotone(tmp_path):
    g = small_grid(locations=[-20.0, -5.0, 0.0, 5.0, 20.0], reps=40,
                   methods=[EstimatorSpec("uxhw", 8)] + [EstimatorSpec("mc", m) for m in [20, 76, 319, 1396]])
    run_eval_grid(g, tmp_path)
    (entry,) = eqmcp99_from_records(read_eval_csv(tmp_path))
    fr = [entry["fractions"][m] for m in [20, 76, 319, 1396]]
    assert all(b >= a - 0.02 for a, b in zip(fr, fr[1:])), fr
    assert entry["paper_hardware"] == 701


def test_uxhw_false_zero_rate_nonincreasing(tmp_path):
    g = small_grid(observation_scales=[0.05], locations=np.linspace(-30, 30, 13).tolist(),
                   errors=[0.5, -0.5, 0.1, -0.1], methods=[EstimatorSpec("uxhw", e) for e in [8, 16, 32, 64]])
    run_eval_grid(g, tmp_path)
    rates = {p: r for _, p, _, r in compute_collapse_rates(read_eval_csv(tmp_path))}
    seq = [rates[e] for e in [8, 16, 32, 64]]
    assert all(b <= a for a, b in zip(seq, seq[1:])), seq
