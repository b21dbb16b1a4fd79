import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detfilt.distcore import NoiseSpec
from detfilt.errors import CollapseError, ConfigurationError
from detfilt.experiments import gss_gaussian_uniform
from detfilt.filters import (
    APF,
    BOOTSTRAP,
    ParticleSet,
    ess,
    read_filter_csv,
    filter_row,
    resample_systematic,
    rmse,
    run_filter,
    step_apf_predictive,
    step_bootstrap,
    write_filter_csv,
)
from detfilt.likelihood import EstimatorSpec, lik_pointwise
from detfilt.statespace import (
    SystemConfig,
    derive_seed,
    gss_config,
    make_rng,
    sample_noise,
    simulate_trajectory,
)

from oracles import kalman_filter_1d

# Normal-range weights: subnormals underflow to zero under rescaling.
weights = st.lists(st.just(0.0) | st.floats(1e-200, 1e3), min_size=1, max_size=200).filter(lambda w: sum(w) > 0)


def linear_probe():
    return SystemConfig.from_model("linear", NoiseSpec("gaussian", 0.0, 3.0), NoiseSpec("gaussian", 0.0, 1.0))


def kf_rmse(cfg, traj):
    est = kalman_filter_1d(traj.observations, cfg.initial_state, cfg.transition_noise.scale ** 2,
                           cfg.transition_noise.variance, cfg.observation_noise.variance)
    return rmse(traj.states, est)


# -- ESS -------------------------------------------------------------------

def test_ess_examples():
    assert ess(np.ones(100)) == 100.0
    assert ess([0, 0, 1.0, 0]) == 1.0
    assert ess([0.5, 0.5, 0, 0]) == 2.0


def test_ess_collapse():
    with pytest.raises(CollapseError):
        ess(np.zeros(5))


@given(weights, st.integers(-60, 60))
def test_ess_power_of_two_scaling_exact(w, j):
    assert ess(np.ldexp(np.array(w), j)) == ess(w)


@given(weights, st.floats(1e-6, 1e6))
def test_ess_scale_invariance(w, c):
    assert ess(c * np.array(w)) == pytest.approx(ess(w), rel=1e-12)


@given(weights)
def test_ess_bounds(w):
    n = sum(1 for v in w if v > 0)
    assert 1 - 1e-12 <= ess(w) <= n * (1 + 1e-12)


# -- resampling ------------------------------------------------------------

def test_resample_examples():
    rng = make_rng(0)
    assert resample_systematic(np.eye(5)[3], rng).tolist() == [3] * 5
    assert sorted(resample_systematic(np.full(8, 1 / 8), rng).tolist()) == list(range(8))
    for seed in range(200):
        counts = np.bincount(resample_systematic([0.75, 0.25, 0, 0], make_rng(seed)), minlength=4)
        assert counts.tolist() == [3, 1, 0, 0]


def test_resample_collapsed():
    with pytest.raises(CollapseError):
        resample_systematic(np.zeros(4), make_rng(0))


@settings(max_examples=200)
@given(weights, st.integers(0, 2**32))
def test_resample_floor_ceil(w, seed):
    w = np.array(w) / np.sum(w)
    n = w.size
    counts = np.bincount(resample_systematic(w, make_rng(seed)), minlength=n)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n * w) < 1 + 1e-9)


def test_resample_deterministic():
    w = make_rng(1).random(50)
    a = resample_systematic(w / w.sum(), make_rng(9))
    b = resample_systematic(w / w.sum(), make_rng(9))
    assert np.array_equal(a, b)


def test_resample_unbiased_counts():
    w = np.array([0.1, 0.35, 0.05, 0.5])
    total = np.zeros(4)
    for seed in range(2000):
        total += np.bincount(resample_systematic(w, make_rng(seed)), minlength=4)
    assert total / 2000 == pytest.approx(4 * w, abs=0.02)


# -- steps -----------------------------------------------------------------

def test_bootstrap_collapse_on_unreachable_observation():
    cfg = gss_gaussian_uniform(0.1)
    ps = ParticleSet(np.linspace(-1, 1, 50), np.full(50, 1 / 50))
    out = step_bootstrap(ps, 1e4, cfg, make_rng(0))
    assert out.weight_collapse
    assert out.weights.sum() == pytest.approx(1.0)


def test_apf_likelihood_collapse_falls_back():
    cfg = gss_gaussian_uniform(0.1)
    ps = ParticleSet(np.linspace(-1, 1, 50), np.full(50, 1 / 50))
    out = step_apf_predictive(ps, 1e4, cfg, EstimatorSpec("mc", 20), make_rng(0), make_rng(1))
    assert out.likelihood_collapse and out.zero_proxy_fraction == 1.0


def test_apf_selects_on_lookahead_weights():
    cfg = gss_config(NoiseSpec("gaussian", 0.0, 1e-12), NoiseSpec("gaussian", 0.0, 0.5))
    rng0 = make_rng(5)
    pos = np.sort(rng0.normal(0, 5, 64))
    w = rng0.random(64)
    ps = ParticleSet(pos, w / w.sum())
    z = 3.0
    out = step_apf_predictive(ps, z, cfg, EstimatorSpec("pointwise"), make_rng(7))
    m = lik_pointwise(z, pos, 1, cfg)
    rng = make_rng(7)
    idx = resample_systematic(ps.weights * m, rng)
    want = cfg.transition_ideal(pos[idx], 1) + sample_noise(cfg.transition_noise, rng, 64)
    assert np.array_equal(out.positions, want)


@pytest.mark.parametrize("c", [0.5, 2.0, 1024.0, 3.7, 1e-3])
def test_lookahead_rescaling_selects_same_parents(c):
    rng0 = make_rng(11)
    w = rng0.random(200)
    m = rng0.random(200)
    a = resample_systematic(w * m, make_rng(3))
    b = resample_systematic(w * (c * m), make_rng(3))
    assert np.array_equal(a, b)


def test_apf_rejects_ground_truth():
    ps = ParticleSet(np.zeros(4), np.full(4, 0.25))
    with pytest.raises(ConfigurationError):
        step_apf_predictive(ps, 0.0, gss_gaussian_uniform(0.5), EstimatorSpec("gt", 10**5), make_rng(0))


# -- full runs -------------------------------------------------------------

def test_single_particle_degenerate_tracks_truth():
    cfg = gss_config(NoiseSpec("gaussian", 0.0, 1e-12), NoiseSpec("gaussian", 0.0, 1e-12))
    traj = simulate_trajectory(cfg, 40, 0)
    r = run_filter(cfg, traj, BOOTSTRAP, None, N=1, seed=0)
    assert np.max(np.abs(r.estimates - traj.states)) < 1e-9
    assert r.rmse < 1e-6


@pytest.mark.parametrize("est", [None, EstimatorSpec("uxhw", 8), EstimatorSpec("mc", 20)])
def test_run_filter_deterministic_and_ess_bounded(est):
    cfg = gss_gaussian_uniform(0.5)
    traj = simulate_trajectory(cfg, 30, 4)
    variant = BOOTSTRAP if est is None else APF
    a = run_filter(cfg, traj, variant, est, 300, 8)
    b = run_filter(cfg, traj, variant, est, 300, 8)
    assert a == b
    assert np.all(a.ess_trace >= 1 - 1e-9) and np.all(a.ess_trace <= 300 + 1e-9)
    assert a.reset_count == a.weight_collapse_count


def test_uncorrected_switch_changes_weights():
    cfg = gss_gaussian_uniform(0.5)
    traj = simulate_trajectory(cfg, 20, 1)
    est = EstimatorSpec("uxhw", 8)
    assert run_filter(cfg, traj, APF, est, 200, 1) != run_filter(cfg, traj, APF, est, 200, 1, correct=False)


def test_run_filter_validation():
    cfg = gss_gaussian_uniform(0.5)
    traj = simulate_trajectory(cfg, 3, 0)
    with pytest.raises(ConfigurationError):
        run_filter(cfg, traj, "kalman")
    with pytest.raises(ConfigurationError):
        run_filter(cfg, traj, APF, None)


def test_estimator_draws_stay_off_the_filter_stream():
    cfg = gss_gaussian_uniform(0.5)
    ps = ParticleSet(np.linspace(-5, 5, 100), np.full(100, 0.01))
    states = []
    for est in [EstimatorSpec("mc", 20), EstimatorSpec("mc", 1396), EstimatorSpec("uxhw", 8)]:
        rng = make_rng(4)
        step_apf_predictive(ps, 3.0, cfg, est, rng, make_rng(5))
        states.append(int(rng.integers(2**62)))
    assert states[0] == states[1] == states[2]


def test_bootstrap_matches_kalman_on_linear_probe():
    cfg = linear_probe()
    ratios = []
    for trial in range(5):
        seed = derive_seed(1, trial)
        traj = simulate_trajectory(cfg, 100, seed)
        ratios.append(run_filter(cfg, traj, BOOTSTRAP, None, 5000, seed).rmse / kf_rmse(cfg, traj))
    assert abs(np.mean(ratios) - 1) <= 0.15


@pytest.mark.parametrize("est", [EstimatorSpec("pointwise"), EstimatorSpec("varsum"), EstimatorSpec("uxhw", 8),
                                 EstimatorSpec("mc", 20)])
def test_apf_matches_kalman_on_linear_probe(est):
    cfg = linear_probe()
    seed = derive_seed(2, 0)
    traj = simulate_trajectory(cfg, 100, seed)
    r = run_filter(cfg, traj, APF, est, 5000, seed)
    assert r.rmse == pytest.approx(kf_rmse(cfg, traj), rel=0.20)


@pytest.mark.slow
def test_likelihood_collapse_rates_narrow_uniform():
    cfg = gss_gaussian_uniform(0.05)
    steps = {"mc": 0, "uxhw": 0}
    total = 0
    for trial in range(100):
        seed = derive_seed(0, trial)
        traj = simulate_trajectory(cfg, 100, seed)
        for est in [EstimatorSpec("mc", 20), EstimatorSpec("uxhw", 8)]:
            steps[est.method] += run_filter(cfg, traj, APF, est, 1000, seed).likelihood_zero_count
        total += 100
    mc, ux = 100 * steps["mc"] / total, 100 * steps["uxhw"] / total
    print(f"likelihood-collapse steps: mc-20 {mc:.2f}%, uxhw-8 {ux:.2f}%")
    assert mc > 30 and ux < 10


def test_filter_csv_roundtrip(tmp_path):
    cfg = gss_gaussian_uniform(0.5)
    traj = simulate_trajectory(cfg, 10, 0)
    est = EstimatorSpec("uxhw", 8)
    r = run_filter(cfg, traj, APF, est, 100, 0)
    p = tmp_path / "f.csv"
    write_filter_csv([filter_row(0, APF, est, 100, 0, r)], p)
    (row,) = read_filter_csv(p)
    assert float(row["rmse"]) == r.rmse
    assert row["estimator"] == "uxhw" and int(row["param"]) == 8


def test_rmse_definition():
    assert rmse([0, 0, 0, 0], [1, -1, 1, -1]) == 1.0
    assert rmse([1.0], [4.0]) == 3.0
    assert math.isclose(rmse([0, 0], [3, 4]), math.sqrt(12.5))
