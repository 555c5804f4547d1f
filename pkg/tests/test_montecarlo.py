import math

import numpy as np
import pytest

from salab._rng import make_rng
from salab.engine import run_sa
from salab.montecarlo import (
    DegenerateSample,
    Experiment,
    clopper_pearson_upper,
    coverage_test,
    empirical_quantile,
    median_slope,
    run_ensemble,
    tail_diagnostics,
    tightness_check,
    truncated_mgf_divergence,
)
from salab.norms import NormSpec
from salab.operators import (
    make_linear_additive,
    make_pair_gaussian_example,
    make_two_point_multiplicative,
)
from salab.schedules import StepSchedule


def _pair_experiment(horizon=99, checkpoints=(99,)):
    return Experiment(
        op=make_pair_gaussian_example(2, 1.0),
        schedule=StepSchedule(1.0, 2.0, 0.0),
        x0=np.zeros(2),
        horizon=horizon,
        checkpoints=checkpoints,
        norm=NormSpec.euclidean(),
    )


def test_ensemble_determinism_and_parallel_independence():
    exp = _pair_experiment()
    a = run_ensemble(exp, 200, base_seed=77)
    b = run_ensemble(exp, 200, base_seed=77)
    c = run_ensemble(exp, 200, base_seed=77, parallel=5, window=17)
    assert np.array_equal(a.err_y, b.err_y)
    assert np.array_equal(a.err_y, c.err_y)
    assert np.array_equal(a.err_x, c.err_x)


def test_ensemble_matches_scalar_engine():
    exp = _pair_experiment(horizon=40, checkpoints=(0, 7, 40))
    ens = run_ensemble(exp, 9, base_seed=5)
    for rep in range(9):
        traj = run_sa(exp.op, exp.schedule, exp.x0, exp.horizon, exp.checkpoints,
                      exp.norm, seed=(5, rep))
        assert np.array_equal(traj.err_x, ens.err_x[:, rep])
        assert np.array_equal(traj.err_y, ens.err_y[:, rep])


def test_ensemble_mean_matches_gaussian_moment():
    # E||y_k||^2 = sigma^2 k/(k+1)^2 for the pure-noise pair construction
    ens = run_ensemble(_pair_experiment(), 40_000, base_seed=1)
    expect = 99 / 100 ** 2
    se = ens.err_y[0].std() / math.sqrt(ens.err_y[0].size)
    assert abs(ens.err_y[0].mean() - expect) <= 4 * se


def test_zero_noise_replications_identical():
    op = make_linear_additive(0.5 * np.eye(2), np.ones(2), np.zeros((2, 2)))
    exp = Experiment(op, StepSchedule(0.5, 2.0, 0.0), np.zeros(2), 20, (20,),
                     NormSpec.euclidean())
    ens = run_ensemble(exp, 50, base_seed=3)
    assert np.all(ens.err_y[0] == ens.err_y[0][0])
    assert ens.divergence_count == 0


def test_divergent_replications_counted_not_fatal():
    # large constant step on the two-point law produces explosive excursions
    op = make_two_point_multiplicative(0.5, 3)
    exp = Experiment(op, StepSchedule(0.9, 1.5, 0.0), np.full(1, 1e300), 400, (400,),
                     NormSpec.euclidean())
    with np.errstate(over="ignore", invalid="ignore"):
        ens = run_ensemble(exp, 30, base_seed=11)
    assert ens.divergence_count > 0
    assert ens.err_y.shape[1] == 30 - ens.divergence_count
    assert np.all(np.isfinite(ens.err_y))


def test_empirical_quantile_conventions():
    q = empirical_quantile(np.arange(1, 101), 0.95)
    assert q.value == 95.0  # inverse empirical CDF order statistic
    const = empirical_quantile(np.full(500, 3.25), 0.9)
    assert const.value == const.ci_lo == const.ci_hi == 3.25


def test_empirical_quantile_exponential_oracle():
    # chi^2_2 / 2 is Exp(1): the 0.99 quantile is log(100)
    rng = make_rng(21)
    x = rng.exponential(size=100_000)
    q = empirical_quantile(x, 0.99)
    assert q.ci_lo <= math.log(100) <= q.ci_hi
    assert q.value == pytest.approx(math.log(100), rel=0.05)


def test_empirical_quantile_ci_calibration():
    # the 99% order-statistic interval should rarely miss the true quantile
    rng = make_rng(22)
    target = math.log(10)
    misses = sum(
        not (q.ci_lo <= target <= q.ci_hi)
        for q in (empirical_quantile(rng.exponential(size=2000), 0.9)
                  for _ in range(300))
    )
    assert misses <= 9  # mean 3 at the nominal rate


def test_clopper_pearson_upper():
    assert clopper_pearson_upper(0, 100) < 0.05
    assert clopper_pearson_upper(100, 100) == 1.0
    # upper limit decreases with n at fixed rate
    assert clopper_pearson_upper(5, 1000) < clopper_pearson_upper(5, 100)


def test_coverage_trivial_bounds():
    ens = run_ensemble(_pair_experiment(), 2000, base_seed=9)
    always = coverage_test(ens, lambda k, d: math.inf, delta=0.05)
    assert all(v.passed and v.exceed_count == 0 for v in always)
    never = coverage_test(ens, lambda k, d: 0.0, delta=0.05)
    assert not any(v.passed for v in never)


def test_coverage_calibration_against_exact_quantile():
    # bound at the exact (1-delta)-quantile: pass at slack 1.5, fail at 0.5
    delta = 0.05
    ens = run_ensemble(_pair_experiment(), 100_000, base_seed=13)

    def exact_bound(k, d):
        return (math.sqrt(k * math.log(1 / d)) / (k + 1)) ** 2

    verdicts_loose = coverage_test(ens, exact_bound, delta, slack=1.5)
    verdicts_tight = coverage_test(ens, exact_bound, delta, slack=0.5)
    assert all(v.passed for v in verdicts_loose)
    assert not any(v.passed for v in verdicts_tight)


def test_tightness_check_pair_construction():
    ens = run_ensemble(_pair_experiment(), 100_000, base_seed=17)
    rep = tightness_check(ens, delta=0.1, k=99, sigma_bar=1.0)
    assert 0.97 <= rep.ratio_empirical_exact <= 1.03
    assert rep.ratio_leading_exact <= rep.predicted_factor + 0.1
    assert rep.empirical_ci[0] <= rep.exact <= rep.empirical_ci[1]


def test_truncated_mgf_divergence():
    radii = [2, 3, 4, 5, 6]
    at_zero = truncated_mgf_divergence(0.0, radii)
    assert np.allclose(at_zero.values, 1.0, atol=1e-12)
    assert at_zero.t_critical == pytest.approx(48.0)  # (k+1)/(x0 a0 a1) = 3/0.0625

    below = truncated_mgf_divergence(0.5 * 48.0, radii)
    assert below.convergent and below.last_ratio < 1.01

    above = truncated_mgf_divergence(2.0 * 48.0, radii)
    assert not above.convergent
    assert above.growth_factor >= 10.0


def test_tail_diagnostics_synthetic():
    rng = make_rng(31)
    n = 100_000
    pareto = (1 - rng.random(n)) ** (-1 / 2.0)  # exact Pareto(alpha=2)
    diag = tail_diagnostics(pareto)
    assert diag.verdict == "polynomial-tail-consistent"
    assert diag.hill_stable
    for idx in diag.hill_indices.values():
        assert idx == pytest.approx(2.0, abs=0.2)

    expo = rng.exponential(size=n)
    diag2 = tail_diagnostics(expo)
    assert diag2.verdict == "exponential-tail-consistent"

    with pytest.raises(DegenerateSample):
        tail_diagnostics(np.full(1000, 2.0))
    with pytest.raises(DegenerateSample):
        tail_diagnostics(np.arange(10))


def test_median_slope():
    ks = [10, 100, 1000]
    meds = [1.0 / k for k in ks]
    assert median_slope(ks, meds) == pytest.approx(-1.0, abs=1e-12)
