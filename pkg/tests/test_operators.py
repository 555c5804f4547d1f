import math

import numpy as np
import pytest

from salab._rng import make_rng
from salab.operators import (
    OddDimension,
    SingularSystem,
    make_linear_additive,
    make_multiplicative_gaussian,
    make_pair_gaussian_example,
    make_random_contractive,
    make_two_point_multiplicative,
)


def _draws(op, x, n):
    U = make_rng(7, 7).random((n, op.noise_width))
    return op.apply_batch(np.tile(np.asarray(x, dtype=float), (n, 1)), U)


ZOO = [
    make_linear_additive(0.4 * np.eye(3), np.array([1.0, -1.0, 0.5]), 0.3 * np.eye(3)),
    make_pair_gaussian_example(4, 1.3),
    make_multiplicative_gaussian(),
    make_two_point_multiplicative(0.5, 3),
    make_random_contractive(3, 0.8, 0.7, seed=5),
]


@pytest.mark.parametrize("op", ZOO, ids=lambda o: type(o).__name__)
def test_unbiasedness_and_fixed_point(op):
    rng = make_rng(11)
    x = rng.standard_normal(op.dim)
    draws = _draws(op, x, 100_000)
    se = draws.std(axis=0) / math.sqrt(len(draws)) + 1e-12
    z = np.abs(draws.mean(axis=0) - op.mean(x)) / se
    assert np.all(z <= 4.0), f"unbiasedness z-scores {z}"
    xstar = op.fixed_point()
    assert np.max(np.abs(op.mean(xstar) - xstar)) <= 1e-10


def test_linear_additive_examples():
    d = 2
    xstar = np.array([3.0, -2.0])
    const = make_linear_additive(np.zeros((d, d)), xstar, np.zeros((d, d)))
    rng = make_rng(1)
    for _ in range(5):
        assert np.array_equal(const.sample(rng.standard_normal(d), rng), xstar)

    op = make_linear_additive(0.5 * np.eye(2), np.array([1.0, 1.0]), np.eye(2))
    assert np.allclose(op.fixed_point(), [2.0, 2.0])
    assert np.array_equal(op.jacobian_at_fixed_point(rng), 0.5 * np.eye(2))

    with pytest.raises(SingularSystem):
        make_linear_additive(np.eye(2), np.ones(2), np.eye(2))


def test_linear_additive_noise_covariance():
    cov = np.array([[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, 2.0]])
    op = make_linear_additive(np.zeros((3, 3)), np.zeros(3), cov)
    draws = _draws(op, op.fixed_point(), 100_000) - op.fixed_point()
    emp = draws.T @ draws / len(draws)
    assert np.linalg.norm(emp - cov) <= 0.05 * np.linalg.norm(cov)


def test_pair_gaussian_structure():
    with pytest.raises(OddDimension):
        make_pair_gaussian_example(3, 1.0)
    op = make_pair_gaussian_example(4, 1.0)
    rng = make_rng(2)
    assert np.array_equal(op.mean(rng.standard_normal(4)), np.zeros(4))
    w = op.sample(np.zeros(4), rng)
    assert w[0] == w[2] and w[1] == w[3]
    # per-coordinate variance is sigma_bar^2 / d
    draws = _draws(op, np.zeros(4), 100_000)
    assert np.allclose(draws.var(axis=0), 0.25, rtol=0.05)


def test_pair_gaussian_radial_quantile():
    # ||sum_{i<=k} w_i||_2 has (1-delta)-quantile sigma*sqrt(k log(1/delta)) in d=2
    op = make_pair_gaussian_example(2, 1.0)
    k, n = 40, 60_000
    U = make_rng(3, 1).random((n, k, 2))
    sums = np.zeros((n, 2))
    for t in range(k):
        sums += op.apply_batch(sums * 0.0, U[:, t, :])
    norms = np.linalg.norm(sums, axis=1)
    for delta in (0.1, 0.01):
        target = math.sqrt(k * math.log(1 / delta))
        emp = np.quantile(norms, 1 - delta)
        assert emp == pytest.approx(target, rel=0.03)


def test_multiplicative_gaussian():
    op = make_multiplicative_gaussian()
    rng = make_rng(4)
    assert op.sample(np.zeros(1), rng) == 0.0
    assert op.mean(np.array([3.7])) == 0.0
    draws = _draws(op, np.ones(1), 100_000)
    assert float((draws ** 2).mean()) == pytest.approx(1.0, rel=0.05)


def test_two_point_multiplicative():
    op = make_two_point_multiplicative(0.5, 3)
    assert op.mean(np.array([2.0])) == pytest.approx(1.0)
    draws = _draws(op, np.ones(1), 100_000).ravel()
    assert set(np.unique(draws)) == {-0.5, 3.5}
    p_high = float(np.mean(draws == 3.5))
    assert abs(p_high - 0.25) <= 0.01
    with pytest.raises(ValueError):
        make_two_point_multiplicative(1.5, 3)
    with pytest.raises(ValueError):
        make_two_point_multiplicative(0.5, 0)


def test_two_point_sign_preservation():
    # with alpha_k < 1/2 both support points keep 1 + alpha (w - 1) positive
    from salab.engine import run_sa
    from salab.norms import NormSpec
    from salab.schedules import StepSchedule

    op = make_two_point_multiplicative(0.5, 3)
    sched = StepSchedule(0.45, 2.0, 0.5)
    traj = run_sa(op, sched, np.array([1.0]), 200, list(range(0, 201, 20)),
                  NormSpec.euclidean(), seed=9)
    assert np.all(traj.err_x > 0)  # squared error of a positive iterate


def test_random_contractive_report():
    op = make_random_contractive(5, 0.6, 0.0, seed=8)
    assert np.linalg.svd(op.A, compute_uv=False)[0] == pytest.approx(0.6, abs=1e-10)
    assert op.report.nu >= 1 - 0.6 - 1e-12
    # noise-free run contracts monotonically
    from salab.engine import run_sa
    from salab.norms import NormSpec
    from salab.schedules import StepSchedule

    traj = run_sa(op, StepSchedule(0.8, 2.0, 0.0), np.ones(5), 50,
                  list(range(0, 51, 5)), NormSpec.euclidean(), seed=0)
    assert np.all(np.diff(traj.err_x) <= 0)
    assert traj.err_x[-1] < 1e-6 * traj.err_x[0]


def test_linear_additive_jacobian_and_sigma_hat():
    op = ZOO[0]
    assert op.report.sigma_hat_sq == 0.0
    assert op.report.curvature_n == 0.0
