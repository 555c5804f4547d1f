import math

import numpy as np
import pytest

from salab._rng import make_rng
from salab.norms import (
    NormSpec,
    SingularJacobian,
    UnsupportedNorm,
    dual_norm,
    equivalence_constants,
    estimate_nu,
    half_sq_gradient,
    norm,
    norm_rows,
    smoothness_constant,
)


def test_norm_values():
    assert norm(NormSpec.weighted(2, [1, 1]), [3, 4]) == pytest.approx(5.0)
    assert norm(NormSpec.sup(), [-2, 1.5]) == 2.0
    assert norm(NormSpec.weighted(2, [4, 1]), [1, 2]) == pytest.approx(math.sqrt(8))


def test_dual_norm_values():
    assert dual_norm(NormSpec.euclidean(), [3, 4]) == pytest.approx(5.0)
    assert dual_norm(NormSpec.sup(), [1, -1, 2]) == pytest.approx(4.0)
    # p=2, w=(4,1): dual weights (1/4, 1)
    assert dual_norm(NormSpec.weighted(2, [4, 1]), [2, 1]) == pytest.approx(math.sqrt(2))


def test_norm_axioms_sampled():
    rng = make_rng(101)
    specs = [
        NormSpec.euclidean(),
        NormSpec.sup(),
        NormSpec.weighted(3, rng.random(6) + 0.5),
    ]
    for spec in specs:
        X = rng.standard_normal((200, 6))
        Y = rng.standard_normal((200, 6))
        nx, ny = norm_rows(spec, X), norm_rows(spec, Y)
        nxy = norm_rows(spec, X + Y)
        assert np.all(nxy <= nx + ny + 1e-12)
        assert np.allclose(norm_rows(spec, 3.0 * X), 3.0 * nx, rtol=1e-12)


def test_holder_inequality_sampled():
    rng = make_rng(102)
    for spec in [NormSpec.euclidean(), NormSpec.sup(),
                 NormSpec.weighted(2, [4.0, 1.0, 0.5]),
                 NormSpec.weighted(5, [1.0, 2.0, 3.0])]:
        X = rng.standard_normal((10_000, 3))
        U = rng.standard_normal((10_000, 3))
        inner = np.einsum("ij,ij->i", X, U)
        nx = norm_rows(spec, X)
        du = np.array([dual_norm(spec, u) for u in U])
        assert np.all(inner <= nx * du * (1 + 1e-12))


def test_smoothness_constant():
    assert smoothness_constant(NormSpec.euclidean()) == 1.0
    assert smoothness_constant(NormSpec.weighted(8, np.ones(4))) == 7.0
    assert smoothness_constant(NormSpec.weighted(3, [1, 2, 5])) == 2.0
    with pytest.raises(UnsupportedNorm):
        smoothness_constant(NormSpec.sup())


def test_half_sq_gradient_matches_finite_differences():
    rng = make_rng(103)
    spec = NormSpec.weighted(3, [1.0, 2.0, 5.0])
    for _ in range(20):
        x = rng.standard_normal(3)
        g = half_sq_gradient(spec, x)
        eps = 1e-6
        for i in range(3):
            d = np.zeros(3)
            d[i] = eps
            fd = (norm(spec, x + d) ** 2 - norm(spec, x - d) ** 2) / (4 * eps)
            assert fd == pytest.approx(g[i], rel=1e-5, abs=1e-8)
    assert np.all(half_sq_gradient(spec, np.zeros(3)) == 0.0)


@pytest.mark.parametrize("p", [2, 4, 8])
def test_gradient_lipschitz_constant(p):
    # ratio ||grad f(x) - grad f(y)||_dual / ||x - y|| never exceeds p - 1
    rng = make_rng(200 + p)
    w = rng.random(4) + 0.25
    spec = NormSpec.weighted(p, w)
    worst = 0.0
    for _ in range(10_000):
        x = rng.standard_normal(4)
        y = rng.standard_normal(4)
        gd = half_sq_gradient(spec, x) - half_sq_gradient(spec, y)
        ratio = dual_norm(spec, gd) / norm(spec, x - y)
        worst = max(worst, ratio)
    assert worst <= (p - 1) * (1 + 1e-8)


@pytest.mark.parametrize("spec", [
    NormSpec.euclidean(),
    NormSpec.weighted(2, [2.0, 1.0, 0.5]),
    NormSpec.weighted(4, [1.0, 1.0, 3.0]),
])
def test_descent_inequality_with_smoothness_constant(spec):
    # 0.5||a+b||^2 <= 0.5||a||^2 + <grad, b> + (M/2)||b||^2 on sampled pairs
    rng = make_rng(104)
    M = smoothness_constant(spec)
    for _ in range(10_000):
        a = rng.standard_normal(3)
        b = rng.standard_normal(3)
        lhs = 0.5 * norm(spec, a + b) ** 2
        rhs = (0.5 * norm(spec, a) ** 2 + half_sq_gradient(spec, a) @ b
               + 0.5 * M * norm(spec, b) ** 2)
        assert lhs <= rhs + 1e-10


def test_equivalence_constants_analytic_cases():
    same = equivalence_constants(NormSpec.weighted(2, np.ones(5)),
                                 NormSpec.euclidean(), 5, restarts=0, samples=10)
    assert (same.lower, same.upper) == (1.0, 1.0)

    ec = equivalence_constants(NormSpec.weighted(4, np.ones(16)),
                               NormSpec.euclidean(), 16, restarts=2, samples=500)
    assert ec.upper == 1.0
    assert ec.lower == pytest.approx(16 ** (-0.25), rel=1e-14)
    # sphere search stays inside the analytic sandwich and nearly attains it
    assert ec.lower <= ec.searched_lower <= ec.searched_upper <= ec.upper
    assert ec.searched_lower == pytest.approx(ec.lower, rel=0.05)

    mx = equivalence_constants(NormSpec.sup(), NormSpec.euclidean(), 9,
                               restarts=2, samples=500)
    assert mx.upper == 1.0 and mx.lower == pytest.approx(1 / 3)


def test_equivalence_sandwich_on_samples():
    rng = make_rng(105)
    a = NormSpec.weighted(3, [0.5, 2.0, 1.0, 1.5])
    b = NormSpec.sup()
    ec = equivalence_constants(a, b, 4, restarts=2, samples=500)
    X = rng.standard_normal((5000, 4))
    ratios = norm_rows(a, X) / norm_rows(b, X)
    assert np.all(ratios >= ec.lower - 1e-12)
    assert np.all(ratios <= ec.upper + 1e-12)


def test_estimate_nu_euclidean_exact():
    assert estimate_nu(np.zeros((3, 3)), NormSpec.euclidean()).value == pytest.approx(1.0)
    est = estimate_nu(0.3 * np.eye(4), NormSpec.euclidean())
    assert est.value == pytest.approx(0.7) and est.certified


def test_estimate_nu_contraction_floor():
    # for ||A||_2 = gamma < 1 the smallest singular value of A - I is >= 1 - gamma
    rng = make_rng(106)
    for i in range(20):
        gamma = 0.1 + 0.85 * rng.random()
        A = rng.standard_normal((5, 5))
        A *= gamma / np.linalg.svd(A, compute_uv=False)[0]
        est = estimate_nu(A, NormSpec.euclidean())
        assert est.value >= 1 - gamma - 1e-12


def test_estimate_nu_rejects_singular():
    with pytest.raises(SingularJacobian):
        estimate_nu(np.eye(3), NormSpec.euclidean())


def test_estimate_nu_noneuclidean_upper_estimate():
    A = 0.5 * np.eye(3)
    est = estimate_nu(A, NormSpec.weighted(4, np.ones(3)), restarts=4, seed=1)
    # for gamma*I the gain is 0.5 in every norm; the search is an upper estimate
    assert not est.certified
    assert est.value >= 0.5 - 1e-9
    assert est.value == pytest.approx(0.5, rel=1e-5)
