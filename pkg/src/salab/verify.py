"""Release-gate invariant suite behind the `verify` subcommand.

Each entry re-derives one structural identity or inequality from scratch
with fixed seeds and reports pass/fail; the manifest is the quick answer
to "is this checkout internally consistent".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .engine import advance, init_state
from .mdp import (
    Policy,
    load_mdp,
    lyapunov_contraction_norm,
    make_offpolicy_td_sampler,
    make_q_sampler,
    make_td_sampler,
    LfaConfig,
    random_mdp,
    stationary_distribution,
    td_operator_report,
    transition_matrix,
)
from .norms import (
    NormSpec,
    dual_norm,
    equivalence_constants,
    estimate_nu,
    half_sq_gradient,
    norm,
    norm_rows,
    smoothness_constant,
)
from .operators import (
    make_linear_additive,
    make_pair_gaussian_example,
    make_random_contractive,
    make_two_point_multiplicative,
)
from .schedules import StepSchedule


@dataclass(frozen=True)
class InvariantResult:
    name: str
    passed: bool
    detail: str


def _check_step_monotone():
    sched = StepSchedule(1.2, 1.5, 0.7)
    steps = sched.step(np.arange(10_000))
    assert np.all(np.diff(steps) <= 0) and np.all(steps > 0)
    return "alpha_k positive and non-increasing over 10^4 indices"


def _check_running_average():
    op = make_pair_gaussian_example(2, 1.0)
    state = init_state(op, np.array([1.0, -1.0]), seed=1)
    xs = [state.x.copy()]
    sched = StepSchedule(0.9, 2.0, 0.4)
    for _ in range(300):
        advance(op, sched, state)
        xs.append(state.x.copy())
    two_pass = np.mean(xs, axis=0)
    err = np.max(np.abs(state.y - two_pass) / np.maximum(np.abs(two_pass), 1e-30))
    assert err <= 1e-10
    return f"incremental mean within {err:.1e} of two-pass mean"


def _check_holder():
    rng = make_rng(2)
    worst = 0.0
    for spec in (NormSpec.euclidean(), NormSpec.sup(),
                 NormSpec.weighted(3, [0.5, 1.0, 2.0])):
        X = rng.standard_normal((10_000, 3))
        U = rng.standard_normal((10_000, 3))
        inner = np.einsum("ij,ij->i", X, U)
        bound = norm_rows(spec, X) * np.array([dual_norm(spec, u) for u in U])
        worst = max(worst, float(np.max(inner / np.maximum(bound, 1e-300))))
    assert worst <= 1 + 1e-12
    return f"max <x,u>/(|x| |u|*) = {worst:.12f} over 3x10^4 pairs"


def _check_gradient_lipschitz():
    rng = make_rng(3)
    for p in (2, 4, 8):
        w = rng.random(4) + 0.5
        spec = NormSpec.weighted(p, w)
        worst = 0.0
        for _ in range(2000):
            x, y = rng.standard_normal(4), rng.standard_normal(4)
            num = dual_norm(spec, half_sq_gradient(spec, x) - half_sq_gradient(spec, y))
            worst = max(worst, num / norm(spec, x - y))
        assert worst <= (p - 1) * (1 + 1e-8), f"p={p}: ratio {worst}"
    return "gradient ratio <= p-1 for p in {2,4,8}"


def _check_descent_constant():
    rng = make_rng(4)
    for spec in (NormSpec.euclidean(), NormSpec.weighted(4, [1.0, 2.0, 0.5])):
        M = smoothness_constant(spec)
        for _ in range(2000):
            a, b = rng.standard_normal(3), rng.standard_normal(3)
            lhs = 0.5 * norm(spec, a + b) ** 2
            rhs = (0.5 * norm(spec, a) ** 2 + half_sq_gradient(spec, a) @ b
                   + 0.5 * M * norm(spec, b) ** 2)
            assert lhs <= rhs + 1e-10
    return "squared-norm descent inequality holds at M = smoothness constant"


def _check_equivalence():
    rng = make_rng(5)
    a = NormSpec.weighted(4, [0.5, 1.5, 1.0, 2.0])
    b = NormSpec.euclidean()
    ec = equivalence_constants(a, b, 4, restarts=2, samples=1000)
    X = rng.standard_normal((5000, 4))
    ratios = norm_rows(a, X) / norm_rows(b, X)
    assert np.all(ratios >= ec.lower - 1e-12) and np.all(ratios <= ec.upper + 1e-12)
    return f"sandwich [{ec.lower:.4f}, {ec.upper:.4f}] holds on 5000 samples"


def _check_gain_floor():
    rng = make_rng(6)
    for i in range(100):
        gamma = 0.05 + 0.9 * rng.random()
        A = rng.standard_normal((5, 5))
        A *= gamma / np.linalg.svd(A, compute_uv=False)[0]
        est = estimate_nu(A, NormSpec.euclidean())
        assert est.value >= 1 - gamma - 1e-12
    return "smallest gain of A - I >= 1 - |A|_2 on 100 contractions"


def _check_operator_unbiasedness():
    rng = make_rng(7)
    ops = [
        make_linear_additive(0.4 * np.eye(3), np.ones(3), 0.5 * np.eye(3)),
        make_pair_gaussian_example(4, 1.5),
        make_two_point_multiplicative(0.4, 2),
        make_random_contractive(3, 0.7, 0.5, seed=8),
    ]
    for op in ops:
        x = rng.standard_normal(op.dim)
        U = make_rng(9).random((50_000, op.noise_width))
        F = op.apply_batch(np.tile(x, (50_000, 1)), U)
        se = F.std(axis=0) / math.sqrt(50_000) + 1e-12
        z = np.max(np.abs(F.mean(axis=0) - op.mean(x)) / se)
        assert z <= 4.5, f"{type(op).__name__}: z={z:.2f}"
        xstar = op.fixed_point()
        assert np.max(np.abs(op.mean(xstar) - xstar)) <= 1e-10
    return "sampled means match mean maps; fixed points are fixed"


def _check_two_point_law():
    op = make_two_point_multiplicative(0.5, 3)
    draws = op.apply_batch(np.ones((100_000, 1)), make_rng(10).random((100_000, 1)))
    p_high = float(np.mean(draws == 3.5))
    assert set(np.unique(draws)) == {-0.5, 3.5}
    assert abs(p_high - 0.25) <= 0.01
    return f"support {{3.5, -0.5}} with P(high) = {p_high:.4f}"


def _check_td_row_sums():
    rng = make_rng(11)
    worst = 0.0
    for trial in range(100):
        mdp = random_mdp(4, 2, 0.4 + 0.5 * rng.random(), 1.0, seed=1000 + trial)
        pi = Policy.random(4, 2, seed=2000 + trial)
        n = (1, 2, 5)[trial % 3]
        rep = td_operator_report(mdp, pi, n)
        decay = 1 - mdp.gamma ** n
        resid = np.max(np.abs(rep.a_pi.sum(axis=1) - (1 - decay * rep.mu_pi)))
        floor = decay * rep.mu_min / mdp.n_states
        assert resid <= 1e-12, f"row-sum residual {resid:.2e}"
        assert np.min(rep.nu_pi) >= floor - 1e-12
        worst = max(worst, float(resid))
    return f"row-sum identity and stationarity floor on 100 instances (max residual {worst:.1e})"


def _check_td_contraction():
    mdp = random_mdp(4, 2, 0.8, 1.0, seed=12)
    pi = Policy.random(4, 2, seed=13)
    rep = td_operator_report(mdp, pi, 3)
    rng = make_rng(14)
    for p in (2.0, 6.0):
        spec = rep.contraction_norm(p)
        V1 = rng.standard_normal((1000, 4))
        V2 = rng.standard_normal((1000, 4))
        lhs = norm_rows(spec, (V1 - V2) @ rep.a_pi.T)
        rhs = rep.gamma_c(p) * norm_rows(spec, V1 - V2)
        assert np.all(lhs <= rhs * (1 + 1e-12))
    return "weighted p-norm contraction factor never violated on 10^3 pairs"


def _check_td_sampler_mean():
    mdp = random_mdp(4, 2, 0.7, 1.0, seed=15)
    pi = Policy.random(4, 2, seed=16)
    samp = make_td_sampler(mdp, pi, 2)
    V = make_rng(17).standard_normal(4)
    U = make_rng(18).random((100_000, samp.noise_width))
    F = samp.apply_batch(np.tile(V, (100_000, 1)), U)
    se = F.std(axis=0) / math.sqrt(100_000) + 1e-12
    z = np.max(np.abs(F.mean(axis=0) - samp.mean(V)) / se)
    assert z <= 4.0, f"z={z:.2f}"
    return f"sampled TD mean map matches the matrix map (max z = {z:.2f})"


def _check_q_contraction():
    mdp = random_mdp(4, 3, 0.85, 1.0, seed=19)
    pib = Policy.random(4, 3, seed=20)
    samp = make_q_sampler(mdp, pib)
    rng = make_rng(21)
    factor = 1 - (1 - mdp.gamma) * samp.rho_b
    for _ in range(1000):
        q1, q2 = rng.standard_normal(12), rng.standard_normal(12)
        lhs = np.max(np.abs(samp.mean(q1) - samp.mean(q2)))
        assert lhs <= factor * np.max(np.abs(q1 - q2)) * (1 + 1e-12)
    return f"sup-norm mean-map contraction at factor {factor:.4f}"


def _check_q_visit_law():
    mdp = random_mdp(3, 2, 0.8, 1.0, seed=22)
    pib = Policy.random(3, 2, seed=23)
    samp = make_q_sampler(mdp, pib)
    U = make_rng(24).random((100_000, 3))
    Q = np.zeros(6)
    F = samp.apply_batch(np.tile(Q, (100_000, 1)), U)
    visited = np.argmax(F != Q, axis=1)
    freq = np.bincount(visited, minlength=6) / 100_000
    probs = samp.visit_mass.reshape(-1)
    se = np.sqrt(probs * (1 - probs) / 100_000)
    assert np.all(np.abs(freq - probs) <= 4 * se + 1e-9)
    return "visit frequencies match stationary x behavior mass (4 SE)"


def _check_offpolicy_fixed_point():
    mdp = random_mdp(5, 2, 0.9, 1.0, seed=25)
    pi = Policy.random(5, 2, seed=26)
    pib = Policy.random(5, 2, seed=27)
    phi = make_rng(28).standard_normal((5, 3))
    samp = make_offpolicy_td_sampler(
        LfaConfig(phi=phi, pi=pi, pi_b=pib, n=10, zeta=1.0), mdp)
    v = samp.fixed_point()
    resid = float(np.max(np.abs(samp.a_bar @ v + samp.b_bar)))
    assert resid <= 1e-8
    K = np.diag(samp.mu_b)
    P_pi = transition_matrix(mdp, pi)
    proj = phi @ np.linalg.solve(phi.T @ K @ phi, phi.T @ K)
    from .mdp import policy_reward

    bell = sum(np.linalg.matrix_power(mdp.gamma * P_pi, l) @ policy_reward(mdp, pi)
               for l in range(10))
    bell = bell + np.linalg.matrix_power(mdp.gamma * P_pi, 10) @ (phi @ v)
    perr = float(np.max(np.abs(phi @ v - proj @ bell)))
    assert perr <= 1e-8
    return f"projected fixed-point residual {perr:.1e}"


def _check_lyapunov():
    mdp = random_mdp(5, 2, 0.9, 1.0, seed=29)
    pi = Policy.random(5, 2, seed=30)
    pib = Policy.random(5, 2, seed=31)
    phi = make_rng(32).standard_normal((5, 3))
    samp = make_offpolicy_td_sampler(
        LfaConfig(phi=phi, pi=pi, pi_b=pib, n=10, zeta=1.0), mdp)
    res = lyapunov_contraction_norm(samp.a_bar, n_pairs=1000, seed=33)
    assert res.ratio < 1.0
    assert np.all(np.linalg.eigvalsh(res.weight) > 0)
    return f"contraction in the Lyapunov norm at zeta* = {res.zeta_star:g} (ratio {res.ratio:.4f})"


def _check_stationary_solver():
    mu = stationary_distribution(np.array([[0.9, 0.1], [0.3, 0.7]]))
    assert np.allclose(mu, [0.75, 0.25], atol=1e-13)
    return "balance-equation solve reproduces the hand-solved chain"


MANIFEST = [
    ("step-schedule-monotone", _check_step_monotone),
    ("running-average-two-pass", _check_running_average),
    ("holder-inequality", _check_holder),
    ("p-norm-gradient-lipschitz", _check_gradient_lipschitz),
    ("squared-norm-descent-constant", _check_descent_constant),
    ("norm-equivalence-sandwich", _check_equivalence),
    ("contraction-gain-floor", _check_gain_floor),
    ("operator-unbiasedness", _check_operator_unbiasedness),
    ("two-point-noise-law", _check_two_point_law),
    ("stationary-distribution-solver", _check_stationary_solver),
    ("td-row-sum-and-floor", _check_td_row_sums),
    ("td-weighted-contraction", _check_td_contraction),
    ("td-sampler-mean-map", _check_td_sampler_mean),
    ("q-sup-norm-contraction", _check_q_contraction),
    ("q-visit-law", _check_q_visit_law),
    ("offpolicy-projected-fixed-point", _check_offpolicy_fixed_point),
    ("offpolicy-lyapunov-contraction", _check_lyapunov),
]


def run_manifest(mdp_file: str | None = None) -> list[InvariantResult]:
    results = []
    for name, fn in MANIFEST:
        try:
            detail = fn()
            results.append(InvariantResult(name, True, detail))
        except AssertionError as exc:
            results.append(InvariantResult(name, False, str(exc) or "assertion failed"))
        except Exception as exc:  # present the failure, never crash the gate
            results.append(InvariantResult(name, False, f"{type(exc).__name__}: {exc}"))
    if mdp_file is not None:
        try:
            mdp = load_mdp(mdp_file)
            results.append(InvariantResult(
                "mdp-file-stochasticity", True,
                f"{mdp.n_states} states / {mdp.n_actions} actions validated"))
        except (OSError, ValueError) as exc:
            results.append(InvariantResult("mdp-file-stochasticity", False, str(exc)))
    return results
