import math

import numpy as np
import pytest

from salab._rng import make_rng
from salab.mdp import (
    GreedyNotUnique,
    LfaConfig,
    NotContractive,
    NotHurwitz,
    Policy,
    ReducibleChain,
    TabularMdp,
    UnsupportedBehavior,
    exact_qstar,
    exact_value,
    hurwitz_check,
    load_mdp,
    lyapunov_contraction_norm,
    make_offpolicy_td_sampler,
    make_q_sampler,
    make_td_sampler,
    p_schedule,
    policy_reward,
    q_contraction_factor,
    q_p_min,
    random_mdp,
    save_mdp,
    stationary_by_power_iteration,
    stationary_distribution,
    td_operator_report,
    transition_matrix,
)
from salab.norms import norm_rows
from salab.schedules import StepSchedule


def test_stationary_examples():
    assert np.allclose(stationary_distribution(np.array([[0.9, 0.1], [0.3, 0.7]])),
                       [0.75, 0.25], atol=1e-13)
    # doubly stochastic -> uniform
    P = np.array([[0.2, 0.5, 0.3], [0.5, 0.3, 0.2], [0.3, 0.2, 0.5]])
    assert np.allclose(stationary_distribution(P), 1 / 3, atol=1e-13)
    # 3-cycle (periodic but with a unique eigenvalue-1 eigenvector)
    cyc = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    assert np.allclose(stationary_distribution(cyc), 1 / 3, atol=1e-13)


def test_stationary_rejects_reducible():
    with pytest.raises(ReducibleChain):
        stationary_distribution(np.eye(3))


def test_stationary_matches_power_iteration():
    rng = make_rng(1)
    for i in range(5):
        P = rng.dirichlet(np.ones(4), size=4)
        P /= P.sum(axis=1, keepdims=True)
        mu = stationary_distribution(P)
        mu_pow = stationary_by_power_iteration(P)
        assert np.allclose(mu, mu_pow, atol=1e-10)
        assert np.max(np.abs(mu @ P - mu)) <= 1e-12


def test_mdp_validation():
    P = np.zeros((2, 2, 2))
    P[..., 0] = 1.0
    with pytest.raises(ValueError):
        TabularMdp(P * 1.5, np.zeros((2, 2)), 0.9, 1.0)  # rows not stochastic
    with pytest.raises(ValueError):
        TabularMdp(P, np.full((2, 2), 2.0), 0.9, 1.0)  # rewards above r_max
    TabularMdp(P, np.zeros((2, 2)), 0.9, 1.0)


def test_exact_value_cases():
    # zero rewards
    mdp = random_mdp(3, 2, 0.8, 1.0, seed=2)
    zero = TabularMdp(mdp.transitions, np.zeros((3, 2)), 0.8, 1.0)
    assert np.allclose(exact_value(zero, Policy.uniform(3, 2)), 0.0)
    # absorbing pair of states with reward 1 and gamma 0.5: V = 2 everywhere
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, :, s] = 1.0
    geo = TabularMdp(P, np.ones((2, 2)), 0.5, 1.0)
    assert np.allclose(exact_value(geo, Policy.uniform(2, 2)), 2.0)


def test_exact_value_matches_truncated_series():
    mdp = random_mdp(4, 3, 0.85, 1.0, seed=3)
    pi = Policy.random(4, 3, seed=4)
    V = exact_value(mdp, pi)
    P, r = transition_matrix(mdp, pi), policy_reward(mdp, pi)
    acc = np.zeros(4)
    term = r.copy()
    for _ in range(400):  # gamma^400 ~ 5e-29
        acc += term
        term = mdp.gamma * P @ term
    assert np.allclose(V, acc, atol=1e-8)


def test_exact_qstar_cases():
    mdp = random_mdp(3, 2, 0.0, 1.0, seed=5)
    res = exact_qstar(mdp)
    assert np.array_equal(res.q, mdp.rewards)  # gamma = 0
    # self-absorbing states, rewards (1, 0), gamma 0.5: Q* = (2, 1), gap 1
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, :, s] = 1.0
    R = np.tile([1.0, 0.0], (2, 1))
    res2 = exact_qstar(TabularMdp(P, R, 0.5, 1.0))
    assert np.allclose(res2.q, np.tile([2.0, 1.0], (2, 1)), atol=1e-9)
    assert res2.greedy_gap == pytest.approx(1.0, abs=1e-9)
    # random instance: optimality residual certified
    res3 = exact_qstar(random_mdp(5, 3, 0.9, 1.0, seed=6))
    assert res3.residual <= 1e-9


def test_exact_qstar_greedy_uniqueness_gate():
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, :, s] = 1.0
    tied = TabularMdp(P, np.ones((2, 2)), 0.5, 1.0)
    with pytest.raises(GreedyNotUnique):
        exact_qstar(tied)


def test_td_operator_report_identities():
    rng = make_rng(7)
    for trial in range(12):
        mdp = random_mdp(4, 2, 0.5 + 0.4 * rng.random(), 1.0, seed=100 + trial)
        pi = Policy.random(4, 2, seed=200 + trial)
        for n in (1, 2, 5):
            rep = td_operator_report(mdp, pi, n)
            decay = 1 - mdp.gamma ** n
            assert np.max(np.abs(rep.a_pi.sum(axis=1) - (1 - decay * rep.mu_pi))) <= 1e-12
            assert np.max(np.abs(rep.c_pi.sum(axis=1) - 1.0)) <= 1e-12
            assert np.min(rep.nu_pi) >= decay * rep.mu_min / 4 - 1e-12
            assert np.max(np.abs(rep.a_pi @ rep.fixed_point + rep.b_pi
                                 - rep.fixed_point)) <= 1e-9


def test_td_report_row_sum_hand_case():
    # uniform stationary distribution on 2 states, gamma=0.5, n=1: row sums 0.75
    P = np.zeros((2, 2, 2))
    P[:, :, 0] = 0.5
    P[:, :, 1] = 0.5
    mdp = TabularMdp(P, np.zeros((2, 2)), 0.5, 1.0)
    rep = td_operator_report(mdp, Policy.uniform(2, 2), 1)
    assert np.allclose(rep.a_pi.sum(axis=1), 0.75, atol=1e-13)


def test_td_sampled_contraction_factor():
    mdp = random_mdp(4, 2, 0.8, 1.0, seed=8)
    pi = Policy.random(4, 2, seed=9)
    rep = td_operator_report(mdp, pi, 2)
    rng = make_rng(10)
    for p in (2.0, 4.0):
        spec = rep.contraction_norm(p)
        factor = rep.gamma_c(p)
        V1 = rng.standard_normal((1000, 4))
        V2 = rng.standard_normal((1000, 4))
        lhs = norm_rows(spec, (V1 - V2) @ rep.a_pi.T)
        rhs = factor * norm_rows(spec, V1 - V2)
        assert np.all(lhs <= rhs * (1 + 1e-12))


def test_p_schedule_values():
    p0 = p_schedule(0, 0.5, 1, 0.5, 2)
    assert p0 == pytest.approx((-4 * math.log(0.75) / 0.25) * math.log(8), rel=1e-12)
    assert p_schedule(15, 0.5, 1, 0.5, 2) == pytest.approx(2 * p0, rel=1e-12)
    # -log(1-x)/x >= 1 keeps the coefficient above 4 log(S/(mu (1-gamma^n)))
    for mu_min in (0.05, 0.3, 0.49):
        floor = 4 * math.log(2 / ((1 - 0.7) * mu_min))
        assert p_schedule(0, 0.7, 1, mu_min, 2) >= floor - 1e-12


def test_q_contraction_factor():
    pmin = q_p_min(0.5, 0.25, 2, 2)
    val = q_contraction_factor(0.5, 0.25, 2, 2, 2 * pmin)
    assert val == pytest.approx(4 ** (1 / (2 * pmin)) * 0.875, rel=1e-12)
    assert val < 1.0
    with pytest.raises(NotContractive):
        q_contraction_factor(0.5, 0.25, 2, 2, pmin)
    # p -> infinity limit
    assert q_contraction_factor(0.5, 0.25, 2, 2, 1e9) == pytest.approx(0.875, rel=1e-6)


def test_td_sampler_contract():
    mdp = random_mdp(4, 2, 0.7, 1.0, seed=11)
    pi = Policy.uniform(4, 2)
    samp = make_td_sampler(mdp, pi, 2)
    rng = make_rng(12)
    V = rng.standard_normal(4)
    # indicator structure: only the start state's entry moves
    for _ in range(50):
        out = samp.sample(V, rng)
        moved = np.nonzero(out != V)[0]
        assert len(moved) <= 1
    # deterministic 2-state chain with n=1: F(V) = r + gamma V at the start state
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    det = TabularMdp(P, np.ones((2, 2)), 0.5, 1.0)
    ds = make_td_sampler(det, Policy.uniform(2, 2), 1)
    V0 = np.array([2.0, 4.0])
    for _ in range(20):
        out = ds.sample(V0, rng)
        s0 = int(np.nonzero(out != V0)[0][0])
        assert out[s0] == pytest.approx(1.0 + 0.5 * V0[1 - s0])


def test_td_sampler_mean_map():
    mdp = random_mdp(4, 2, 0.7, 1.0, seed=13)
    pi = Policy.random(4, 2, seed=14)
    samp = make_td_sampler(mdp, pi, 3)
    rng = make_rng(15)
    V = rng.standard_normal(4)
    n = 100_000
    U = make_rng(16).random((n, samp.noise_width))
    F = samp.apply_batch(np.tile(V, (n, 1)), U)
    se = F.std(axis=0) / math.sqrt(n) + 1e-12
    z = np.abs(F.mean(axis=0) - samp.mean(V)) / se
    assert np.all(z <= 4.0)


def test_td_iterates_stay_in_reward_box():
    mdp = random_mdp(4, 2, 0.6, 1.0, seed=17)
    pi = Policy.uniform(4, 2)
    samp = make_td_sampler(mdp, pi, 1)
    sched = StepSchedule(1.0, 2.0, 0.5)  # alpha/sqrt(h) <= 1
    cap = mdp.r_max / (1 - mdp.gamma)
    rng = make_rng(18)
    for rep in range(100):
        V = rng.random(4) * cap
        for k in range(30):
            a = sched.step(k)
            V = (1 - a) * V + a * samp.sample(V, rng)
            assert np.all(V >= -1e-12) and np.all(V <= cap + 1e-12)


def test_q_sampler_contract():
    mdp = random_mdp(3, 2, 0.0, 1.0, seed=19)
    samp = make_q_sampler(mdp, Policy.uniform(3, 2))
    # gamma = 0: the mean map fixed point is the reward table
    assert np.allclose(samp.fixed_point(), mdp.rewards.reshape(-1))

    mdp2 = random_mdp(3, 2, 0.8, 1.0, seed=20)
    pib = Policy.random(3, 2, seed=21)
    s2 = make_q_sampler(mdp2, pib)
    assert s2.rho_b == pytest.approx(float(np.min(s2.mu_b[:, None] * pib.probs)))
    # visit frequency matches mu(s) pi_b(a|s) within 4 SE
    n = 100_000
    U = make_rng(22).random((n, 3))
    Q = np.zeros(6)
    F = s2.apply_batch(np.tile(Q, (n, 1)), U)
    visited = np.argmax(F != Q, axis=1)
    freq = np.bincount(visited, minlength=6) / n
    probs = s2.visit_mass.reshape(-1)
    se = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(freq - probs) <= 4 * se + 1e-9)


def test_q_sampler_fixed_point_in_expectation():
    mdp = random_mdp(3, 2, 0.8, 1.0, seed=23)
    samp = make_q_sampler(mdp, Policy.uniform(3, 2))
    qflat = samp.fixed_point()
    n = 100_000
    U = make_rng(24).random((n, 3))
    F = samp.apply_batch(np.tile(qflat, (n, 1)), U)
    se = F.std(axis=0) / math.sqrt(n) + 1e-12
    assert np.all(np.abs(F.mean(axis=0) - qflat) / se <= 4.0)


def test_q_mean_map_sup_norm_contraction():
    mdp = random_mdp(4, 3, 0.85, 1.0, seed=25)
    pib = Policy.random(4, 3, seed=26)
    samp = make_q_sampler(mdp, pib)
    factor = 1 - (1 - mdp.gamma) * samp.rho_b
    rng = make_rng(27)
    for _ in range(1000):
        q1 = rng.standard_normal(12)
        q2 = rng.standard_normal(12)
        lhs = np.max(np.abs(samp.mean(q1) - samp.mean(q2)))
        rhs = factor * np.max(np.abs(q1 - q2))
        assert lhs <= rhs * (1 + 1e-12)


def _lfa_fixture(n=10, gamma=0.9):
    mdp = random_mdp(5, 2, gamma, 1.0, seed=42)
    pi = Policy.random(5, 2, seed=7)
    pib = Policy.random(5, 2, seed=8)
    phi = make_rng(99).standard_normal((5, 3))
    cfg = LfaConfig(phi=phi, pi=pi, pi_b=pib, n=n, zeta=1.0)
    return make_offpolicy_td_sampler(cfg, mdp), mdp, cfg


def test_offpolicy_mean_map_and_fixed_point():
    samp, mdp, cfg = _lfa_fixture()
    rng = make_rng(30)
    v = rng.standard_normal(3)
    n = 200_000
    U = make_rng(31).random((n, samp.noise_width))
    F = samp.apply_batch(np.tile(v, (n, 1)), U)
    se = F.std(axis=0) / math.sqrt(n) + 1e-12
    assert np.all(np.abs(F.mean(axis=0) - samp.mean(v)) / se <= 4.0)
    vfix = samp.fixed_point()
    assert np.max(np.abs(samp.a_bar @ vfix + samp.b_bar)) <= 1e-10


def test_offpolicy_projected_fixed_point():
    samp, mdp, cfg = _lfa_fixture()
    P_pi = transition_matrix(mdp, cfg.pi)
    r_pi = policy_reward(mdp, cfg.pi)
    K = np.diag(samp.mu_b)
    proj = cfg.phi @ np.linalg.solve(cfg.phi.T @ K @ cfg.phi, cfg.phi.T @ K)
    v = samp.fixed_point()
    bell = sum(np.linalg.matrix_power(mdp.gamma * P_pi, l) @ r_pi for l in range(cfg.n))
    bell = bell + np.linalg.matrix_power(mdp.gamma * P_pi, cfg.n) @ (cfg.phi @ v)
    assert np.max(np.abs(cfg.phi @ v - proj @ bell)) <= 1e-8


def test_offpolicy_onpolicy_identity_features():
    mdp = random_mdp(4, 2, 0.8, 1.0, seed=50)
    pi = Policy.random(4, 2, seed=51)
    cfg = LfaConfig(phi=np.eye(4), pi=pi, pi_b=pi, n=3, zeta=2.0)
    samp = make_offpolicy_td_sampler(cfg, mdp)
    assert np.allclose(samp.fixed_point(), exact_value(mdp, pi), atol=1e-10)
    # on-policy ratios are identically 1
    assert np.allclose(samp._ratio[cfg.pi.probs > 0], 1.0)


def test_offpolicy_support_gate():
    mdp = random_mdp(3, 2, 0.8, 1.0, seed=52)
    pi = Policy(np.tile([0.5, 0.5], (3, 1)))
    pib = Policy(np.tile([1.0, 0.0], (3, 1)))
    with pytest.raises(UnsupportedBehavior):
        LfaConfig(phi=np.eye(3), pi=pi, pi_b=pib, n=2, zeta=1.0)


def test_hurwitz_check():
    ok, absc = hurwitz_check(-np.eye(3))
    assert ok and absc == pytest.approx(-1.0)
    ok0, absc0 = hurwitz_check(np.zeros((2, 2)))
    assert not ok0 and absc0 == 0.0


def test_lyapunov_contraction():
    res = lyapunov_contraction_norm(-np.eye(3), n_pairs=100, seed=1)
    assert np.allclose(res.weight, 0.5 * np.eye(3), atol=1e-12)
    assert res.zeta_star == 1.0 and res.ratio < 1e-12
    # symmetric negative definite case: sampled ratio below 1 at zeta_star
    rng = make_rng(53)
    B = rng.standard_normal((4, 4))
    A = -(B @ B.T) - 0.1 * np.eye(4)
    res2 = lyapunov_contraction_norm(A, n_pairs=1000, seed=2)
    assert res2.ratio < 1.0
    G = np.eye(4) + A / res2.zeta_star
    W = res2.weight
    D = make_rng(54).standard_normal((1000, 4))
    num = np.einsum("ij,jk,ik->i", D @ G.T, W, D @ G.T)
    den = np.einsum("ij,jk,ik->i", D, W, D)
    assert np.sqrt(np.max(num / den)) < 1.0
    with pytest.raises(NotHurwitz):
        lyapunov_contraction_norm(np.eye(2))


def test_mdp_save_load_roundtrip(tmp_path):
    mdp = random_mdp(4, 3, 0.77, 2.5, seed=60)
    path = tmp_path / "corpus.mdp"
    save_mdp(mdp, path)
    back = load_mdp(path)
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.rewards, mdp.rewards)
    assert back.gamma == mdp.gamma and back.r_max == mdp.r_max


def test_load_mdp_rejects_corrupted(tmp_path):
    mdp = random_mdp(3, 2, 0.9, 1.0, seed=61)
    path = tmp_path / "bad.mdp"
    save_mdp(mdp, path)
    text = path.read_text().splitlines()
    parts = text[1].split()
    parts[0] = f"{float(parts[0]) + 0.5:.17g}"  # break row stochasticity
    text[1] = " ".join(parts)
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ValueError, match="sum to 1"):
        load_mdp(path)
