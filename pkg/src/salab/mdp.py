"""Tabular MDP machinery: exact solvers, operator constants, and the
i.i.d. samplers that realize n-step TD, Q-learning, and off-policy TD
with linear features as stochastic operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_continuous_lyapunov, svdvals

from ._rng import categorical_from_uniform, make_rng, rows_categorical_from_uniform
from .bounds import (
    AdditiveNoiseConfig,
    BoundParams,
    additive_envelope,
    main_bound,
)
from .norms import NormSpec, norm
from .operators import AssumptionReport, StochasticOperator
from .schedules import StepSchedule


class ReducibleChain(ValueError):
    """The chain has no unique stationary distribution."""


class GreedyNotUnique(ValueError):
    """Q* has a tied best action somewhere; the linearity radius is zero."""


class NotContractive(ValueError):
    """The requested p-norm exponent is too small for a contraction."""


class NotHurwitz(ValueError):
    """The mean update matrix has an eigenvalue with non-negative real part."""


class UnsupportedBehavior(ValueError):
    """The behavior policy misses support where the target policy has mass."""


_STOCH_TOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP (S, A, P, R, gamma) with rewards in [0, r_max]."""

    transitions: np.ndarray  # (S, A, S), rows P(.|s,a) sum to 1
    rewards: np.ndarray      # (S, A) in [0, r_max]
    gamma: float
    r_max: float

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[:2] != R.shape:
            raise ValueError("transitions must be (S, A, S) matching rewards (S, A)")
        if P.shape[0] < 2 or P.shape[1] < 2:
            raise ValueError("need at least 2 states and 2 actions")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _STOCH_TOL):
            raise ValueError("transition rows must be non-negative and sum to 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if np.any(R < 0) or np.any(R > self.r_max):
            raise ValueError("rewards must lie in [0, r_max]")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass(frozen=True)
class Policy:
    """Row-stochastic action probabilities pi(a|s)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > _STOCH_TOL):
            raise ValueError("policy rows must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def random(cls, n_states: int, n_actions: int, seed: int) -> "Policy":
        rng = make_rng(seed, 0x504C)
        p = rng.dirichlet(np.ones(n_actions), size=n_states)
        p /= p.sum(axis=1, keepdims=True)
        return cls(p)


def transition_matrix(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """State chain P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", pi.probs, mdp.transitions)


def policy_reward(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    return np.einsum("sa,sa->s", pi.probs, mdp.rewards)


def stationary_distribution(P_pi: np.ndarray) -> np.ndarray:
    """Invariant distribution via a direct linear solve of the balance
    equations; requires a one-dimensional eigenvalue-1 left eigenspace."""
    P = np.asarray(P_pi, dtype=float)
    d = P.shape[0]
    eigvals = np.linalg.eigvals(P.T)
    if np.sum(np.abs(eigvals - 1.0) < 1e-9) != 1:
        raise ReducibleChain("the eigenvalue-1 left eigenspace is not one-dimensional")
    A = np.vstack([P.T - np.eye(d), np.ones(d)])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    resid = float(np.max(np.abs(mu @ P - mu)))
    if resid > 1e-12:
        raise ReducibleChain(f"balance-equation residual {resid:.2e} exceeds 1e-12")
    return mu


def stationary_by_power_iteration(P_pi: np.ndarray, iters: int = 200_000,
                                  tol: float = 1e-14) -> np.ndarray:
    """Slow cross-check oracle for stationary_distribution."""
    P = np.asarray(P_pi, dtype=float)
    mu = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(iters):
        nxt = 0.5 * (mu + mu @ P)  # damping handles periodic chains
        if np.max(np.abs(nxt - mu)) < tol:
            return nxt / nxt.sum()
        mu = nxt
    return mu / mu.sum()


def exact_value(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """Solve (I - gamma P_pi) V = r_pi directly."""
    P = transition_matrix(mdp, pi)
    r = policy_reward(mdp, pi)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P, r)
    resid = np.max(np.abs(r + mdp.gamma * P @ V - V))
    assert resid <= 1e-10, f"Bellman residual {resid:.2e}"
    return V


@dataclass(frozen=True)
class QStarResult:
    q: np.ndarray            # (S, A)
    greedy_gap: float        # min over states of best-vs-second-best margin
    residual: float
    iterations: int


def exact_qstar(mdp: TabularMdp, tol: float = 1e-10,
                gap_tol: float = 0.0) -> QStarResult:
    """Value iteration on Q to accuracy `tol`, with the greedy margin.

    Stops once the sup-norm update is below tol*(1-gamma)/(2*gamma), the
    standard rule certifying ||Q - Q*|| <= tol.  Raises GreedyNotUnique if
    the returned margin does not exceed gap_tol.
    """
    S, A = mdp.n_states, mdp.n_actions
    Q = np.zeros((S, A))
    if mdp.gamma == 0.0:
        Q = mdp.rewards.copy()
        iters = 1
    else:
        stop = tol * (1 - mdp.gamma) / (2 * mdp.gamma)
        iters = 0
        while True:
            iters += 1
            target = mdp.rewards + mdp.gamma * np.einsum(
                "sat,t->sa", mdp.transitions, Q.max(axis=1))
            diff = float(np.max(np.abs(target - Q)))
            Q = target
            if diff <= stop or iters > 10_000_000:
                break
    target = mdp.rewards + mdp.gamma * np.einsum(
        "sat,t->sa", mdp.transitions, Q.max(axis=1))
    residual = float(np.max(np.abs(target - Q)))
    sorted_q = np.sort(Q, axis=1)
    gap = float(np.min(sorted_q[:, -1] - sorted_q[:, -2]))
    if gap <= gap_tol:
        raise GreedyNotUnique(
            f"greedy margin {gap:.3e} is within tolerance {gap_tol:.3e}")
    return QStarResult(q=Q, greedy_gap=gap, residual=residual, iterations=iters)


# ---------------------------------------------------------------------------
# n-step TD operator constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TdOperatorReport:
    """Matrices and constants of the mean n-step TD operator.

    a_pi V + b_pi is the mean map; c_pi = a_pi + b_mat is row-stochastic and
    its stationary distribution nu_pi weights the contraction norm, with
    contraction factor gamma_c(p) = (1 - (1-gamma^n) mu_min)^(1 - 1/p).
    """

    a_pi: np.ndarray
    b_pi: np.ndarray
    b_mat: np.ndarray
    c_pi: np.ndarray
    nu_pi: np.ndarray
    mu_pi: np.ndarray
    gamma: float
    n: int
    fixed_point: np.ndarray

    @property
    def mu_min(self) -> float:
        return float(np.min(self.mu_pi))

    def gamma_c(self, p: float) -> float:
        base = 1 - (1 - self.gamma ** self.n) * self.mu_min
        return base ** (1 - 1 / p)

    def contraction_norm(self, p: float) -> NormSpec:
        return NormSpec.weighted(p, self.nu_pi)

    def p_star(self, k: int) -> float:
        return p_schedule(k, self.gamma, self.n, self.mu_min, len(self.mu_pi))


def td_operator_report(mdp: TabularMdp, pi: Policy, n: int,
                       p: float = 2.0) -> TdOperatorReport:
    """Construct the mean-operator matrices for n-step TD under pi."""
    if p < 2:
        raise ValueError("p must be >= 2")
    S = mdp.n_states
    P_pi = transition_matrix(mdp, pi)
    r_pi = policy_reward(mdp, pi)
    mu_pi = stationary_distribution(P_pi)
    M = np.diag(mu_pi)
    Pn = np.linalg.matrix_power(P_pi, n)
    a_pi = np.eye(S) - M @ (np.eye(S) - mdp.gamma ** n * Pn)
    multi_r = sum(mdp.gamma ** i * np.linalg.matrix_power(P_pi, i) @ r_pi
                  for i in range(n))
    b_pi = M @ multi_r
    b_mat = np.outer((1 - mdp.gamma ** n) * mu_pi, np.ones(S) / S)
    c_pi = a_pi + b_mat
    nu_pi = stationary_distribution(c_pi)
    v_pi = exact_value(mdp, pi)
    resid = np.max(np.abs(a_pi @ v_pi + b_pi - v_pi))
    assert resid <= 1e-9, f"mean-map fixed point mismatch {resid:.2e}"
    return TdOperatorReport(a_pi=a_pi, b_pi=b_pi, b_mat=b_mat, c_pi=c_pi,
                            nu_pi=nu_pi, mu_pi=mu_pi, gamma=mdp.gamma, n=n,
                            fixed_point=v_pi)


def p_schedule(k: int, gamma: float, n: int, mu_min: float,
               n_states: int) -> float:
    """Norm exponent grown as (k+1)^(1/4), floored at 2."""
    x = (1 - gamma ** n) * mu_min
    coef = (-4 * math.log(1 - x) / x) * math.log(n_states / (mu_min * (1 - gamma ** n)))
    return max(2.0, coef * (k + 1) ** 0.25)


def q_p_min(gamma: float, rho_b: float, n_states: int, n_actions: int) -> float:
    """Smallest exponent above which the Q-learning mean map contracts in p-norm."""
    return math.log(n_states * n_actions) / math.log(1 / (1 - (1 - gamma) * rho_b))


def q_contraction_factor(gamma: float, rho_b: float, n_states: int,
                         n_actions: int, p: float) -> float:
    """(SA)^(1/p) (1 - (1-gamma) rho_b); requires p above the threshold."""
    pmin = q_p_min(gamma, rho_b, n_states, n_actions)
    if p <= pmin:
        raise NotContractive(f"p={p:g} is not above the threshold {pmin:.6g}")
    return (n_states * n_actions) ** (1 / p) * (1 - (1 - gamma) * rho_b)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


class TdSampler(StochasticOperator):
    """i.i.d.-sample n-step TD over value tables.

    One draw starts at a stationary state and runs an independent n-step
    trajectory; only the start state's entry is updated, by the discounted
    sum of the n temporal-difference errors.
    """

    def __init__(self, mdp: TabularMdp, pi: Policy, n: int):
        self.mdp = mdp
        self.pi = pi
        self.n = int(n)
        self.dim = mdp.n_states
        self.noise_width = 1 + 2 * self.n
        P_pi = transition_matrix(mdp, pi)
        self.mu_pi = stationary_distribution(P_pi)
        self._cum_mu = np.cumsum(self.mu_pi)
        self._cum_pi = np.cumsum(pi.probs, axis=1)
        self._cum_P = np.cumsum(mdp.transitions, axis=2)
        S = mdp.n_states
        M = np.diag(self.mu_pi)
        Pn = np.linalg.matrix_power(P_pi, self.n)
        self.a_pi = np.eye(S) - M @ (np.eye(S) - mdp.gamma ** self.n * Pn)
        self.b_pi = M @ sum(
            mdp.gamma ** i * np.linalg.matrix_power(P_pi, i) @ policy_reward(mdp, pi)
            for i in range(self.n))
        self._v_pi = exact_value(mdp, pi)
        self.report = AssumptionReport(curvature_n=0.0, radius_r=np.inf)

    def fixed_point(self):
        return self._v_pi.copy()

    def mean(self, x):
        return self.a_pi @ np.asarray(x, dtype=float) + self.b_pi

    def apply(self, x, u):
        return self.apply_batch(x[None, :], np.asarray(u)[None, :])[0]

    def apply_batch(self, X, U):
        R = X.shape[0]
        rows = np.arange(R)
        s0 = categorical_from_uniform(self._cum_mu, U[:, 0])
        s = s0
        G = np.zeros(R)
        disc = 1.0
        gamma = self.mdp.gamma
        for i in range(self.n):
            a = rows_categorical_from_uniform(self._cum_pi[s], U[:, 1 + 2 * i])
            s_next = rows_categorical_from_uniform(self._cum_P[s, a], U[:, 2 + 2 * i])
            G += disc * (self.mdp.rewards[s, a] + gamma * X[rows, s_next] - X[rows, s])
            s = s_next
            disc *= gamma
        out = X.copy()
        out[rows, s0] += G
        return out

    def jacobian_at_fixed_point(self, rng):
        u = rng.random(self.noise_width)
        s0 = int(categorical_from_uniform(self._cum_mu, u[0]))
        s = s0
        for i in range(self.n):
            a = int(categorical_from_uniform(self._cum_pi[s], u[1 + 2 * i]))
            s = int(categorical_from_uniform(self._cum_P[s, a], u[2 + 2 * i]))
        J = np.eye(self.dim)
        J[s0, s0] -= 1.0
        J[s0, s] += self.mdp.gamma ** self.n
        return J


def make_td_sampler(mdp: TabularMdp, pi: Policy, n: int) -> TdSampler:
    return TdSampler(mdp, pi, n)


class QSampler(StochasticOperator):
    """i.i.d.-sample Q-learning over flattened Q tables (index s*A + a)."""

    def __init__(self, mdp: TabularMdp, pi_b: Policy):
        self.mdp = mdp
        self.pi_b = pi_b
        S, A = mdp.n_states, mdp.n_actions
        self.dim = S * A
        self.noise_width = 3
        self.mu_b = stationary_distribution(transition_matrix(mdp, pi_b))
        self._cum_mu = np.cumsum(self.mu_b)
        self._cum_pi = np.cumsum(pi_b.probs, axis=1)
        self._cum_P = np.cumsum(mdp.transitions, axis=2)
        self.rho_b = float(np.min(self.mu_b[:, None] * pi_b.probs))
        self.visit_mass = self.mu_b[:, None] * pi_b.probs  # (S, A)
        self.qstar = exact_qstar(mdp)
        self.report = AssumptionReport(
            gamma_c=1 - (1 - mdp.gamma) * self.rho_b,
            curvature_n=0.0,
            radius_r=self.qstar.greedy_gap / (2 * (1 + mdp.gamma)),
        )

    def fixed_point(self):
        return self.qstar.q.reshape(-1).copy()

    def mean(self, x):
        S, A = self.mdp.n_states, self.mdp.n_actions
        Q = np.asarray(x, dtype=float).reshape(S, A)
        target = self.mdp.rewards + self.mdp.gamma * np.einsum(
            "sat,t->sa", self.mdp.transitions, Q.max(axis=1))
        return (Q + self.visit_mass * (target - Q)).reshape(-1)

    def apply(self, x, u):
        return self.apply_batch(x[None, :], np.asarray(u)[None, :])[0]

    def apply_batch(self, X, U):
        S, A = self.mdp.n_states, self.mdp.n_actions
        R = X.shape[0]
        rows = np.arange(R)
        s = categorical_from_uniform(self._cum_mu, U[:, 0])
        a = rows_categorical_from_uniform(self._cum_pi[s], U[:, 1])
        s2 = rows_categorical_from_uniform(self._cum_P[s, a], U[:, 2])
        vmax = X.reshape(R, S, A).max(axis=2)  # (R, S)
        idx = s * A + a
        out = X.copy()
        out[rows, idx] += (self.mdp.rewards[s, a]
                           + self.mdp.gamma * vmax[rows, s2] - X[rows, idx])
        return out

    def jacobian_at_fixed_point(self, rng):
        """Realization at Q*: uses the (unique) greedy action at S'."""
        u = rng.random(3)
        s = int(categorical_from_uniform(self._cum_mu, u[0]))
        a = int(categorical_from_uniform(self._cum_pi[s], u[1]))
        s2 = int(categorical_from_uniform(self._cum_P[s, a], u[2]))
        A = self.mdp.n_actions
        astar = int(np.argmax(self.qstar.q[s2]))
        J = np.eye(self.dim)
        idx = s * A + a
        J[idx, idx] -= 1.0
        J[idx, s2 * A + astar] += self.mdp.gamma
        return J


def make_q_sampler(mdp: TabularMdp, pi_b: Policy) -> QSampler:
    return QSampler(mdp, pi_b)


@dataclass(frozen=True)
class LfaConfig:
    """Linear-feature TD configuration: features, policies, lookback, scaling."""

    phi: np.ndarray          # (S, d), full column rank
    pi: Policy               # target policy
    pi_b: Policy             # behavior policy
    n: int
    zeta: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        object.__setattr__(self, "phi", phi)
        s = svdvals(phi)
        if s[-1] <= 1e-10 * max(s[0], 1.0):
            raise ValueError("feature matrix must have full column rank")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        lacks = (self.pi.probs > 0) & (self.pi_b.probs == 0)
        if np.any(lacks):
            raise UnsupportedBehavior(
                "behavior policy has zero mass where the target policy has support")


class OffPolicyTdSampler(StochasticOperator):
    """Importance-weighted n-step TD over feature weights.

    The 1/zeta scaling is folded into the operator so the mean map is
    v -> v + (A_bar v + b_bar)/zeta, a contraction in the Lyapunov norm for
    zeta large enough.
    """

    def __init__(self, cfg: LfaConfig, mdp: TabularMdp):
        self.cfg = cfg
        self.mdp = mdp
        self.dim = cfg.phi.shape[1]
        self.n = cfg.n
        self.noise_width = 1 + 2 * cfg.n
        P_b = transition_matrix(mdp, cfg.pi_b)
        self.mu_b = stationary_distribution(P_b)
        self._cum_mu = np.cumsum(self.mu_b)
        self._cum_pi_b = np.cumsum(cfg.pi_b.probs, axis=1)
        self._cum_P = np.cumsum(mdp.transitions, axis=2)
        self._ratio = np.zeros_like(cfg.pi.probs)
        mask = cfg.pi_b.probs > 0
        self._ratio[mask] = cfg.pi.probs[mask] / cfg.pi_b.probs[mask]

        P_pi = transition_matrix(mdp, cfg.pi)
        r_pi = policy_reward(mdp, cfg.pi)
        K = np.diag(self.mu_b)
        G = mdp.gamma * P_pi
        Gn = np.linalg.matrix_power(G, cfg.n)
        self.a_bar = cfg.phi.T @ K @ (Gn - np.eye(mdp.n_states)) @ cfg.phi
        self.b_bar = cfg.phi.T @ K @ sum(
            np.linalg.matrix_power(G, l) @ r_pi for l in range(cfg.n))
        self._v_fix = np.linalg.solve(self.a_bar, -self.b_bar)
        self.report = AssumptionReport(curvature_n=0.0, radius_r=np.inf)

    def fixed_point(self):
        return self._v_fix.copy()

    def mean(self, x):
        v = np.asarray(x, dtype=float)
        return v + (self.a_bar @ v + self.b_bar) / self.cfg.zeta

    def apply(self, x, u):
        return self.apply_batch(x[None, :], np.asarray(u)[None, :])[0]

    def apply_batch(self, X, U):
        R = X.shape[0]
        phi = self.cfg.phi
        gamma = self.mdp.gamma
        s0 = categorical_from_uniform(self._cum_mu, U[:, 0])
        s = s0
        ratio = np.ones(R)
        disc = 1.0
        upd = np.zeros(R)
        feat_dot = X @ phi.T  # (R, S): phi(s)^T v per state
        rows = np.arange(R)
        for l in range(self.n):
            a = rows_categorical_from_uniform(self._cum_pi_b[s], U[:, 1 + 2 * l])
            s_next = rows_categorical_from_uniform(self._cum_P[s, a], U[:, 2 + 2 * l])
            ratio = ratio * self._ratio[s, a]
            td = (self.mdp.rewards[s, a]
                  + gamma * feat_dot[rows, s_next] - feat_dot[rows, s])
            upd += disc * ratio * td
            s = s_next
            disc *= gamma
        return X + (upd[:, None] * phi[s0]) / self.cfg.zeta


def make_offpolicy_td_sampler(cfg: LfaConfig, mdp: TabularMdp) -> OffPolicyTdSampler:
    return OffPolicyTdSampler(cfg, mdp)


# ---------------------------------------------------------------------------
# Hurwitz / Lyapunov analysis for the off-policy mean map
# ---------------------------------------------------------------------------


def hurwitz_check(a_bar: np.ndarray) -> tuple[bool, float]:
    """(all eigenvalues in the open left half-plane, spectral abscissa)."""
    abscissa = float(np.max(np.real(np.linalg.eigvals(np.asarray(a_bar, dtype=float)))))
    return abscissa < 0.0, abscissa


@dataclass(frozen=True)
class LyapunovContraction:
    weight: np.ndarray   # W > 0 solving A^T W + W A = -I
    zeta_star: float
    ratio: float         # sampled contraction ratio at zeta_star


def lyapunov_contraction_norm(a_bar: np.ndarray, n_pairs: int = 1000,
                              seed: int = 0, max_doublings: int = 60) -> LyapunovContraction:
    """Weighted 2-norm in which v -> v + A v / zeta contracts.

    W solves the continuous Lyapunov equation; zeta_star is found by a
    doubling search as the least tested zeta whose sampled contraction
    ratio over random pairs is below 1.
    """
    A = np.asarray(a_bar, dtype=float)
    ok, absc = hurwitz_check(A)
    if not ok:
        raise NotHurwitz(f"spectral abscissa {absc:.3e} is not negative")
    d = A.shape[0]
    W = solve_continuous_lyapunov(A.T, -np.eye(d))
    W = 0.5 * (W + W.T)
    rng = make_rng(seed, 0x4C59)
    D = rng.standard_normal((n_pairs, d))  # difference vectors of random pairs

    def sampled_ratio(zeta: float) -> float:
        G = np.eye(d) + A / zeta
        num = np.einsum("ij,jk,ik->i", D @ G.T, W, D @ G.T)
        den = np.einsum("ij,jk,ik->i", D, W, D)
        return float(np.sqrt(np.max(num / den)))

    zeta = 1.0
    for _ in range(max_doublings):
        r = sampled_ratio(zeta)
        if r < 1.0:
            return LyapunovContraction(weight=W, zeta_star=zeta, ratio=r)
        zeta *= 2.0
    raise NotHurwitz("no tested zeta produced a sampled contraction ratio below 1")


# ---------------------------------------------------------------------------
# Random instances and the plain-text corpus format
# ---------------------------------------------------------------------------


def random_mdp(n_states: int, n_actions: int, gamma: float, r_max: float,
               seed: int) -> TabularMdp:
    """Dirichlet(1) transition rows and uniform rewards; fully seeded."""
    rng = make_rng(seed, 0x4D44)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.random((n_states, n_actions)) * r_max
    return TabularMdp(transitions=P, rewards=R, gamma=gamma, r_max=r_max)


def save_mdp(mdp: TabularMdp, path) -> None:
    """Plain-text format: header (|S| |A| gamma r_max), then the transition
    table row-major by (s, a), then the reward table, 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(f"{mdp.n_states} {mdp.n_actions} {mdp.gamma:.17g} {mdp.r_max:.17g}\n")
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                fh.write(" ".join(f"{v:.17g}" for v in mdp.transitions[s, a]) + "\n")
        for s in range(mdp.n_states):
            fh.write(" ".join(f"{v:.17g}" for v in mdp.rewards[s]) + "\n")


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 4:
        raise ValueError(f"{path}: truncated MDP file")
    S, A = int(tokens[0]), int(tokens[1])
    gamma, r_max = float(tokens[2]), float(tokens[3])
    need = 4 + S * A * S + S * A
    if len(tokens) != need:
        raise ValueError(f"{path}: expected {need} tokens, found {len(tokens)}")
    vals = np.array([float(t) for t in tokens[4:]])
    P = vals[: S * A * S].reshape(S, A, S)
    R = vals[S * A * S:].reshape(S, A)
    return TabularMdp(transitions=P, rewards=R, gamma=gamma, r_max=r_max)


# ---------------------------------------------------------------------------
# Bound parameterizations for the RL instances
# ---------------------------------------------------------------------------


def _max_jacobian_gain(deltas: list[np.ndarray], l_c2: float) -> float:
    """Conservative Jacobian-noise proxy via euclidean chaining.

    <Delta u, v> <= ||Delta||_2 ||u||_2 ||v||_2 <= (||Delta||_2 / l_c2^2)
    ||u||_c ||v||_c, maximized over the finite realization support.
    """
    worst = max((float(svdvals(D)[0]) if np.any(D) else 0.0) for D in deltas)
    return worst / l_c2 ** 2


def td_bound_setup(mdp: TabularMdp, pi: Policy, n: int, schedule: StepSchedule,
                   k: int, x0: np.ndarray, p: float | None = None,
                   mu: float = 1.0) -> dict:
    """Everything needed to evaluate the averaged bound for n-step TD at k.

    Chooses the norm exponent from the p-schedule, certifies the Assumption
    constants for the weighted p-norm, builds the bounded-noise additive
    envelope, and returns the sup-norm conversion factor.
    """
    rep = td_operator_report(mdp, pi, n)
    p = p if p is not None else rep.p_star(k)
    gamma_c = rep.gamma_c(p)
    spec = rep.contraction_norm(p)
    nu_min = float(np.min(rep.nu_pi))
    S = mdp.n_states
    B = mdp.r_max / (1 - mdp.gamma)

    # Jacobian realizations depend only on (start state, n-th state)
    deltas = []
    for s0 in range(S):
        for sn in range(S):
            Jw = np.eye(S)
            Jw[s0, s0] -= 1.0
            Jw[s0, sn] += mdp.gamma ** n
            deltas.append(rep.a_pi - Jw)
    l_c2 = nu_min ** (1 / p) * S ** (1 / p - 0.5)
    sigma_hat_sq = _max_jacobian_gain(deltas, l_c2) ** 2

    params = BoundParams(
        nu=1 - gamma_c,
        smoothness=p - 1,
        curvature=0.0,
        radius=np.inf,
        sigma_bar_sq=B ** 2 / nu_min ** (2 / p),
        sigma_hat_sq=sigma_hat_sq,
        u_c2=1.0,
        dim=S,
        schedule=schedule,
    )
    x0_err = norm(spec, np.asarray(x0, dtype=float) - rep.fixed_point)
    # uniform noise: |noise_s| <= B (1{s=start} + mu(s)), so the c-norm stays
    # below 2*sqrt(2)*B for every p >= 2 and the dimension constant is 1
    cfg = AdditiveNoiseConfig(
        sigma_sq=8 * B ** 2,
        gamma_c=gamma_c,
        mu=mu,
        c_d=1.0,
        x0_err_sq=x0_err ** 2,
        l_smooth=p - 1,
    )
    envelope = additive_envelope(cfg, schedule)
    return {
        "report": rep,
        "p": p,
        "norm": spec,
        "params": params,
        "envelope": envelope,
        "config": cfg,
        "sup_conversion": nu_min ** (-2 / p),
    }


def td_error_bound(mdp: TabularMdp, pi: Policy, n: int,
                     schedule: StepSchedule, x0) -> Callable[[int, float], float]:
    """Sup-norm bound function (k, delta) -> leading + higher-order value."""

    def bound(k: int, delta: float) -> float:
        setup = td_bound_setup(mdp, pi, n, schedule, k, x0)
        core = main_bound(setup["params"], setup["envelope"], delta, k)
        return setup["sup_conversion"] * core

    return bound


def q_bound_setup(mdp: TabularMdp, pi_b: Policy, schedule: StepSchedule,
                  k: int, x0: np.ndarray, p: float | None = None,
                  mu: float = 1.0) -> dict:
    """Bound parameterization for Q-learning in the unweighted p-norm."""
    sampler = QSampler(mdp, pi_b)
    S, A = mdp.n_states, mdp.n_actions
    pmin = q_p_min(mdp.gamma, sampler.rho_b, S, A)
    p = p if p is not None else max(2.0, pmin * (k + 1) ** 0.25)
    gamma_c = q_contraction_factor(mdp.gamma, sampler.rho_b, S, A, p)
    spec = NormSpec.weighted(p, np.ones(S * A))
    B = mdp.r_max / (1 - mdp.gamma)
    qstar = sampler.qstar

    deltas = []
    jbar = _q_mean_jacobian(mdp, sampler.visit_mass, qstar.q)
    for s in range(S):
        for a in range(A):
            for s2 in range(S):
                if mdp.transitions[s, a, s2] == 0:
                    continue
                Jw = np.eye(S * A)
                idx = s * A + a
                Jw[idx, idx] -= 1.0
                Jw[idx, s2 * A + int(np.argmax(qstar.q[s2]))] += mdp.gamma
                deltas.append(jbar - Jw)
    l_c2 = (S * A) ** (1 / p - 0.5)
    sigma_hat_sq = _max_jacobian_gain(deltas, l_c2) ** 2

    params = BoundParams(
        nu=1 - gamma_c,
        smoothness=p - 1,
        curvature=0.0,
        radius=qstar.greedy_gap / (2 * (1 + mdp.gamma)),
        sigma_bar_sq=4 * B ** 2,
        sigma_hat_sq=sigma_hat_sq,
        u_c2=1.0,
        dim=S * A,
        schedule=schedule,
    )
    x0_err = norm(spec, np.asarray(x0, dtype=float) - qstar.q.reshape(-1))
    # |noise_e| <= B (1{e=visited} + visit_mass_e) bounds the p-norm by 2*sqrt(2)*B
    cfg = AdditiveNoiseConfig(
        sigma_sq=8 * B ** 2,
        gamma_c=gamma_c,
        mu=mu,
        c_d=1.0,
        x0_err_sq=x0_err ** 2,
        l_smooth=p - 1,
    )
    envelope = additive_envelope(cfg, schedule)
    return {
        "sampler": sampler,
        "p": p,
        "norm": spec,
        "params": params,
        "envelope": envelope,
        "config": cfg,
        "sup_conversion": 1.0,
    }


def _q_mean_jacobian(mdp: TabularMdp, visit_mass: np.ndarray,
                     qstar: np.ndarray) -> np.ndarray:
    """Jacobian of the mean Q map at Q*, using the unique greedy action."""
    S, A = mdp.n_states, mdp.n_actions
    J = np.eye(S * A)
    astar = np.argmax(qstar, axis=1)
    for s in range(S):
        for a in range(A):
            idx = s * A + a
            J[idx, idx] -= visit_mass[s, a]
            for s2 in range(S):
                J[idx, s2 * A + astar[s2]] += (
                    visit_mass[s, a] * mdp.gamma * mdp.transitions[s, a, s2])
    return J


def q_error_bound(mdp: TabularMdp, pi_b: Policy, schedule: StepSchedule,
                    x0) -> Callable[[int, float], float]:
    """Sup-norm bound function (k, delta) for averaged Q-learning."""

    def bound(k: int, delta: float) -> float:
        setup = q_bound_setup(mdp, pi_b, schedule, k, x0)
        return main_bound(setup["params"], setup["envelope"], delta, k)

    return bound
