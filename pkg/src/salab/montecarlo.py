"""Seeded ensembles and the empirical side of the bound verification:
quantiles with order-statistic intervals, exceedance coverage tests, the
tightness comparison, the truncated-MGF divergence probe, and survival
diagnostics separating polynomial from exponential tails.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr
from scipy.stats import beta as beta_dist
from scipy.stats import binom

from ._rng import make_rng
from .bounds import averaged_leading_term
from .norms import NormSpec, norm_rows
from .operators import StochasticOperator
from .schedules import StepSchedule


class DegenerateSample(ValueError):
    """Tail diagnostics are undefined for (near-)constant samples."""


@dataclass(frozen=True)
class Experiment:
    """Everything one replication needs, immutable after construction."""

    op: StochasticOperator
    schedule: StepSchedule
    x0: np.ndarray
    horizon: int
    checkpoints: tuple[int, ...]
    norm: NormSpec

    def __post_init__(self):
        cps = tuple(sorted(set(int(c) for c in self.checkpoints)))
        if cps and (cps[0] < 0 or cps[-1] > self.horizon):
            raise ValueError("checkpoints must lie in [0, horizon]")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))


@dataclass(frozen=True)
class ErrorEnsemble:
    """Per-checkpoint squared errors across the surviving replications."""

    checkpoints: tuple[int, ...]
    err_x: np.ndarray  # (n_checkpoints, n_reps - divergence_count)
    err_y: np.ndarray
    n_reps: int
    divergence_count: int
    base_seed: int

    def at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        i = self.checkpoints.index(k)
        return self.err_x[i], self.err_y[i]


def _run_block(experiment: Experiment, base_seed: int, rep_lo: int, rep_hi: int,
               window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized lockstep run of replicates [rep_lo, rep_hi).

    Each replicate consumes its own Philox stream keyed (base_seed, r), with
    noise pre-drawn in step-ordered windows, so results are bit-identical to
    running the scalar engine once per replicate.
    """
    op, sched = experiment.op, experiment.schedule
    R = rep_hi - rep_lo
    m = op.noise_width
    gens = [make_rng(base_seed, r) for r in range(rep_lo, rep_hi)]
    X = np.tile(experiment.x0, (R, 1))
    Y = X.copy()
    xstar = op.fixed_point()
    cps = experiment.checkpoints
    n_cp = len(cps)
    err_x = np.empty((n_cp, R))
    err_y = np.empty((n_cp, R))
    alive = np.ones(R, dtype=bool)

    cp_iter = iter(enumerate(cps))
    next_cp = next(cp_iter, None)

    def record(slot):
        err_x[slot] = norm_rows(experiment.norm, X - xstar) ** 2
        err_y[slot] = norm_rows(experiment.norm, Y - xstar) ** 2

    if next_cp is not None and next_cp[1] == 0:
        record(next_cp[0])
        next_cp = next(cp_iter, None)

    k = 0
    while k < experiment.horizon:
        w = min(window, experiment.horizon - k)
        U = np.empty((R, w, m))
        for r, g in enumerate(gens):
            U[r] = g.random((w, m))
        for t in range(w):
            a = sched.step(k)
            X = (1.0 - a) * X + a * op.apply_batch(X, U[:, t, :])
            k += 1
            Y += (X - Y) / (k + 1)
            if next_cp is not None and next_cp[1] == k:
                record(next_cp[0])
                next_cp = next(cp_iter, None)
        alive &= np.isfinite(X).all(axis=1)
    if n_cp:
        alive &= np.isfinite(err_x).all(axis=0) & np.isfinite(err_y).all(axis=0)
    return err_x, err_y, alive


def run_ensemble(experiment: Experiment, n_reps: int, base_seed: int,
                 window: int = 128, parallel: int | None = None) -> ErrorEnsemble:
    """Run seeded replications and merge them in replicate order.

    Replicate r always uses the stream keyed (base_seed, r); the parallel
    degree only shards work and cannot change any output.  Divergent
    replications are dropped from the samples and counted.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    jobs = max(1, int(parallel or 1))
    bounds = np.linspace(0, n_reps, min(jobs, n_reps) + 1).astype(int)
    ranges = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    if len(ranges) == 1:
        results = [_run_block(experiment, base_seed, *ranges[0], window)]
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            futures = [pool.submit(_run_block, experiment, base_seed, lo, hi, window)
                       for lo, hi in ranges]
            results = [f.result() for f in futures]

    err_x = np.hstack([r[0] for r in results])
    err_y = np.hstack([r[1] for r in results])
    alive = np.hstack([r[2] for r in results])
    return ErrorEnsemble(
        checkpoints=experiment.checkpoints,
        err_x=err_x[:, alive],
        err_y=err_y[:, alive],
        n_reps=n_reps,
        divergence_count=int(np.sum(~alive)),
        base_seed=base_seed,
    )


# ---------------------------------------------------------------------------
# Quantiles and coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantileEstimate:
    value: float
    ci_lo: float
    ci_hi: float
    level: float
    n: int


def empirical_quantile(samples, q: float, ci_level: float = 0.99) -> QuantileEstimate:
    """Inverse empirical CDF (lower semicontinuous order statistic).

    The interval brackets the true quantile by order statistics at the
    two-sided binomial level `ci_level`.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    idx = max(math.ceil(q * n) - 1, 0)
    tail = (1 - ci_level) / 2
    lo_rank = int(binom.ppf(tail, n, q))          # P(B <= lo_rank - 1) < tail
    hi_rank = int(binom.ppf(1 - tail, n, q)) + 1  # P(B <= hi_rank - 1) >= 1 - tail
    ci_lo = x[min(max(lo_rank - 1, 0), n - 1)]
    ci_hi = x[min(max(hi_rank - 1, 0), n - 1)]
    return QuantileEstimate(float(x[idx]), float(ci_lo), float(ci_hi), q, n)


@dataclass(frozen=True)
class CoverageVerdict:
    """Exceedance count against a bound, with a one-sided 99% upper limit
    on the true exceedance probability (Clopper-Pearson)."""

    checkpoint: int
    delta: float
    exceed_count: int
    n: int
    binomial_upper_ci: float
    slack: float
    passed: bool


def clopper_pearson_upper(count: int, n: int, confidence: float = 0.99) -> float:
    if count >= n:
        return 1.0
    return float(beta_dist.ppf(confidence, count + 1, n - count))


def coverage_test(ensemble: ErrorEnsemble, bound_fn: Callable[[int, float], float],
                  delta: float, slack: float = 1.0) -> list[CoverageVerdict]:
    """Count replications with err_y above the bound at each checkpoint.

    Divergent replications count as exceedances (conservative for the bound
    under test).  A verdict passes when the 99% upper confidence limit on
    the exceedance probability is at most delta * slack.
    """
    verdicts = []
    for i, k in enumerate(ensemble.checkpoints):
        b = float(bound_fn(k, delta))
        exceed = int(np.sum(ensemble.err_y[i] > b)) + ensemble.divergence_count
        upper = clopper_pearson_upper(exceed, ensemble.n_reps)
        verdicts.append(CoverageVerdict(
            checkpoint=k, delta=delta, exceed_count=exceed, n=ensemble.n_reps,
            binomial_upper_ci=upper, slack=slack, passed=upper <= delta * slack,
        ))
    return verdicts


@dataclass(frozen=True)
class TightnessReport:
    """Empirical vs exact vs leading-term comparison for the tied-Gaussian
    pure-noise construction started at the fixed point."""

    k: int
    delta: float
    empirical: float        # (1-delta)-quantile of the error norm
    empirical_ci: tuple[float, float]
    exact: float            # sigma_bar sqrt(k log(1/delta)) / (k+1)
    leading: float          # large-k leading coefficient of the bound
    ratio_empirical_exact: float
    ratio_leading_exact: float
    predicted_factor: float = 2.0 * math.sqrt(6.0)


def tightness_check(ensemble: ErrorEnsemble, delta: float, k: int,
                    sigma_bar: float = 1.0) -> TightnessReport:
    _, err_y = ensemble.at(k)
    qe = empirical_quantile(err_y, 1 - delta)
    emp = math.sqrt(qe.value)
    exact = sigma_bar * math.sqrt(k * math.log(1 / delta)) / (k + 1)
    lead = averaged_leading_term(sigma_bar, delta, k)
    return TightnessReport(
        k=k, delta=delta, empirical=emp,
        empirical_ci=(math.sqrt(qe.ci_lo), math.sqrt(qe.ci_hi)),
        exact=exact, leading=lead,
        ratio_empirical_exact=emp / exact,
        ratio_leading_exact=lead / exact,
    )


# ---------------------------------------------------------------------------
# Heavy-tail probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MgfDivergenceReport:
    """Truncated moment generating function of the two-factor product term.

    Values are conditional expectations E[exp(t c w1 w2) | |w1|,|w2| <= r]
    on an increasing radius grid; below the critical t they stabilize and
    above it they grow without an apparent ceiling.
    """

    t: float
    t_critical: float
    radii: tuple[float, ...]
    values: tuple[float, ...]
    last_ratio: float       # values[-1] / values[-2]
    growth_factor: float    # values[-1] / values[0]
    convergent: bool


def truncated_mgf_divergence(t: float, radii, x0: float = 1.0,
                             alpha0: float = 0.25, alpha1: float = 0.25,
                             k: int = 2, nodes: int = 240) -> MgfDivergenceReport:
    """Quadrature probe of E[exp(t x0 a0 a1 w1 w2/(k+1))] under truncation.

    The exact expectation is finite only for t below (k+1)/(x0 a0 a1); the
    report exposes how the truncated integrals behave on both sides.
    """
    radii = tuple(float(r) for r in radii)
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be an increasing list of length >= 2")
    c = x0 * alpha0 * alpha1 / (k + 1)
    t_critical = 1.0 / c
    z, wts = leggauss(nodes)
    values = []
    for r in radii:
        x = z * r
        w = wts * r
        pdf = np.exp(-0.5 * x ** 2) / math.sqrt(2 * math.pi)
        g = w * pdf
        # E[exp(t c w1 w2); box] = g^T exp(t c x x^T) g by separability
        kernel = np.exp(t * c * np.outer(x, x))
        raw = float(g @ kernel @ g)
        mass = (ndtr(r) - ndtr(-r)) ** 2
        values.append(raw / mass)
    values = tuple(values)
    last_ratio = values[-1] / values[-2]
    return MgfDivergenceReport(
        t=t, t_critical=t_critical, radii=radii, values=values,
        last_ratio=last_ratio, growth_factor=values[-1] / values[0],
        convergent=last_ratio < 1.01,
    )


@dataclass(frozen=True)
class TailDiagnostics:
    hill_indices: dict = field(repr=False)
    hill_stable: bool
    exp_slope: float
    exp_residual: float
    poly_slope: float
    poly_residual: float
    verdict: str  # polynomial-tail-consistent | exponential-tail-consistent


def tail_diagnostics(samples, top_fraction: float = 0.1,
                     hill_fractions=(0.01, 0.02, 0.05)) -> TailDiagnostics:
    """Classify the sample tail as polynomial- or exponential-consistent.

    Hill estimates over several top-order fractions give the index and a
    stability flag; the verdict comes from which of the two log-survival
    regressions (against x, against log x) fits the upper tail better.
    """
    x = np.asarray(samples, dtype=float)
    x = np.sort(x[np.isfinite(x) & (x > 0)])
    n = len(x)
    if n < 100:
        raise DegenerateSample(f"need at least 100 positive samples, got {n}")
    if x[-1] <= x[0] * (1 + 1e-12):
        raise DegenerateSample("samples are (numerically) constant")

    hill = {}
    for frac in hill_fractions:
        m = max(10, int(frac * n))
        top = np.log(x[n - m:])
        ref = math.log(x[n - m - 1])
        gamma_hat = float(np.mean(top) - ref)
        hill[frac] = 1.0 / gamma_hat if gamma_hat > 0 else math.inf
    vals = np.array([v for v in hill.values() if math.isfinite(v)])
    hill_stable = (len(vals) == len(hill)
                   and float(np.max(vals) - np.min(vals)) < 0.25 * float(np.mean(vals)))

    m_t = max(50, int(top_fraction * n))
    tail = x[n - m_t:]
    surv = 1.0 - (np.arange(n - m_t, n) + 0.5) / n
    y = np.log(surv)
    exp_fit = np.polyfit(tail, y, 1)
    exp_resid = float(np.mean((np.polyval(exp_fit, tail) - y) ** 2))
    lx = np.log(tail)
    poly_fit = np.polyfit(lx, y, 1)
    poly_resid = float(np.mean((np.polyval(poly_fit, lx) - y) ** 2))
    verdict = ("polynomial-tail-consistent" if poly_resid < exp_resid
               else "exponential-tail-consistent")
    return TailDiagnostics(
        hill_indices=hill, hill_stable=hill_stable,
        exp_slope=float(exp_fit[0]), exp_residual=exp_resid,
        poly_slope=float(poly_fit[0]), poly_residual=poly_resid,
        verdict=verdict,
    )


def median_slope(ks, medians) -> float:
    """Least-squares slope of log(median) against log(k)."""
    lk = np.log(np.asarray(ks, dtype=float))
    lm = np.log(np.asarray(medians, dtype=float))
    return float(np.polyfit(lk, lm, 1)[0])
