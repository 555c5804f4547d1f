"""Norm algebra used by the bound calculator.

Covers the euclidean, sup, and weighted p-norms (p >= 2), their duals,
pairwise equivalence constants, the smoothness constant of the squared
norm, and the smallest gain of J - I at a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import svdvals
from scipy.optimize import minimize

from ._rng import make_rng

EUCLIDEAN = "euclidean"
MAX = "max"
WEIGHTED_P = "weighted_p"


class UnsupportedNorm(ValueError):
    """Raised when an operation is undefined for the requested norm."""


class SingularJacobian(ValueError):
    """Raised when J - I is numerically singular at the fixed point."""


@dataclass(frozen=True, eq=False)
class NormSpec:
    """A norm choice: euclidean, sup, or weighted p-norm with p >= 2."""

    kind: str
    p: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, MAX, WEIGHTED_P):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == WEIGHTED_P:
            if self.p is None or self.p < 2:
                raise ValueError("weighted p-norm requires p >= 2")
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(w <= 0):
                raise ValueError("weights must be a strictly positive vector")
            w = w.copy()
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    @classmethod
    def euclidean(cls) -> "NormSpec":
        return cls(EUCLIDEAN)

    @classmethod
    def sup(cls) -> "NormSpec":
        return cls(MAX)

    @classmethod
    def weighted(cls, p: float, weights) -> "NormSpec":
        return cls(WEIGHTED_P, p=float(p), weights=np.asarray(weights, dtype=float))

    @property
    def label(self) -> str:
        if self.kind == WEIGHTED_P:
            return f"weighted_p(p={self.p:g},d={len(self.weights)})"
        return self.kind

    def same_as(self, other: "NormSpec") -> bool:
        if self.kind != other.kind:
            # unweighted p=2 coincides with euclidean
            return {self.kind, other.kind} == {EUCLIDEAN, WEIGHTED_P} and _is_plain_l2(
                self if self.kind == WEIGHTED_P else other
            )
        if self.kind != WEIGHTED_P:
            return True
        return self.p == other.p and np.array_equal(self.weights, other.weights)


def _is_plain_l2(spec: NormSpec) -> bool:
    return spec.kind == WEIGHTED_P and spec.p == 2 and np.all(spec.weights == 1.0)


def _lp(v: np.ndarray, p: float, axis=-1) -> np.ndarray:
    """Robust l_p of non-negative entries, factoring out the max."""
    m = np.max(v, axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    s = np.sum((v / safe) ** p, axis=axis)
    return np.squeeze(safe, axis=axis) * s ** (1.0 / p)


def norm(spec: NormSpec, x) -> float:
    """Evaluate the norm of a single vector."""
    return float(norm_rows(spec, np.asarray(x, dtype=float)[None, :])[0])


def norm_rows(spec: NormSpec, X: np.ndarray) -> np.ndarray:
    """Evaluate the norm of each row of a 2-D array."""
    X = np.asarray(X, dtype=float)
    if spec.kind == EUCLIDEAN:
        return np.sqrt(np.einsum("ij,ij->i", X, X))
    if spec.kind == MAX:
        return np.max(np.abs(X), axis=1)
    w = spec.weights
    v = np.abs(X) * w ** (1.0 / spec.p)
    return _lp(v, spec.p, axis=1)


def dual_norm(spec: NormSpec, u) -> float:
    """Dual norm: sup of <x, u> over the unit ball of `spec`."""
    u = np.asarray(u, dtype=float)
    if spec.kind == EUCLIDEAN:
        return float(np.linalg.norm(u))
    if spec.kind == MAX:
        return float(np.sum(np.abs(u)))
    p, w = spec.p, spec.weights
    q = p / (p - 1.0)
    w_sharp = w ** (-1.0 / (p - 1.0))
    v = np.abs(u) * w_sharp ** (1.0 / q)
    return float(_lp(v[None, :], q, axis=1)[0])


def half_sq_gradient(spec: NormSpec, x) -> np.ndarray:
    """Gradient of f(x) = 0.5 * norm(x)**2 in closed form.

    For the weighted p-norm: grad_i = w_i sign(x_i) |x_i|**(p-1) * v**(2-p)
    with v = norm(x); the sup-norm squared is non-smooth and unsupported.
    """
    x = np.asarray(x, dtype=float)
    if spec.kind == EUCLIDEAN:
        return x.copy()
    if spec.kind == MAX:
        raise UnsupportedNorm("sup-norm squared is non-smooth; use a large-p surrogate")
    v = norm(spec, x)
    if v == 0.0:
        return np.zeros_like(x)
    a = np.abs(x) / v
    return spec.weights * np.sign(x) * v * a ** (spec.p - 1.0)


def smoothness_constant(spec: NormSpec) -> float:
    """Constant M with 0.5*||a+b||^2 <= 0.5*||a||^2 + <grad, b> + (M/2)||b||^2."""
    if spec.kind == EUCLIDEAN:
        return 1.0
    if spec.kind == MAX:
        raise UnsupportedNorm(
            "sup-norm squared is non-smooth; bound it through a p(k) surrogate norm"
        )
    return spec.p - 1.0


@dataclass(frozen=True)
class EquivalenceConstants:
    """Outer constants with lower*||x||_b <= ||x||_a <= upper*||x||_b.

    `searched_lower`/`searched_upper` are the extreme ratios found by the
    sphere search; they sandwich the (possibly unknown) tight constants
    from the inside, so searched_lower >= lower and searched_upper <= upper.
    """

    lower: float
    upper: float
    searched_lower: float | None = None
    searched_upper: float | None = None


def _vs_euclidean(spec: NormSpec, d: int) -> tuple[float, float]:
    """Exact-per-convention constants (l, u) with l*||x||_2 <= ||x||_spec <= u*||x||_2."""
    if spec.kind == EUCLIDEAN:
        return 1.0, 1.0
    if spec.kind == MAX:
        return d ** -0.5, 1.0
    p, w = spec.p, spec.weights
    lo = float(np.min(w)) ** (1.0 / p) * d ** (1.0 / p - 0.5)
    hi = float(np.max(w)) ** (1.0 / p)
    return lo, hi


def equivalence_constants(
    a: NormSpec,
    b: NormSpec,
    d: int,
    restarts: int = 8,
    samples: int = 2000,
    seed: int = 0,
) -> EquivalenceConstants:
    """Constants sandwiching ||x||_a between multiples of ||x||_b.

    Analytic values are used when the pair reduces to the standard
    comparisons against the euclidean norm; otherwise the two analytic
    sandwiches are chained through l2 (still a valid outer interval) and a
    random-restart sphere search reports the extreme observed ratios.
    """
    if a.same_as(b):
        return EquivalenceConstants(1.0, 1.0, 1.0, 1.0)
    la, ua = _vs_euclidean(a, d)
    lb, ub = _vs_euclidean(b, d)
    if b.kind == EUCLIDEAN:
        lower, upper = la, ua
    elif a.kind == EUCLIDEAN:
        lower, upper = 1.0 / ub, 1.0 / lb
    else:
        lower, upper = la / ub, ua / lb

    rng = make_rng(seed, 0x4E52)
    best_lo, best_hi = np.inf, 0.0
    X = rng.standard_normal((samples, d))
    ratios = norm_rows(a, X) / norm_rows(b, X)
    best_lo = min(best_lo, float(np.min(ratios)))
    best_hi = max(best_hi, float(np.max(ratios)))

    def neg_ratio(z):
        nb = norm(b, z)
        if nb == 0:
            return 0.0
        return -norm(a, z) / nb

    def pos_ratio(z):
        nb = norm(b, z)
        if nb == 0:
            return 0.0
        return norm(a, z) / nb

    for _ in range(restarts):
        z0 = rng.standard_normal(d)
        res_hi = minimize(neg_ratio, z0, method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        res_lo = minimize(pos_ratio, z0, method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        best_hi = max(best_hi, -float(res_hi.fun))
        best_lo = min(best_lo, float(res_lo.fun))
    return EquivalenceConstants(lower, upper, best_lo, best_hi)


@dataclass(frozen=True)
class NuEstimate:
    """Smallest gain of (A - I) under a norm: min ||(A-I)z|| / ||z||.

    Exact (certified) only for the euclidean norm, where it is the smallest
    singular value; for other norms the value is the best of a random-restart
    minimization and is an upper estimate of the true minimum.
    """

    value: float
    certified: bool
    restarts: int


def estimate_nu(
    A: np.ndarray,
    spec: NormSpec,
    restarts: int = 12,
    seed: int = 0,
    descent_tol: float = 1e-9,
) -> NuEstimate:
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    B = A - np.eye(d)
    s = svdvals(B)
    if s[-1] <= max(s[0], 1.0) * 1e-13:
        raise SingularJacobian("A - I is numerically singular")
    if spec.kind == EUCLIDEAN or _is_plain_l2(spec):
        return NuEstimate(float(s[-1]), True, 0)

    def gain(z):
        nz = norm(spec, z)
        if nz == 0:
            return np.inf
        return norm(spec, B @ z) / nz

    rng = make_rng(seed, 0x4E55)
    best = np.inf
    for _ in range(restarts):
        z0 = rng.standard_normal(d)
        res = minimize(gain, z0, method="Nelder-Mead",
                       options={"xatol": descent_tol, "fatol": descent_tol, "maxiter": 8000})
        best = min(best, float(res.fun))
    return NuEstimate(best, False, restarts)
