"""Stochastic operators driven by the SA engine.

Every operator obeys one contract: `apply(x, u)` maps the current iterate
and a fixed-width block of uniform doubles to a realization F(x, w), and
`mean(x)` is its expectation.  Randomness enters only through the uniform
block, so scalar stepping and replicate-vectorized stepping reproduce the
same trajectories bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import svdvals

from ._rng import make_rng, normal_from_uniform


class SingularSystem(ValueError):
    """Raised when I - A is singular and no fixed point exists."""


class OddDimension(ValueError):
    """Raised when a construction requiring even dimension gets an odd one."""


@dataclass(frozen=True)
class AssumptionReport:
    """Operator-supplied constants for the bound calculator.

    Entries are None when the operator cannot certify them analytically;
    the bound pipeline treats those as requiring user input.
    """

    nu: float | None = None
    gamma_c: float | None = None
    curvature_n: float | None = None
    radius_r: float | None = None
    sigma_bar_sq: float | None = None
    sigma_hat_sq: float | None = None

    def missing(self) -> list[str]:
        return [k for k, v in self.__dict__.items() if v is None]


class StochasticOperator:
    """Base class for sampled operators with a known or oracle fixed point."""

    dim: int
    noise_width: int
    report: AssumptionReport

    def fixed_point(self) -> np.ndarray:
        raise NotImplementedError

    def mean(self, x) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Realize F(x, w) from one block of `noise_width` uniforms."""
        raise NotImplementedError

    def apply_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Row-wise apply; operators override with a vectorized version."""
        return np.stack([self.apply(X[i], U[i]) for i in range(X.shape[0])])

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        return self.apply(np.asarray(x, dtype=float), rng.random(self.noise_width))

    def jacobian_at_fixed_point(self, rng: np.random.Generator) -> np.ndarray | None:
        """One realization of the Jacobian of F(., w) at the fixed point."""
        return None


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = cov, tolerant of semidefinite input."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    vals, vecs = np.linalg.eigh(cov)
    if np.min(vals) < -1e-10 * max(np.max(vals), 1.0):
        raise ValueError("noise covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class LinearAdditiveOperator(StochasticOperator):
    """F(x, w) = A x + b + w with Gaussian additive noise w ~ N(0, cov)."""

    def __init__(self, A, b, noise_cov):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = self.A.shape[0]
        self.noise_width = self.dim
        cov = np.asarray(noise_cov, dtype=float)
        self._chol = _psd_factor(cov)
        self.noise_cov = cov
        s = svdvals(np.eye(self.dim) - self.A)
        if s[-1] <= max(s[0], 1.0) * 1e-13:
            raise SingularSystem("I - A is singular; no fixed point")
        self._xstar = np.linalg.solve(np.eye(self.dim) - self.A, self.b)
        spectral = float(svdvals(self.A)[0]) if np.any(self.A) else 0.0
        self.report = AssumptionReport(
            nu=float(s[-1]),
            gamma_c=spectral,
            curvature_n=0.0,
            radius_r=np.inf,
            sigma_bar_sq=float(np.linalg.eigvalsh(cov)[-1]) if np.any(cov) else 0.0,
            sigma_hat_sq=0.0,
        )

    def fixed_point(self):
        return self._xstar.copy()

    def mean(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.b

    def apply(self, x, u):
        return self.A @ x + self.b + self._chol @ normal_from_uniform(u)

    def apply_batch(self, X, U):
        return X @ self.A.T + self.b + normal_from_uniform(U) @ self._chol.T

    def jacobian_at_fixed_point(self, rng):
        return self.A.copy()


def make_linear_additive(A, b, noise_cov) -> LinearAdditiveOperator:
    """Linear operator with additive Gaussian noise; fixed point (I-A)^-1 b."""
    return LinearAdditiveOperator(A, b, noise_cov)


class PairGaussianOperator(StochasticOperator):
    """Pure-noise operator F(x, w) = w with pairwise-tied coordinates.

    A 2-d Gaussian z ~ N(0, (sigma_bar^2/d) I) is broadcast so that all
    even-position coordinates (0-based) carry z_1 and all odd positions
    carry z_2; the averaged iterate then has an exactly computable radial
    law, which is what makes this the tightness example.
    """

    def __init__(self, d: int, sigma_bar: float):
        if d % 2 != 0:
            raise OddDimension(f"dimension must be even, got {d}")
        self.dim = d
        self.noise_width = 2
        self.sigma_bar = float(sigma_bar)
        self._scale = self.sigma_bar / np.sqrt(d)
        self.report = AssumptionReport(
            nu=1.0, gamma_c=0.0, curvature_n=0.0, radius_r=np.inf,
            sigma_bar_sq=self.sigma_bar ** 2, sigma_hat_sq=0.0,
        )

    def fixed_point(self):
        return np.zeros(self.dim)

    def mean(self, x):
        return np.zeros(self.dim)

    def apply(self, x, u):
        z = normal_from_uniform(u) * self._scale
        w = np.empty(self.dim)
        w[0::2] = z[0]
        w[1::2] = z[1]
        return w

    def apply_batch(self, X, U):
        Z = normal_from_uniform(U) * self._scale
        W = np.empty((X.shape[0], self.dim))
        W[:, 0::2] = Z[:, :1]
        W[:, 1::2] = Z[:, 1:]
        return W

    def jacobian_at_fixed_point(self, rng):
        return np.zeros((self.dim, self.dim))


def make_pair_gaussian_example(d: int, sigma_bar: float) -> PairGaussianOperator:
    return PairGaussianOperator(d, sigma_bar)


class MultiplicativeGaussianOperator(StochasticOperator):
    """Scalar F(x, w) = w x with w ~ N(0, 1); zero mean map, fixed point 0."""

    dim = 1
    noise_width = 1

    def __init__(self):
        self.report = AssumptionReport(
            nu=1.0, gamma_c=0.0, curvature_n=0.0, radius_r=np.inf,
            sigma_bar_sq=0.0, sigma_hat_sq=1.0,
        )

    def fixed_point(self):
        return np.zeros(1)

    def mean(self, x):
        return np.zeros(1)

    def apply(self, x, u):
        return normal_from_uniform(u) * x

    def apply_batch(self, X, U):
        return normal_from_uniform(U) * X

    def jacobian_at_fixed_point(self, rng):
        return normal_from_uniform(rng.random(1)).reshape(1, 1)


def make_multiplicative_gaussian() -> MultiplicativeGaussianOperator:
    return MultiplicativeGaussianOperator()


class TwoPointMultiplicativeOperator(StochasticOperator):
    """Scalar F(x, w) = w x with a two-point multiplicative noise law.

    w = a + n_mass with probability 1/(n_mass+1) and w = a - 1 otherwise,
    so E[w] = a and the mean map is the contraction x -> a x.  Positive
    iterates stay positive whenever the step size keeps 1 + alpha_k (w - 1)
    positive for both support points.
    """

    dim = 1
    noise_width = 1

    def __init__(self, a: float, n_mass: int):
        if not 0 < a < 1:
            raise ValueError(f"a must lie in (0, 1), got {a}")
        if n_mass < 1:
            raise ValueError(f"n_mass must be >= 1, got {n_mass}")
        self.a = float(a)
        self.n_mass = int(n_mass)
        self._p_high = 1.0 / (self.n_mass + 1)
        self._hi = self.a + self.n_mass
        self._lo = self.a - 1.0
        # |w - a| <= n_mass with the range (b - a) = n_mass + 1: Hoeffding proxy
        self.report = AssumptionReport(
            nu=1.0 - self.a, gamma_c=self.a, curvature_n=0.0, radius_r=np.inf,
            sigma_bar_sq=0.0, sigma_hat_sq=(self.n_mass + 1) ** 2 / 4.0,
        )

    def fixed_point(self):
        return np.zeros(1)

    def mean(self, x):
        return self.a * np.asarray(x, dtype=float)

    def _w(self, u):
        return np.where(u < self._p_high, self._hi, self._lo)

    def apply(self, x, u):
        return self._w(u) * x

    def apply_batch(self, X, U):
        return self._w(U) * X

    def jacobian_at_fixed_point(self, rng):
        return self._w(rng.random(1)).reshape(1, 1)


def make_two_point_multiplicative(a: float, n_mass: int) -> TwoPointMultiplicativeOperator:
    return TwoPointMultiplicativeOperator(a, n_mass)


def make_random_contractive(
    d: int, gamma_c: float, noise_scale: float, seed: int
) -> LinearAdditiveOperator:
    """Random linear operator rescaled to spectral norm gamma_c.

    Ships with a random offset and isotropic Gaussian noise; the report
    carries the exact contraction factor and nu from the singular values.
    """
    if not 0 < gamma_c < 1:
        raise ValueError(f"gamma_c must lie in (0, 1), got {gamma_c}")
    rng = make_rng(seed, 0xC047)
    A = rng.standard_normal((d, d))
    A *= gamma_c / svdvals(A)[0]
    b = rng.standard_normal(d)
    cov = noise_scale ** 2 * np.eye(d)
    op = LinearAdditiveOperator(A, b, cov)
    # rescaling fixes the spectral norm exactly; record the target value
    op.report = AssumptionReport(
        nu=op.report.nu, gamma_c=float(gamma_c), curvature_n=0.0, radius_r=np.inf,
        sigma_bar_sq=noise_scale ** 2, sigma_hat_sq=0.0,
    )
    return op
