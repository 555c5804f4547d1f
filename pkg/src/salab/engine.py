"""The averaged stochastic-approximation recursion.

x_{k+1} = (1 - alpha_k) x_k + alpha_k F(x_k, w_{k+1}), with the running
average y_k of x_0..x_k maintained incrementally so that long horizons
need no trajectory storage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .norms import NormSpec, norm
from .operators import StochasticOperator
from .schedules import StepSchedule


class NonFiniteIterate(RuntimeError):
    """An iterate left the finite floats; the replication diverged."""

    def __init__(self, step: int):
        super().__init__(f"non-finite iterate at step {step}")
        self.step = step


@dataclass
class SaState:
    """Snapshot of the recursion: iterate, running average, generator."""

    k: int
    x: np.ndarray
    y: np.ndarray
    rng: np.random.Generator


@dataclass(frozen=True)
class Trajectory:
    """Squared errors of x_k and y_k at the requested checkpoints."""

    checkpoints: tuple[int, ...]
    err_x: np.ndarray
    err_y: np.ndarray
    norm_id: str


def update_average(y_prev: np.ndarray, x_k: np.ndarray, k: int) -> np.ndarray:
    """Running mean update: mean(x_0..x_k) from mean(x_0..x_{k-1}).

    For k = 0 the previous value is ignored and x_0 is returned.
    """
    if k == 0:
        return np.array(x_k, dtype=float, copy=True)
    return y_prev + (np.asarray(x_k, dtype=float) - y_prev) / (k + 1)


def init_state(op: StochasticOperator, x0, seed) -> SaState:
    keys = seed if isinstance(seed, (tuple, list)) else (seed,)
    x = np.array(x0, dtype=float, copy=True)
    return SaState(k=0, x=x, y=x.copy(), rng=make_rng(*keys))


def advance(op: StochasticOperator, schedule: StepSchedule, state: SaState) -> SaState:
    """One recursion step in place; raises NonFiniteIterate on divergence."""
    u = state.rng.random(op.noise_width)
    a = schedule.step(state.k)
    state.x = (1.0 - a) * state.x + a * op.apply(state.x, u)
    if not np.all(np.isfinite(state.x)):
        raise NonFiniteIterate(state.k + 1)
    state.k += 1
    state.y = update_average(state.y, state.x, state.k)
    return state


def run_sa(
    op: StochasticOperator,
    schedule: StepSchedule,
    x0,
    horizon: int,
    checkpoints,
    norm_spec: NormSpec,
    seed,
) -> Trajectory:
    """Run the recursion for `horizon` steps, recording squared errors.

    Deterministic given (op, schedule, x0, seed); the seed may be an int or
    a tuple of ints (ensembles key replicates as (base_seed, index)).
    """
    cps = sorted(set(int(c) for c in checkpoints))
    if cps and (cps[0] < 0 or cps[-1] > horizon):
        raise ValueError("checkpoints must lie in [0, horizon]")
    xstar = op.fixed_point()
    state = init_state(op, x0, seed)

    err_x, err_y = [], []

    def record():
        err_x.append(norm(norm_spec, state.x - xstar) ** 2)
        err_y.append(norm(norm_spec, state.y - xstar) ** 2)

    want = set(cps)
    if 0 in want:
        record()
    for k in range(horizon):
        advance(op, schedule, state)
        if state.k in want:
            record()
    return Trajectory(
        checkpoints=tuple(cps),
        err_x=np.array(err_x),
        err_y=np.array(err_y),
        norm_id=norm_spec.label,
    )
