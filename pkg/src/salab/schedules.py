"""Polynomial step-size schedules for the averaged SA recursion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepSchedule:
    """Step-size law alpha_k = alpha / (k + h)**xi.

    Requires alpha > 0, h > 1 and 0 <= xi < 1; the decay exponent is kept
    strictly below 1 because every bound evaluated downstream assumes it.
    """

    alpha: float
    h: float
    xi: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.h > 1:
            raise ValueError(f"h must exceed 1, got {self.h}")
        if not 0 <= self.xi < 1:
            raise ValueError(f"xi must lie in [0, 1), got {self.xi}")

    def step(self, k) -> float | np.ndarray:
        """alpha_k for a scalar or array of iteration indices."""
        k = np.asarray(k, dtype=float)
        out = self.alpha / (k + self.h) ** self.xi
        return float(out) if out.ndim == 0 else out

    def step_sum(self, k: int) -> float:
        """Exact partial sum alpha_0 + ... + alpha_k."""
        return float(np.sum(self.step(np.arange(k + 1))))


def geometric_checkpoints(horizon: int, ratio: float = 1.3, start: int = 1) -> list[int]:
    """Checkpoint grid {floor(start * ratio**j)} clipped to the horizon.

    Geometric spacing keeps log-log rate regressions evenly weighted.
    """
    if ratio <= 1:
        raise ValueError("ratio must exceed 1")
    points = []
    value = float(start)
    while True:
        k = int(value)
        if k > horizon:
            break
        if not points or k > points[-1]:
            points.append(k)
        value *= ratio
    if not points or points[-1] != horizon:
        points.append(horizon)
    return points
