import numpy as np
import pytest

from salab.schedules import StepSchedule, geometric_checkpoints


def test_step_values():
    assert StepSchedule(1.0, 2.0, 0.0).step(7) == 1.0
    assert StepSchedule(2.0, 4.0, 0.5).step(0) == 1.0
    assert StepSchedule(1.0, 2.0, 0.75).step(14) == pytest.approx(0.125, abs=0)


def test_step_monotone_nonincreasing():
    sched = StepSchedule(1.3, 1.7, 0.6)
    steps = sched.step(np.arange(500))
    assert np.all(steps > 0)
    assert np.all(np.diff(steps) <= 0)


@pytest.mark.parametrize("alpha,h,xi", [(0.0, 2.0, 0.5), (1.0, 1.0, 0.5), (1.0, 2.0, 1.0), (1.0, 2.0, -0.1)])
def test_invalid_parameters_rejected(alpha, h, xi):
    with pytest.raises(ValueError):
        StepSchedule(alpha, h, xi)


def test_step_sum_matches_direct_sum():
    sched = StepSchedule(1.0, 2.0, 0.5)
    direct = sum(sched.step(k) for k in range(101))
    assert sched.step_sum(100) == pytest.approx(direct, rel=1e-14)


def test_geometric_checkpoints_cover_horizon():
    cps = geometric_checkpoints(1000, ratio=1.5)
    assert cps[0] == 1 and cps[-1] == 1000
    assert cps == sorted(set(cps))
    with pytest.raises(ValueError):
        geometric_checkpoints(10, ratio=1.0)
