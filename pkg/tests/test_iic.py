import math

import numpy as np
import pytest

from percolab.configuration import RandomEdges, attempt_key
from percolab.explorer import ExploreLimits, arm_depth
from percolab.iic import (
    ArmCondition,
    ConditioningFailed,
    PointCondition,
    ball_at_least,
    cylinder_convergence,
    edge_open_event,
    sample_conditioned,
)
from percolab.lattice import LatticeSpec
from percolab.oracle import exact_conditional, unit_square

D1 = LatticeSpec(1)


def test_p_one_accepts_first_attempt():
    s = sample_conditioned(ArmCondition(5), 1.0, 0, 0, LatticeSpec(2), ExploreLimits(5))
    assert s.attempts == 1 and s.view.arm_hit


def test_p_zero_fails():
    with pytest.raises(ConditioningFailed) as err:
        sample_conditioned(ArmCondition(2), 0.0, 0, 0, LatticeSpec(2), ExploreLimits(2), max_attempts=50)
    assert err.value.attempts == 50


def test_limits_must_decide_event():
    with pytest.raises(ValueError):
        sample_conditioned(ArmCondition(5), 0.5, 0, 0, D1, ExploreLimits(3))
    with pytest.raises(ValueError):
        sample_conditioned(PointCondition((4,)), 0.5, 0, 0, D1, ExploreLimits(3))
    with pytest.raises(ValueError):
        PointCondition((0, 0))
    with pytest.raises(ValueError):
        ArmCondition(0)


def test_accepted_sample_is_first_success():
    spec = LatticeSpec(2)
    s = sample_conditioned(ArmCondition(6), 0.5, 3, 7, spec, ExploreLimits(6))
    hits = [arm_depth((0, 0), RandomEdges(attempt_key(3, 7, a), 0.5), spec, 6).reached(6)
            for a in range(s.attempts)]
    assert hits[-1] and not any(hits[:-1])


def test_deterministic_replay():
    spec = LatticeSpec(3)
    a = sample_conditioned(ArmCondition(5), 0.25, 1, 2, spec, ExploreLimits(5))
    b = sample_conditioned(ArmCondition(5), 0.25, 1, 2, spec, ExploreLimits(5))
    assert a.attempts == b.attempts and np.array_equal(a.view.coords, b.view.coords)


def test_sure_event_is_one():
    rows = cylinder_convergence(lambda v: True, 0.6, [2, 3], 200, LatticeSpec(2))
    assert [r.estimate for r in rows] == [1.0, 1.0]
    assert all(r.mean_attempts >= 1 for r in rows)


def test_d1_point_conditioning_forces_edge():
    rows = cylinder_convergence(edge_open_event(((0,), (1,))), 0.5, [2, 4], 300, D1, mode="point")
    assert [r.estimate for r in rows] == [1.0, 1.0]


def test_radii_checks():
    with pytest.raises(ValueError):
        cylinder_convergence(lambda v: True, 0.5, [3, 2], 10, D1)
    with pytest.raises(ValueError):
        cylinder_convergence(lambda v: True, 0.5, [2], 10, D1, mode="bogus")


@pytest.mark.parametrize("event,name", [(edge_open_event(((0, 0), (1, 0))), "edge"), (ball_at_least(1, 3), "ball")])
def test_rejection_matches_oracle_on_unit_square(event, name):
    sq = unit_square(0.5)
    exact = exact_conditional(sq, event, lambda v: (1, 1) in v)
    n = 20000
    (row,) = cylinder_convergence(event, 0.5, [1], n, sq.spec, master_seed=5, mode="point",
                                  direction=(1, 1), support=sq.support)
    assert abs(row.estimate - exact) < 4 * math.sqrt(exact * (1 - exact) / n)


def test_events_pickle_for_workers():
    rows1 = cylinder_convergence(ball_at_least(1, 2), 0.5, [2], 60, LatticeSpec(2), workers=1)
    rows2 = cylinder_convergence(ball_at_least(1, 2), 0.5, [2], 60, LatticeSpec(2), workers=2)
    assert rows1 == rows2
