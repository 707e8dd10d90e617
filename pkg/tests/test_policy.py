import numpy as np
import pytest

from burnin_brar.policy import (
    DesignSpec, PolicyTable, allocation_prob, build_policy_table, cached_policy_table, stage_policy,
)
from burnin_brar.posterior import POLICY_TOL, BetaPrior
from burnin_brar.state_space import TrialState, stage_coordinates


@pytest.mark.parametrize("kwargs", [
    dict(trial_size=5), dict(trial_size=-2), dict(trial_size=10, burn_in=6),
    dict(trial_size=10, alpha_upper=-0.1), dict(trial_size=10, clip=(0.8, 0.2)),
])
def test_design_validation(kwargs):
    with pytest.raises(ValueError):
        DesignSpec(**kwargs)


def test_design_properties():
    d = DesignSpec(60, 15)
    assert d.alpha == pytest.approx(0.05)
    assert d.burn_in_proportion == 0.5


@pytest.mark.parametrize("state, clip, expected", [
    ((2, 1, 2, 1), None, 0.5),
    ((1, 1, 1, 0), None, 5 / 6),
    ((1, 1, 1, 0), (0.25, 0.75), 0.75),
    ((1, 0, 1, 1), (0.25, 0.75), 0.25),
])
def test_allocation_prob(state, clip, expected):
    d = DesignSpec(10, 0, clip=clip)
    assert allocation_prob(TrialState(*state), d) == pytest.approx(expected, abs=POLICY_TOL)


def test_allocation_prob_inside_burn_in_raises():
    with pytest.raises(ValueError, match="burn-in"):
        allocation_prob(TrialState(1, 0, 1, 0), DesignSpec(10, 2))


def test_table_sizes():
    assert build_policy_table(DesignSpec(4, 0)).n_entries == 35
    assert build_policy_table(DesignSpec(4, 2)).n_entries == 0
    t = build_policy_table(DesignSpec(4, 0))
    assert t(TrialState(0, 0, 0, 0)) == 0.5


def test_table_matches_pointwise_rule():
    d = DesignSpec(12, 0, clip=(0.1, 0.9))
    t = build_policy_table(d)
    for i in (0, 5, 11):
        for s in zip(*stage_coordinates(i)):
            x = TrialState(*map(int, s))
            assert t(x) == allocation_prob(x, d)


def test_shared_stages_agree_bitwise():
    a = build_policy_table(DesignSpec(20, 0))
    b = build_policy_table(DesignSpec(20, 4))
    for i in range(8, 20):
        assert np.array_equal(a.stage(i), b.stage(i))
    assert np.array_equal(stage_policy(13), a.stage(13))


def test_arm_swap_antisymmetry():
    t = build_policy_table(DesignSpec(14, 0))
    for i in (3, 9, 13):
        nC, sC, nD, sD = stage_coordinates(i)
        for k in range(0, nC.size, 7):
            x = TrialState(int(nC[k]), int(sC[k]), int(nD[k]), int(sD[k]))
            assert t(x.swapped()) == pytest.approx(1 - t(x), abs=2 * POLICY_TOL)


def test_clip_bounds_respected():
    t = build_policy_table(DesignSpec(16, 0, clip=(0.25, 0.75)))
    vals = np.concatenate(t.stages)
    assert vals.min() >= 0.25 and vals.max() <= 0.75


def test_cache_roundtrip_and_corruption(tmp_path):
    prior = BetaPrior.both(0.5, 0.5)
    first = cached_policy_table(10, prior, None, POLICY_TOL, tmp_path)
    (path,) = tmp_path.glob("policy-10-*.bin")
    again = cached_policy_table(10, prior, None, POLICY_TOL, tmp_path)
    assert all(np.array_equal(a, b) for a, b in zip(first.stages, again.stages))

    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        PolicyTable.load(path)
    healed = cached_policy_table(10, prior, None, POLICY_TOL, tmp_path)
    assert all(np.array_equal(a, b) for a, b in zip(first.stages, healed.stages))
    PolicyTable.load(path)  # rewritten and valid again


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a policy table")
    with pytest.raises(ValueError):
        PolicyTable.load(p)
