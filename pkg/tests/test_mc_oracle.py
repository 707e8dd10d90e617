import numpy as np
import pytest

from burnin_brar.group_sequential import GsDesignSpec, StopCause, gs_ocs
from burnin_brar.mc_oracle import (
    BurnInRule, SimConfig, bracket_z, burn_in_rule_chi2, mc_estimate, mc_estimates, simulate_final_states, simulate_trial,
)
from burnin_brar.oc import OcKind, TestSpec
from burnin_brar.policy import DesignSpec

Z = 3.5
KINDS = [OcKind.EPASA, OcKind.PIWD, OcKind.BIAS]


def _close(exact, est, indicator=False, replications=100_000):
    return abs(bracket_z(exact, *est, replications, indicator)) <= Z


def test_sure_successes():
    x = simulate_trial(SimConfig(DesignSpec(12, 2), (1.0, 1.0), replications=1))
    assert x.s_C == x.n_C and x.s_D == x.n_D and x.stage == 12


@pytest.mark.parametrize("rule", list(BurnInRule))
def test_full_burn_in_balanced(rule):
    st = simulate_final_states(SimConfig(DesignSpec(12, 6), (0.3, 0.8), 500, burn_in_rule=rule))
    assert np.all(st[:, 0] == 6) and np.all(st[:, 2] == 6)


@pytest.mark.parametrize("rule", list(BurnInRule))
def test_burn_in_counts_exact(rule):
    # with theta = (1, 0) the control successes count the control slots
    st = simulate_final_states(SimConfig(DesignSpec(8, 4), (1.0, 0.0), 200, burn_in_rule=rule))
    assert np.all(st[:, 1] == 4)


def test_seed_determinism():
    cfg = lambda seed: SimConfig(DesignSpec(12, 1), (0.3, 0.6), 25_000, seed=seed)
    a, b = simulate_final_states(cfg(5)), simulate_final_states(cfg(5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, simulate_final_states(cfg(6)))
    assert mc_estimate(cfg(5), "epasa") == mc_estimate(cfg(5), "epasa")


def test_epasa_full_burn_in_constant():
    mean, se = mc_estimate(SimConfig(DesignSpec(20, 10), (0.2, 0.5), 2000), "epasa")
    assert mean == 0.5 and se == 0.0


def test_invalid_config():
    with pytest.raises(ValueError):
        SimConfig(DesignSpec(10, 1), (0.5, 0.5), replications=0)
    with pytest.raises(ValueError):
        mc_estimate(SimConfig(DesignSpec(10, 1), (0.5, 0.5), 10), "rejection")


def test_calibrated_rejection(evaluators):
    ev = evaluators(20)
    spec = TestSpec.parse("calibrated")
    exact = ev.point(5, "rejection", (0.5, 0.5), spec)
    est = mc_estimate(SimConfig(DesignSpec(20, 5), (0.5, 0.5), policy=ev.policy), ev.test(5, spec))
    assert _close(exact, est, indicator=True)


def test_bracket_z_rare_events():
    # five events where thirteen are expected: the sample SE overstates the discrepancy
    assert abs(bracket_z(1.29e-4, 5e-5, np.sqrt(5) / 1e5, 100_000, True)) < 3.5
    assert bracket_z(0.0, 0.0, 0.0, 1000, True) == 0.0
    assert bracket_z(0.0, 0.1, 0.0, 1000, False) == np.inf
    assert bracket_z(0.5, 0.51, 0.01, 1000, False) == pytest.approx(1.0)


def _random_pairs(k=20, seed=11):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        n = int(rng.choice([8, 12, 16, 20]))
        b = int(rng.integers(0, n // 2 + 1))
        tc, td = np.round(rng.uniform(0.05, 0.95, 2), 2)
        if tc == td:
            td = round(td + 0.05, 2)
        out.append((n, b, (float(tc), float(td))))
    return out


@pytest.mark.parametrize("n, b, theta", _random_pairs())
def test_random_designs_all_kinds(evaluators, n, b, theta):
    ev = evaluators(n)
    spec = TestSpec.parse("calibrated")
    cfg = SimConfig(DesignSpec(n, b), theta, seed=1000 * n + b, policy=ev.policy)
    ests = mc_estimates(cfg, [ev.test(b, spec), *KINDS])
    assert _close(ev.point(b, "rejection", theta, spec), ests[0], indicator=True)
    for kind, est in zip(KINDS, ests[1:]):
        assert _close(ev.point(b, kind, theta), est, kind is OcKind.PIWD), kind


def test_group_sequential_agreement():
    d = GsDesignSpec(trial_size=60, block_size=10, burn_in=5, ost=0.97)
    theta = (0.12, 0.37)
    exact = gs_ocs(d, theta)
    est = mc_estimates(SimConfig(d, theta), ["rejection", "epasa", "pniwd", "sample_size"])
    values = [exact.rejection, exact.epasa, exact.pniwd, exact.expected_sample_size]
    for value, e, indicator in zip(values, est, [True, False, True, False]):
        assert _close(value, e, indicator)


def test_group_sequential_single_trial():
    d = GsDesignSpec(trial_size=20, block_size=4, burn_in=2, ost=0.9)
    stage, cause, x = simulate_trial(SimConfig(d, (0.5, 0.5)))
    assert stage in d.analyses and isinstance(cause, StopCause) and x.stage == stage


def test_burn_in_rules_indistinguishable():
    assert burn_in_rule_chi2(DesignSpec(20, 5), (0.3, 0.6)) > 1e-3
