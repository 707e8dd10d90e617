import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from burnin_brar.posterior import (
    POLICY_TOL, STATISTIC_TOL, UNIFORM, BetaPrior, StatisticKind, final_statistic, ppcs,
    ppcs_exact_integer, ppcs_exact_states, ppcs_states, prob_beta_greater, wald_statistic, wald_states,
)
from burnin_brar.state_space import TrialState, stage_coordinates


def states(max_stage=60):
    return st.integers(0, max_stage).flatmap(
        lambda i: st.integers(0, i).flatmap(
            lambda nC: st.tuples(st.just(nC), st.integers(0, nC), st.just(i - nC), st.integers(0, i - nC))
        )
    ).map(lambda t: TrialState(*t))


@pytest.mark.parametrize("state, expected", [
    ((0, 0, 0, 0), 0.5),
    ((3, 2, 3, 2), 0.5),
    ((1, 1, 1, 0), 5 / 6),
    ((2, 2, 2, 0), 19 / 20),
])
def test_ppcs_oracles(state, expected):
    assert ppcs(TrialState(*state)) == pytest.approx(expected, abs=STATISTIC_TOL)
    assert ppcs_exact_integer(TrialState(*state)) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("args, expected", [((2, 1, 1, 2), 5 / 6), ((1, 1, 1, 1), 0.5), ((3, 1, 1, 3), 19 / 20)])
def test_finite_sum_identity(args, expected):
    assert float(prob_beta_greater(*args)) == pytest.approx(expected, abs=1e-14)


def test_exact_integer_rejects_fractional_prior():
    with pytest.raises(ValueError):
        ppcs_exact_integer(TrialState(1, 0, 1, 1), BetaPrior.both(0.5, 0.5))


def test_ppcs_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        ppcs(TrialState(1, 0, 1, 1), abs_tol=0.0)


def test_prior_validation():
    with pytest.raises(ValueError):
        BetaPrior(0.0, 1.0, 1.0, 1.0)


def test_quadrature_matches_finite_sum_on_random_states():
    rng = np.random.default_rng(3)
    n = rng.integers(0, 61, 1000)
    nC = rng.integers(0, n + 1)
    sC = rng.integers(0, nC + 1)
    sD = rng.integers(0, n - nC + 1)
    q = ppcs_states(nC, sC, n - nC, sD, abs_tol=STATISTIC_TOL)
    e = ppcs_exact_states(nC, sC, n - nC, sD)
    assert np.max(np.abs(q - e)) <= 10 * STATISTIC_TOL


@pytest.mark.parametrize("prior", [UNIFORM, BetaPrior.both(0.5, 0.5), BetaPrior.both(0.01, 0.01),
                                   BetaPrior.both(1.4, 0.6)])
def test_arm_swap_complements(prior):
    c = stage_coordinates(12)
    p = ppcs_states(*c, prior=prior)
    q = ppcs_states(c[2], c[3], c[0], c[1], prior=prior)
    assert np.max(np.abs(p + q - 1)) <= 2 * STATISTIC_TOL
    assert np.all((p >= 0) & (p <= 1))


@given(states(40))
def test_reflected_state_bit_identical(x):
    # swapping arms and exchanging successes with failures leaves PPCS unchanged
    y = TrialState(x.n_D, x.n_D - x.s_D, x.n_C, x.n_C - x.s_C)
    assert ppcs(x) == ppcs(y)


@settings(max_examples=200, deadline=None)
@given(states(40))
def test_ppcs_monotone_in_successes(x):
    p = ppcs(x)
    if x.s_C < x.n_C:
        assert ppcs(x._replace(s_C=x.s_C + 1)) >= p - 2 * STATISTIC_TOL
    if x.s_D < x.n_D:
        assert ppcs(x._replace(s_D=x.s_D + 1)) <= p + 2 * STATISTIC_TOL


# references from a 30-digit log-substituted integral (t = exp(-y) on each half)
@pytest.mark.parametrize("state, expected", [
    ((0, 0, 12, 0), 0.7573394505298652),
    ((12, 0, 0, 0), 0.24266054947013485),
    ((1, 0, 11, 0), 0.5142468509370872),
    ((5, 5, 3, 0), 0.9999995330081031),
])
def test_singular_prior_frozen(state, expected):
    assert ppcs(TrialState(*state), BetaPrior.both(0.01, 0.01)) == pytest.approx(expected, abs=STATISTIC_TOL)


@pytest.mark.parametrize("state, expected", [
    ((2, 1, 2, 1), 0.0),
    ((2, 1, 2, 2), 0.25 / np.sqrt(0.25 / 4 + 0.1875 / 4)),
])
def test_wald_oracles(state, expected):
    assert wald_statistic(TrialState(*state)) == pytest.approx(expected, abs=1e-15)


def test_wald_frozen_value():
    assert wald_statistic(TrialState(2, 1, 2, 2)) == pytest.approx(0.755929, abs=1e-6)


@given(states(60))
def test_wald_antisymmetric_and_finite(x):
    t = wald_statistic(x)
    assert np.isfinite(t)
    assert wald_statistic(x.swapped()) == -t


def test_final_statistic_memoized_and_readonly():
    a = final_statistic(10, StatisticKind.PPCS)
    assert a is final_statistic(10, StatisticKind.PPCS)
    assert not a.flags.writeable
    w = final_statistic(10, StatisticKind.WALD)
    assert np.array_equal(w, wald_states(*stage_coordinates(10)))


def test_policy_tolerance_is_coarser():
    x = TrialState(9, 3, 11, 8)
    assert ppcs(x, abs_tol=POLICY_TOL) == pytest.approx(ppcs(x), abs=POLICY_TOL)
