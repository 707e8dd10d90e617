"""Exact operating characteristics of a final-stage design.

Every OC is an expectation ``sum_x f(x, theta) g(x) L_theta(x)`` over final
states.  Averages over the slice ``theta_D - theta_C = delta`` replace
``L_theta`` by its slice average, which is a polynomial integral evaluated
exactly by Gauss-Legendre quadrature.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betaln

from .coefficients import CoefficientFrontier, final_frontier, likelihood_factors
from .exact_tests import TestDefinition, TestKind, build_test, format_float
from .policy import DesignSpec, PolicyTable, build_policy_table
from .posterior import STATISTIC_TOL, StatisticKind, final_statistic
from .quadrature import gauss_legendre_nodes
from .state_space import stage_coordinates

DEFAULT_PHI = 0.1
GRID_STEP = 0.01


class OcKind(str, enum.Enum):
    REJECTION = "rejection"
    EPASA = "epasa"
    PIWD = "piwd"
    BIAS = "bias"


def _sign(theta_C: float, theta_D: float) -> int:
    return int(np.sign(theta_D - theta_C))


def oc_integrand(
    kind: OcKind,
    frontier: CoefficientFrontier,
    direction: int,
    test: TestDefinition | None = None,
    stat: np.ndarray | None = None,
    phi: float = DEFAULT_PHI,
    empty_arm: str = "adjusted",
) -> np.ndarray:
    """``f(x, theta)`` over final states, given the sign of ``theta_D - theta_C``.

    For BIAS only the estimator part ``theta_hat_D - theta_hat_C`` is
    returned; the constant ``-(theta_D - theta_C)`` is added by the caller.
    With ``empty_arm="adjusted"`` a state with an empty arm uses the
    add-one-success-and-failure estimate on both arms; ``"zero"`` sets its
    estimated difference to zero instead.
    """
    kind = OcKind(kind)
    n = frontier.stage
    n_C, s_C, n_D, s_D = stage_coordinates(n)
    if kind is OcKind.REJECTION:
        if test is None or stat is None:
            raise ValueError("a rejection rate needs a test and statistic values")
        return test.reject(np.asarray(stat), s_C + s_D).astype(float)
    if kind is OcKind.EPASA:
        if direction > 0:
            return n_D / n
        if direction < 0:
            return n_C / n
        return (n_C + n_D) / n - 0.5
    if kind is OcKind.PIWD:
        if direction == 0:
            raise ValueError("PIWD is undefined when the arms are equal")
        if not 0 <= phi <= 1:
            raise ValueError("phi must lie in [0, 1]")
        if direction > 0:
            return (n_C / n > n_D / n + phi).astype(float)
        return (n_D / n > n_C / n + phi).astype(float)
    # BIAS
    iota = (np.minimum(n_C, n_D) == 0).astype(float)
    hat_C = (s_C + iota) / (n_C + 2 * iota)
    hat_D = (s_D + iota) / (n_D + 2 * iota)
    if empty_arm == "zero":
        return np.where(iota > 0, 0.0, hat_D - hat_C)
    if empty_arm != "adjusted":
        raise ValueError(f"unknown empty-arm rule {empty_arm!r}")
    return hat_D - hat_C


def oc_point(
    frontier: CoefficientFrontier,
    kind: OcKind,
    theta: tuple[float, float],
    test: TestDefinition | None = None,
    stat: np.ndarray | None = None,
    phi: float = DEFAULT_PHI,
    empty_arm: str = "adjusted",
) -> float:
    """The OC at a single parameter point."""
    theta_C, theta_D = theta
    if not (0 <= theta_C <= 1 and 0 <= theta_D <= 1):
        raise ValueError("success probabilities must lie in [0, 1]")
    f = oc_integrand(kind, frontier, _sign(theta_C, theta_D), test, stat, phi, empty_arm)
    val = float(np.dot(f, frontier.values * likelihood_factors(frontier.stage, theta_C, theta_D)))
    if OcKind(kind) is OcKind.BIAS:
        val -= theta_D - theta_C
    return val


def slice_weights(n: int, delta: float) -> np.ndarray:
    """Average of the likelihood factor over the slice ``theta_D - theta_C = delta``.

    Closed form ``B(S+1, n-S+1)`` on the null diagonal; otherwise a
    Gauss-Legendre rule with enough nodes to integrate the degree-``n``
    polynomial exactly.
    """
    if not -1 < delta < 1:
        raise ValueError("delta must lie in (-1, 1)")
    n_C, s_C, n_D, s_D = stage_coordinates(n)
    if delta == 0:
        S = s_C + s_D
        return np.exp(betaln(S + 1.0, n - S + 1.0))
    lo, hi = max(0.0, -delta), min(1.0, 1.0 - delta)
    nodes, weights = gauss_legendre_nodes(n // 2 + 2, lo, hi)
    out = np.zeros(s_C.size)
    for t, w in zip(nodes, weights):
        out += w * likelihood_factors(n, t, t + delta)
    return out / (hi - lo)


def average_oc(
    frontier: CoefficientFrontier,
    kind: OcKind,
    delta: float,
    test: TestDefinition | None = None,
    stat: np.ndarray | None = None,
    phi: float = DEFAULT_PHI,
    weights: np.ndarray | None = None,
    empty_arm: str = "adjusted",
) -> float:
    """The OC averaged uniformly over the slice ``theta_D - theta_C = delta``."""
    w = slice_weights(frontier.stage, delta) if weights is None else weights
    f = oc_integrand(kind, frontier, int(np.sign(delta)), test, stat, phi, empty_arm)
    val = float(np.dot(f, frontier.values * w))
    if OcKind(kind) is OcKind.BIAS:
        val -= delta
    return val


def slice_grid(delta: float, step: float = GRID_STEP) -> np.ndarray:
    """``theta_D`` values of the discretized slice, inside the unit square."""
    lo, hi = max(0.0, delta), min(1.0, 1.0 + delta)
    k = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(k + 1), 12)


@dataclass(frozen=True)
class GridExtrema:
    minimum: float
    argmin: float
    maximum: float
    argmax: float


def grid_values(
    frontier: CoefficientFrontier,
    kind: OcKind,
    delta: float,
    test: TestDefinition | None = None,
    stat: np.ndarray | None = None,
    phi: float = DEFAULT_PHI,
    grid: Sequence[float] | None = None,
    empty_arm: str = "adjusted",
) -> tuple[np.ndarray, np.ndarray]:
    """``(theta_D, OC)`` over the discretized slice; ``g`` is reused for every point."""
    th_D = slice_grid(delta) if grid is None else np.asarray(grid, dtype=float)
    f = oc_integrand(kind, frontier, int(np.sign(delta)), test, stat, phi, empty_arm)
    fg = f * frontier.values
    vals = np.empty(th_D.size)
    for k, t in enumerate(th_D):
        tc = min(max(t - delta, 0.0), 1.0)
        vals[k] = np.dot(fg, likelihood_factors(frontier.stage, tc, t))
    if OcKind(kind) is OcKind.BIAS:
        vals -= delta
    return th_D, vals


def grid_extrema(frontier, kind, delta, test=None, stat=None, phi=DEFAULT_PHI, grid=None,
                 empty_arm: str = "adjusted") -> GridExtrema:
    th, v = grid_values(frontier, kind, delta, test, stat, phi, grid, empty_arm)
    if th.size == 0:
        raise ValueError("empty grid")
    i, j = int(np.argmin(v)), int(np.argmax(v))
    return GridExtrema(float(v[i]), float(th[i]), float(v[j]), float(th[j]))


# sweeps


@dataclass(frozen=True)
class TestSpec:
    """Which test to build for each design: a kind and a statistic."""

    kind: TestKind
    statistic: StatisticKind

    __test__ = False

    @classmethod
    def parse(cls, text: str) -> "TestSpec":
        """``"calibrated"``, ``"ux-wald"``, ``"asymptotic"`` and so on."""
        kind, _, stat = text.partition("-")
        kind = TestKind(kind)
        default = StatisticKind.WALD if kind is TestKind.ASYMPTOTIC else StatisticKind.PPCS
        return cls(kind, StatisticKind(stat) if stat else default)

    def label(self) -> str:
        return f"{self.kind.value}-{self.statistic.value}"


@dataclass
class OcReport:
    """One row of a sweep: design, test, OC kind, slice and summaries."""

    design_hash: str
    trial_size: int
    burn_in: int
    test: str
    statistic: str
    kind: str
    delta: float
    value_avg: float
    value_min: float
    argmin_theta_D: float
    value_max: float
    argmax_theta_D: float

    @property
    def burn_in_proportion(self) -> float:
        return 2 * self.burn_in / self.trial_size

    FIELDS = ("design_hash", "n", "b", "BP", "test", "statistic", "kind", "delta",
              "value_avg", "value_min", "argmin_thetaD", "value_max", "argmax_thetaD")

    def row(self) -> list[str]:
        return [self.design_hash, str(self.trial_size), str(self.burn_in),
                format_float(self.burn_in_proportion), self.test, self.statistic, self.kind,
                format_float(self.delta), *(format_float(v) for v in (
                    self.value_avg, self.value_min, self.argmin_theta_D,
                    self.value_max, self.argmax_theta_D))]


@dataclass
class DesignEvaluator:
    """Shared state for evaluating many burn-in lengths of one base design.

    One policy table serves every burn-in length; statistic values and slice
    weights are cached.
    """

    trial_size: int
    prior: object = None
    clip: tuple[float, float] | None = None
    policy: PolicyTable | None = None
    alpha_upper: float = 0.025
    alpha_lower: float = 0.025
    stat_tol: float = STATISTIC_TOL
    empty_arm: str = "adjusted"
    _frontiers: dict = field(default_factory=dict, repr=False)
    _tests: dict = field(default_factory=dict, repr=False)
    _weights: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        from .posterior import UNIFORM

        if self.prior is None:
            self.prior = UNIFORM
        if self.policy is None:
            self.policy = build_policy_table(trial_size=self.trial_size, prior=self.prior,
                                             clip=self.clip, start=0)

    def frontier(self, b: int) -> CoefficientFrontier:
        if b not in self._frontiers:
            DesignSpec(self.trial_size, b)  # validates b
            self._frontiers[b] = final_frontier(self.trial_size, b, self.policy)
        return self._frontiers[b]

    def statistic(self, kind: StatisticKind) -> np.ndarray:
        return final_statistic(self.trial_size, StatisticKind(kind), self.prior, self.stat_tol)

    def test(self, b: int, spec: TestSpec) -> TestDefinition:
        key = (b, spec)
        if key not in self._tests:
            self._tests[key] = build_test(spec.kind, self.frontier(b), self.statistic(spec.statistic),
                                          spec.statistic, self.alpha_upper, self.alpha_lower)
        return self._tests[key]

    def weights(self, delta: float) -> np.ndarray:
        if delta not in self._weights:
            self._weights[delta] = slice_weights(self.trial_size, delta)
        return self._weights[delta]

    def _args(self, b, kind, spec):
        if OcKind(kind) is OcKind.REJECTION:
            if spec is None:
                raise ValueError("rejection rates need a test")
            return self.test(b, spec), self.statistic(spec.statistic)
        return None, None

    def point(self, b, kind, theta, spec: TestSpec | None = None, phi=DEFAULT_PHI) -> float:
        test, stat = self._args(b, kind, spec)
        return oc_point(self.frontier(b), kind, theta, test, stat, phi, self.empty_arm)

    def average(self, b, kind, delta, spec: TestSpec | None = None, phi=DEFAULT_PHI) -> float:
        test, stat = self._args(b, kind, spec)
        return average_oc(self.frontier(b), kind, delta, test, stat, phi, self.weights(delta),
                          self.empty_arm)

    def extrema(self, b, kind, delta, spec: TestSpec | None = None, phi=DEFAULT_PHI) -> GridExtrema:
        test, stat = self._args(b, kind, spec)
        return grid_extrema(self.frontier(b), kind, delta, test, stat, phi, empty_arm=self.empty_arm)

    def forget(self, b: int) -> None:
        """Drop cached objects of one burn-in length to bound memory."""
        self._frontiers.pop(b, None)
        for key in [k for k in self._tests if k[0] == b]:
            del self._tests[key]


def burnin_sweep(
    evaluator: DesignEvaluator,
    burn_ins: Iterable[int],
    tests: Sequence[TestSpec | None],
    kinds: Sequence[OcKind],
    deltas: Sequence[float],
    phi: float = DEFAULT_PHI,
    design_hash: str = "",
) -> list[OcReport]:
    """One report row per (b, test, kind, delta); tests apply to rejection rates only."""
    burn_ins = list(burn_ins)
    if not burn_ins:
        raise ValueError("empty burn-in list")
    rows = []
    for b in burn_ins:
        for kind in map(OcKind, kinds):
            specs = tests if kind is OcKind.REJECTION else [None]
            for spec in specs:
                for delta in deltas:
                    if kind is OcKind.PIWD and delta == 0:
                        continue
                    avg = evaluator.average(b, kind, delta, spec, phi)
                    ext = evaluator.extrema(b, kind, delta, spec, phi)
                    rows.append(OcReport(
                        design_hash, evaluator.trial_size, b,
                        spec.kind.value if spec else "",
                        spec.statistic.value if spec else "",
                        kind.value, float(delta), avg,
                        ext.minimum, ext.argmin, ext.maximum, ext.argmax,
                    ))
        evaluator.forget(b)
    return rows


def power_by_burn_in(evaluator: DesignEvaluator, spec: TestSpec, thetas: Sequence[tuple[float, float]],
                     burn_ins: Iterable[int] | None = None) -> np.ndarray:
    """Matrix of exact power, rows = burn-in lengths, columns = parameter points."""
    bs = list(range(evaluator.trial_size // 2 + 1)) if burn_ins is None else list(burn_ins)
    out = np.empty((len(bs), len(thetas)))
    for r, b in enumerate(bs):
        fr = evaluator.frontier(b)
        test = evaluator.test(b, spec)
        f = oc_integrand(OcKind.REJECTION, fr, 1, test, evaluator.statistic(spec.statistic))
        for c, (tc, td) in enumerate(thetas):
            # same operation order as oc_point so both paths agree bitwise
            out[r, c] = np.dot(f, fr.values * likelihood_factors(fr.stage, tc, td))
    return out


def optimal_burnin(evaluator: DesignEvaluator, spec: TestSpec, theta: tuple[float, float]) -> int:
    """Burn-in length maximizing exact power at ``theta``; ties go to the smaller ``b``."""
    if theta[0] == theta[1]:
        raise ValueError("optimal burn-in needs theta_C != theta_D")
    best_b, best = 0, -np.inf
    for b in range(evaluator.trial_size // 2 + 1):
        p = evaluator.point(b, OcKind.REJECTION, theta, spec)
        if p > best:
            best_b, best = b, p
    return best_b


def pobp_map(evaluator: DesignEvaluator, spec: TestSpec,
             thetas: Sequence[tuple[float, float]]) -> list[tuple[float, float, int]]:
    """Optimal burn-in for many parameter points from one power matrix (first argmax wins)."""
    thetas = [t for t in thetas if t[0] != t[1]]
    if not thetas:
        return []
    power = power_by_burn_in(evaluator, spec, thetas)
    best = np.argmax(power, axis=0)
    return [(tc, td, int(b)) for (tc, td), b in zip(thetas, best)]
