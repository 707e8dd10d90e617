"""Blocked, clipped BRAR with interim analyses and an optional stopping threshold.

After an equal-allocation burn-in of ``b`` per arm, participants arrive in
blocks.  At every block boundary (and at the maximum size) the PPCS is
computed; the trial stops for futility when ``PPCS >= OST`` and for efficacy
when ``1 - PPCS >= OST``.  Otherwise the next block receives ``m_C`` control
slots, either deterministically ``round(block * clip(PPCS))`` or as a
binomial draw with that probability.

As in the fully sequential case the probability of every absorbed outcome
is a theta-free coefficient times the product-Bernoulli likelihood, so one
coefficient pass serves every parameter point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from math import comb

import numpy as np
from scipy.stats import binom

from .coefficients import burn_in_frontier, likelihood_factors
from .posterior import STATISTIC_TOL, UNIFORM, BetaPrior, StatisticKind, final_statistic
from .state_space import StageLayout

NULL_GRID = np.round(np.linspace(0.0, 1.0, 101), 12)
MTNR_GRID = np.round(np.arange(2, 23) / 100, 12)
DESIGN_MENU = (15, 30, 45, 60, 75)


class StopCause(enum.IntEnum):
    EFFICACY = 0
    FUTILITY = 1
    FINAL_NO_STOP = 2


class BlockRule(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    BINOMIAL = "binomial"


@dataclass(frozen=True)
class GsDesignSpec:
    """A group-sequential BRAR design; ``ost > 1`` disables stopping."""

    trial_size: int = 150
    block_size: int = 30
    burn_in: int = 15
    clip: tuple[float, float] = (0.25, 0.75)
    prior: BetaPrior = UNIFORM
    ost: float = 0.986
    block_rule: BlockRule = BlockRule.DETERMINISTIC
    tol: float = STATISTIC_TOL

    def __post_init__(self):
        object.__setattr__(self, "block_rule", BlockRule(self.block_rule))
        if self.block_size <= 0 or self.trial_size <= 0:
            raise ValueError("block and trial sizes must be positive")
        if self.trial_size % self.block_size:
            raise ValueError("trial size must be a multiple of the block size")
        if (2 * self.burn_in) % self.block_size:
            raise ValueError("the burn-in must end on a block boundary")
        if not 0 <= 2 * self.burn_in <= self.trial_size:
            raise ValueError("burn-in exceeds the trial size")
        if not self.ost > 0.5:
            raise ValueError("OST must exceed 1/2")
        lo, hi = self.clip
        if not 0 <= lo <= hi <= 1:
            raise ValueError("clip bounds must satisfy 0 <= lo <= hi <= 1")

    def with_ost(self, ost: float) -> "GsDesignSpec":
        return replace(self, ost=float(ost))

    @property
    def analyses(self) -> list[int]:
        return list(range(2 * self.burn_in, self.trial_size + 1, self.block_size))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@lru_cache(maxsize=64)
def _ppcs_cube(i: int, prior: BetaPrior, tol: float) -> np.ndarray:
    vals = final_statistic(i, StatisticKind.PPCS, prior, tol)
    cube = StageLayout.for_stage(i).to_cube(np.asarray(vals), fill=0.5)
    cube.setflags(write=False)
    return cube


@lru_cache(maxsize=256)
def _shift_matrix(rows: int, m: int) -> np.ndarray:
    """``(rows+m, rows)`` banded matrix convolving a column with ``C(m, k)``."""
    out = np.zeros((rows + m, rows))
    r = np.arange(rows)
    for k in range(m + 1):
        out[r + k, r] = comb(m, k)
    out.setflags(write=False)
    return out


@dataclass
class GsCoefficients:
    """Theta-free description of every absorbed outcome of a design."""

    design: GsDesignSpec
    stage: np.ndarray
    cause: np.ndarray
    n_C: np.ndarray
    s_C: np.ndarray
    n_D: np.ndarray
    s_D: np.ndarray
    coef: np.ndarray

    def weights(self, theta) -> np.ndarray:
        """Probability of every outcome under ``theta = (theta_C, theta_D)``."""
        theta_C, theta_D = theta
        e = np.arange(self.design.trial_size + 1)
        pc, qc = np.power(theta_C, e), np.power(1.0 - theta_C, e)
        pd, qd = np.power(theta_D, e), np.power(1.0 - theta_D, e)
        return self.coef * pc[self.s_C] * qc[self.n_C - self.s_C] * pd[self.s_D] * qd[self.n_D - self.s_D]

    def null_rejection(self, thetas) -> np.ndarray:
        """Efficacy probability at each ``theta_C = theta_D = t``."""
        eff = self.cause == StopCause.EFFICACY
        S = (self.s_C + self.s_D)[eff]
        i = self.stage[eff]
        c = self.coef[eff]
        out = []
        for t in np.atleast_1d(thetas):
            out.append(float(np.sum(c * np.power(t, S) * np.power(1.0 - t, i - S))))
        return np.array(out)


def _absorb(cube, i, mask, cause, parts):
    idx = np.nonzero(mask & (cube > 0))
    if idx[0].size:
        n_C, s_C, s_D = idx
        parts.append((np.full(n_C.size, i), np.full(n_C.size, int(cause)), n_C, s_C, i - n_C, s_D, cube[idx]))


def _advance(cube: np.ndarray, i: int, p_control: np.ndarray, design: GsDesignSpec) -> np.ndarray:
    """Coefficients after one block; ``p_control`` is the clipped PPCS cube at stage ``i``."""
    block = design.block_size
    new = np.zeros((i + block + 1,) * 3)
    if design.block_rule is BlockRule.DETERMINISTIC:
        m_cube = round_half_away(block * p_control).astype(int)
    for n_C in np.flatnonzero(cube.reshape(i + 1, -1).any(axis=1)):
        n_D = i - n_C
        slab = cube[n_C, : n_C + 1, : n_D + 1]
        if design.block_rule is BlockRule.DETERMINISTIC:
            ms = m_cube[n_C, : n_C + 1, : n_D + 1]
            pairs = [(m, np.where(ms == m, slab, 0.0)) for m in np.unique(ms[slab > 0])]
        else:
            p = p_control[n_C, : n_C + 1, : n_D + 1]
            pairs = [(m, slab * binom.pmf(m, block, p)) for m in range(block + 1)]
        for m, sub in pairs:
            out = _shift_matrix(n_C + 1, m) @ sub @ _shift_matrix(n_D + 1, block - m).T
            new[n_C + m, : n_C + m + 1, : n_D + block - m + 1] += out
    if not np.isfinite(new).all():
        raise OverflowError(f"coefficient overflow after stage {i}")
    return new


def gs_coefficients(design: GsDesignSpec) -> GsCoefficients:
    """Forward pass over block boundaries, absorbing stopped trials."""
    parts: list = []
    cube = burn_in_frontier(design.burn_in).cube
    lo, hi = design.clip
    for i in design.analyses:
        ppcs = _ppcs_cube(i, design.prior, design.tol)
        fut = ppcs >= design.ost
        eff = (1.0 - ppcs) >= design.ost
        _absorb(cube, i, eff, StopCause.EFFICACY, parts)
        _absorb(cube, i, fut & ~eff, StopCause.FUTILITY, parts)
        if i == design.trial_size:
            _absorb(cube, i, ~(fut | eff), StopCause.FINAL_NO_STOP, parts)
            break
        cube = np.where(fut | eff, 0.0, cube)
        cube = _advance(cube, i, np.clip(ppcs, lo, hi), design)
    cols = [np.concatenate(c) for c in zip(*parts)]
    return GsCoefficients(design, *[c.astype(np.int64) for c in cols[:6]], cols[6].astype(float))


@dataclass(frozen=True)
class GsOutcome:
    stage: int
    cause: StopCause
    state: tuple[int, int, int, int]
    weight: float


def gs_distribution(design: GsDesignSpec, theta, coeffs: GsCoefficients | None = None) -> list[GsOutcome]:
    """Every absorbed outcome with its probability under ``theta``."""
    co = gs_coefficients(design) if coeffs is None else coeffs
    w = co.weights(theta)
    return [
        GsOutcome(int(co.stage[k]), StopCause(int(co.cause[k])),
                  (int(co.n_C[k]), int(co.s_C[k]), int(co.n_D[k]), int(co.s_D[k])), float(w[k]))
        for k in np.flatnonzero(w > 0)
    ]


@dataclass(frozen=True)
class GsOcs:
    rejection: float
    futility: float
    epasa: float
    pniwd: float
    expected_sample_size: float


def gs_ocs(design: GsDesignSpec, theta, phi: float = 0.1, pniwd_scope: str = "full",
           coeffs: GsCoefficients | None = None) -> GsOcs:
    """Stopping-aware OCs at one parameter point.

    EPASA counts the remaining participants after an efficacy stop as
    allocated to the developmental arm.  With ``pniwd_scope="full"`` the
    imbalance uses the same imputation (remaining participants go to the
    recommended arm after either kind of stop) over the maximum size;
    ``"realized"`` uses the allocations at the stopping analysis.
    """
    co = gs_coefficients(design) if coeffs is None else coeffs
    theta_C, theta_D = theta
    n = design.trial_size
    w = co.weights(theta)
    eff = co.cause == StopCause.EFFICACY
    fut = co.cause == StopCause.FUTILITY
    rest = n - co.stage
    epasa = float(np.dot(w, (co.n_D + rest * eff) / n))
    if pniwd_scope == "full":
        nc = co.n_C + rest * fut
        nd = co.n_D + rest * eff
        denom = np.full(co.stage.size, float(n))
    elif pniwd_scope == "realized":
        nc, nd, denom = co.n_C, co.n_D, co.stage.astype(float)
    else:
        raise ValueError(f"unknown PNIWD scope {pniwd_scope!r}")
    if theta_D > theta_C:
        wrong = nc / denom > nd / denom + phi
    elif theta_C > theta_D:
        wrong = nd / denom > nc / denom + phi
    else:
        wrong = np.zeros(co.stage.size, dtype=bool)
    return GsOcs(
        rejection=float(w[eff].sum()),
        futility=float(w[fut].sum()),
        epasa=epasa,
        pniwd=1.0 - float(w[wrong].sum()),
        expected_sample_size=float(np.dot(w, co.stage)),
    )


def mtnr(design: GsDesignSpec, grid=MTNR_GRID, coeffs: GsCoefficients | None = None) -> float:
    """Minimum true negative rate: one minus the largest null rejection rate on ``grid``."""
    co = gs_coefficients(design) if coeffs is None else coeffs
    return 1.0 - float(co.null_rejection(grid).max())


def ost_candidates(design: GsDesignSpec) -> np.ndarray:
    """Achievable threshold values: ``max(PPCS, 1 - PPCS)`` over analysis-stage states."""
    vals = []
    for i in design.analyses:
        p = np.asarray(final_statistic(i, StatisticKind.PPCS, design.prior, design.tol))
        vals.append(np.maximum(p, 1.0 - p))
    return np.unique(np.concatenate(vals))


def _search_ost(design: GsDesignSpec, error, alpha: float) -> float:
    """Smallest candidate OST with ``error(OST) <= alpha``, assuming ``error`` is nonincreasing."""
    cand = ost_candidates(design)
    cand = cand[cand > 0.5]
    if error(design.with_ost(cand[0])) <= alpha:
        return float(cand[0])
    lo, hi = 0, cand.size  # cand[lo] fails; hi == size means no stopping
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if error(design.with_ost(cand[mid])) <= alpha:
            hi = mid
        else:
            lo = mid
    return float(cand[hi]) if hi < cand.size else np.inf


def calibrate_ost(design: GsDesignSpec, theta_prime: float = 0.12, alpha: float = 0.05) -> float:
    """Smallest OST whose exact type I error at ``(theta', theta')`` is at most ``alpha``."""
    return _search_ost(design, lambda d: float(gs_coefficients(d).null_rejection([theta_prime])[0]), alpha)


def ux_ost(design: GsDesignSpec, grid=NULL_GRID, alpha: float = 0.05) -> float:
    """Smallest OST whose exact type I error is at most ``alpha`` on every null grid point."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty null grid")
    return _search_ost(design, lambda d: float(gs_coefficients(d).null_rejection(grid).max()), alpha)
