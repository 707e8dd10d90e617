"""Path-count coefficients and exact final-state distributions.

For a policy ``pi`` the probability of reaching state ``x`` factors as
``g(x) * theta_C**s_C (1-theta_C)**f_C * theta_D**s_D (1-theta_D)**f_D`` where
``g`` sums allocation-probability products over every path into ``x`` and
does not depend on ``theta``.  ``g`` is built stage by stage from the closed
form at the end of the burn-in.

Bound: ``g`` at stage ``i`` is at most ``2**i`` times the largest product of
binomial coefficients, well under ``1e150`` for ``i <= 240``, so plain 64-bit
floats cannot overflow; ``propagate`` still checks for infinities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .policy import PolicyTable, stage_policy
from .posterior import POLICY_TOL, UNIFORM, BetaPrior
from .state_space import StageLayout, TrialState, cube_mask, stage_coordinates

FRONTIER_MAGIC = b"BRARGFR\x00"


@dataclass
class CoefficientFrontier:
    """``g`` at one stage, held as an ``(i+1)^3`` cube indexed ``[n_C, s_C, s_D]``."""

    stage: int
    cube: np.ndarray = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        """Compact array in canonical state order."""
        return self.cube[cube_mask(self.stage)]

    def __getitem__(self, state: TrialState) -> float:
        if state.stage != self.stage or not state.is_valid():
            raise KeyError(state)
        return float(self.cube[state.n_C, state.s_C, state.s_D])

    def dump(self, path: str | Path) -> None:
        """Binary dump: magic, stage, count, then canonical-order float64 values."""
        vals = self.values.astype("<f8")
        with open(path, "wb") as fh:
            fh.write(FRONTIER_MAGIC)
            fh.write(struct.pack("<IQ", self.stage, vals.size))
            fh.write(vals.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "CoefficientFrontier":
        data = Path(path).read_bytes()
        if data[:8] != FRONTIER_MAGIC:
            raise ValueError("not a frontier dump")
        stage, count = struct.unpack("<IQ", data[8:20])
        vals = np.frombuffer(data[20:], dtype="<f8")
        if vals.size != count or count != StageLayout.for_stage(stage).total:
            raise ValueError("frontier dump has the wrong length")
        return cls(stage, StageLayout.for_stage(stage).to_cube(vals.astype(float)))


def burn_in_frontier(b: int) -> CoefficientFrontier:
    """``g`` at stage ``2b`` after ``b`` participants per arm: ``C(b,s_C) C(b,s_D)`` on ``n_C = b``."""
    if b < 0:
        raise ValueError("burn-in must be non-negative")
    binom = [comb(b, s) for s in range(b + 1)]
    cube = np.zeros((2 * b + 1,) * 3)
    # exact integer products, rounded once
    cube[b, : b + 1, : b + 1] = [[float(x * y) for y in binom] for x in binom]
    return CoefficientFrontier(2 * b, cube)


def _step(g: np.ndarray, pi: np.ndarray, i: int) -> np.ndarray:
    a = g * pi
    bb = g * (1.0 - pi)
    new = np.zeros((i + 2,) * 3)
    new[1:, 1:, : i + 1] += a  # control success
    new[1:, : i + 1, : i + 1] += a  # control failure
    new[: i + 1, : i + 1, 1:] += bb  # developmental success
    new[: i + 1, : i + 1, : i + 1] += bb  # developmental failure
    return new


def propagate(frontier: CoefficientFrontier, policy: PolicyTable | np.ndarray) -> CoefficientFrontier:
    """Advance ``g`` one stage.  ``policy`` is a table or a stage cube of allocation probabilities."""
    i = frontier.stage
    pi = policy.cube(i) if isinstance(policy, PolicyTable) else np.asarray(policy, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # checked below
        new = _step(frontier.cube, pi, i)
        new *= cube_mask(i + 1)
    if not np.isfinite(new).all():
        n_C, s_C, s_D = (int(v) for v in np.argwhere(~np.isfinite(new))[0])
        raise OverflowError(f"coefficient overflow at state {TrialState(n_C, s_C, i + 1 - n_C, s_D)}")
    return CoefficientFrontier(i + 1, new)


def final_frontier(
    trial_size: int,
    burn_in: int,
    policy: PolicyTable,
    history: list | None = None,
) -> CoefficientFrontier:
    """``g`` at the final stage.  Pass a list as ``history`` to collect every frontier."""
    if not 0 <= 2 * burn_in <= trial_size:
        raise ValueError(f"burn-in {burn_in} incompatible with trial size {trial_size}")
    fr = burn_in_frontier(burn_in)
    if history is not None:
        history.append(fr)
    for _ in range(2 * burn_in, trial_size):
        fr = propagate(fr, policy)
        if history is not None:
            history.append(fr)
    return fr


def streamed_final_frontier(
    trial_size: int,
    burn_in: int,
    prior: BetaPrior = UNIFORM,
    clip: tuple[float, float] | None = None,
    tol: float = POLICY_TOL,
) -> CoefficientFrontier:
    """``g`` at the final stage, evaluating the allocation rule one stage at a time.

    Peak memory is a few stage cubes instead of a whole policy table, which
    is what makes ``trial_size = 240`` feasible.
    """
    if not 0 <= 2 * burn_in <= trial_size:
        raise ValueError(f"burn-in {burn_in} incompatible with trial size {trial_size}")
    fr = burn_in_frontier(burn_in)
    for i in range(2 * burn_in, trial_size):
        pi = StageLayout.for_stage(i).to_cube(stage_policy(i, prior, clip, tol), fill=0.5)
        fr = propagate(fr, pi)
    return fr


def alternating_burn_in_frontier(b: int) -> CoefficientFrontier:
    """The burn-in frontier built step by step under strict C, D alternation."""
    fr = CoefficientFrontier(0, np.ones((1, 1, 1)))
    for i in range(2 * b):
        pi = np.full((i + 1,) * 3, 1.0 if i % 2 == 0 else 0.0)
        fr = propagate(fr, pi)
    return fr


def likelihood_factors(i: int, theta_C: float, theta_D: float) -> np.ndarray:
    """``theta_C**s_C (1-theta_C)**f_C theta_D**s_D (1-theta_D)**f_D`` in compact order (0**0 = 1)."""
    n_C, s_C, n_D, s_D = stage_coordinates(i)
    e = np.arange(i + 1)
    pc, qc = np.power(theta_C, e), np.power(1.0 - theta_C, e)
    pd, qd = np.power(theta_D, e), np.power(1.0 - theta_D, e)
    return pc[s_C] * qc[n_C - s_C] * pd[s_D] * qd[n_D - s_D]


def final_distribution(frontier: CoefficientFrontier, theta) -> np.ndarray:
    """Probabilities of every final state (compact order) under ``theta = (theta_C, theta_D)``."""
    theta_C, theta_D = theta
    if not (0 <= theta_C <= 1 and 0 <= theta_D <= 1):
        raise ValueError("success probabilities must lie in [0, 1]")
    return frontier.values * likelihood_factors(frontier.stage, theta_C, theta_D)


def reachable(frontier: CoefficientFrontier) -> np.ndarray:
    """Boolean compact mask of states with positive coefficient."""
    return frontier.values > 0


def total_successes_mass(frontier: CoefficientFrontier) -> np.ndarray:
    """``sum_{S(x)=s} g(x)`` for ``s = 0..i``; equals ``C(i, s)`` for any policy."""
    n_C, s_C, n_D, s_D = stage_coordinates(frontier.stage)
    return np.bincount(s_C + s_D, weights=frontier.values, minlength=frontier.stage + 1)


__all__ = [
    "CoefficientFrontier",
    "alternating_burn_in_frontier",
    "burn_in_frontier",
    "final_distribution",
    "final_frontier",
    "likelihood_factors",
    "propagate",
    "reachable",
    "streamed_final_frontier",
    "total_successes_mass",
]
