"""Monte Carlo trial simulator, used only to cross-check the exact engine.

Replications run in fixed chunks of ``CHUNK`` trials.  Chunk ``k`` draws
from a Philox generator seeded with the ``k``-th child of
``SeedSequence(seed)``, so a fixed seed gives the same stream on every
platform.  Trials within a chunk are simulated in lock-step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2_contingency

from .exact_tests import TestDefinition
from .group_sequential import BlockRule, GsDesignSpec, StopCause, _ppcs_cube, round_half_away
from .oc import DEFAULT_PHI, OcKind
from .policy import DesignSpec, PolicyTable, build_policy_table
from .posterior import StatisticKind, final_statistic
from .state_space import StageLayout, TrialState

CHUNK = 10_000
CHI2_LEVEL = 1e-3


class BurnInRule(str, enum.Enum):
    ALTERNATING = "alternating"
    RANDOM = "random-allocation-rule"


@dataclass
class SimConfig:
    design: DesignSpec | GsDesignSpec
    theta: tuple[float, float]
    replications: int = 100_000
    seed: int = 20240101
    burn_in_rule: BurnInRule = BurnInRule.ALTERNATING
    policy: PolicyTable | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        self.burn_in_rule = BurnInRule(self.burn_in_rule)
        if isinstance(self.design, DesignSpec) and self.policy is None:
            self.policy = build_policy_table(self.design)

    def generators(self):
        n_chunks = -(-self.replications // CHUNK)
        children = np.random.SeedSequence(self.seed).spawn(n_chunks)
        for k, child in enumerate(children):
            size = min(CHUNK, self.replications - k * CHUNK)
            yield np.random.Generator(np.random.Philox(child)), size


def _burn_in_arms(rule: BurnInRule, b: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(size, 2b)`` array, True for control, with exactly ``b`` control slots per row."""
    if rule is BurnInRule.ALTERNATING:
        return np.broadcast_to(np.arange(2 * b) % 2 == 0, (size, 2 * b))
    base = np.broadcast_to(np.arange(2 * b) < b, (size, 2 * b))
    return rng.permuted(base, axis=1)


def _simulate_fixed(cfg: SimConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    """Final states ``(size, 4)`` of a fully sequential design."""
    d = cfg.design
    theta_C, theta_D = cfg.theta
    st = np.zeros((size, 4), dtype=np.int64)  # n_C, s_C, n_D, s_D
    arms = _burn_in_arms(cfg.burn_in_rule, d.burn_in, size, rng)
    for i in range(d.trial_size):
        if i < 2 * d.burn_in:
            to_c = arms[:, i]
        else:
            pi = cfg.policy.cube(i)[st[:, 0], st[:, 1], st[:, 3]]
            to_c = rng.random(size) < pi
        u = rng.random(size)
        succ = np.where(to_c, u < theta_C, u < theta_D)
        st[:, 0] += to_c
        st[:, 1] += to_c & succ
        st[:, 2] += ~to_c
        st[:, 3] += ~to_c & succ
    return st


def _simulate_gs(cfg: SimConfig, rng: np.random.Generator, size: int):
    """``(stage, cause, state)`` arrays for a group-sequential design."""
    d = cfg.design
    theta_C, theta_D = cfg.theta
    b, block = d.burn_in, d.block_size
    st = np.zeros((size, 4), dtype=np.int64)
    st[:, 0] = st[:, 2] = b
    st[:, 1] = rng.binomial(b, theta_C, size)
    st[:, 3] = rng.binomial(b, theta_D, size)
    stage = np.full(size, -1)
    cause = np.full(size, -1)
    lo, hi = d.clip
    for i in d.analyses:
        live = stage < 0
        ppcs = _ppcs_cube(i, d.prior, d.tol)[st[:, 0], st[:, 1], st[:, 3]]
        eff = live & ((1.0 - ppcs) >= d.ost)
        fut = live & ~eff & (ppcs >= d.ost)
        cause[eff], cause[fut] = StopCause.EFFICACY, StopCause.FUTILITY
        stage[eff | fut] = i
        if i == d.trial_size:
            rest = stage < 0
            cause[rest], stage[rest] = StopCause.FINAL_NO_STOP, i
            break
        p = np.clip(ppcs, lo, hi)
        if d.block_rule is BlockRule.DETERMINISTIC:
            m = round_half_away(block * p).astype(np.int64)
        else:
            m = rng.binomial(block, p)
        live = stage < 0
        m = np.where(live, m, 0)
        md = np.where(live, block - m, 0)
        st[:, 0] += m
        st[:, 1] += rng.binomial(m, theta_C)
        st[:, 2] += md
        st[:, 3] += rng.binomial(md, theta_D)
    return stage, cause, st


def simulate_trial(config: SimConfig):
    """One sampled trial: a ``TrialState`` (fixed design) or ``(stage, cause, TrialState)``."""
    rng, _ = next(config.generators())
    if isinstance(config.design, GsDesignSpec):
        stage, cause, st = _simulate_gs(config, rng, 1)
        return int(stage[0]), StopCause(int(cause[0])), TrialState(*map(int, st[0]))
    return TrialState(*map(int, _simulate_fixed(config, rng, 1)[0]))


def simulate_final_states(config: SimConfig) -> np.ndarray:
    """All replications' final states of a fixed design, ``(replications, 4)``."""
    return np.concatenate([_simulate_fixed(config, rng, size) for rng, size in config.generators()])


def _fixed_functional(st, cfg, kind, test, phi, empty_arm):
    n = cfg.design.trial_size
    n_C, s_C, n_D, s_D = st.T
    theta_C, theta_D = cfg.theta
    if isinstance(kind, TestDefinition):
        stat = np.asarray(final_statistic(n, kind.statistic, cfg.design.prior))
        lay = StageLayout.for_stage(n)
        idx = lay.offsets[n_C] + s_C * (n_D + 1) + s_D
        return kind.reject(stat[idx], s_C + s_D).astype(float)
    kind = OcKind(kind)
    if kind is OcKind.EPASA:
        if theta_D > theta_C:
            return n_D / n
        if theta_C > theta_D:
            return n_C / n
        return (n_C + n_D) / n - 0.5
    if kind is OcKind.PIWD:
        better, worse = (n_D, n_C) if theta_D > theta_C else (n_C, n_D)
        return (worse / n > better / n + phi).astype(float)
    if kind is OcKind.BIAS:
        empty = np.minimum(n_C, n_D) == 0
        hat_C = np.where(empty, (s_C + 1) / (n_C + 2), s_C / np.maximum(n_C, 1))
        hat_D = np.where(empty, (s_D + 1) / (n_D + 2), s_D / np.maximum(n_D, 1))
        diff = hat_D - hat_C
        if empty_arm == "zero":
            diff = np.where(empty, 0.0, diff)
        return diff - (theta_D - theta_C)
    raise ValueError(f"use a TestDefinition for rejection rates, not {kind}")


def _gs_functional(stage, cause, st, cfg, kind, phi):
    n = cfg.design.trial_size
    n_C, _, n_D, _ = st.T
    rest = n - stage
    eff = cause == StopCause.EFFICACY
    fut = cause == StopCause.FUTILITY
    if kind == "rejection":
        return eff.astype(float)
    if kind == "epasa":
        return (n_D + rest * eff) / n
    if kind == "sample_size":
        return stage.astype(float)
    if kind == "pniwd":
        theta_C, theta_D = cfg.theta
        nc, nd = n_C + rest * fut, n_D + rest * eff
        wrong = nc / n > nd / n + phi if theta_D > theta_C else nd / n > nc / n + phi
        return 1.0 - wrong
    raise ValueError(f"unknown group-sequential functional {kind!r}")


def mc_estimates(config: SimConfig, kinds, phi: float = DEFAULT_PHI, empty_arm: str = "adjusted") -> list:
    """Sample mean and standard error of several OC functionals from one simulation.

    Each kind is an ``OcKind`` or a ``TestDefinition`` (rejection rate) for
    fixed designs, and one of ``"rejection"``, ``"epasa"``, ``"pniwd"``,
    ``"sample_size"`` for group-sequential designs.
    """
    vals = [[] for _ in kinds]
    for rng, size in config.generators():
        if isinstance(config.design, GsDesignSpec):
            sim = _simulate_gs(config, rng, size)
            for acc, kind in zip(vals, kinds):
                acc.append(_gs_functional(*sim, config, kind, phi))
        else:
            st = _simulate_fixed(config, rng, size)
            for acc, kind in zip(vals, kinds):
                acc.append(_fixed_functional(st, config, kind, None, phi, empty_arm))
    out = []
    for acc in vals:
        v = np.concatenate(acc)
        se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else np.inf
        out.append((float(np.mean(v)), se))
    return out


def mc_estimate(config: SimConfig, kind, phi: float = DEFAULT_PHI, empty_arm: str = "adjusted"):
    """Sample mean and standard error of one OC functional; see ``mc_estimates``."""
    return mc_estimates(config, [kind], phi, empty_arm)[0]


def bracket_z(exact: float, mean: float, se: float, replications: int, indicator: bool) -> float:
    """Standardized distance between an exact value and an MC estimate.

    Indicator functionals (rejection, PIWD, PNIWD) use the binomial standard
    error at the exact value, which stays valid for rare events where the
    sample standard error collapses; other functionals use ``se``.
    """
    if indicator:
        se = float(np.sqrt(exact * (1.0 - exact) / replications))
    if se > 0:
        return (mean - exact) / se
    return 0.0 if abs(mean - exact) <= 1e-12 else float(np.inf)


def burn_in_rule_chi2(design: DesignSpec, theta, replications: int = 100_000, seed: int = 7,
                      min_count: int = 10) -> float:
    """p-value of a chi-square homogeneity test between the two burn-in rules' final states.

    States seen fewer than ``min_count`` times in total are pooled into one cell.
    """
    policy = build_policy_table(design)
    tables = []
    for k, rule in enumerate(BurnInRule):
        cfg = SimConfig(design, theta, replications, seed + k, rule, policy)
        st = simulate_final_states(cfg)
        lay = StageLayout.for_stage(design.trial_size)
        idx = lay.offsets[st[:, 0]] + st[:, 1] * (st[:, 2] + 1) + st[:, 3]
        tables.append(np.bincount(idx, minlength=lay.total))
    counts = np.vstack(tables)
    big = counts.sum(axis=0) >= min_count
    table = np.column_stack([counts[:, big], counts[:, ~big].sum(axis=1)])
    table = table[:, table.sum(axis=0) > 0]
    return float(chi2_contingency(table)[1])
