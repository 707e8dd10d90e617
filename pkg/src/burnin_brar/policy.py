"""The Bayesian response-adaptive allocation rule with burn-in and clipping."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .posterior import POLICY_TOL, UNIFORM, BetaPrior, StatisticKind, ppcs_states
from .state_space import StageLayout, TrialState, cube_mask, stage_coordinates

CACHE_MAGIC = b"BRARPOL\x00"
CACHE_VERSION = 1


@dataclass(frozen=True)
class DesignSpec:
    """A fully sequential two-arm BRAR design with ``burn_in`` participants per arm."""

    trial_size: int
    burn_in: int = 0
    prior: BetaPrior = UNIFORM
    clip: tuple[float, float] | None = None
    statistic: StatisticKind = StatisticKind.PPCS
    alpha_upper: float = 0.025
    alpha_lower: float = 0.025

    def __post_init__(self):
        if self.trial_size < 0 or self.trial_size % 2:
            raise ValueError("trial_size must be a non-negative even integer")
        if not 0 <= self.burn_in <= self.trial_size // 2:
            raise ValueError(f"burn_in must lie in [0, {self.trial_size // 2}]")
        if self.alpha_upper < 0 or self.alpha_lower < 0:
            raise ValueError("tail levels must be non-negative")
        if self.clip is not None:
            lo, hi = self.clip
            if not 0 <= lo <= hi <= 1:
                raise ValueError("clip bounds must satisfy 0 <= lo <= hi <= 1")

    @property
    def alpha(self) -> float:
        return self.alpha_upper + self.alpha_lower

    @property
    def burn_in_proportion(self) -> float:
        return 2 * self.burn_in / self.trial_size if self.trial_size else 0.0


def _clamp(p: np.ndarray, clip) -> np.ndarray:
    if clip is None:
        return p
    return np.clip(p, clip[0], clip[1])


def allocation_prob(state: TrialState, design: DesignSpec, abs_tol: float = POLICY_TOL) -> float:
    """Probability that the next participant is allocated to control."""
    if state.stage < 2 * design.burn_in:
        raise ValueError(
            f"stage {state.stage} is inside the burn-in (first {2 * design.burn_in} participants)"
        )
    p = ppcs_states(*state, prior=design.prior, abs_tol=abs_tol)
    return float(_clamp(p, design.clip))


@dataclass
class PolicyTable:
    """Allocation probabilities for every state of stages ``start..trial_size-1``.

    ``stages[k]`` holds the compact array of stage ``start + k``.  A table
    built with ``start = 0`` serves every burn-in length of the same
    trial size, prior and clipping.
    """

    trial_size: int
    prior: BetaPrior
    clip: tuple[float, float] | None
    tol: float
    start: int
    stages: list[np.ndarray] = field(repr=False)

    def stage(self, i: int) -> np.ndarray:
        if not self.start <= i < self.trial_size:
            raise KeyError(f"stage {i} not covered by this table")
        return self.stages[i - self.start]

    def cube(self, i: int) -> np.ndarray:
        """Stage-``i`` probabilities as an ``(i+1)^3`` cube; invalid cells hold 1/2."""
        out = np.full((i + 1,) * 3, 0.5)
        out[cube_mask(i)] = self.stage(i)
        return out

    def __call__(self, state: TrialState) -> float:
        return float(self.stage(state.stage)[StageLayout.for_stage(state.stage).index(state)])

    @property
    def n_entries(self) -> int:
        return sum(s.size for s in self.stages)

    def key(self) -> dict:
        return {
            "trial_size": self.trial_size,
            "prior": list(self.prior.as_tuple()),
            "clip": list(self.clip) if self.clip is not None else None,
            "tol": self.tol,
            "start": self.start,
        }

    # binary cache

    def save(self, path: str | Path) -> None:
        payload = b"".join(np.ascontiguousarray(s, dtype="<f8").tobytes() for s in self.stages)
        header = dict(self.key(), sha256=hashlib.sha256(payload).hexdigest())
        hbytes = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<II", CACHE_VERSION, len(hbytes)))
            fh.write(hbytes)
            fh.write(payload)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyTable":
        """Read a cached table; raises ``ValueError`` on any corruption."""
        data = Path(path).read_bytes()
        if data[:8] != CACHE_MAGIC:
            raise ValueError("not a policy cache file")
        version, hlen = struct.unpack("<II", data[8:16])
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        header = json.loads(data[16:16 + hlen])
        payload = data[16 + hlen:]
        if hashlib.sha256(payload).hexdigest() != header["sha256"]:
            raise ValueError("policy cache checksum mismatch")
        flat = np.frombuffer(payload, dtype="<f8")
        n, start = header["trial_size"], header["start"]
        sizes = [StageLayout.for_stage(i).total for i in range(start, n)]
        if sum(sizes) != flat.size:
            raise ValueError("policy cache payload has the wrong length")
        stages = np.split(flat.astype(float), np.cumsum(sizes)[:-1]) if sizes else []
        clip = tuple(header["clip"]) if header["clip"] is not None else None
        return cls(n, BetaPrior(*header["prior"]), clip, header["tol"], start, list(stages))


def build_policy_table(
    design: DesignSpec | None = None,
    *,
    trial_size: int | None = None,
    prior: BetaPrior = UNIFORM,
    clip: tuple[float, float] | None = None,
    tol: float = POLICY_TOL,
    start: int | None = None,
) -> PolicyTable:
    """Evaluate the allocation rule on every state of the adaptive stages.

    Either pass a ``DesignSpec`` (the table then starts at stage ``2b``) or
    the keyword arguments.  All stages are integrated together, in chunks.
    """
    if design is not None:
        trial_size, prior, clip = design.trial_size, design.prior, design.clip
        start = 2 * design.burn_in if start is None else start
    if trial_size is None:
        raise TypeError("trial_size is required")
    start = 0 if start is None else start
    stage_ids = list(range(start, trial_size))
    coords = [stage_coordinates(i) for i in stage_ids]
    if not coords:
        return PolicyTable(trial_size, prior, clip, tol, start, [])
    cat = [np.concatenate([c[k] for c in coords]) for k in range(4)]
    vals = _chunked_ppcs(*cat, prior=prior, tol=tol)
    vals = _clamp(vals, clip)
    sizes = [c[0].size for c in coords]
    stages = np.split(vals, np.cumsum(sizes)[:-1])
    return PolicyTable(trial_size, prior, clip, tol, start, [np.ascontiguousarray(s) for s in stages])


def stage_policy(i: int, prior: BetaPrior = UNIFORM, clip=None, tol: float = POLICY_TOL) -> np.ndarray:
    """Allocation probabilities of one stage in compact order, without building a table."""
    return _clamp(_chunked_ppcs(*stage_coordinates(i), prior=prior, tol=tol), clip)


def _chunked_ppcs(n_C, s_C, n_D, s_D, prior, tol, chunk: int = 150_000) -> np.ndarray:
    out = np.empty(n_C.size)
    for lo in range(0, n_C.size, chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = ppcs_states(n_C[sl], s_C[sl], n_D[sl], s_D[sl], prior=prior, abs_tol=tol)
    return out


def cached_policy_table(
    trial_size: int,
    prior: BetaPrior = UNIFORM,
    clip: tuple[float, float] | None = None,
    tol: float = POLICY_TOL,
    cache_dir: str | Path | None = None,
) -> PolicyTable:
    """A stage-0 table, read from ``cache_dir`` when a valid cache file exists."""
    key = {
        "trial_size": trial_size,
        "prior": list(prior.as_tuple()),
        "clip": list(clip) if clip is not None else None,
        "tol": tol,
    }
    name = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
    path = Path(cache_dir) / f"policy-{trial_size}-{name}.bin" if cache_dir else None
    if path is not None and path.exists():
        try:
            table = PolicyTable.load(path)
            if table.key() == dict(key, start=0):
                return table
        except (ValueError, KeyError, json.JSONDecodeError, struct.error):
            pass  # corrupted: recompute below
    table = build_policy_table(trial_size=trial_size, prior=prior, clip=clip, tol=tol, start=0)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.save(path)
    return table
