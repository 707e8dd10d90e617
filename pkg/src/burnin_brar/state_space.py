"""Sufficient-statistic state space of a two-arm binary trial.

A state at stage ``i`` is ``(n_C, s_C, n_D, s_D)`` with ``n_C + n_D = i``.
Two storage forms are used throughout the package:

* the *compact* form: a 1-D array over the states of one stage, in canonical
  order (ascending ``n_C``, then ``s_C``, then ``s_D``);
* the *cube* form: a dense ``(i+1, i+1, i+1)`` array indexed
  ``[n_C, s_C, s_D]`` in which invalid cells are zero.

Flattening the cube in C order and keeping only valid cells reproduces the
canonical order, so the two forms convert with a single boolean mask.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache, wraps
from typing import Iterator, NamedTuple

import numpy as np


class TrialState(NamedTuple):
    n_C: int
    s_C: int
    n_D: int
    s_D: int

    @property
    def stage(self) -> int:
        return self.n_C + self.n_D

    @property
    def total_successes(self) -> int:
        return self.s_C + self.s_D

    def swapped(self) -> "TrialState":
        """The same trial with the arm labels exchanged."""
        return TrialState(self.n_D, self.s_D, self.n_C, self.s_C)

    def is_valid(self) -> bool:
        return 0 <= self.s_C <= self.n_C and 0 <= self.s_D <= self.n_D


def n_states(i: int) -> int:
    """Number of states at stage ``i``: ``(i+1)(i+2)(i+3)/6``."""
    return (i + 1) * (i + 2) * (i + 3) // 6


def enumerate_states(i: int, max_stage: int | None = None) -> Iterator[TrialState]:
    """Yield every state of stage ``i`` in canonical order."""
    if i < 0 or (max_stage is not None and i > max_stage):
        raise ValueError(f"stage {i} out of range [0, {max_stage}]")
    for n_C in range(i + 1):
        n_D = i - n_C
        for s_C in range(n_C + 1):
            for s_D in range(n_D + 1):
                yield TrialState(n_C, s_C, n_D, s_D)


@dataclass(frozen=True)
class StageLayout:
    """Dense indexing of the states of one stage."""

    stage: int
    offsets: np.ndarray = field(repr=False)
    total: int

    @classmethod
    def for_stage(cls, i: int) -> "StageLayout":
        return _layout(i)

    def index(self, state: TrialState) -> int:
        if state.stage != self.stage or not state.is_valid():
            raise ValueError(f"{state} is not a state of stage {self.stage}")
        return int(self.offsets[state.n_C]) + state.s_C * (state.n_D + 1) + state.s_D

    def state_of_index(self, k: int) -> TrialState:
        if not 0 <= k < self.total:
            raise IndexError(f"index {k} outside [0, {self.total})")
        n_C = int(np.searchsorted(self.offsets, k, side="right")) - 1
        n_D = self.stage - n_C
        r = k - int(self.offsets[n_C])
        s_C, s_D = divmod(r, n_D + 1)
        return TrialState(n_C, s_C, n_D, s_D)

    # cube <-> compact conversion

    @property
    def mask(self) -> np.ndarray:
        return cube_mask(self.stage)

    def to_compact(self, cube: np.ndarray) -> np.ndarray:
        return cube[self.mask]

    def to_cube(self, flat: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.stage + 1,) * 3, fill, dtype=np.asarray(flat).dtype)
        out[self.mask] = flat
        return out

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(n_C, s_C, n_D, s_D)`` arrays for the compact order."""
        return stage_coordinates(self.stage)


@lru_cache(maxsize=None)
def _layout(i: int) -> StageLayout:
    n_C = np.arange(i + 1)
    sizes = (n_C + 1) * (i - n_C + 1)
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    offsets.setflags(write=False)
    return StageLayout(i, offsets, n_states(i))


def _byte_budget_cache(max_bytes: int):
    """LRU cache over stage index ``i`` that evicts by total array size.

    A fixed entry count would hold every stage of a small trial but several
    GB of index arrays near ``i = 240``.
    """

    def decorate(fn):
        store: OrderedDict = OrderedDict()
        used = [0]

        @wraps(fn)
        def cached(i: int):
            if i in store:
                store.move_to_end(i)
                return store[i][0]
            value = fn(i)
            size = sum(a.nbytes for a in (value if isinstance(value, tuple) else (value,)))
            store[i] = (value, size)
            used[0] += size
            while used[0] > max_bytes and len(store) > 1:
                used[0] -= store.popitem(last=False)[1][1]
            return value

        cached.cache_clear = lambda: (store.clear(), used.__setitem__(0, 0))
        return cached

    return decorate


@_byte_budget_cache(256 * 2**20)
def cube_mask(i: int) -> np.ndarray:
    n_C, s_C, s_D = np.ogrid[: i + 1, : i + 1, : i + 1]
    m = (s_C <= n_C) & (s_D <= i - n_C)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def cube_grids(i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Broadcastable ``(n_C, s_C, n_D, s_D)`` index grids for the stage-``i`` cube."""
    n_C, s_C, s_D = np.ogrid[: i + 1, : i + 1, : i + 1]
    return n_C, s_C, i - n_C, s_D


@_byte_budget_cache(768 * 2**20)
def stage_coordinates(i: int):
    n_C, s_C, s_D = np.nonzero(cube_mask(i))
    n_D = i - n_C
    for a in (n_C, s_C, n_D, s_D):
        a.setflags(write=False)
    return n_C, s_C, n_D, s_D


def predecessors(state: TrialState) -> list[TrialState]:
    """Valid states one stage earlier that lead to ``state`` in one step.

    Listed in the order success-C, failure-C, success-D, failure-D.
    """
    n_C, s_C, n_D, s_D = state
    cands = [
        TrialState(n_C - 1, s_C - 1, n_D, s_D),
        TrialState(n_C - 1, s_C, n_D, s_D),
        TrialState(n_C, s_C, n_D - 1, s_D - 1),
        TrialState(n_C, s_C, n_D - 1, s_D),
    ]
    return [c for c in cands if c.n_C >= 0 and c.n_D >= 0 and c.is_valid()]
