"""Test statistics on trial states.

PPCS, the posterior probability that control is superior, is
``P(theta_C >= theta_D)`` for independent Beta posteriors.  It reduces to a
one-dimensional integral over ``theta_D`` of the developmental density times
the control survival function, which is evaluated by adaptive Gauss-Kronrod
quadrature.  For integer shape parameters a finite-sum identity gives an
independent check.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betainc, betaincc, betaln

from .quadrature import gauss_kronrod
from .state_space import TrialState, stage_coordinates

POLICY_TOL = 1e-3
STATISTIC_TOL = 1e-6


class StatisticKind(str, enum.Enum):
    PPCS = "ppcs"
    WALD = "wald"


@dataclass(frozen=True)
class BetaPrior:
    alpha_C: float = 1.0
    beta_C: float = 1.0
    alpha_D: float = 1.0
    beta_D: float = 1.0

    def __post_init__(self):
        for name in ("alpha_C", "beta_C", "alpha_D", "beta_D"):
            if not getattr(self, name) > 0:
                raise ValueError(f"prior parameter {name} must be positive")

    @classmethod
    def both(cls, alpha: float, beta: float) -> "BetaPrior":
        """The same Beta(alpha, beta) prior on both arms."""
        return cls(alpha, beta, alpha, beta)

    @property
    def symmetric(self) -> bool:
        return (self.alpha_C, self.beta_C) == (self.alpha_D, self.beta_D)

    @property
    def integer(self) -> bool:
        return all(float(v).is_integer() for v in self.as_tuple())

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha_C, self.beta_C, self.alpha_D, self.beta_D)

    def label(self) -> str:
        if self.symmetric:
            return f"Beta({self.alpha_C:g},{self.beta_C:g})"
        return f"C~Beta({self.alpha_C:g},{self.beta_C:g});D~Beta({self.alpha_D:g},{self.beta_D:g})"


UNIFORM = BetaPrior()


def posterior_params(n_C, s_C, n_D, s_D, prior: BetaPrior = UNIFORM):
    """Posterior Beta shapes ``(a_C, b_C, a_D, b_D)`` as float arrays."""
    n_C, s_C, n_D, s_D = (np.asarray(v, dtype=float) for v in (n_C, s_C, n_D, s_D))
    return (
        s_C + prior.alpha_C,
        n_C - s_C + prior.beta_C,
        s_D + prior.alpha_D,
        n_D - s_D + prior.beta_D,
    )


def _ppcs_integrals(a_C, b_C, a_D, b_D, abs_tol: float) -> np.ndarray:
    """``P(Beta(a_C,b_C) >= Beta(a_D,b_D))`` elementwise by quadrature."""
    n = a_C.size
    lnorm = betaln(a_D, b_D)
    regular = (a_D >= 1) & (b_D >= 1)

    # Problems: regular ones integrate over [0, 1]; a problem with a
    # developmental shape below one is split at 1/2 and the singular end is
    # mapped by t = u**(1/a) (or 1 - t = v**(1/b)), which removes the
    # endpoint singularity of the density.
    reg = np.flatnonzero(regular)
    irr = np.flatnonzero(~regular)
    src = np.concatenate((reg, irr, irr))
    mode = np.concatenate((np.zeros(reg.size, int), np.ones(irr.size, int), np.full(irr.size, 2)))
    left_sing = a_D[irr] < 1
    right_sing = b_D[irr] < 1
    lo = np.concatenate((np.zeros(reg.size), np.zeros(irr.size), np.where(right_sing, 0.0, 0.5)))
    hi = np.concatenate((
        np.ones(reg.size),
        np.where(left_sing, 0.5 ** a_D[irr], 0.5),
        np.where(right_sing, 0.5 ** b_D[irr], 1.0),
    ))
    # modes 1/2 fall back to plain integration on their half when not singular
    mode[reg.size: reg.size + irr.size][~left_sing] = 0
    mode[reg.size + irr.size:][~right_sing] = 0

    aC, bC, aD, bD, ln = a_C[src], b_C[src], a_D[src], b_D[src], lnorm[src]

    def integrand(x, owner):
        m = mode[owner][:, None]
        ac, bc = aC[owner][:, None], bC[owner][:, None]
        ad, bd, lz = aD[owner][:, None], bD[owner][:, None], ln[owner][:, None]
        out = np.empty_like(x)

        plain = np.broadcast_to(m == 0, x.shape)
        if plain.any():
            rows = (m == 0)[:, 0]
            t = x[rows]
            dens = np.exp((ad[rows] - 1) * np.log(t) + (bd[rows] - 1) * np.log1p(-t) - lz[rows])
            out[rows] = dens * betainc(bc[rows], ac[rows], 1.0 - t)
        rows = (m == 1)[:, 0]
        if rows.any():
            t = x[rows] ** (1.0 / ad[rows])
            w = np.exp((bd[rows] - 1) * np.log1p(-t) - lz[rows]) / ad[rows]
            # t can be far below machine epsilon here, so take the complement directly
            out[rows] = w * betaincc(ac[rows], bc[rows], t)
        rows = (m == 2)[:, 0]
        if rows.any():
            omt = x[rows] ** (1.0 / bd[rows])
            w = np.exp((ad[rows] - 1) * np.log1p(-omt) - lz[rows]) / bd[rows]
            out[rows] = w * betainc(bc[rows], ac[rows], omt)
        return out

    tol = np.concatenate((np.full(reg.size, abs_tol), np.full(2 * irr.size, abs_tol / 2)))
    vals, _ = gauss_kronrod(integrand, lo, hi, src.size, atol=tol)
    out = np.zeros(n)
    np.add.at(out, src, vals)
    return np.clip(out, 0.0, 1.0)


def ppcs_params(a_C, b_C, a_D, b_D, abs_tol: float = STATISTIC_TOL) -> np.ndarray:
    """PPCS for arrays of posterior shapes.

    Values are computed once per distinct parameter tuple.  The identity
    ``P(Beta(a,b) >= Beta(c,d)) = P(Beta(d,c) >= Beta(b,a))`` maps every
    tuple to a canonical representative, so mirror-image states receive
    bit-identical values; identical posteriors give exactly 1/2.
    """
    p = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a_C, b_C, a_D, b_D))), -1)
    shape = p.shape[:-1]
    p = p.reshape(-1, 4)
    mirror = p[:, [3, 2, 1, 0]]
    # lexicographic min of (p, mirror) row by row
    less = np.zeros(p.shape[0], dtype=bool)
    decided = np.zeros(p.shape[0], dtype=bool)
    for k in range(4):
        lt = ~decided & (mirror[:, k] < p[:, k])
        gt = ~decided & (mirror[:, k] > p[:, k])
        less |= lt
        decided |= lt | gt
    canon = np.where(less[:, None], mirror, p)
    keys, inverse = np.unique(canon, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    vals = np.full(keys.shape[0], 0.5)
    tie = (keys[:, 0] == keys[:, 2]) & (keys[:, 1] == keys[:, 3])
    todo = np.flatnonzero(~tie)
    if todo.size:
        k = keys[todo]
        vals[todo] = _ppcs_integrals(k[:, 0], k[:, 1], k[:, 2], k[:, 3], abs_tol)
    return vals[inverse].reshape(shape)


def ppcs(state: TrialState, prior: BetaPrior = UNIFORM, abs_tol: float = STATISTIC_TOL) -> float:
    """Posterior probability that control is superior for one state."""
    if not abs_tol > 0:
        raise ValueError("abs_tol must be positive")
    return float(ppcs_params(*posterior_params(*state, prior), abs_tol=abs_tol))


def ppcs_states(n_C, s_C, n_D, s_D, prior: BetaPrior = UNIFORM, abs_tol: float = STATISTIC_TOL):
    return ppcs_params(*posterior_params(n_C, s_C, n_D, s_D, prior), abs_tol=abs_tol)


def prob_beta_greater(a1, b1, a2, b2) -> np.ndarray:
    """``P(X > Y)`` for ``X ~ Beta(a1, b1)``, ``Y ~ Beta(a2, b2)`` with integer ``a1``.

    Finite sum over ``k < a1`` of ``B(a2+k, b1+b2) / ((b1+k) B(1+k, b1) B(a2, b2))``,
    accumulated in log space.
    """
    a1, b1, a2, b2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, b1, a2, b2)))
    if not np.all(a1 == np.round(a1)):
        raise ValueError("the finite-sum identity needs an integer first shape parameter")
    a1i = a1.astype(np.int64)
    out = np.zeros(a1.shape)
    base = betaln(a2, b2)
    for k in range(int(a1i.max(initial=0))):
        on = a1i > k
        term = np.exp(betaln(a2 + k, b1 + b2) - np.log(b1 + k) - betaln(1.0 + k, b1) - base)
        out += np.where(on, term, 0.0)
    return out


def ppcs_exact_integer(state: TrialState, prior: BetaPrior = UNIFORM) -> float:
    """PPCS via the finite-sum identity; all posterior shapes must be integers."""
    a_C, b_C, a_D, b_D = posterior_params(*state, prior)
    if not prior.integer:
        raise ValueError("ppcs_exact_integer needs integer prior parameters")
    return float(prob_beta_greater(a_C, b_C, a_D, b_D))


def ppcs_exact_states(n_C, s_C, n_D, s_D, prior: BetaPrior = UNIFORM) -> np.ndarray:
    if not prior.integer:
        raise ValueError("exact PPCS needs integer prior parameters")
    return prob_beta_greater(*posterior_params(n_C, s_C, n_D, s_D, prior))


def wald_states(n_C, s_C, n_D, s_D) -> np.ndarray:
    """Wald statistic with one added success and failure per arm.

    ``(p_D - p_C) / sqrt(p_C(1-p_C)/(n_C+2) + p_D(1-p_D)/(n_D+2))`` where
    ``p_a = (s_a + 1)/(n_a + 2)``.  Positive values favour the developmental arm.
    """
    n_C, s_C, n_D, s_D = (np.asarray(v, dtype=float) for v in (n_C, s_C, n_D, s_D))
    p_C = (s_C + 1) / (n_C + 2)
    p_D = (s_D + 1) / (n_D + 2)
    var = p_C * (1 - p_C) / (n_C + 2) + p_D * (1 - p_D) / (n_D + 2)
    return (p_D - p_C) / np.sqrt(var)


def wald_statistic(state: TrialState) -> float:
    return float(wald_states(*state))


@lru_cache(maxsize=32)
def final_statistic(i: int, kind: StatisticKind, prior: BetaPrior = UNIFORM,
                    abs_tol: float = STATISTIC_TOL) -> np.ndarray:
    """Statistic values over all states of stage ``i`` in canonical order (memoized)."""
    coords = stage_coordinates(i)
    if StatisticKind(kind) is StatisticKind.WALD:
        vals = wald_states(*coords)
    else:
        vals = ppcs_states(*coords, prior=prior, abs_tol=abs_tol)
    vals.setflags(write=False)
    return vals
