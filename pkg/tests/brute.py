"""Explicit path enumeration for tiny trials, independent of the recursion."""

from collections import defaultdict
from itertools import product

from burnin_brar.state_space import TrialState


def enumerate_paths(n, b, policy, theta=None):
    """Map final state -> summed path weight.

    Without ``theta`` the weight is the product of allocation probabilities
    (the theta-free coefficient); with ``theta`` outcome probabilities are
    multiplied in as well.  The burn-in alternates C, D.
    """
    out = defaultdict(float)
    for outcomes in product((0, 1), repeat=n):
        for arms in product((0, 1), repeat=n - 2 * b):  # 1 = control
            seq = [1 - (k % 2) for k in range(2 * b)] + list(arms)
            w = 1.0
            nC = sC = nD = sD = 0
            for k, (arm, y) in enumerate(zip(seq, outcomes)):
                if k >= 2 * b:
                    p = policy(TrialState(nC, sC, nD, sD))
                    w *= p if arm else 1.0 - p
                if theta is not None:
                    t = theta[0] if arm else theta[1]
                    w *= t if y else 1.0 - t
                if arm:
                    nC, sC = nC + 1, sC + y
                else:
                    nD, sD = nD + 1, sD + y
            out[TrialState(nC, sC, nD, sD)] += w
    return out


def fisher_reject_mask(n, stat, alpha_tail=0.025):
    """Two-sided Fisher exact test at full burn-in, tie groups from ``tie_keys``.

    Conditional on ``S = s`` the control successes are hypergeometric; a
    state is rejected when its upper or lower conditional tail is within level.
    """
    import numpy as np
    from scipy.stats import hypergeom

    from burnin_brar.exact_tests import tie_keys
    from burnin_brar.state_space import stage_coordinates

    b = n // 2
    nC, sC, nD, sD = stage_coordinates(n)
    S = sC + sD
    keys = tie_keys(stat)
    out = np.zeros(nC.size, bool)
    for s in range(n + 1):
        sel = S == s
        prob = np.where(nC[sel] == b, hypergeom.pmf(sC[sel], n, b, s), 0.0)
        uniq, inv = np.unique(keys[sel], return_inverse=True)
        mass = np.bincount(inv, weights=prob, minlength=uniq.size)
        upper = mass[::-1].cumsum()[::-1][inv]
        lower = mass.cumsum()[inv]
        out[sel] = (upper <= alpha_tail + 1e-12) | (lower <= alpha_tail + 1e-12)
    return out


def barnard_reject_mask(n, stat, alpha_tail=0.025, grid_size=1001):
    """Two-sided Barnard test at full burn-in: sup over the null diagonal of product-binomial tails.

    Tail probabilities come from scipy binomial pmfs on a grid; tails whose
    grid maximum lies near the level are refined with a bounded scalar search.
    Tie groups range over every state, with mass only on the product-binomial support.
    """
    import numpy as np
    from scipy import optimize
    from scipy.stats import binom

    from burnin_brar.exact_tests import tie_keys
    from burnin_brar.state_space import stage_coordinates

    b = n // 2
    nC, sC, nD, sD = stage_coordinates(n)
    keys = tie_keys(stat)
    uniq, inv = np.unique(keys, return_inverse=True)
    on = nC == b
    grid = np.linspace(0, 1, grid_size)
    per = np.zeros((uniq.size, grid.size))
    np.add.at(per, inv[on], binom.pmf(sC[on, None], b, grid) * binom.pmf(sD[on, None], b, grid))
    tails = {"upper": per[::-1].cumsum(axis=0)[::-1], "lower": per.cumsum(axis=0)}

    def sup(side, k):
        sel = on & ((inv >= k) if side == "upper" else (inv <= k))
        f = lambda t: -float(np.sum(binom.pmf(sC[sel], b, t) * binom.pmf(sD[sel], b, t)))
        j = int(np.argmax(tails[side][k]))
        res = optimize.minimize_scalar(f, bounds=(grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]),
                                       method="bounded", options={"xatol": 1e-10})
        return max(tails[side][k][j], -res.fun)

    ok = np.zeros(uniq.size, bool)
    for side in ("upper", "lower"):
        gmax = tails[side].max(axis=1)
        for k in np.flatnonzero(gmax <= alpha_tail):
            if alpha_tail - gmax[k] > 1e-3 or sup(side, k) <= alpha_tail:
                ok[k] = True
    return ok[inv]


def _integrand(x, n, theta, kind, test, stat_value, phi):
    tc, td = theta
    if kind == "rejection":
        return float(test.reject(stat_value, x.s_C + x.s_D)[0])
    if kind == "epasa":
        return x.n_D / n if td > tc else x.n_C / n if tc > td else 0.5
    if kind == "piwd":
        better, worse = (x.n_D, x.n_C) if td > tc else (x.n_C, x.n_D)
        return float(worse - better > phi * n)
    if min(x.n_C, x.n_D) == 0:  # add one success and one failure to both arms
        return (x.s_D + 1) / (x.n_D + 2) - (x.s_C + 1) / (x.n_C + 2) - (td - tc)
    return x.s_D / x.n_D - x.s_C / x.n_C - (td - tc)


def brute_oc(n, b, policy, theta, kind, test=None, stat=None, phi=0.1):
    """Expectation of an OC over enumerated paths, with integrands written out state by state."""
    import numpy as np

    from burnin_brar.state_space import StageLayout

    layout = StageLayout.for_stage(n)
    total = 0.0
    for x, p in enumerate_paths(n, b, policy, theta).items():
        sv = np.array([stat[layout.index(x)]]) if stat is not None else None
        total += p * _integrand(x, n, theta, kind, test, sv, phi)
    return total
