"""Vectorized globally adaptive Gauss-Kronrod (7/15) quadrature.

Integrates many independent 1-D problems at once.  Each problem follows the
classic global-adaptive scheme: start from one segment, and while the summed
error estimate exceeds the tolerance, bisect the segment with the largest
error estimate.  The error estimate of a segment is ``|K15 - G7|`` without any
rescaling, and the stopping test is ``E <= max(atol, rtol * |I|)``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights; the
# 7-point Gauss rule uses the odd-indexed nodes.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate((-_XK[:-1], _XK[::-1]))  # 15 nodes, ascending
KRONROD_WEIGHTS = np.concatenate((_WK[:-1], _WK[::-1]))
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate((_WG[:-1], _WG[::-1]))

Integrand = Callable[[np.ndarray, np.ndarray], np.ndarray]


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach its tolerance within the segment budget."""

    def __init__(self, message: str, failed: np.ndarray):
        super().__init__(message)
        self.failed = failed


def _rule(f: Integrand, owner: np.ndarray, a: np.ndarray, b: np.ndarray):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * NODES[None, :]
    fx = f(x, owner)
    # row-wise reductions keep each result independent of the batch it sits in
    ik = half * (fx * KRONROD_WEIGHTS).sum(axis=1)
    ig = half * (fx * GAUSS_WEIGHTS).sum(axis=1)
    return ik, np.abs(ik - ig)


def gauss_kronrod(
    f: Integrand,
    a,
    b,
    n: int,
    atol,
    rtol: float = 0.0,
    max_segments: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``n`` problems over ``[a, b]`` (scalars or length-``n`` arrays).

    ``atol`` may be a scalar or a per-problem array.  ``f(x, owner)``
    receives points ``x`` of shape ``(m, 15)`` and the problem index of each
    row, and returns integrand values of the same shape.

    Returns ``(integral, error_estimate)`` arrays of length ``n``.
    """
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (n,))
    a = np.broadcast_to(np.asarray(a, dtype=float), (n,)).copy()
    b = np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy()
    owner = np.arange(n)
    seg_i, seg_e = _rule(f, owner, a, b)

    result = seg_i.copy()
    error = seg_e.copy()
    tol = np.maximum(atol, rtol * np.abs(result))
    active = error > tol
    if not active.any():
        return result, error

    # working set: segments of unconverged problems only
    keep = active[owner]
    s_owner, s_a, s_b = owner[keep], a[keep], b[keep]
    s_i, s_e = seg_i[keep], seg_e[keep]
    n_segs = np.ones(n, dtype=np.int64)

    while s_owner.size:
        # the worst segment of every active problem
        order = np.lexsort((-s_e, s_owner))
        _, first = np.unique(s_owner[order], return_index=True)
        worst = order[first]

        w_owner, w_a, w_b = s_owner[worst], s_a[worst], s_b[worst]
        mid = 0.5 * (w_a + w_b)
        two_owner = np.concatenate((w_owner, w_owner))
        two_a = np.concatenate((w_a, mid))
        two_b = np.concatenate((mid, w_b))
        two_i, two_e = _rule(f, two_owner, two_a, two_b)

        s_owner[worst], s_a[worst], s_b[worst] = w_owner, w_a, mid
        s_i[worst], s_e[worst] = two_i[: worst.size], two_e[: worst.size]
        s_owner = np.concatenate((s_owner, w_owner))
        s_a = np.concatenate((s_a, mid))
        s_b = np.concatenate((s_b, w_b))
        s_i = np.concatenate((s_i, two_i[worst.size:]))
        s_e = np.concatenate((s_e, two_e[worst.size:]))
        n_segs[w_owner] += 1

        tot_i = np.bincount(s_owner, weights=s_i, minlength=n)
        tot_e = np.bincount(s_owner, weights=s_e, minlength=n)
        owners = np.unique(s_owner)
        result[owners] = tot_i[owners]
        error[owners] = tot_e[owners]
        done = error[owners] <= np.maximum(atol[owners], rtol * np.abs(result[owners]))

        over = owners[~done & (n_segs[owners] >= max_segments)]
        if over.size:
            raise QuadratureError(
                f"{over.size} integral(s) did not converge within {max_segments} "
                f"segments (worst error estimate {error[over].max():.3g})",
                over,
            )
        if done.any():
            still = np.zeros(n, dtype=bool)
            still[owners[~done]] = True
            keep = still[s_owner]
            s_owner, s_a, s_b = s_owner[keep], s_a[keep], s_b[keep]
            s_i, s_e = s_i[keep], s_e[keep]

    return result, error


def gauss_legendre_nodes(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w
