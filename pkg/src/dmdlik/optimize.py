"""Box-constrained Nelder-Mead simplex search.

Maximizes a function that may return ``-inf`` for rejected points.  Trial
points outside the box score ``-inf`` without being evaluated, so the simplex
contracts back inside instead of flattening against a bound.  The search stops when
the spread of function values across the simplex falls below ``ftol`` or the
evaluation budget is exhausted; a converged simplex is restarted around its
best vertex once more and accepted only if that restart gains less than
``ftol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InitInvalid

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_evals: int
    converged: bool
    trace: list = field(default_factory=list)  # (x, f) for every evaluation
    message: str = ""


def nelder_mead_max(func, x0, lo, hi, ftol=1e-3, max_evals=2000, initial_step=0.1, xtol=None) -> SimplexResult:
    x0 = np.asarray(x0, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = x0.size
    width = hi - lo
    trace = []

    def clip(x):
        return np.minimum(np.maximum(x, lo), hi)

    def f(x):
        if np.any(x < lo) or np.any(x > hi):
            return np.inf
        v = float(func(x))
        if np.isnan(v):
            v = -np.inf
        trace.append((x.copy(), v))
        return -v  # minimize the negative

    def start(x):
        simplex = np.empty((d + 1, d))
        simplex[0] = x
        for i in range(d):
            step = initial_step * width[i]
            v = x.copy()
            v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
            simplex[i + 1] = clip(v)
        return simplex

    simplex = start(clip(x0))
    fs = np.array([f(v) for v in simplex])
    if not np.isfinite(fs[0]):
        raise InitInvalid("objective is not finite at the initial point")

    converged = False
    message = "maximum evaluations reached"
    last_restart = np.inf
    while len(trace) < max_evals:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        spread = fs[-1] - fs[0]
        small = xtol is None or np.max(np.abs(simplex[1:] - simplex[0])) <= xtol
        if np.isfinite(spread) and spread < ftol and small:
            # a collapsed simplex can look converged, so confirm with a fresh one
            if last_restart - fs[0] < ftol:
                converged = True
                message = "likelihood spread below tolerance"
                break
            last_restart = fs[0]
            fresh = start(simplex[0])
            simplex = fresh
            fs = np.concatenate([[fs[0]], [f(v) for v in fresh[1:]]])
            continue
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = (centroid + REFLECT * (centroid - worst))
        fr = f(xr)
        if fr < fs[0]:
            xe = (centroid + EXPAND * (xr - centroid))
            fe = f(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = (centroid + CONTRACT * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = (centroid + CONTRACT * (worst - centroid))
            fc = f(xc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        for i in range(1, d + 1):
            simplex[i] = clip(simplex[0] + SHRINK * (simplex[i] - simplex[0]))
            fs[i] = f(simplex[i])

    best = int(np.argmin(fs))
    return SimplexResult(simplex[best].copy(), -float(fs[best]), len(trace), converged, trace, message)
