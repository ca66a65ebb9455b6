"""Powell's conjugate-direction method with Brent line searches.

Derivative free, so it copes with nonsmooth objectives such as a maximum of
absolute residuals, although on those it can stall on a kink; callers that
need the true minimax optimum smooth the objective first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from heact.errors import NumericalError


@dataclass(frozen=True)
class PowellResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool


def _line_min(fun, x, d, fx, tol):
    def phi(a):
        return fun(x + a * d)

    res = minimize_scalar(phi, bracket=(0.0, 1.0), method="brent", tol=tol)
    if not np.isfinite(res.fun):
        raise NumericalError("objective became non-finite during line search")
    if res.fun < fx:
        return x + res.x * d, float(res.fun)
    return x, fx


def powell(
    fun: Callable[[np.ndarray], float],
    x0,
    ftol: float = 1e-8,
    maxiter: int = 200,
    line_tol: float = 1e-10,
) -> PowellResult:
    """Minimize ``fun`` from ``x0``.

    Stops when one outer iteration improves the objective by less than
    ``ftol`` or after ``maxiter`` outer iterations. The direction set is
    reset to the coordinate axes every ``n + 1`` iterations, which keeps it
    from collapsing onto a subspace. The returned value never exceeds
    ``fun(x0)``.
    """
    x = np.array(x0, dtype=np.float64)
    n = x.size
    fx = float(fun(x))
    if not np.isfinite(fx):
        raise NumericalError("objective is non-finite at the starting point")
    dirs = np.eye(n)
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        x_start, f_start = x.copy(), fx
        biggest, big_idx = 0.0, 0
        for i in range(n):
            x, f_new = _line_min(fun, x, dirs[i], fx, line_tol)
            if fx - f_new > biggest:
                biggest, big_idx = fx - f_new, i
            fx = f_new
        if it % (n + 1) == 0:
            dirs = np.eye(n)
        else:
            step = x - x_start
            norm = np.linalg.norm(step)
            if norm > 0:
                d = step / norm
                x, fx = _line_min(fun, x, d, fx, line_tol)
                # Powell's rule: swap out the direction that did the most work
                dirs = np.delete(dirs, big_idx, axis=0)
                dirs = np.vstack([dirs, d])
        if f_start - fx < ftol:
            converged = True
            break
    return PowellResult(x, fx, it, converged)
