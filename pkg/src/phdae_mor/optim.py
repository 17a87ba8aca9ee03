"""Limited-memory BFGS with a backtracking (Armijo) line search.

Objective values of ``inf`` are treated as rejected trial points, so callers
can encode domain restrictions (e.g. a non-Hurwitz reduced model) by
returning ``inf``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = ['OptResult', 'lbfgs']


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    status: str

    @property
    def success(self):
        return self.status in ('zero', 'gtol', 'ftol')


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Y))):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs(fun, x0, max_iter=500, gtol=1e-10, ftol=1e-14, memory=10, c1=1e-4,
          max_backtrack=50, stop_at_zero=True, callback=None):
    """Minimize ``fun`` where ``fun(x)`` returns ``(value, gradient)``.

    Parameters
    ----------
    gtol
        Stop when ``max|g| <= gtol * max(1, |f|)``.
    ftol
        Stop when the relative decrease over five consecutive steps is below
        ``ftol``.
    stop_at_zero
        Stop as soon as the objective is exactly zero (nonnegative objectives).
    callback
        Called as ``callback(k, x, f, g)`` after every accepted step.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    nfev = 1
    if not np.isfinite(f):
        raise ValueError('objective is not finite at the starting point')
    S, Y = deque(maxlen=memory), deque(maxlen=memory)
    history = deque(maxlen=6)
    history.append(f)
    if x.size == 0:
        return OptResult(x, f, g, 0, nfev, 'gtol')
    status = 'max_iter'
    k = 0
    for k in range(1, max_iter + 1):
        if stop_at_zero and f == 0.0:
            status = 'zero'
            break
        if np.max(np.abs(g)) <= gtol * max(1.0, abs(f)):
            status = 'gtol'
            break
        d = -_two_loop(g, S, Y)
        slope = g @ d
        if slope >= 0:
            S.clear()
            Y.clear()
            d = -g
            slope = g @ d
        t = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        accepted = False
        for _ in range(max_backtrack):
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            nfev += 1
            if np.isfinite(f_new) and f_new <= f + c1 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = 'linesearch'
            break
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if callback is not None:
            callback(k, x, f, g)
        if len(history) == history.maxlen and history[0] - f <= ftol * max(abs(history[0]), 1e-300):
            status = 'ftol'
            break
    else:
        k = max_iter
    return OptResult(x, f, g, k, nfev, status)
