"""H2-optimal fitting of the parameterized reduced model.

The error ``H - H_r`` is strictly proper once ``P0`` and ``P1`` are pinned,
so its squared H2 norm is the Gramian trace

    tr(C X C^T) - 2 tr(C Y C_r^T) + tr(C_r X_r C_r^T)

with ``A X + X A^T + B B^T = 0``, ``A Y + Y A_r^T + B B_r^T = 0`` and
``A_r X_r + X_r A_r^T + B_r B_r^T = 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .core import Tolerances, lyapunov_solve, sylvester_solve, validate
from .optim import lbfgs
from .param import Theta, assemble_rom, init_theta, pin_polynomial_part, pullback
from .spectral import StateSpace, state_space

__all__ = ['H2Problem', 'H2Result', 'h2_error_sq', 'h2_gradient', 'h2_value_and_grad',
           'minimize_h2']

HURWITZ_MARGIN = 1e-12


@dataclass
class H2Problem:
    """FOM data for H2 fitting.

    ``A, B, C`` realize the strictly proper part ``H - P0 - P1 s`` of the
    full-order model with ``E = I``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    theta0: Theta
    P0: np.ndarray
    P1: np.ndarray
    max_iter: int = 2000
    gtol: float = 1e-12
    ftol: float = 1e-15
    _fom_sq: float = field(default=None, repr=False)

    def __post_init__(self):
        if self.A.size and np.max(np.linalg.eigvals(self.A).real) >= 0:
            raise ValueError('FOM realization is not asymptotically stable')
        # an orthogonal similarity leaves the objective unchanged; the real
        # Schur form makes the repeated Sylvester solves cheaper
        if self.A.size:
            T, Z = spla.schur(self.A, output='real')
            self.A, self.B, self.C = T, Z.T @ self.B, self.C @ Z
        X = lyapunov_solve(self.A, self.B @ self.B.T)
        self._fom_sq = float(np.trace(self.C @ X @ self.C.T))

    @classmethod
    def from_system(cls, sys, r, init='identity-dissipative', seed=None, tol=None, **kw):
        """Build the problem for a pH-DAE, pinning ``P0`` and ``P1``."""
        ss, P1 = state_space(sys, tol, allow_improper=True)
        m = ss.D.shape[0]
        theta = pin_polynomial_part(init_theta(r, m, 0, init, seed), ss.D, P1, mode='h2',
                                    tol_rank=(tol or Tolerances()).tol_rank)
        return cls(ss.A, ss.B, ss.C, theta, ss.D, P1, **kw)

    @property
    def fom_h2_sq(self):
        return self._fom_sq


@dataclass
class H2Result:
    theta: Theta
    h2_error: float
    trace: list
    status: str
    all_valid: bool = True

    @property
    def budget_exhausted(self):
        return self.status == 'max_iter'

    def trace_csv(self, path):
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['iter', 'gamma', 'objective', 'grad_norm', 'certified_error'])
            for row in self.trace:
                w.writerow([row['iter'], '', repr(row['objective']), repr(row['grad_norm']),
                            repr(row['h2_error'])])


def _rom_ss(theta):
    rom = assemble_rom(theta)
    A, B, C, _ = rom.proper_ss()
    return rom, A, B, C


def _hurwitz(Ar):
    return Ar.size == 0 or np.max(np.linalg.eigvals(Ar).real) < -HURWITZ_MARGIN


def h2_value_and_grad(problem, theta, need_grad=True):
    """Squared H2 error and its gradient over the free entries of ``theta``.

    Returns ``(inf, None)`` if ``J_hat - R_hat`` is not Hurwitz.
    """
    rom, Ar, Br, Cr = _rom_ss(theta)
    A, B, C = problem.A, problem.B, problem.C
    if not _hurwitz(Ar):
        return math.inf, None
    if rom.r == 0:
        g = np.zeros(theta.size)
        return problem.fom_h2_sq, g[~theta.frozen]
    Xr = lyapunov_solve(Ar, Br @ Br.T)
    Y = sylvester_solve(A, Ar, B @ Br.T)
    val = problem.fom_h2_sq - 2 * np.trace(C @ Y @ Cr.T) + np.trace(Cr @ Xr @ Cr.T)
    val = max(float(val), 0.0)
    if not need_grad:
        return val, None
    Qr = lyapunov_solve(Ar.T, Cr.T @ Cr)
    Z = sylvester_solve(A.T, Ar.T, -C.T @ Cr)
    gA = 2 * (Qr @ Xr + Z.T @ Y)
    gB = 2 * (Qr @ Br + Z.T @ B)
    gC = 2 * (Cr @ Xr - C @ Y)
    full = pullback(theta, gA, gB, gC, U=rom.U)
    return val, full[~theta.frozen]


def h2_error_sq(problem, theta):
    """``||H_sp - H_r,sp||_H2^2``; ``inf`` when the ROM is not Hurwitz."""
    return h2_value_and_grad(problem, theta, need_grad=False)[0]


def h2_gradient(problem, theta):
    return h2_value_and_grad(problem, theta)[1]


def minimize_h2(problem, theta=None, callback=None):
    """Minimize the squared H2 error over the free entries of ``theta``.

    The pinned ``S``, ``N`` and ``L`` stay frozen, so ``S - N = P0`` and
    ``L L^T = P1`` hold at every iterate.
    """
    theta = problem.theta0 if theta is None else theta
    trace = []
    valid = [True]

    def fun(x):
        return h2_value_and_grad(problem, theta.with_free(x))

    def record(k, x, f, g):
        th = theta.with_free(x)
        if not validate(assemble_rom(th).system).passed:
            valid[0] = False
        trace.append({'iter': k, 'objective': f, 'grad_norm': float(np.linalg.norm(g)),
                      'h2_error': math.sqrt(f)})
        if callback is not None:
            callback(k, th, f)

    f0, g0 = fun(theta.free)
    if not math.isfinite(f0):
        raise ValueError('initial reduced model is not asymptotically stable')
    trace.append({'iter': 0, 'objective': f0, 'grad_norm': float(np.linalg.norm(g0)),
                  'h2_error': math.sqrt(f0)})
    res = lbfgs(fun, theta.free, max_iter=problem.max_iter, gtol=problem.gtol,
                ftol=problem.ftol, stop_at_zero=False, callback=record)
    final = theta.with_free(res.x)
    return H2Result(final, math.sqrt(res.fun), trace, res.status, valid[0])
