"""H-infinity fitting of the parameterized reduced model.

For a target level ``gamma`` the sampled objective is

    sum_{w in Omega} max(0, sigma_max(H(iw) - H_r(iw)) - gamma)^2

and an outer loop lowers ``gamma`` while the certified error (computed from
the proper error realization) confirms each level.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import PHDaeError, Tolerances, validate
from .optim import lbfgs
from .param import Theta, assemble_rom, init_theta, pin_polynomial_part, pullback
from .spectral import (ImproperError, PHDae, StateSpace, error_system, eval_tf, hinf_norm,
                       state_space)

__all__ = ['FomSampler', 'HinfProblem', 'HinfResult', 'hinf_objective', 'hinf_gradient',
           'hinf_value_and_grad', 'adapt_grid', 'certified_error', 'minimize_hinf',
           'initial_grid', 'baseline_theta']

HURWITZ_MARGIN = 1e-12
_DEGENERATE_RTOL = 1e-8


class FomSampler:
    """Cached samples ``H(iw)`` of a full-order model.

    ``source`` is a :class:`PHDae` or any callable ``s -> H(s)``. Each
    frequency is evaluated once.
    """

    def __init__(self, source):
        self.source = source
        self._fun = source.transfer if hasattr(source, 'transfer') else (
            (lambda s: eval_tf(source, s)) if isinstance(source, PHDae) else source)
        self._cache = {}

    def __call__(self, omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        out = []
        for w in omega:
            key = float(w)
            if key not in self._cache:
                self._cache[key] = np.asarray(self._fun(1j * key), dtype=complex)
            out.append(self._cache[key])
        return np.array(out)

    def __len__(self):
        return len(self._cache)


def _coarse_peaks(sampler, lo=1e-3, hi=1e4, num=400):
    w = np.logspace(np.log10(lo), np.log10(hi), num)
    s = np.linalg.norm(sampler(w), 2, axis=(1, 2))
    k = np.flatnonzero((s[1:-1] > s[:-2]) & (s[1:-1] >= s[2:])) + 1
    return w[k]


def initial_grid(sampler, lo=1e-3, hi=1e4, num=40):
    """Log-spaced points plus the local maxima of a coarse FOM sigma sweep."""
    w = np.concatenate([np.logspace(np.log10(lo), np.log10(hi), num),
                        _coarse_peaks(sampler, lo, hi)])
    return np.unique(w)


@dataclass
class HinfProblem:
    """FOM data, pinned starting point and loop settings for H-infinity fitting."""

    sampler: FomSampler
    fom_ss: tuple               # (StateSpace, P1) of the FOM
    theta0: Theta
    omega: np.ndarray
    beta: float = 0.9
    max_stages: int = 400
    max_inner: int = 300
    gtol: float = 1e-12
    gap_tol: float = 1e-3
    tol_freq: float = 1e-6
    max_time: float = math.inf
    p1_rtol: float = 1e-8
    stop_below: float = 0.0     # absolute certified error that ends the loop early

    def __post_init__(self):
        self.omega = np.unique(np.asarray(self.omega, dtype=float))
        if self.omega.size == 0:
            raise ValueError('sample set must be nonempty')
        if not 0 < self.beta < 1:
            raise ValueError('beta must lie in (0, 1)')

    @classmethod
    def from_system(cls, sys, r, init='identity-dissipative', seed=None, pin=True, tol=None,
                    **kw):
        """Problem for a pH-DAE with ``P1`` pinned.

        The feedthrough ``S - N`` starts at ``P0`` but stays free. With
        ``pin=False`` no polynomial matching takes place (``ell = 0``); the
        resulting error is then improper and certification refuses it.
        """
        tol = tol or Tolerances()
        ss, P1 = state_space(sys, tol, allow_improper=True)
        m = ss.D.shape[0]
        theta = init_theta(r, m, 0, init, seed)
        if pin:
            theta = pin_polynomial_part(theta, ss.D, P1, mode='h2', tol_rank=tol.tol_rank)
            frozen = np.zeros(theta.size, dtype=bool)
            frozen[theta.slices()['L']] = True
            theta = Theta(theta.r, theta.m, theta.ell, theta.values, frozen)
        sampler = FomSampler(sys)
        return cls(sampler, (ss, P1), theta, initial_grid(sampler), **kw)


@dataclass
class HinfResult:
    theta: Theta
    gamma: float
    certified: float
    initial_certified: float
    trace: list
    status: str
    omega: np.ndarray = field(repr=False, default=None)
    all_valid: bool = True

    @property
    def budget_exhausted(self):
        return self.status == 'budget'

    def trace_csv(self, path):
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['iter', 'gamma', 'objective', 'grad_norm', 'certified_error'])
            for row in self.trace:
                w.writerow([row['iter'], repr(row['gamma']), repr(row['objective']),
                            repr(row['grad_norm']), repr(row['certified_error'])])


def _rom_batch(rom, s):
    """``H_r(s_k)`` with ``K B`` and ``C K`` for every sample."""
    A, B, C, D = rom.proper_ss()
    r = rom.r
    Hr = np.broadcast_to(D, (s.size,) + D.shape).astype(complex) + s[:, None, None] * rom.P1
    if r == 0:
        return Hr, None, None
    M = s[:, None, None] * np.eye(r) - A
    KB = np.linalg.solve(M, np.broadcast_to(B.astype(complex), (s.size,) + B.shape))
    CK = np.linalg.solve(M.transpose(0, 2, 1),
                         np.broadcast_to(C.T.astype(complex), (s.size,) + C.T.shape))
    CK = CK.transpose(0, 2, 1)
    return Hr + C @ KB, KB, CK


def _hurwitz(rom):
    A = rom.Jh - rom.Rh
    return A.size == 0 or np.max(np.linalg.eigvals(A).real) < -HURWITZ_MARGIN


def hinf_value_and_grad(problem, theta, gamma, omega=None, need_grad=True):
    """Sampled objective and its gradient over the free entries of ``theta``.

    Returns ``(inf, None)`` if the reduced model is not asymptotically stable.
    At repeated largest singular values the gradient averages over the
    degenerate singular subspace.
    """
    omega = problem.omega if omega is None else np.asarray(omega, dtype=float)
    rom = assemble_rom(theta)
    if not _hurwitz(rom):
        return math.inf, None
    s = 1j * omega
    Hf = problem.sampler(omega)
    try:
        Hr, KB, CK = _rom_batch(rom, s)
    except np.linalg.LinAlgError:
        return math.inf, None
    Err = Hf - Hr
    U, sv, Vh = np.linalg.svd(Err)
    viol = np.maximum(sv[:, 0] - gamma, 0.0)
    val = float(np.sum(viol ** 2))
    if not need_grad:
        return val, None
    r, m = rom.r, rom.m
    Psi = np.zeros((omega.size, m, m), dtype=complex)
    for k in np.flatnonzero(viol > 0):
        deg = sv[k] >= sv[k, 0] - _DEGENERATE_RTOL * max(sv[k, 0], 1.0)
        u = U[k][:, deg]
        v = Vh[k][deg].conj().T
        # d sigma = -Re tr(v u^H dH_r) since Err = H - H_r
        Psi[k] = -2 * viol[k] * (v @ u.conj().T) / deg.sum()
    gD = np.real(Psi.sum(0)).T
    gL = None
    if rom.ell:
        gL = np.real(np.einsum('k,kij->ij', s, Psi + Psi.transpose(0, 2, 1)) @ rom.L)
    if r:
        gC = np.real((KB @ Psi).sum(0)).T
        gB = np.real((Psi @ CK).sum(0)).T
        gA = np.real((KB @ Psi @ CK).sum(0)).T
    else:
        gA = gB = gC = None
    full = pullback(theta, gA, gB, gC, gD, gL, U=rom.U)
    return val, full[~theta.frozen]


def hinf_objective(problem, theta, gamma, omega=None):
    return hinf_value_and_grad(problem, theta, gamma, omega, need_grad=False)[0]


def hinf_gradient(problem, theta, gamma, omega=None):
    return hinf_value_and_grad(problem, theta, gamma, omega)[1]


def certified_error(problem, theta):
    """``(||H - H_r||_Hinf, w_peak)`` from the proper error realization.

    Raises :class:`ImproperError` when the ``P1`` terms do not match.
    Returns ``(inf, nan)`` for a reduced model that is not asymptotically
    stable.
    """
    rom = assemble_rom(theta)
    es = error_system(problem.fom_ss, (StateSpace(*rom.proper_ss()), rom.P1),
                      p1_rtol=problem.p1_rtol)
    if not _hurwitz(rom):
        return math.inf, math.nan
    try:
        return hinf_norm(es, tol_freq=problem.tol_freq)
    except PHDaeError:
        return math.inf, math.nan


def adapt_grid(omega, theta, gamma, problem, max_new=8, rtol=1e-10):
    """Add frequencies where the error exceeds ``gamma`` between samples.

    Adds the certified peak frequency and further local maxima of the error
    sigma above ``gamma`` (at most ``max_new`` points, no duplicates).
    """
    omega = np.unique(np.asarray(omega, dtype=float))
    value, w_peak = certified_error(problem, theta)
    if not value > gamma * (1 + problem.tol_freq):
        return omega
    cand = []
    if np.isfinite(w_peak):
        cand.append(float(w_peak))
    else:
        cand.append(10 * float(omega.max()))
    rom = assemble_rom(theta)
    lo, hi = max(omega.min(), 1e-6), omega.max()
    sweep = np.logspace(np.log10(lo) - 1, np.log10(hi) + 1, 300)
    errs = np.linalg.norm(problem.sampler(sweep) - _rom_batch(rom, 1j * sweep)[0], 2,
                          axis=(1, 2))
    k = np.flatnonzero((errs[1:-1] > errs[:-2]) & (errs[1:-1] >= errs[2:])) + 1
    k = k[errs[k] > gamma]
    cand += list(sweep[k[np.argsort(-errs[k])]])
    new = []
    for w in cand:
        near = lambda x: abs(x - w) <= rtol * max(abs(w), 1.0)   # noqa: E731
        if any(near(x) for x in omega) or any(near(x) for x in new):
            continue
        new.append(w)
        if len(new) == max_new:
            break
    return np.unique(np.concatenate([omega, new]))


def baseline_theta(sys, tol=None):
    """Reduced model with no proper dynamics and matched polynomial part.

    ``H_r(s) = P0 + P1 s``; ``sym(P0)`` must be positive semidefinite, which
    holds for passive systems.
    """
    tol = tol or Tolerances()
    ss, P1 = state_space(sys, tol, allow_improper=True)
    m = ss.D.shape[0]
    return pin_polynomial_part(init_theta(0, m, 0), ss.D, P1, mode='h2', tol_rank=tol.tol_rank)


def _minimize_uncertified(problem):
    # unmatched P1: the error norm is infinite, so only the sampled
    # objective at level zero can be reduced
    theta = problem.theta0
    res = lbfgs(lambda x: hinf_value_and_grad(problem, theta.with_free(x), 0.0),
                theta.free, max_iter=problem.max_inner * 10, gtol=problem.gtol)
    trace = [{'iter': res.nit, 'gamma': math.inf, 'target': 0.0, 'objective': res.fun,
              'grad_norm': float(np.linalg.norm(res.grad)), 'certified_error': math.inf}]
    return HinfResult(theta.with_free(res.x), math.inf, math.inf, math.inf, trace,
                      'uncertified', problem.omega)


def minimize_hinf(problem, callback=None, check_iterates=True):
    """Lower the certified H-infinity error by a sequence of target levels.

    Stage ``k`` minimizes the sampled objective at level ``gamma``. If it
    reaches zero the sample set is refined until the certified error is at
    most ``gamma``; the level then drops to ``beta`` times the certified
    error; any stage that lowers the certified error counts as a success.
    Otherwise the level backtracks halfway towards the best certified
    error and the best parameters are restored. The loop ends once the
    backtracking gap falls below ``gap_tol`` (relative), or on budget.
    """
    t0 = time.monotonic()
    theta_best = problem.theta0
    try:
        best, _ = certified_error(problem, theta_best)
    except ImproperError:
        return _minimize_uncertified(problem)
    initial = best
    if not math.isfinite(best):
        raise ValueError('initial reduced model is not asymptotically stable')
    omega = problem.omega.copy()
    gamma = problem.beta * best
    trace = [{'iter': 0, 'gamma': best, 'target': best, 'objective': 0.0, 'grad_norm': 0.0,
              'certified_error': best}]
    valid = [True]
    n_iter = 0
    status = 'budget'

    def check(th):
        if check_iterates and not validate(assemble_rom(th).system).passed:
            valid[0] = False

    for _ in range(problem.max_stages):
        if time.monotonic() - t0 > problem.max_time:
            break
        if best == 0.0 or (best - gamma) <= problem.gap_tol * best:
            status = 'converged'
            break
        if best <= problem.stop_below:
            status = 'target'
            break
        theta = theta_best
        for _refine in range(20):
            om = omega

            def fun(x):
                return hinf_value_and_grad(problem, theta.with_free(x), gamma, om)

            res = lbfgs(fun, theta.free, max_iter=problem.max_inner, gtol=problem.gtol,
                        stop_at_zero=True,
                        callback=lambda k, x, f, g: check(theta.with_free(x)))
            n_iter += res.nit
            theta = theta.with_free(res.x)
            if res.fun > 0:
                break
            new = adapt_grid(omega, theta, gamma, problem)
            if new.size == omega.size:
                break
            omega = new
        cert, _ = certified_error(problem, theta)
        improved = cert < best
        if improved:
            theta_best, best = theta, cert
        if improved or (res.fun == 0 and cert <= gamma * (1 + problem.tol_freq)):
            gamma = problem.beta * best
        else:
            gamma = (gamma + best) / 2
        trace.append({'iter': n_iter, 'gamma': best, 'target': gamma, 'objective': res.fun,
                      'grad_norm': float(np.linalg.norm(res.grad)), 'certified_error': cert})
        if callback is not None:
            callback(trace[-1], theta_best)
    return HinfResult(theta_best, best, best, initial, trace, status, omega, valid[0])
