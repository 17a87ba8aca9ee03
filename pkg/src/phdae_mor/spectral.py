"""Transfer functions, polynomial parts and system norms."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as spla

from .core import PHDae, PHDaeError, Tolerances, lyapunov_solve
from .param import RomSystem, Theta, assemble_rom, rom_transfer
from .staircase import (ProperRealization, StaircaseError, StaircaseSystem, proper_realization,
                        staircase_polynomial_part, to_staircase)

__all__ = [
    'SingularPencilError', 'ImproperError', 'PolynomialPartMismatch', 'StateSpace',
    'PolynomialPart', 'FrequencyGrid', 'TfSamples', 'PositiveRealReport',
    'eval_tf', 'poly_rel_diff', 'error_system', 'as_transfer', 'polynomial_part', 'state_space',
    'h2_norm', 'hinf_norm',
    'sigma_samples', 'positive_real_check', 'logspace_grid',
]


class SingularPencilError(PHDaeError):
    pass


class ImproperError(PHDaeError):
    """Norm requested for a transfer function with a nonzero ``P1 s`` term."""


class PolynomialPartMismatch(PHDaeError):
    def __init__(self, first, second, rel):
        self.first, self.second, self.rel = first, second, rel
        super().__init__(f'polynomial-part methods disagree (relative difference {rel:.2e})')


class StateSpace(NamedTuple):
    """Standard ODE realization ``x' = A x + B u, y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def transfer(self, s):
        H = np.array(self.D, dtype=complex)
        if self.A.shape[0]:
            H = H + self.C @ np.linalg.solve(s * np.eye(self.A.shape[0]) - self.A,
                                             self.B.astype(complex))
        return H


@dataclass(frozen=True)
class PolynomialPart:
    P0: np.ndarray
    P1: np.ndarray
    method: str = ''
    asymmetry: float = 0.0


@dataclass(frozen=True)
class FrequencyGrid:
    omega: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float).ravel()
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(np.diff(w) <= 0):
            raise ValueError('frequency grid must be finite, nonnegative and strictly increasing')
        object.__setattr__(self, 'omega', w)

    def __len__(self):
        return self.omega.size


def logspace_grid(lo, hi, num):
    return FrequencyGrid(np.logspace(np.log10(lo), np.log10(hi), num),
                         {'kind': 'log', 'lo': lo, 'hi': hi, 'num': num})


@dataclass(frozen=True)
class TfSamples:
    grid: FrequencyGrid
    values: np.ndarray
    sigma: np.ndarray

    def to_csv(self, path):
        m1, m2 = self.values.shape[1:] if self.values.ndim == 3 else (0, 0)
        header = ['omega', 'sigma_max']
        for i in range(m1):
            for j in range(m2):
                header += [f're_{i}_{j}', f'im_{i}_{j}']
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, om in enumerate(self.grid.omega):
                row = [repr(float(om)), repr(float(self.sigma[k]))]
                for i in range(m1):
                    for j in range(m2):
                        v = self.values[k, i, j]
                        row += [repr(float(v.real)), repr(float(v.imag))]
                w.writerow(row)


def eval_tf(sys, s):
    """``(G + P)^T (sE - (J - R))^{-1} (G - P) + (S - N)``."""
    if isinstance(sys, (RomSystem, Theta)):
        return rom_transfer(sys, s)
    M = s * sys.E - sys.A
    try:
        X = spla.solve(M, sys.B.astype(complex), check_finite=False)
    except (np.linalg.LinAlgError, spla.LinAlgError) as exc:
        raise SingularPencilError(f'sE - (J - R) is singular at s = {s}') from exc
    if not np.all(np.isfinite(X)):
        raise SingularPencilError(f'sE - (J - R) is singular at s = {s}')
    return sys.C @ X + sys.D


def as_transfer(obj):
    """Callable ``s -> H(s)`` for systems, reduced models or error pairs."""
    if isinstance(obj, tuple) and len(obj) == 2 and not isinstance(obj, StateSpace):
        f, g = as_transfer(obj[0]), as_transfer(obj[1])
        return lambda s: f(s) - g(s)
    if isinstance(obj, (RomSystem, Theta)):
        rom = assemble_rom(obj) if isinstance(obj, Theta) else obj
        return lambda s: rom_transfer(rom, s)
    if isinstance(obj, ProperRealization):
        return lambda s: eval_tf(obj.system, s)
    if isinstance(obj, StateSpace):
        return obj.transfer
    if isinstance(obj, PHDae):
        return lambda s: eval_tf(obj, s)
    if callable(obj):
        return obj
    raise TypeError(f'cannot evaluate a transfer function for {type(obj).__name__}')


def _as_phdae(sys):
    if isinstance(sys, Theta):
        sys = assemble_rom(sys)
    if isinstance(sys, RomSystem):
        return sys.system
    if isinstance(sys, StaircaseSystem):
        return sys.source()
    return sys


_LIMIT_OMEGAS = (1e6, 1e7, 1e8)


def _limit_polynomial_part(sys):
    est0, est1 = [], []
    vals = [eval_tf(sys, 1j * w) for w in _LIMIT_OMEGAS]
    for (w_a, H_a), (w_b, H_b) in zip(zip(_LIMIT_OMEGAS, vals), zip(_LIMIT_OMEGAS[1:], vals[1:])):
        q = (w_b / w_a) ** 2
        # remainders of Re H and Im H / w both decay like 1/w^2
        est0.append((q * H_b.real - H_a.real) / (q - 1))
        est1.append((q * H_b.imag / w_b - H_a.imag / w_a) / (q - 1))
    return np.mean(est0, axis=0), np.mean(est1, axis=0)


_POLISH_OMEGA = 1e6
_POLISH_ULPS = 64


def _tf_extended(sys, s, iters=4):
    # LU in double, residuals in long double (mixed-precision refinement)
    lu = spla.lu_factor(s * sys.E - sys.A, check_finite=False)
    ld = np.clongdouble
    M = s * sys.E.astype(ld) - sys.A.astype(ld)
    B = sys.B.astype(ld)
    X = spla.lu_solve(lu, sys.B.astype(complex), check_finite=False).astype(ld)
    for _ in range(iters):
        X = X + spla.lu_solve(lu, (B - M @ X).astype(complex), check_finite=False)
    return sys.C.astype(ld) @ X + sys.D


def _polish(sys, P0, P1):
    """Correct ``(P0, P1)`` by a few ulps using extended-precision samples.

    With exact ``ker E`` the remainders of ``Re H`` and ``Im H / w`` decay
    like ``1/w^2``; Richardson extrapolation then resolves ``P0`` and ``P1``
    beyond double precision. The correction is used only if the estimates
    from ``(w, 2w)`` and ``(2w, 4w)`` agree and it is within a few ulps;
    otherwise (no extended type, or a numerically singular ``E``) the input
    is returned unchanged.
    """
    if np.finfo(np.longdouble).eps >= np.finfo(float).eps / 16 or not np.any(P1):
        return P0, P1
    ws = _POLISH_OMEGA * np.array([1.0, 2.0, 4.0])
    try:
        H = [_tf_extended(sys, 1j * x) for x in ws]
    except (np.linalg.LinAlgError, ValueError):
        return P0, P1
    bound = _POLISH_ULPS * np.spacing(max(np.abs(P0).max(), np.abs(P1).max()))
    out = []
    for P, d in ((P0, [h.real - P0 for h in H]), (P1, [h.imag / x - P1 for h, x in zip(H, ws)])):
        first, second = (4 * d[1] - d[0]) / 3, (4 * d[2] - d[1]) / 3
        if not (np.abs(second).max() <= bound and np.abs(second - first).max() <= bound / 8):
            return P0, P1
        out.append(P + second.astype(float))
    return tuple(out)


def poly_rel_diff(first, second, floor=0.0):
    """``(|dP0| + |dP1|) / max(|P0| + |P1|, floor)`` with ``second`` as reference."""
    num = np.linalg.norm(first[0] - second[0]) + np.linalg.norm(first[1] - second[1])
    den = max(np.linalg.norm(second[0]) + np.linalg.norm(second[1]), floor, np.finfo(float).tiny)
    return float(num / den)


def polynomial_part(sys, method='auto', tol=None, cross_check=False, rtol=1e-6):
    """Constant and linear coefficients ``(P0, P1)`` of ``H(s)``.

    Parameters
    ----------
    method : {'auto', 'staircase', 'limit'}
        ``'staircase'`` reads both coefficients off the elimination of the
        algebraic states, ``'limit'`` extrapolates ``Re H(iw)`` and
        ``Im H(iw) / w`` from ``w = 1e6, 1e7, 1e8``. ``'auto'`` uses the
        staircase route when it succeeds and the limit otherwise.
    cross_check : bool
        With ``'auto'``, also run the limit method and raise
        :class:`PolynomialPartMismatch` if the two disagree by more than
        ``rtol`` relative to ``||P0|| + ||P1||`` (with ``||H(i)||`` as floor).
        Off by default: the limit method needs ``ker E`` to be exact in
        floating point, which a rotated index-2 model does not have.
    """
    tol = Tolerances() if tol is None else tol
    sys = _as_phdae(sys)
    if method not in ('auto', 'staircase', 'limit'):
        raise ValueError(f'unknown method {method!r}')
    stair = None
    if method in ('auto', 'staircase'):
        try:
            stair = staircase_polynomial_part(to_staircase(sys, tol))
        except StaircaseError:
            if method == 'staircase':
                raise
    if stair is None:
        P0, P1 = _limit_polynomial_part(sys)
        used = 'limit'
    else:
        P0, P1 = _polish(sys, *stair)
        used = 'staircase'
        if method == 'auto' and cross_check:
            lim = _limit_polynomial_part(sys)
            rel = poly_rel_diff(lim, (P0, P1), np.linalg.norm(eval_tf(sys, 1j)))
            if rel > rtol:
                raise PolynomialPartMismatch((P0, P1), lim, rel)
    asym = float(np.linalg.norm(P1 - P1.T))
    return PolynomialPart(P0, (P1 + P1.T) / 2, used, asym)


def state_space(sys, tol=None, allow_improper=False):
    """Proper part of ``sys`` as a :class:`StateSpace` plus its ``P1``.

    Accepts a :class:`PHDae`, :class:`RomSystem`, :class:`Theta`,
    :class:`ProperRealization` or :class:`StateSpace`. Raises
    :class:`ImproperError` when ``P1 != 0`` unless ``allow_improper``.
    """
    tol = Tolerances() if tol is None else tol
    if isinstance(sys, StateSpace):
        return sys, np.zeros((sys.D.shape[1],) * 2)
    if isinstance(sys, Theta):
        sys = assemble_rom(sys)
    if isinstance(sys, RomSystem):
        ss, P1 = StateSpace(*sys.proper_ss()), sys.P1
    else:
        if isinstance(sys, StaircaseSystem):
            pr = proper_realization(sys)
        elif isinstance(sys, ProperRealization):
            pr = sys
        else:
            pr = proper_realization(to_staircase(sys, tol))
        ss, P1 = StateSpace(*pr.ode()), pr.P1
    if not allow_improper and np.linalg.norm(P1) > 1e-10 * (1 + np.linalg.norm(ss.D)):
        raise ImproperError(f'transfer function is improper (||P1|| = {np.linalg.norm(P1):.3e})')
    return ss, P1


def error_system(fom, rom, tol=None, p1_rtol=1e-8):
    """Proper realization of ``H - H_r`` and the mismatch of the ``P1`` terms.

    ``fom`` and ``rom`` are anything :func:`state_space` accepts, or
    pre-computed ``(StateSpace, P1)`` pairs. Raises :class:`ImproperError` if
    ``||P1 - P1_r|| > p1_rtol * (1 + ||P1||)`` since the error then grows
    linearly in ``w``.
    """
    fs, fP1 = fom if isinstance(fom, tuple) and not isinstance(fom, StateSpace) else \
        state_space(fom, tol, allow_improper=True)
    rs, rP1 = rom if isinstance(rom, tuple) and not isinstance(rom, StateSpace) else \
        state_space(rom, tol, allow_improper=True)
    mismatch = np.linalg.norm(fP1 - rP1)
    if mismatch > p1_rtol * (1 + np.linalg.norm(fP1)):
        raise ImproperError(f'P1 mismatch {mismatch:.3e}: the error system is improper')
    A = spla.block_diag(fs.A, rs.A)
    B = np.vstack([fs.B, rs.B])
    C = np.hstack([fs.C, -rs.C])
    return StateSpace(A, B, C, fs.D - rs.D)


def h2_norm(sys):
    """H2 norm ``sqrt(trace(C X C^T))`` with ``A X + X A^T + B B^T = 0``.

    ``sys`` is a :class:`StateSpace` (or ``(A, B, C)``) with ``D = 0`` and
    Hurwitz ``A``.
    """
    if isinstance(sys, StateSpace):
        A, B, C, D = sys
        if np.any(np.asarray(D) != 0):
            raise ImproperError('H2 norm is infinite for a nonzero feedthrough')
    else:
        A, B, C = sys[:3]
    A, B, C = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, C))
    if A.shape[0] == 0:
        return 0.0
    X = lyapunov_solve(A, B @ B.T)
    return float(np.sqrt(max(np.trace(C @ X @ C.T), 0.0)))


def _sigma_max(H):
    return float(np.linalg.norm(H, 2))


def _hamiltonian(A, B, C, D, gamma):
    m_in, m_out = B.shape[1], C.shape[0]
    Rg = D.T @ D - gamma ** 2 * np.eye(m_in)
    Sg = D @ D.T - gamma ** 2 * np.eye(m_out)
    Ah = A - B @ np.linalg.solve(Rg, D.T @ C)
    return np.block([[Ah, -gamma * B @ np.linalg.solve(Rg, B.T)],
                     [gamma * C.T @ np.linalg.solve(Sg, C), -Ah.T]])


def _imag_axis_freqs(H, eig_tol=1e-2):
    # loose on purpose: every candidate is verified by evaluating sigma, and
    # crossings of nearly cancelling error systems drift off the axis
    lam = np.linalg.eigvals(H)
    sel = np.abs(lam.real) <= eig_tol * np.maximum(1.0, np.abs(lam))
    w = np.sort(np.abs(lam[sel].imag))
    return np.unique(np.round(w, 14))


class _Sigma:
    """Fast ``sigma_max(H(iw))`` for a state-space model via Hessenberg form."""

    def __init__(self, ss):
        A, B, C, D = ss
        self.D = np.asarray(D, dtype=float)
        n = A.shape[0]
        if n:
            Hs, Q = spla.hessenberg(A, calc_q=True)
            self.H, self.B, self.C = Hs, Q.T @ B, C @ Q
        else:
            self.H = A
        self.n = n

    def tf(self, w):
        if not self.n:
            return self.D.astype(complex)
        M = 1j * w * np.eye(self.n) - self.H
        return self.C @ np.linalg.solve(M, self.B.astype(complex)) + self.D

    def __call__(self, w):
        return _sigma_max(self.tf(w))

    def many(self, w, chunk=2048):
        w = np.asarray(w, dtype=float)
        if not self.n:
            return np.full(w.size, _sigma_max(self.D) if self.D.size else 0.0)
        out = np.empty(w.size)
        eye = np.eye(self.n)
        B = self.B.astype(complex)
        for i in range(0, w.size, chunk):
            wk = w[i:i + chunk]
            X = np.linalg.solve(1j * wk[:, None, None] * eye - self.H,
                                np.broadcast_to(B, (wk.size,) + B.shape))
            out[i:i + chunk] = np.linalg.norm(self.C @ X + self.D, 2, axis=(1, 2))
        return out


def _golden_max(f, a, b, iters=60):
    g = (np.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def _refine_peaks(sig, w, vals, top=5):
    """Golden-section refinement of the largest local maxima of ``vals``."""
    k = np.flatnonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
    k = np.concatenate([k, [0, w.size - 1]])
    k = k[np.argsort(-vals[k])][:top]
    best_w, best_v = w[k[0]], vals[k[0]]
    for j in k:
        a, b = w[max(j - 1, 0)], w[min(j + 1, w.size - 1)]
        if b > a:
            wj, vj = _golden_max(sig, a, b)
            if vj > best_v:
                best_w, best_v = wj, vj
    return float(best_v), float(best_w)


def _grid_hinf(sig, lo=1e-4, hi=1e8, per_decade=10_000):
    w = np.concatenate([[0.0], np.logspace(np.log10(lo), np.log10(hi),
                                             int(per_decade * np.log10(hi / lo)))])
    return _refine_peaks(sig, w, sig.many(w))


def _level_set(A, B, C, D, sig, gamma_lb, w_peak, tol_freq, max_iter, info):
    """Level-set iteration from a lower bound; returns ``(lb, w, ok)``."""
    for it in range(max_iter):
        info['iterations'] += 1
        gamma = (1 + 2 * tol_freq) * gamma_lb
        try:
            freqs = _imag_axis_freqs(_hamiltonian(A, B, C, D, gamma))
        except np.linalg.LinAlgError:
            return gamma_lb, w_peak, False
        if freqs.size == 0:
            return gamma_lb, w_peak, True
        mids = np.concatenate([(freqs[:-1] + freqs[1:]) / 2, freqs])
        mvals = sig.many(mids)
        j = int(np.argmax(mvals))
        if mvals[j] <= gamma_lb:
            # no progress: remaining crossings are spurious
            return gamma_lb, w_peak, True
        gamma_lb, w_peak = float(mvals[j]), float(mids[j])
    return gamma_lb, w_peak, False


def hinf_norm(sys, tol_freq=1e-6, max_iter=100, return_info=False):
    """H-infinity norm and peak frequency of a proper, stable system.

    Level-set iteration on the Hamiltonian matrix (Boyd-Balakrishnan /
    Bruinsma-Steinbuch), cross-checked by a logarithmic sweep around the
    poles. The returned value is a lower bound within relative
    ``2 * tol_freq`` of the norm. Falls back to a dense logarithmic grid with
    golden-section refinement when the Hamiltonian test is unreliable.

    Raises
    ------
    ImproperError
        If the system has a nonzero ``P1 s`` term.
    """
    ss, _ = state_space(sys)
    A, B, C, D = (np.atleast_2d(np.asarray(x, dtype=float)) for x in ss)
    sig = _Sigma(StateSpace(A, B, C, D))
    n = A.shape[0]
    info = {'method': 'static', 'iterations': 0}
    if n == 0:
        out = (_sigma_max(D) if D.size else 0.0, 0.0)
        return (*out, info) if return_info else out
    poles = np.linalg.eigvals(A)
    if np.max(poles.real) >= 0:
        raise PHDaeError('system is not asymptotically stable; H-infinity norm undefined')

    dnorm = _sigma_max(D)
    cand = np.array([0.0] + [abs(p.imag) for p in poles] + [abs(p) for p in poles])
    vals = sig.many(cand)
    k = int(np.argmax(vals))
    gamma_lb, w_peak = float(vals[k]), float(cand[k])
    if dnorm > gamma_lb:
        gamma_lb, w_peak = dnorm, np.inf
    if gamma_lb == 0.0:
        out = (0.0, 0.0)
        return (*out, info) if return_info else out
    info['method'] = 'hamiltonian'
    scale = np.abs(poles)
    sweep = np.logspace(np.log10(max(scale.min() / 100, 1e-8)),
                        np.log10(scale.max() * 100), 400)
    svals = None
    ok = False
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        for _restart in range(4):
            gamma_lb, w_peak, ok = _level_set(A, B, C, D, sig, gamma_lb, w_peak, tol_freq,
                                              max_iter, info)
            if not ok:
                break
            # sanity sweep against missed crossings
            if svals is None:
                svals = sig.many(sweep)
            if svals.max() <= (1 + 2 * tol_freq) * gamma_lb * (1 + 1e-9):
                break
            ok = False
            v, w = _refine_peaks(sig, sweep, svals)
            if v > gamma_lb:
                gamma_lb, w_peak = v, w
    if not ok:
        info['method'] = 'grid'
        g2, w2 = _grid_hinf(sig)
        if g2 > gamma_lb:
            gamma_lb, w_peak = g2, w2
    # local polish of the lower bound
    if np.isfinite(w_peak) and w_peak > 0:
        a, b = w_peak * (1 - 1e-3), w_peak * (1 + 1e-3)
        wp, vp = _golden_max(sig, a, b, iters=40)
        if vp > gamma_lb:
            gamma_lb, w_peak = vp, wp
    out = (float(gamma_lb), float(w_peak))
    return (*out, info) if return_info else out


def sigma_samples(target, grid):
    """Largest singular value of ``H(iw)`` on ``grid``.

    ``target`` may be a system, reduced model or a pair ``(H, H_r)`` for the
    error ``H - H_r``.
    """
    grid = grid if isinstance(grid, FrequencyGrid) else FrequencyGrid(grid)
    f = as_transfer(target)
    vals, sig = [], []
    for w in grid.omega:
        try:
            H = np.atleast_2d(f(1j * w))
        except PHDaeError as exc:
            raise type(exc)(f'evaluation failed at omega = {w}: {exc}') from exc
        vals.append(H)
        sig.append(_sigma_max(H))
    if not vals:
        return TfSamples(grid, np.zeros((0, 0, 0), dtype=complex), np.zeros(0))
    return TfSamples(grid, np.array(vals), np.array(sig))


@dataclass(frozen=True)
class PositiveRealReport:
    min_eig: float
    omega: float
    tol: float

    @property
    def passed(self):
        return self.min_eig >= -self.tol


def positive_real_check(sys, grid, tol=1e-10):
    """Smallest eigenvalue of ``H(iw) + H(iw)^H`` over ``grid``."""
    grid = grid if isinstance(grid, FrequencyGrid) else FrequencyGrid(grid)
    f = as_transfer(sys)
    best, where = np.inf, np.nan
    for w in grid.omega:
        H = np.atleast_2d(f(1j * w))
        lam = np.linalg.eigvalsh(H + H.conj().T)[0]
        if lam < best:
            best, where = float(lam), float(w)
    return PositiveRealReport(best, where, tol)
