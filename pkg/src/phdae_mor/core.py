"""Port-Hamiltonian descriptor systems and the dense kernels shared by the package.

A pH-DAE is stored as the seven real matrices of

    E x'(t) = (J - R) x(t) + (G - P) u(t),
    y(t)    = (G + P)^T x(t) + (S - N) u(t),

with E = E^T >= 0, J = -J^T, N = -N^T and [[R, P], [P^T, S]] >= 0.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

__all__ = [
    'PHDaeError', 'DimensionError', 'NotHurwitzError', 'SpectrumCollisionError',
    'PHDae', 'Tolerances', 'ValidationReport', 'validate',
    'lyapunov_solve', 'sylvester_solve', 'dissipative_split',
]


class PHDaeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PHDaeError, ValueError):
    pass


class NotHurwitzError(PHDaeError):
    pass


class SpectrumCollisionError(PHDaeError):
    pass


def _as_matrix(a, shape, name):
    a = np.array(a, dtype=float, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim == 1 and shape[1] == 1:
        a = a.reshape(-1, 1)
    if a.shape != shape:
        raise DimensionError(f'{name} has shape {a.shape}, expected {shape}')
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PHDae:
    """Dense pH-DAE ``(E, J, R, G, P, S, N)``.

    ``P``, ``S`` and ``N`` may be omitted and default to zero. Arrays are copied
    and made read-only, so instances can be shared freely.
    """

    E: np.ndarray
    J: np.ndarray
    R: np.ndarray
    G: np.ndarray
    P: np.ndarray = None
    S: np.ndarray = None
    N: np.ndarray = None

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        n = E.shape[0]
        G = np.asarray(self.G, dtype=float)
        if G.ndim < 2:
            G = G.reshape(n, -1) if G.size else np.zeros((n, 0))
        m = G.shape[1]
        P = np.zeros((n, m)) if self.P is None else self.P
        S = np.zeros((m, m)) if self.S is None else self.S
        N = np.zeros((m, m)) if self.N is None else self.N
        for name, value, shape in [('E', E, (n, n)), ('J', self.J, (n, n)), ('R', self.R, (n, n)),
                                   ('G', G, (n, m)), ('P', P, (n, m)),
                                   ('S', S, (m, m)), ('N', N, (m, m))]:
            object.__setattr__(self, name, _as_matrix(value, shape, name))

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def A(self):
        """``J - R``."""
        return self.J - self.R

    @property
    def B(self):
        """``G - P``."""
        return self.G - self.P

    @property
    def C(self):
        """``(G + P)^T``."""
        return (self.G + self.P).T

    @property
    def D(self):
        """``S - N``."""
        return self.S - self.N

    def transformed(self, T):
        """Return the system in coordinates ``x_new = T x`` for orthogonal ``T``."""
        T = np.asarray(T, dtype=float)
        return PHDae(T @ self.E @ T.T, T @ self.J @ T.T, T @ self.R @ T.T,
                     T @ self.G, T @ self.P, self.S, self.N)

    def matrices(self):
        return dict(E=self.E, J=self.J, R=self.R, G=self.G, P=self.P, S=self.S, N=self.N)

    def __eq__(self, other):
        if not isinstance(other, PHDae):
            return NotImplemented
        a, b = self.matrices(), other.matrices()
        return all(a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a)

    __hash__ = None


@dataclass(frozen=True)
class Tolerances:
    """Validation and rank tolerances.

    ``tol_sym`` and ``tol_psd`` default to ``1e-10 * (1 + ||M||_F)`` of the
    matrix being checked when left as ``None``.
    """

    tol_sym: float | None = None
    tol_psd: float | None = None
    tol_rank: float = 1e-8
    tol_freq: float = 1e-6

    def __post_init__(self):
        for name in ('tol_sym', 'tol_psd', 'tol_rank', 'tol_freq'):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValueError(f'{name} must be nonnegative, got {value}')

    def sym(self, M):
        return self.tol_sym if self.tol_sym is not None else 1e-10 * (1 + np.linalg.norm(M))

    def psd(self, M):
        return self.tol_psd if self.tol_psd is not None else 1e-10 * (1 + np.linalg.norm(M))


@dataclass
class ValidationReport:
    """Residuals of the pH structure conditions.

    ``residuals`` are nonnegative violations (``max(0, -lambda_min)`` for the
    semidefiniteness checks); the signed eigenvalue margins are kept in
    ``margins``.
    """

    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)

    @property
    def flags(self):
        return {k: bool(v <= self.tolerances[k]) for k, v in self.residuals.items()}

    @property
    def passed(self):
        return all(self.flags.values())

    def __bool__(self):
        return self.passed

    def lines(self):
        out = []
        for k, v in self.residuals.items():
            status = 'ok' if self.flags[k] else 'FAIL'
            out.append(f'{k:<14} {v:.3e}  (tol {self.tolerances[k]:.1e})  {status}')
        for k, v in self.margins.items():
            out.append(f'{k:<14} {v:+.3e}')
        return out

    def to_dict(self):
        return {'passed': self.passed, 'residuals': dict(self.residuals),
                'tolerances': dict(self.tolerances), 'margins': dict(self.margins),
                'flags': self.flags}


def _lambda_min(M):
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh((M + M.T) / 2)[0])


def validate(sys, tol=None, check_regular=False, rng=None):
    """Check the pH structure conditions of ``sys``.

    Dimension mismatches raise :class:`DimensionError` when the system is
    constructed; this function only reports residuals.

    Parameters
    ----------
    sys
        A :class:`PHDae` or any object exposing ``E, J, R, G, P, S, N``.
    tol : Tolerances, optional
    check_regular : bool
        Also test ``det(sE - (J - R)) != 0`` at a random complex ``s``.
    """
    tol = Tolerances() if tol is None else tol
    if not isinstance(sys, PHDae):
        sys = PHDae(sys.E, sys.J, sys.R, sys.G, sys.P, sys.S, sys.N)
    rep = ValidationReport()
    W = np.block([[sys.R, sys.P], [sys.P.T, sys.S]])
    lam_E = _lambda_min(sys.E)
    lam_W = _lambda_min(W)
    rep.residuals['J_skew'] = float(np.linalg.norm(sys.J + sys.J.T))
    rep.tolerances['J_skew'] = tol.sym(sys.J)
    rep.residuals['N_skew'] = float(np.linalg.norm(sys.N + sys.N.T))
    rep.tolerances['N_skew'] = tol.sym(sys.N)
    rep.residuals['E_sym'] = float(np.linalg.norm(sys.E - sys.E.T))
    rep.tolerances['E_sym'] = tol.sym(sys.E)
    rep.residuals['E_psd'] = max(0.0, -lam_E)
    rep.tolerances['E_psd'] = tol.psd(sys.E)
    rep.residuals['W_psd'] = max(0.0, -lam_W)
    rep.tolerances['W_psd'] = tol.psd(W)
    rep.margins['lambda_min_E'] = lam_E
    rep.margins['lambda_min_W'] = lam_W
    if check_regular:
        rng = np.random.default_rng(rng)
        s = complex(*rng.standard_normal(2))
        pencil = s * sys.E - sys.A
        sv = np.linalg.svd(pencil, compute_uv=False) if sys.n else np.ones(1)
        rep.residuals['singular_pencil'] = float(sv[-1] <= tol.tol_rank * sv[0])
        rep.tolerances['singular_pencil'] = 0.0
    return rep


def dissipative_split(A, B, C, D):
    """Split ``[[A, B], [-C, -D]]`` into pH matrices ``(J, R, G, P, S, N)``.

    Exact inverse of ``A = J - R, B = G - P, C = (G + P)^T, D = S - N``.
    """
    J = (A - A.T) / 2
    R = -(A + A.T) / 2
    G = (B + C.T) / 2
    P = (C.T - B) / 2
    S = (D + D.T) / 2
    N = -(D - D.T) / 2
    return J, R, G, P, S, N


def _check_hurwitz(A, name='A'):
    if A.size and np.max(np.linalg.eigvals(A).real) >= 0:
        raise NotHurwitzError(f'{name} has eigenvalues in the closed right half-plane')


def lyapunov_solve(A, Q, tol=1e-8):
    """Solve ``A X + X A^T + Q = 0`` for Hurwitz ``A`` and symmetric ``Q``.

    Bartels-Stewart on the real Schur form of ``A``. A warning reporting the
    relative residual is issued if it exceeds ``tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if A.size == 0:
        return np.zeros_like(A)
    _check_hurwitz(A)
    X = spla.solve_continuous_lyapunov(A, -Q)
    X = (X + X.T) / 2
    res = np.linalg.norm(A @ X + X @ A.T + Q)
    scale = np.linalg.norm(Q)
    if res > tol * max(scale, np.finfo(float).tiny):
        warnings.warn(f'ill-conditioned Lyapunov solve, relative residual {res / scale:.2e}',
                      RuntimeWarning, stacklevel=2)
    return X


def sylvester_solve(A, B, C, tol=1e-8):
    """Solve ``A Y + Y B^T + C = 0``.

    Raises :class:`SpectrumCollisionError` if ``A`` and ``-B`` share an
    eigenvalue (up to a relative gap of ``1e-12``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.asarray(C, dtype=float).reshape(A.shape[0], B.shape[0])
    if C.size == 0:
        return np.zeros_like(C)
    la = np.linalg.eigvals(A)
    lb = np.linalg.eigvals(B)
    gap = np.min(np.abs(la[:, None] + lb[None, :]))
    scale = max(np.abs(la).max(), np.abs(lb).max(), 1.0)
    if gap <= 1e-12 * scale:
        raise SpectrumCollisionError(f'spectra of A and -B intersect (gap {gap:.2e})')
    Y = spla.solve_sylvester(A, B.T, -C)
    res = np.linalg.norm(A @ Y + Y @ B.T + C)
    cn = np.linalg.norm(C)
    if res > tol * max(cn, np.finfo(float).tiny):
        warnings.warn(f'ill-conditioned Sylvester solve, relative residual {res / cn:.2e}',
                      RuntimeWarning, stacklevel=2)
    return Y
