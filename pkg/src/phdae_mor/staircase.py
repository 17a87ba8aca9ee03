"""Staircase form of pH-DAEs, index classification and proper realizations.

In staircase coordinates the state splits into four blocks ``x1..x4`` with

    E = [[E11, E12, 0, 0], [E21, E22, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
    J = [[J11, J12, J13, J14], [J21, J22, J23, 0], [J31, J32, J33, 0], [J41, 0, 0, 0]]
    R = [[R11, R12, R13, 0], [R21, R22, R23, 0], [R31, R32, R33, 0], [0, 0, 0, 0]]
    P = [P1; P2; P3; 0]

where the leading 2x2 block of ``E`` is positive definite and ``J41``,
``J33 - R33`` are invertible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PHDae, PHDaeError, Tolerances, dissipative_split

__all__ = [
    'RankAmbiguityError', 'IrregularPencilError', 'StaircaseError',
    'StaircaseSystem', 'ProperRealization', 'to_staircase', 'index_of',
    'proper_realization', 'staircase_polynomial_part',
]


class StaircaseError(PHDaeError):
    pass


class RankAmbiguityError(StaircaseError):
    """A rank decision fell too close to the threshold."""

    def __init__(self, what, spectrum, threshold):
        self.spectrum = np.asarray(spectrum)
        self.threshold = threshold
        super().__init__(f'ambiguous rank decision for {what}: relative spectrum '
                         f'{np.array2string(self.spectrum, precision=3)} near threshold {threshold:.1e}')


class IrregularPencilError(StaircaseError):
    pass


def _rank(values, scale, tol_rank, what):
    """Numerical rank of a nonnegative spectrum relative to ``scale``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or scale <= 0:
        return 0
    rel = values / scale
    lo, hi = tol_rank / 10, tol_rank * 10
    if np.any((rel > lo) & (rel < hi)):
        raise RankAmbiguityError(what, rel, tol_rank)
    return int(np.sum(rel > tol_rank))


def _null_split(M, scale, tol_rank, what):
    """Orthonormal ``(range(M^T), ker(M))`` bases of the row space of ``M``."""
    k = M.shape[1]
    if M.size == 0:
        return np.zeros((k, 0)), np.eye(k)
    _, sv, Vt = np.linalg.svd(M)
    rank = _rank(sv, scale, tol_rank, what)
    return Vt[:rank].T, Vt[rank:].T


@dataclass(frozen=True)
class StaircaseSystem:
    """A pH-DAE in staircase coordinates ``x_st = T x``.

    ``system`` holds the transformed matrices; block views are exposed through
    :meth:`block`.
    """

    system: PHDae
    T: np.ndarray
    dims: tuple

    @property
    def n1(self):
        return self.dims[0]

    @property
    def n2(self):
        return self.dims[1]

    @property
    def n3(self):
        return self.dims[2]

    @property
    def n4(self):
        return self.dims[3]

    def _slices(self):
        edges = np.concatenate([[0], np.cumsum(self.dims)])
        return [slice(int(edges[i]), int(edges[i + 1])) for i in range(4)]

    def block(self, name, i, j=None):
        """Block ``name_ij`` (1-based) of ``E, J, R`` or row block ``i`` of ``G, P``."""
        sl = self._slices()
        M = getattr(self.system, name)
        if j is None:
            return M[sl[i - 1]]
        return M[sl[i - 1], sl[j - 1]]

    def source(self):
        """The system in the original coordinates."""
        return self.system.transformed(self.T.T)

    def check(self, tol=None):
        """Return a dict of invariant residuals (all should be ~0 or True)."""
        tol = Tolerances() if tol is None else tol
        sys = self.system
        sl = self._slices()
        n12 = slice(0, self.n1 + self.n2)
        out = {'orthogonality': float(np.linalg.norm(self.T.T @ self.T - np.eye(sys.n)))}
        Ez = sys.E.copy()
        Ez[n12, n12] = 0
        out['E_pattern'] = float(np.linalg.norm(Ez))
        E12 = sys.E[n12, n12]
        out['E12_lambda_min'] = float(np.linalg.eigvalsh(E12)[0]) if E12.size else np.inf
        out['R_pattern'] = float(np.linalg.norm(sys.R[sl[3]]) + np.linalg.norm(sys.R[:, sl[3]]))
        out['J_pattern'] = float(sum(np.linalg.norm(sys.J[sl[a], sl[b]])
                                     for a, b in [(1, 3), (2, 3), (3, 1), (3, 2), (3, 3)]))
        out['P_pattern'] = float(np.linalg.norm(sys.P[sl[3]]))
        J41 = sys.J[sl[3], sl[0]]
        out['J41_sigma_min'] = float(np.linalg.svd(J41, compute_uv=False)[-1]) if J41.size else np.inf
        A33 = (sys.J - sys.R)[sl[2], sl[2]]
        out['A33_sigma_min'] = float(np.linalg.svd(A33, compute_uv=False)[-1]) if A33.size else np.inf
        return out

    @classmethod
    def from_blocks(cls, sys, dims, tol=None):
        """Wrap a system that is already in staircase form (``T = I``)."""
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4 or dims[0] != dims[3] or min(dims) < 0 or sum(dims) != sys.n:
            raise StaircaseError(f'invalid staircase dims {dims} for n={sys.n}')
        st = cls(sys, np.eye(sys.n), dims)
        tol = Tolerances() if tol is None else tol
        c = st.check(tol)
        scale = 1 + np.linalg.norm(sys.E) + np.linalg.norm(sys.J) + np.linalg.norm(sys.R)
        atol = 1e-10 * scale
        bad = [k for k in ('E_pattern', 'R_pattern', 'J_pattern', 'P_pattern') if c[k] > atol]
        if bad:
            raise StaircaseError(f'zero pattern violated: {bad}')
        for k in ('E12_lambda_min', 'J41_sigma_min', 'A33_sigma_min'):
            if c[k] <= tol.tol_rank * scale:
                raise StaircaseError(f'{k} = {c[k]:.2e} is not safely positive')
        return st


def to_staircase(sys, tol=None):
    """Orthogonal transformation of ``sys`` to staircase form.

    1. split ``R^n`` into ``range(E)`` and ``ker(E)``;
    2. within ``ker(E)`` the kernel of ``(J - R)_ZZ`` gives ``x4`` and its
       orthogonal complement ``x3``;
    3. within ``range(E)`` the row space of ``J_{4,+}`` gives ``x1``, the rest ``x2``.

    Rank decisions use ``tol.tol_rank`` relative to the largest singular value
    of the relevant matrix; values within a factor 10 of the threshold raise
    :class:`RankAmbiguityError`.
    """
    tol = Tolerances() if tol is None else tol
    n = sys.n
    lam, V = np.linalg.eigh((sys.E + sys.E.T) / 2)
    lam, V = lam[::-1], V[:, ::-1]
    scale_E = max(lam[0], 0.0) if n else 0.0
    n_plus = _rank(np.abs(lam), scale_E, tol.tol_rank, 'E')
    if n_plus == n:
        Vp, Vz = np.eye(n), np.zeros((n, 0))
    else:
        Vp, Vz = V[:, :n_plus], V[:, n_plus:]

    A = sys.A
    scale_A = np.linalg.norm(A, 2) if n else 0.0
    Azz = Vz.T @ A @ Vz
    K3, K4 = _null_split(Azz, scale_A, tol.tol_rank, '(J-R) on ker E')
    Z3, Z4 = Vz @ K3, Vz @ K4
    M = Z4.T @ sys.J @ Vp
    Q1, Q2 = _null_split(M, scale_A, tol.tol_rank, 'J41')
    if Q1.shape[1] != Z4.shape[1]:
        raise IrregularPencilError(f'J41 is rank deficient ({Q1.shape[1]} < {Z4.shape[1]}): '
                                   'the pencil sE - (J - R) is singular')
    X1, X2 = Vp @ Q1, Vp @ Q2
    T = np.hstack([X1, X2, Z3, Z4]).T
    dims = (X1.shape[1], X2.shape[1], Z3.shape[1], Z4.shape[1])
    st_sys = sys.transformed(T)
    # Exact zeros where the construction guarantees them.
    sl = StaircaseSystem(st_sys, T, dims)._slices()
    E, J, R, P = (np.array(getattr(st_sys, k)) for k in 'EJRP')
    E[sl[2]] = 0
    E[:, sl[2]] = 0
    E[sl[3]] = 0
    E[:, sl[3]] = 0
    R[sl[3]] = 0
    R[:, sl[3]] = 0
    for a, b in [(1, 3), (2, 3), (3, 1), (3, 2), (3, 3)]:
        J[sl[a], sl[b]] = 0
    P[sl[3]] = 0
    st_sys = PHDae(E, J, R, st_sys.G, P, sys.S, sys.N)
    return StaircaseSystem(st_sys, T, dims)


def index_of(st):
    """Differentiation index (0, 1 or 2) from the staircase dimensions."""
    n1, _, n3, n4 = st.dims if isinstance(st, StaircaseSystem) else st
    if n1 == n4 and n1 > 0:
        return 2
    if n1 == 0 and n4 == 0:
        return 1 if n3 > 0 else 0
    raise StaircaseError(f'inconsistent staircase dims {tuple(st.dims if isinstance(st, StaircaseSystem) else st)}')


@dataclass(frozen=True)
class ProperRealization:
    """Implicit pH-ODE ``E2 z' = (J2 - R2) z + (G2 - P2) u`` of dimension ``n2``
    realizing the proper part ``H(s) - P1 s``.

    ``P1`` is the coefficient of the improper part removed by the elimination.
    """

    system: PHDae
    P1: np.ndarray

    @property
    def n(self):
        return self.system.n

    def ode(self):
        """``(A, B, C, D)`` with ``E2`` eliminated by its Cholesky factor."""
        sys = self.system
        if sys.n == 0:
            return (np.zeros((0, 0)), np.zeros((0, sys.m)), np.zeros((sys.m, 0)), sys.D)
        Lc = np.linalg.cholesky(sys.E)
        Li = np.linalg.inv(Lc)
        return Li @ sys.A @ Li.T, Li @ sys.B, sys.C @ Li.T, sys.D


def _schur_eliminate(E, M, keep, elim, nu):
    """Eliminate algebraic variables ``elim`` from the system matrix ``M``.

    ``M`` is the (n + m) x (n + m) matrix ``[[A, B], [-C, -D]]``; the rows and
    columns of ``E`` belonging to ``elim`` must vanish.
    """
    n = E.shape[0]
    ku = np.concatenate([keep, np.arange(n, n + nu)])
    if len(elim) == 0:
        return E[np.ix_(keep, keep)], M[np.ix_(ku, ku)]
    Mee = M[np.ix_(elim, elim)]
    Mke = M[np.ix_(ku, elim)]
    Mek = M[np.ix_(elim, ku)]
    Mred = M[np.ix_(ku, ku)] - Mke @ np.linalg.solve(Mee, Mek)
    return E[np.ix_(keep, keep)], Mred


def proper_realization(st):
    """Realization of the proper part of ``H`` with state dimension ``n2``.

    ``x3`` is removed by a Schur complement with ``J33 - R33``; the index-2
    pair ``(x1, x4)`` is removed using ``x1 = F u`` with ``F = -J41^{-1} G4``
    and the change of variables ``z = x2 + E22^{-1} E21 x1``. The improper
    coefficient is ``P1 = F^T (E11 - E12 E22^{-1} E21) F``.
    """
    sys = st.system
    n1, n2, n3, n4 = st.dims
    m = sys.m
    n = sys.n
    M = np.block([[sys.A, sys.B], [-sys.C, -sys.D]])
    keep = np.concatenate([np.arange(0, n1 + n2), np.arange(n1 + n2 + n3, n)])
    elim = np.arange(n1 + n2, n1 + n2 + n3)
    if n3:
        A33 = M[np.ix_(elim, elim)]
        if np.linalg.svd(A33, compute_uv=False)[-1] <= 1e-14 * max(1.0, np.linalg.norm(A33)):
            raise StaircaseError('J33 - R33 is singular')
    E, M = _schur_eliminate(sys.E, M, keep, elim, m)
    # variables now ordered (x1, x2, x4, u)
    i1 = np.arange(0, n1)
    i2 = np.arange(n1, n1 + n2)
    i4 = np.arange(n1 + n2, n1 + n2 + n4)
    iu = np.arange(n1 + n2 + n4, n1 + n2 + n4 + m)
    A = M[:n1 + n2 + n4, :n1 + n2 + n4]
    B = M[:n1 + n2 + n4, n1 + n2 + n4:]
    C = -M[n1 + n2 + n4:, :n1 + n2 + n4]
    D = -M[np.ix_(iu, iu)]
    E11, E12 = E[np.ix_(i1, i1)], E[np.ix_(i1, i2)]
    E21, E22 = E[np.ix_(i2, i1)], E[np.ix_(i2, i2)]
    A22 = A[np.ix_(i2, i2)]
    B2 = B[i2]
    C2 = C[:, i2]
    if n1 == 0:
        E2, A2, B2n, C2n, D2 = E22, A22, B2, C2, D
        P1 = np.zeros((m, m))
    else:
        J41 = A[np.ix_(i4, i1)]
        if np.linalg.svd(J41, compute_uv=False)[-1] <= 1e-14 * max(1.0, np.linalg.norm(J41)):
            raise StaircaseError('J41 is singular')
        G4 = B[i4]
        A11, A12, A21 = A[np.ix_(i1, i1)], A[np.ix_(i1, i2)], A[np.ix_(i2, i1)]
        A14 = A[np.ix_(i1, i4)]
        B1 = B[i1]
        C1, C4 = C[:, i1], C[:, i4]
        F = -np.linalg.solve(J41, G4)
        # y picks up C4 x4 with x4 = A14^{-1} (E11 x1' + E12 x2' - A11 x1 - A12 x2 - B1 u)
        Y = C4 @ np.linalg.inv(A14)
        E22iE21 = np.linalg.solve(E22, E21) if n2 else np.zeros((0, n1))
        K = E22iE21 @ F
        E2 = E22
        A2 = A22
        B2n = A21 @ F - A22 @ K + B2
        E12iE22 = np.linalg.solve(E22.T, E12.T).T if n2 else np.zeros((n1, 0))
        C2n = C2 - Y @ A12 + Y @ E12iE22 @ A22
        D2 = (C1 @ F - C2 @ K + D - Y @ A11 @ F + Y @ A12 @ K - Y @ B1
              + Y @ E12iE22 @ B2n)
        P1 = Y @ (E11 @ F - E12 @ K)
    J2, R2, G2, P2, S2, N2 = dissipative_split(A2, B2n, C2n, D2)
    P1 = (P1 + P1.T) / 2
    return ProperRealization(PHDae((E2 + E2.T) / 2, J2, R2, G2, P2, S2, N2), P1)


def staircase_polynomial_part(st):
    """``(P0, P1)`` read off the proper realization."""
    pr = proper_realization(st)
    return pr.system.D, pr.P1
