"""Parameterization of reduced pH-DAEs by an unconstrained real vector.

The vector ``theta`` is split into five consecutive segments

    theta_J  r(r-1)/2           -> J_hat = vtsu(theta_J)^T - vtsu(theta_J)
    theta_W  (r+m)(r+m+1)/2     -> W = U U^T,  U = vtu(theta_W)
    theta_G  r*m                -> G_hat = vtf(theta_G, m)
    theta_N  m(m-1)/2           -> N = vtsu(theta_N)^T - vtsu(theta_N)
    theta_L  m*ell              -> L = vtf(theta_L, ell)

with ``R_hat, P_hat, S`` the blocks of ``W``. Every vector yields a valid
pH-DAE of state dimension ``r + 2*ell`` whose transfer function is
``H_p(s) + L L^T s``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .core import DimensionError, PHDae, PHDaeError

__all__ = [
    'vtu', 'vtsu', 'vtf', 'segment_sizes', 'Theta', 'RomSystem', 'assemble_rom',
    'rom_transfer', 'pullback', 'pin_polynomial_part', 'init_theta', 'upper_factor',
    'PinningError',
]

SEGMENTS = ('J', 'W', 'G', 'N', 'L')


class PinningError(PHDaeError):
    pass


def vtu(v, n):
    """Fill the upper triangle (with diagonal) of an ``n x n`` matrix row by row."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n * (n + 1) // 2:
        raise DimensionError(f'vtu needs {n * (n + 1) // 2} entries for n={n}, got {v.size}')
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = v
    return M


def vtsu(v, n):
    """Fill the strict upper triangle of an ``n x n`` matrix row by row."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n * (n - 1) // 2:
        raise DimensionError(f'vtsu needs {n * (n - 1) // 2} entries for n={n}, got {v.size}')
    M = np.zeros((n, n))
    M[np.triu_indices(n, 1)] = v
    return M


def vtf(v, m):
    """Row-major reshape of a length ``n*m`` vector into ``n x m``."""
    v = np.asarray(v, dtype=float).ravel()
    if m == 0:
        if v.size:
            raise DimensionError('cannot reshape a nonempty vector to zero columns')
        return np.zeros((0, 0))
    if v.size % m:
        raise DimensionError(f'length {v.size} is not divisible by {m}')
    return v.reshape(-1, m)


def segment_sizes(r, m, ell):
    return {'J': r * (r - 1) // 2,
            'W': (r + m) * (r + m + 1) // 2,
            'G': r * m,
            'N': m * (m - 1) // 2,
            'L': m * ell}


@dataclass(frozen=True)
class Theta:
    """Parameter vector of a reduced model together with its dimensions.

    ``frozen`` marks entries that are held fixed during optimization (the
    pinned polynomial part).
    """

    r: int
    m: int
    ell: int
    values: np.ndarray
    frozen: np.ndarray = None

    def __post_init__(self):
        if min(self.r, self.m, self.ell) < 0:
            raise DimensionError('dimensions must be nonnegative')
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.size:
            raise DimensionError(f'theta has {values.size} entries, expected {self.size} '
                                 f'for (r, m, ell) = ({self.r}, {self.m}, {self.ell})')
        frozen = (np.zeros(values.size, dtype=bool) if self.frozen is None
                  else np.array(self.frozen, dtype=bool).ravel())
        if frozen.size != values.size:
            raise DimensionError('frozen mask length does not match theta')
        values.setflags(write=False)
        frozen.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'frozen', frozen)

    @property
    def sizes(self):
        return segment_sizes(self.r, self.m, self.ell)

    @property
    def size(self):
        return sum(self.sizes.values())

    def slices(self):
        out, start = {}, 0
        for k in SEGMENTS:
            out[k] = slice(start, start + self.sizes[k])
            start += self.sizes[k]
        return out

    def segment(self, name):
        return self.values[self.slices()[name]]

    @classmethod
    def from_segments(cls, r, m, ell, J=(), W=(), G=(), N=(), L=(), frozen=None):
        sizes = segment_sizes(r, m, ell)
        parts = []
        for name, seg in zip(SEGMENTS, (J, W, G, N, L)):
            seg = np.asarray(seg, dtype=float).ravel()
            if seg.size == 0 and sizes[name]:
                seg = np.zeros(sizes[name])
            parts.append(seg)
        return cls(r, m, ell, np.concatenate(parts), frozen)

    @property
    def free(self):
        return self.values[~self.frozen]

    def with_free(self, x):
        values = self.values.copy()
        values[~self.frozen] = x
        return Theta(self.r, self.m, self.ell, values, self.frozen)

    def with_values(self, values):
        return Theta(self.r, self.m, self.ell, values, self.frozen)

    def to_dict(self):
        return {'r': self.r, 'm': self.m, 'ell': self.ell,
                'values': [float(v) for v in self.values],
                'frozen': [bool(f) for f in self.frozen]}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(int(d['r']), int(d['m']), int(d['ell']),
                   np.array(d['values'], dtype=float), d.get('frozen'))

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return ((self.r, self.m, self.ell) == (other.r, other.m, other.ell)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.frozen, other.frozen))

    __hash__ = None


@dataclass(frozen=True)
class RomSystem:
    """Reduced pH-DAE assembled from a :class:`Theta`."""

    theta: Theta
    U: np.ndarray
    W: np.ndarray
    Jh: np.ndarray
    Rh: np.ndarray
    Ph: np.ndarray
    Gh: np.ndarray
    S: np.ndarray
    N: np.ndarray
    L: np.ndarray

    @property
    def r(self):
        return self.theta.r

    @property
    def m(self):
        return self.theta.m

    @property
    def ell(self):
        return self.theta.ell

    @property
    def n(self):
        return self.r + 2 * self.ell

    @property
    def P1(self):
        return self.L @ self.L.T

    def proper_ss(self):
        """State-space data ``(A, B, C, D)`` of the proper part."""
        return (self.Jh - self.Rh, self.Gh - self.Ph, (self.Gh + self.Ph).T, self.S - self.N)

    @property
    def system(self):
        r, m, ell = self.r, self.m, self.ell
        n = r + 2 * ell
        I = np.eye(ell)
        E = np.zeros((n, n))
        E[:r + ell, :r + ell] = np.eye(r + ell)
        J = np.zeros((n, n))
        J[:r, :r] = self.Jh
        J[r:r + ell, r + ell:] = -I
        J[r + ell:, r:r + ell] = I
        R = np.zeros((n, n))
        R[:r, :r] = self.Rh
        G = np.zeros((n, m))
        G[:r] = self.Gh
        G[r + ell:] = self.L.T
        P = np.zeros((n, m))
        P[:r] = self.Ph
        return PHDae(E, J, R, G, P, self.S, self.N)

    def transfer(self, s):
        return rom_transfer(self, s)


def assemble_rom(theta):
    """Build the reduced model for ``theta``; valid pH for every ``theta``."""
    r, m, ell = theta.r, theta.m, theta.ell
    vJ = vtsu(theta.segment('J'), r)
    U = vtu(theta.segment('W'), r + m)
    W = U @ U.T
    vN = vtsu(theta.segment('N'), m)
    G = theta.segment('G').reshape(r, m)
    L = theta.segment('L').reshape(m, ell)
    return RomSystem(theta=theta, U=U, W=W, Jh=vJ.T - vJ, Rh=W[:r, :r], Ph=W[:r, r:],
                     Gh=G, S=W[r:, r:], N=vN.T - vN, L=L)


def rom_transfer(theta, s):
    """Evaluate ``H_r(s) = C (sI - A)^{-1} B + (S - N) + L L^T s``."""
    rom = theta if isinstance(theta, RomSystem) else assemble_rom(theta)
    A, B, C, D = rom.proper_ss()
    H = D + rom.P1 * s
    if rom.r:
        M = s * np.eye(rom.r) - A
        try:
            H = H + C @ np.linalg.solve(M, B.astype(complex))
        except np.linalg.LinAlgError as exc:
            raise PHDaeError(f'resolvent singular at s={s}') from exc
    return np.asarray(H, dtype=complex)


def pullback(theta, gA=None, gB=None, gC=None, gD=None, gL=None, U=None):
    """Chain gradients w.r.t. ``(A, B, C, D, L)`` of the ROM to ``theta``.

    ``A = J_hat - R_hat``, ``B = G_hat - P_hat``, ``C = (G_hat + P_hat)^T``,
    ``D = S - N``. Missing gradients are treated as zero. Returns the gradient
    over all entries of ``theta.values``.
    """
    r, m, ell = theta.r, theta.m, theta.ell
    gA = np.zeros((r, r)) if gA is None else gA
    gB = np.zeros((r, m)) if gB is None else gB
    gC = np.zeros((m, r)) if gC is None else gC
    gD = np.zeros((m, m)) if gD is None else gD
    if U is None:
        U = vtu(theta.segment('W'), r + m)

    out = np.zeros(theta.size)
    sl = theta.slices()
    out[sl['J']] = (gA.T - gA)[np.triu_indices(r, 1)]
    gW = np.zeros((r + m, r + m))
    gW[:r, :r] = -gA
    gW[:r, r:] = -gB + gC.T
    gW[r:, r:] = gD
    out[sl['W']] = ((gW + gW.T) @ U)[np.triu_indices(r + m)]
    out[sl['G']] = (gB + gC.T).ravel()
    out[sl['N']] = (gD - gD.T)[np.triu_indices(m, 1)]
    if gL is not None and ell:
        out[sl['L']] = np.asarray(gL).ravel()
    return out


def upper_factor(M):
    """Upper-triangular ``U`` with ``U U^T = M`` for symmetric PSD ``M``.

    Works for singular ``M``; the diagonal of ``U`` is nonnegative.
    """
    M = (M + M.T) / 2
    if M.size == 0:
        return np.zeros_like(M)
    lam, V = np.linalg.eigh(M)
    root = V * np.sqrt(np.clip(lam, 0, None))
    Ru, _ = spla.rq(root)
    return Ru * np.where(np.diag(Ru) < 0, -1.0, 1.0)


def _low_rank_factor(P1, tol_rank, atol):
    lam, V = np.linalg.eigh(P1)
    lam, V = lam[::-1], V[:, ::-1]
    if lam.size == 0:
        return np.zeros((0, 0))
    thresh = max(tol_rank * lam[0], atol)
    ell = int(np.sum(lam > thresh))
    L = V[:, :ell] * np.sqrt(lam[:ell])
    for k in range(ell):
        if L[np.argmax(np.abs(L[:, k])), k] < 0:
            L[:, k] = -L[:, k]
    return L


def pin_polynomial_part(theta, P0, P1, mode='hinf', tol_rank=1e-8, atol=1e-12,
                        pin_coupling=False):
    """Fix the polynomial part of the reduced model.

    Sets ``L`` with ``L L^T = P1`` (``ell = rank(P1)``) and freezes it. In
    ``'h2'`` mode the feedthrough is pinned as well: ``U22`` becomes the upper
    factor of ``sym(P0)`` and ``N = -skew(P0)``, so that ``S - N = P0``
    exactly. Since ``S = U22 U22^T`` does not involve ``U12``, the coupling
    block stays free and ``P_hat = U12 U22^T`` remains trainable. With
    ``pin_coupling`` the block is set to zero and frozen as well (``P_hat = 0``),
    which restricts the reduced model class.
    """
    if mode not in ('hinf', 'h2'):
        raise ValueError(f'unknown mode {mode!r}')
    r, m = theta.r, theta.m
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if P1.shape != (m, m) or P0.shape != (m, m):
        raise DimensionError(f'polynomial part must be {m}x{m}')
    tol = 1e-10 * (1 + np.linalg.norm(P1))
    if np.linalg.norm(P1 - P1.T) > tol:
        raise PinningError('P1 is not symmetric')
    P1 = (P1 + P1.T) / 2
    if np.linalg.eigvalsh(P1)[0] < -tol:
        raise PinningError('P1 is not positive semidefinite')
    L = _low_rank_factor(P1, tol_rank, atol)
    ell = L.shape[1]

    sizes = segment_sizes(r, m, ell)
    vals = {k: theta.segment(k).copy() for k in ('J', 'W', 'G', 'N')}
    frz = {k: theta.frozen[theta.slices()[k]].copy() for k in ('J', 'W', 'G', 'N')}
    vals['L'] = L.ravel()
    frz['L'] = np.ones(sizes['L'], dtype=bool)

    if mode == 'h2':
        S0 = (P0 + P0.T) / 2
        K0 = (P0 - P0.T) / 2
        if np.linalg.eigvalsh(S0)[0] < -1e-10 * (1 + np.linalg.norm(S0)):
            raise PinningError('sym(P0) is not positive semidefinite')
        U = vtu(vals['W'], r + m)
        U[r:, r:] = upper_factor(S0)
        fmask = np.zeros((r + m, r + m), dtype=bool)
        fmask[r:, r:] = True
        if pin_coupling:
            U[:r, r:] = 0.0
            fmask[:r, r:] = True
        iu = np.triu_indices(r + m)
        vals['W'] = U[iu]
        frz['W'] = frz['W'] | fmask[iu]
        vals['N'] = K0[np.triu_indices(m, 1)]
        frz['N'] = np.ones(sizes['N'], dtype=bool)

    values = np.concatenate([vals[k] for k in SEGMENTS])
    frozen = np.concatenate([frz[k] for k in SEGMENTS])
    return Theta(r, m, ell, values, frozen)


def init_theta(r, m, ell, strategy='identity-dissipative', seed=None, eps=1e-2):
    """Initial parameter vector.

    ``'identity-dissipative'`` gives ``J_hat = 0``, ``W = diag(eps I_r, 0)`` and
    ``G_hat`` with i.i.d. ``N(0, 1/r)`` entries (standard deviation
    ``1/sqrt(r)``); ``'random'`` draws every entry from ``0.1 * N(0, 1)``.
    """
    rng = np.random.default_rng(seed)
    sizes = segment_sizes(r, m, ell)
    if strategy == 'identity-dissipative':
        U = np.zeros((r + m, r + m))
        U[:r, :r] = np.sqrt(eps) * np.eye(r)
        G = rng.standard_normal(sizes['G']) / np.sqrt(r) if r else np.zeros(0)
        return Theta.from_segments(r, m, ell, W=U[np.triu_indices(r + m)], G=G)
    if strategy == 'random':
        return Theta(r, m, ell, 0.1 * rng.standard_normal(sum(sizes.values())))
    raise ValueError(f'unknown init strategy {strategy!r}')
