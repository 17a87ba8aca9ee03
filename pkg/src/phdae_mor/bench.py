"""Benchmark pH-DAEs: RCL ladder networks and random staircase systems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import ortho_group

from .core import DimensionError, PHDae
from .param import Theta, assemble_rom, segment_sizes

__all__ = ['LadderSpec', 'StaircaseSpec', 'rcl_ladder', 'random_staircase',
           'random_fom_from_theta', 'random_orthogonal']


@dataclass(frozen=True)
class LadderSpec:
    """Element values of an ``nbar``-loop RCL ladder.

    ``R``, ``L`` and ``C`` hold one value per loop; ``C0`` is the capacitor in
    parallel with the voltage source.
    """

    R: np.ndarray
    L: np.ndarray
    C: np.ndarray
    C0: float

    def __post_init__(self):
        for name in 'RLC':
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            object.__setattr__(self, name, v)
        if not (self.R.size == self.L.size == self.C.size) or self.R.size < 1:
            raise DimensionError('R, L, C must have one value per loop and nbar >= 1')
        if min(self.R.min(), self.L.min(), self.C.min(), self.C0) <= 0:
            raise ValueError('element values must be positive')

    @property
    def nbar(self):
        return self.R.size

    @classmethod
    def random(cls, nbar, seed=None, low=0.0, high=1.0):
        """Element values drawn uniformly from ``(low, high)``."""
        rng = np.random.default_rng(seed)
        vals = rng.uniform(low, high, size=3 * nbar + 1)
        # uniform(0, 1) includes 0 with probability ~0; guard anyway
        vals = np.where(vals <= 0, np.finfo(float).eps, vals)
        return cls(vals[:nbar], vals[nbar:2 * nbar], vals[2 * nbar:3 * nbar], float(vals[-1]))


def rcl_ladder(spec):
    """Modified-nodal-analysis pH-DAE of an RCL ladder driven by a voltage source.

    Nodes ``a_0, b_1, a_1, ..., b_nbar, a_nbar`` (ground excluded). The source
    and ``C0`` sit between ``a_0`` and ground; loop ``k`` has ``R_k`` from
    ``a_{k-1}`` to ``b_k``, ``L_k`` from ``b_k`` to ``a_k`` and ``C_k`` from
    ``a_k`` to ground. States are the ``2 nbar + 1`` node potentials, the
    ``nbar`` inductor currents and the source current, so ``n = 3 nbar + 2``.
    Input is the source voltage, output the current drawn from the source.
    """
    nb = spec.nbar
    n_nodes = 2 * nb + 1
    a = lambda k: 2 * k          # noqa: E731
    b = lambda k: 2 * k - 1      # noqa: E731
    A_C = np.zeros((n_nodes, nb + 1))
    A_R = np.zeros((n_nodes, nb))
    A_L = np.zeros((n_nodes, nb))
    A_V = np.zeros((n_nodes, 1))
    A_C[a(0), 0] = 1.0
    A_V[a(0), 0] = 1.0
    for k in range(1, nb + 1):
        A_R[a(k - 1), k - 1] = 1.0
        A_R[b(k), k - 1] = -1.0
        A_L[b(k), k - 1] = 1.0
        A_L[a(k), k - 1] = -1.0
        A_C[a(k), k] = 1.0
    caps = np.concatenate([[spec.C0], spec.C])
    n = n_nodes + nb + 1
    E = np.zeros((n, n))
    E[:n_nodes, :n_nodes] = A_C @ np.diag(caps) @ A_C.T
    E[n_nodes:n_nodes + nb, n_nodes:n_nodes + nb] = np.diag(spec.L)
    J = np.zeros((n, n))
    J[:n_nodes, n_nodes:n_nodes + nb] = -A_L
    J[:n_nodes, n_nodes + nb:] = -A_V
    J[n_nodes:, :n_nodes] = -J[:n_nodes, n_nodes:].T
    R = np.zeros((n, n))
    R[:n_nodes, :n_nodes] = A_R @ np.diag(1.0 / spec.R) @ A_R.T
    G = np.zeros((n, 1))
    G[-1, 0] = -1.0
    return PHDae(E, J, R, G)


@dataclass(frozen=True)
class StaircaseSpec:
    """Dimensions and conditioning of a random staircase-form system.

    ``e_range`` bounds the eigenvalues of the positive definite part of
    ``E``, ``sigma_range`` the singular values of ``J41``. ``dissipation``
    is added to the diagonal of ``R`` on blocks 1-3. With ``g4_zero`` the
    improper part vanishes (strictly proper index-2 systems).

    ``mix`` hides the block structure: ``'orthogonal'`` applies a random
    orthogonal change of coordinates, ``'permutation'`` a random signed
    permutation, ``None`` keeps staircase coordinates. Only the last two keep
    ``ker E`` exact in floating point; after an orthogonal mix the rounded
    ``E`` is merely numerically singular, which is invisible at moderate
    frequencies but dominates ``H(iw)`` for ``w >~ 1e6`` on index-2 systems.
    """

    dims: tuple
    m: int = 1
    seed: int | None = None
    e_range: tuple = (0.5, 2.0)
    sigma_range: tuple = (0.5, 2.0)
    dissipation: float = 0.5
    g4_zero: bool = False
    feedthrough: bool = True
    mix: str | None = 'orthogonal'

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) < 0:
            raise DimensionError(f'dims must be four nonnegative ints, got {self.dims}')
        if dims[0] != dims[3]:
            raise DimensionError(f'staircase dims need n1 == n4, got {dims}')
        if self.m < 1:
            raise DimensionError('m must be positive')
        if self.mix not in ('orthogonal', 'permutation', None):
            raise ValueError(f'unknown mix {self.mix!r}')
        object.__setattr__(self, 'dims', dims)


def random_orthogonal(n, rng):
    if n == 0:
        return np.zeros((0, 0))
    if n == 1:
        return np.array([[1.0 if rng.random() < 0.5 else -1.0]])
    return ortho_group.rvs(n, random_state=rng)


def _spd(k, lo, hi, rng):
    Q = random_orthogonal(k, rng)
    return (Q * rng.uniform(lo, hi, k)) @ Q.T if k else np.zeros((0, 0))


def random_staircase(spec, return_blocks=False):
    """Random pH-DAE with prescribed staircase dimensions.

    The system is built in staircase coordinates and then mixed according to
    ``spec.mix``. With ``return_blocks`` the unmixed system is returned too.
    """
    rng = np.random.default_rng(spec.seed)
    n1, n2, n3, n4 = spec.dims
    m = spec.m
    n = sum(spec.dims)
    k12, k123 = n1 + n2, n1 + n2 + n3
    E = np.zeros((n, n))
    E[:k12, :k12] = _spd(k12, *spec.e_range, rng)

    J = rng.standard_normal((n, n))
    J = (J - J.T) / 2
    J[k12:, k12:] = 0           # J33 is taken from the skew part below
    J[n1:, k123:] = 0
    J[k123:, n1:] = 0
    if n3:
        J33 = rng.standard_normal((n3, n3))
        J[k12:k123, k12:k123] = (J33 - J33.T) / 2
    if n1:
        U, V = random_orthogonal(n1, rng), random_orthogonal(n1, rng)
        J41 = (U * rng.uniform(*spec.sigma_range, n1)) @ V
        J[k123:, :n1] = J41
        J[:n1, k123:] = -J41.T

    k = k123 + m
    Z = rng.standard_normal((k, k)) / np.sqrt(k)
    Wsub = Z @ Z.T
    Wsub[:k123, :k123] += spec.dissipation * np.eye(k123)
    if not spec.feedthrough:
        Wsub[:, k123:] = 0
        Wsub[k123:, :] = 0
    R = np.zeros((n, n))
    R[:k123, :k123] = Wsub[:k123, :k123]
    P = np.zeros((n, m))
    P[:k123] = Wsub[:k123, k123:]
    S = Wsub[k123:, k123:]
    N = rng.standard_normal((m, m)) if spec.feedthrough else np.zeros((m, m))
    N = (N - N.T) / 2
    G = rng.standard_normal((n, m))
    if spec.g4_zero:
        G[k123:] = 0
    sys = PHDae(E, J, R, G, P, S, N)
    blocks = sys
    if spec.mix == 'orthogonal':
        sys = sys.transformed(random_orthogonal(n, rng).T)
    elif spec.mix == 'permutation':
        T0 = np.eye(n)[rng.permutation(n)] * rng.choice([-1.0, 1.0], n)[:, None]
        sys = sys.transformed(T0)
    return (sys, blocks) if return_blocks else sys


def random_fom_from_theta(r, m, ell, seed=None, scale=1.0):
    """Full-order model ``assemble_rom(theta)`` for a random hidden ``theta``.

    Returns ``(system, theta)``; entries of ``theta`` are ``scale * N(0, 1)``.
    """
    rng = np.random.default_rng(seed)
    size = sum(segment_sizes(r, m, ell).values())
    theta = Theta(r, m, ell, scale * rng.standard_normal(size))
    return assemble_rom(theta).system, theta
