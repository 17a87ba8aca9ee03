import numpy as np
import pytest
import scipy.linalg as spla


def random_stable(n, m, seed, p=None, d_scale=0.3, damping=(0.05, 2.0)):
    """Random real (A, B, C, D) with poles -a +- bi and a well-conditioned basis."""
    rng = np.random.default_rng(seed)
    p = m if p is None else p
    blocks = []
    for _ in range(n // 2):
        a, b = rng.uniform(*damping), rng.uniform(0.2, 3.0)
        blocks.append(np.array([[-a, b], [-b, -a]]))
    if n % 2:
        blocks.append(np.array([[-rng.uniform(*damping)]]))
    A0 = spla.block_diag(*blocks)
    V = rng.standard_normal((n, n)) + 3 * np.eye(n)
    A = V @ A0 @ np.linalg.inv(V)
    return (A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
            d_scale * rng.standard_normal((p, m)))


def kron_lyap(A, Q):
    n = A.shape[0]
    K = np.kron(np.eye(n), A) + np.kron(A, np.eye(n))
    return np.linalg.solve(K, -Q.reshape(-1, order='F')).reshape(n, n, order='F')


def kron_sylv(A, B, C):
    n, r = C.shape
    K = np.kron(np.eye(r), A) + np.kron(B, np.eye(n))
    return np.linalg.solve(K, -C.reshape(-1, order='F')).reshape(n, r, order='F')


def dae_resolvent(sys, s):
    M = s * sys.E - sys.A
    return sys.C @ np.linalg.solve(M, sys.B.astype(complex)) + sys.D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tf_mp(sys, w, dps=40):
    """``H(iw)`` in ``dps``-digit arithmetic for the exact (double) matrices."""
    import mpmath as mp
    with mp.workdps(dps):
        E, A, B, C, D = (mp.matrix(x.tolist()) for x in (sys.E, sys.A, sys.B, sys.C, sys.D))
        M = mp.mpc(0, w) * E - A
        X = mp.matrix(B.rows, B.cols)
        for j in range(B.cols):
            x = mp.lu_solve(M, B.column(j))
            for i in range(B.rows):
                X[i, j] = x[i]
        H = C * X + D
        return np.array([[complex(H[i, j]) for j in range(H.cols)] for i in range(H.rows)]), H
