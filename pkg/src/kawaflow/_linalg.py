"""Zero-sum subspace helpers shared by the spectral and decomposition code."""
from __future__ import annotations

import numpy as np


def householder_vector(n: int) -> np.ndarray:
    """Unit w with (I - 2ww^T) e_0 = 1/sqrt(n)."""
    w = np.full(n, 1.0 / np.sqrt(n))
    w[0] -= 1.0
    nrm = np.linalg.norm(w)
    if nrm == 0.0:
        return w
    return w / nrm


def zero_sum_basis(n: int) -> np.ndarray:
    """Orthonormal basis of {x : sum(x) = 0} as the columns of an n x (n-1) array."""
    if n < 2:
        return np.zeros((n, 0))
    w = householder_vector(n)
    H = np.eye(n) - 2.0 * np.outer(w, w)
    return H[:, 1:]


def projector(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)
