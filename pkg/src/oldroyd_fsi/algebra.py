"""Tensor algebra of the Oldroyd-B right-hand side and its vectorized form.

Conventions: the velocity gradient is ``L[i, j] = d_j v_i``; stresses are
vectorized row-major, so ``vec(T)[d*i + j] = T[i, j]``. All functions accept
stacks with arbitrary leading axes.
"""

from __future__ import annotations

import numpy as np

RELAXATION_RATE = 2.0


def vec(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T)
    d = T.shape[-1]
    return T.reshape(T.shape[:-2] + (d * d,))


def unvec(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    d = int(round(np.sqrt(t.shape[-1])))
    if d * d != t.shape[-1]:
        raise ValueError("length is not a perfect square")
    return t.reshape(t.shape[:-1] + (d, d))


def sym(L: np.ndarray) -> np.ndarray:
    return 0.5 * (L + np.swapaxes(L, -1, -2))


def skew(L: np.ndarray) -> np.ndarray:
    return 0.5 * (L - np.swapaxes(L, -1, -2))


def assemble_W(L: np.ndarray) -> np.ndarray:
    """Matrix with ``assemble_W(L) @ vec(T) == vec(L T + T L^T)``.

    With row-major vec, vec(L T) = (L kron I) vec(T) and vec(T L^T) = (I kron L) vec(T).
    """
    L = np.asarray(L, dtype=float)
    d = L.shape[-1]
    eye = np.eye(d)
    lead = L.shape[:-2]
    left = np.einsum("...ik,jl->...ijkl", L, eye)
    right = np.einsum("ik,...jl->...ijkl", eye, L)
    return (left + right).reshape(lead + (d * d, d * d))


def assemble_Wvec(L: np.ndarray) -> np.ndarray:
    """Forcing vector vec(L + L^T) = vec(2 D(L))."""
    L = np.asarray(L, dtype=float)
    return vec(L + np.swapaxes(L, -1, -2))


def q_form(T: np.ndarray, L: np.ndarray) -> np.ndarray:
    """T D + D T + Wsk T - T Wsk, with D and Wsk the symmetric and skew parts of L."""
    D = sym(L)
    Wk = skew(L)
    return T @ D + D @ T + Wk @ T - T @ Wk


def oldroyd_rhs(T: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Tensor form of the pointwise stress right-hand side L T + T L^T + 2 D(L) - 2 T."""
    Lt = np.swapaxes(L, -1, -2)
    return L @ T + T @ Lt + L + Lt - RELAXATION_RATE * T


def vector_rhs(t: np.ndarray, Wmat: np.ndarray, Wvec: np.ndarray) -> np.ndarray:
    """(W - 2I) t + w for stacks of vectors."""
    return np.einsum("...ij,...j->...i", Wmat, t) - RELAXATION_RATE * t + Wvec


def symmetry_defect(T: np.ndarray) -> float:
    T = np.asarray(T)
    if T.size == 0:
        return 0.0
    return float(np.max(np.abs(T - np.swapaxes(T, -1, -2))))
