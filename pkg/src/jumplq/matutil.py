"""Small dense symmetric-matrix helpers and the rank-one determinant identity.

All functions accept stacks of matrices (leading batch axes) where it makes
sense; ``m`` is expected to be small.
"""
from __future__ import annotations

import numpy as np


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


def spd_tolerance(M: np.ndarray) -> np.ndarray:
    """Scale-aware threshold: a matrix counts as SPD if eig_min > 1e-12 (1 + |trace|)."""
    M = np.asarray(M, dtype=float)
    return 1e-12 * (1.0 + np.abs(np.trace(M, axis1=-2, axis2=-1)))


def eig_min(M: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of symmetric matrices; closed form for m <= 2."""
    M = np.asarray(M, dtype=float)
    m = M.shape[-1]
    if m == 1:
        return M[..., 0, 0].copy()
    if m == 2:
        a, b, c = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
        return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
    return np.linalg.eigvalsh(M)[..., 0]


def is_spd(M: np.ndarray) -> np.ndarray:
    return eig_min(M) > spd_tolerance(M)


def solve_spd(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve ``M x = v`` for SPD ``M`` (batched over leading axes)."""
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = is_spd(M)
    if not np.all(ok):
        bad = np.argwhere(~np.atleast_1d(ok))
        raise NotPositiveDefinite(f"matrix not positive definite at index {bad[0].tolist()}")
    if M.shape[-1] == 1:
        return v / M[..., 0, :]
    return np.linalg.solve(M, v[..., None])[..., 0]


def det_ratio_complement(R: np.ndarray, w, F: np.ndarray) -> np.ndarray:
    """``1 - w F'(R + w F F')^{-1} F``, which equals ``det(R) / det(R + w F F')``.

    With ``x = (R + w F F')^{-1} F`` one has ``R x = c F`` for the ratio ``c``,
    hence ``c = x'Rx / (x'Rx + w (F'x)^2)``.  That form avoids the cancellation
    in ``1 - w F'x`` when ``R`` is near singular and always lands in [0, 1].
    """
    R = np.asarray(R, dtype=float)
    F = np.asarray(F, dtype=float)
    w = np.asarray(w, dtype=float)
    if R.shape[-1] == 1:
        r = np.maximum(R[..., 0, 0], 0.0)
        denom = r + w * F[..., 0] * F[..., 0]
        if np.any(denom <= 0):
            raise NotPositiveDefinite("R + w F F' is singular")
        return r / denom
    M = R + w[..., None, None] * F[..., :, None] * F[..., None, :]
    x = solve_spd(M, F)
    lam, V = np.linalg.eigh(R)
    proj = np.einsum("...ij,...i->...j", V, x)
    a = np.einsum("...j,...j->...", np.maximum(lam, 0.0), proj * proj)
    b = w * np.einsum("...i,...i->...", F, x) ** 2
    tot = a + b
    # F = 0 gives x = 0, and the ratio is det(R)/det(R) = 1
    return np.where(tot > 0, a / np.where(tot > 0, tot, 1.0), 1.0)


def schur_identity_residual(a: float, e: np.ndarray, A: np.ndarray) -> float:
    """Normalised gap between the two sides of the rank-one Schur determinant identity.

    ``(a - e'A^{-1}e) det(A)`` versus ``a det(A - e e'/a)``, divided by
    ``max(1, |a det(A)|)``.  Requires ``a > 0`` and ``A`` positive definite.
    """
    A = np.asarray(A, dtype=float)
    e = np.asarray(e, dtype=float)
    if not a > 0:
        raise ValueError("a must be positive")
    if not is_spd(A):
        raise NotPositiveDefinite("A must be positive definite")
    detA = np.linalg.det(A)
    lhs = (a - e @ solve_spd(A, e)) * detA
    rhs = a * np.linalg.det(A - np.outer(e, e) / a)
    return float(abs(lhs - rhs) / max(1.0, abs(a * detA)))
