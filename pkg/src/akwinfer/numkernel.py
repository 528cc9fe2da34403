"""Dense symmetric linear algebra for small matrices.

Everything here operates on plain float64 numpy arrays. Eigendecomposition
uses cyclic Jacobi rotations, which is robust and plenty fast for the
matrix sizes this package works with (d up to a few hundred).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinAlgError",
    "EigenDecomposition",
    "check_finite",
    "symmetrize",
    "sym_eigen",
    "sandwich",
    "spectral_norm",
    "sym_inverse",
]


class LinAlgError(RuntimeError):
    """Raised on invalid numeric input or a failed matrix iteration."""


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise LinAlgError(f"{name} contains NaN or Inf entries")
    return arr


def symmetrize(m: np.ndarray, rtol: float = 1e-9, name: str = "matrix") -> np.ndarray:
    """Validate and return an exactly symmetric copy of ``m``.

    Asymmetry beyond ``rtol`` (relative to the largest entry) is treated as
    an accumulator bug and rejected rather than silently averaged away.
    """
    m = check_finite(m, name)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LinAlgError(f"{name} must be square, got shape {m.shape}")
    scale = np.abs(m).max()
    gap = np.abs(m - m.T).max()
    if gap > rtol * (1.0 + scale):
        raise LinAlgError(
            f"{name} is asymmetric beyond tolerance: max|M-M^T|={gap:.3e}, "
            f"max|M|={scale:.3e}"
        )
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class EigenDecomposition:
    """Orthonormal eigenvectors (columns) and eigenvalues sorted descending."""

    vectors: np.ndarray
    values: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _frobenius(m: np.ndarray) -> float:
    return float(np.sqrt((m * m).sum()))


def sym_eigen(
    m: np.ndarray,
    tol: float = 1e-12,
    max_sweeps: int = 100,
    name: str = "matrix",
) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi sweeps.

    Converges when the off-diagonal Frobenius mass drops below
    ``tol * ||m||_F``.
    """
    a = symmetrize(m, name=name).copy()
    d = a.shape[0]
    u = np.eye(d)
    total = _frobenius(a)
    if d == 1 or total == 0.0:
        values = np.diag(a).copy()
        order = np.argsort(values)[::-1]
        return EigenDecomposition(u[:, order], values[order])

    threshold = tol * total
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = _frobenius(a - np.diag(np.diag(a)))
        if off <= threshold:
            converged = True
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * u[:, p] - s * u[:, q]
                rot_q = s * u[:, p] + c * u[:, q]
                u[:, p], u[:, q] = rot_p, rot_q
    else:
        off = _frobenius(a - np.diag(np.diag(a)))
        if off <= threshold:
            converged = True
    if not converged:
        raise LinAlgError(
            f"Jacobi iteration for {name} did not converge after "
            f"{max_sweeps} sweeps (off-diagonal mass {off:.3e})"
        )
    values = np.diag(a).copy()
    order = np.argsort(values)[::-1]
    return EigenDecomposition(np.ascontiguousarray(u[:, order]), values[order])


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compute ``a @ b @ a`` with exact symmetry of the result enforced."""
    a = check_finite(a, "sandwich outer factor")
    b = check_finite(b, "sandwich inner factor")
    if a.shape[1] != b.shape[0] or b.shape[1] != a.shape[0]:
        raise LinAlgError(f"dimension mismatch in sandwich: {a.shape} vs {b.shape}")
    r = a @ b @ a
    return 0.5 * (r + r.T)


def spectral_norm(m: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    eig = sym_eigen(m)
    return float(np.abs(eig.values).max())


def sym_inverse(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via eigendecomposition."""
    eig = sym_eigen(m, name=name)
    if eig.values.min() <= 0.0:
        raise LinAlgError(
            f"{name} is not positive definite (min eigenvalue "
            f"{eig.values.min():.3e})"
        )
    return (eig.vectors / eig.values) @ eig.vectors.T
