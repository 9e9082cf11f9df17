"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

from .exceptions import StabilityError

__all__ = [
    "as_matrix",
    "as_vector",
    "check_square",
    "check_symmetric",
    "check_psd",
    "check_pd",
    "check_increasing",
    "check_hurwitz",
]


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float array."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    return M


def as_vector(v, name: str = "vector", size: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float array, optionally of a fixed size."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and v.size != size:
        raise ValueError(f"{name} must have length {size}, got {v.size}")
    return v


def check_square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def check_symmetric(M: np.ndarray, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    M = check_square(M, name)
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{name} must be symmetric within {tol:g} (relative)")
    return 0.5 * (M + M.T)


def check_psd(M: np.ndarray, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    """Check symmetric positive semi-definiteness (eigenvalue test)."""
    M = check_symmetric(M, name)
    w = np.linalg.eigvalsh(M)
    scale = max(1.0, float(abs(w[-1])))
    if w[0] < -tol * scale:
        raise ValueError(f"{name} must be positive semi-definite, min eigenvalue {w[0]:g}")
    return M


def check_pd(M: np.ndarray, name: str = "matrix", tol: float = 1e-12) -> np.ndarray:
    M = check_symmetric(M, name)
    w = np.linalg.eigvalsh(M)
    if w[0] <= tol * max(1.0, float(abs(w[-1]))):
        raise ValueError(f"{name} must be positive definite, min eigenvalue {w[0]:g}")
    return M


def check_increasing(t, name: str = "times") -> np.ndarray:
    t = as_vector(t, name)
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError(f"{name} must be strictly increasing with at least 2 points")
    return t


def check_hurwitz(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Raise :class:`StabilityError` unless all eigenvalues have Re < 0."""
    A = check_square(A, name)
    if A.size == 0:
        return A
    reals = np.linalg.eigvals(A).real
    if reals.max() >= 0:
        raise StabilityError(f"{name} is not Hurwitz (max Re eig = {reals.max():g})")
    return A
