"""Dense complex linear-algebra primitives used by the estimators.

All routines operate on ``numpy.complex128`` arrays and are pure functions:
no shared state, safe to call concurrently.
"""

import numpy as np
from scipy.linalg import lapack

from .exceptions import DomainError, SingularMatrixError

HERMITIAN_TOL = 1e-10


def _as_complex_matrix(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DomainError(f"{name} must be a 2-D matrix with positive dimensions, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite entries")
    return a


def _require_hermitian(a: np.ndarray, name: str = "A") -> np.ndarray:
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.conj().T).max() > HERMITIAN_TOL * scale:
        raise DomainError(f"{name} is not Hermitian within tolerance {HERMITIAN_TOL}")
    # symmetrize so downstream factorizations see an exactly Hermitian matrix
    return 0.5 * (a + a.conj().T)


def cholesky_hermitian(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive-definite matrix.

    Raises SingularMatrixError naming the offending leading minor when the
    factorization fails (the O(n^3) definiteness check).
    """
    c, info = lapack.zpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite: leading minor of order {info} is not positive definite"
        )
    if info < 0:
        raise ValueError(f"illegal argument {-info} passed to zpotrf")
    return c


def hermitian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for Hermitian positive-definite A via Cholesky.

    Parameters
    ----------
    a : np.ndarray
        Hermitian positive-definite matrix (n, n). Hermitian within 1e-10
        relative elementwise, checked.
    b : np.ndarray
        Right-hand side (n, k) or (n,).

    Returns
    -------
    np.ndarray
        X with ||A X - B||_F / ||B||_F at working precision. One step of
        iterative refinement keeps the residual well under 1e-10 on
        reasonably conditioned inputs.
    """
    a = _as_complex_matrix(a, "A")
    a = _require_hermitian(a)
    b = np.asarray(b, dtype=np.complex128)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise DomainError(f"shape mismatch: A is {a.shape}, B has {b.shape[0]} rows")
    c = cholesky_hermitian(a)
    x, info = lapack.zpotrs(c, b, lower=1)
    if info != 0:
        raise ValueError(f"zpotrs failed with info={info}")
    # one refinement pass
    r = b - a @ x
    dx, _ = lapack.zpotrs(c, r, lower=1)
    x = x + dx
    return x[:, 0] if squeeze else x


def woodbury_posterior_covariance(theta: np.ndarray, gamma: np.ndarray, sigma2: float) -> np.ndarray:
    """Posterior covariance (sigma2^-1 Theta^H Theta + diag(gamma)^-1)^-1.

    Uses the low-rank (Woodbury) form
        Sigma = U - U Theta^H (sigma2 I + Theta U Theta^H)^-1 Theta U,
    with U = diag(gamma), whenever the measurement dimension is smaller than
    the state dimension, so only a rows(theta) x rows(theta) system is ever
    inverted on that path. Falls back to the direct inverse otherwise.
    """
    theta = _as_complex_matrix(theta, "theta")
    gamma = np.asarray(gamma, dtype=np.float64)
    q, nk = theta.shape
    if gamma.shape != (nk,):
        raise DomainError(f"gamma must have length {nk}, got shape {gamma.shape}")
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise DomainError("gamma entries must be positive and finite")
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")

    if q < nk:
        tu = theta * gamma  # Theta @ diag(gamma), (q, nk)
        b = sigma2 * np.eye(q, dtype=np.complex128) + tu @ theta.conj().T
        t = hermitian_solve(b, tu)
        sigma = np.diag(gamma).astype(np.complex128) - tu.conj().T @ t
    else:
        p = theta.conj().T @ theta / sigma2
        p[np.diag_indices(nk)] += 1.0 / gamma
        sigma = hermitian_solve(p, np.eye(nk, dtype=np.complex128))
    return 0.5 * (sigma + sigma.conj().T)


def max_eigenvalue_hermitian(a: np.ndarray) -> float:
    """Largest eigenvalue of a Hermitian matrix (within 1e-8 relative)."""
    a = _as_complex_matrix(a, "A")
    a = _require_hermitian(a)
    return float(np.linalg.eigvalsh(a)[-1])
