"""Evaluation metrics: NMSE, support error rate, complex-Gaussian KL
divergence, and sum spectral efficiency under matched-filter combining.
"""

import numpy as np

from .exceptions import ConfigError, DomainError, UndefinedMetricError
from .linalg import cholesky_hermitian, hermitian_solve

__all__ = ["nmse", "nmse_db", "nser", "gaussian_kl", "sum_se"]


def nmse(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    """||h_hat - h_true||_F^2 / ||h_true||_F^2."""
    h_true = np.asarray(h_true)
    denom = float(np.sum(np.abs(h_true) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("NMSE undefined for an all-zero reference")
    return float(np.sum(np.abs(np.asarray(h_hat) - h_true) ** 2)) / denom


def nmse_db(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    return 10.0 * float(np.log10(nmse(h_hat, h_true)))


def nser(u_hat: np.ndarray, u_true: np.ndarray) -> float:
    """Support mismatches over the number of true nonzeros."""
    u_true = np.asarray(u_true)
    ones = float(np.sum(u_true != 0))
    if ones == 0.0:
        raise UndefinedMetricError("NSER undefined for an all-zero reference support")
    return float(np.sum(np.asarray(u_hat) != u_true)) / ones


def _as_cov(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov)
    if cov.ndim == 1:
        return np.diag(cov.astype(np.complex128))
    return cov.astype(np.complex128)


def gaussian_kl(
    mean_p: np.ndarray, cov_p: np.ndarray, mean_q: np.ndarray, cov_q: np.ndarray
) -> float:
    """KL divergence between circularly symmetric complex Gaussians,
    E_q[ln q - ln p], with p the reference (first) distribution:

        tr(Sp^-1 Sq) + (mp - mq)^H Sp^-1 (mp - mq) - n + ln det Sp - ln det Sq.

    Covariances may be full matrices or 1-D marginal-variance vectors.
    """
    sp = _as_cov(cov_p)
    sq = _as_cov(cov_q)
    n = sp.shape[0]
    try:
        chol_p = cholesky_hermitian(0.5 * (sp + sp.conj().T))
        chol_q = cholesky_hermitian(0.5 * (sq + sq.conj().T))
    except Exception as exc:
        raise DomainError(f"covariance not positive definite: {exc}") from exc
    logdet_p = 2.0 * float(np.sum(np.log(np.real(np.diag(chol_p)))))
    logdet_q = 2.0 * float(np.sum(np.log(np.real(np.diag(chol_q)))))
    diff = np.asarray(mean_p, dtype=np.complex128) - np.asarray(mean_q, dtype=np.complex128)
    sp_inv_sq = hermitian_solve(sp, sq)
    quad = float(np.real(diff.conj() @ hermitian_solve(sp, diff)))
    return float(np.real(np.trace(sp_inv_sq))) + quad - n + logdet_p - logdet_q


def sum_se(
    h_hat_per_ue: list[np.ndarray],
    h_true_per_ue: list[np.ndarray],
    theta: np.ndarray,
    sigma2: float,
    tp: float,
    tc: float,
) -> float:
    """Sum spectral efficiency (bps/Hz) with matched-filter combining built
    from the channel estimates and evaluated on the true channels.

    Per UE the combiner is v_k = Hhat_k theta / ||Hhat_k theta||; the SINR is
    |v_k^H H_k theta|^2 over the summed per-interferer powers plus sigma2, and
    the result is (1 - tp/tc) sum_k log2(1 + SINR_k).
    """
    if tc < tp or tp < 0:
        raise ConfigError(f"need tc >= tp >= 0, got tp={tp}, tc={tc}")
    if tc == tp:
        return 0.0  # the whole coherence interval is spent on pilots
    k = len(h_true_per_ue)
    if len(h_hat_per_ue) != k or k < 1:
        raise ConfigError("estimate/truth UE lists must have equal positive length")
    theta = np.asarray(theta, dtype=np.complex128)

    rx_true = [np.asarray(h) @ theta for h in h_true_per_ue]
    total = 0.0
    for i in range(k):
        v = np.asarray(h_hat_per_ue[i]) @ theta
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue  # a zero estimate contributes no rate
        v = v / norm
        signal = abs(np.vdot(v, rx_true[i])) ** 2
        interference = sum(abs(np.vdot(v, rx_true[j])) ** 2 for j in range(k) if j != i)
        total += np.log2(1.0 + signal / (interference + sigma2))
    return float((1.0 - tp / tc) * total)
