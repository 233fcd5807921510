"""Structured mean-field sparse Bayesian learning solver.

Per channel column the approximate posterior is a full-covariance complex
Gaussian. Each iteration alternates an exact E-step (closed-form mean and
covariance), an index-wise log-likelihood ratio support test, and the
coupled-prior precision update. Columns never interact, so all per-column
work is batched.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .channel import MeasurementSet, ScenarioConfig
from .exceptions import ConfigError, DomainError, SolverDivergenceError
from .linalg import cholesky_hermitian, hermitian_solve, woodbury_posterior_covariance
from .prior import PriorState, assemble_gamma, initial_prior

ELBO_SLACK = 1e-9
_BATCH_BYTES = 1 << 27  # cap on per-chunk scratch memory


@dataclass
class StructuredPosterior:
    """Posterior means (NK, M) and one full covariance per column."""

    mu: np.ndarray
    sigma: list[np.ndarray]


@dataclass
class SolverTrace:
    """Per-iteration diagnostics of a solver run.

    elbo_per_iter   : (iters, M) per-column objective after each E-step
    delta_per_iter  : (iters,) summed relative mean change (stopping statistic)
    iters           : iterations executed
    converged       : whether the stopping threshold was reached before t_max
    estep_gain      : (iters, M) E-step objective improvement at the prior
                      used for that step; nonnegative up to numerical slack
    a_history       : (iters, 2, M) precision matrix after each M-step
    support_history : per-iteration support estimates (when tracked)
    posterior_history : per-iteration (mean, marginal variance) snapshots
                        (when tracked)
    iter_seconds    : (iters,) wall time per iteration
    """

    elbo_per_iter: np.ndarray
    delta_per_iter: np.ndarray
    iters: int
    converged: bool
    estep_gain: np.ndarray
    a_history: np.ndarray
    support_history: list[np.ndarray] = field(default_factory=list)
    posterior_history: list = field(default_factory=list)
    iter_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0))


def llrt_threshold(epsilon_fa: float) -> float:
    """Detection threshold (Qinv(eps/2))**2 for a false-alarm level eps."""
    if not (0.0 < epsilon_fa < 1.0):
        raise DomainError(f"epsilon_fa must lie in (0, 1), got {epsilon_fa}")
    return float(ndtri(1.0 - epsilon_fa / 2.0) ** 2)


def elbo_structured(
    mu_m: np.ndarray,
    sigma_m: np.ndarray,
    gamma_m: np.ndarray,
    y_m: np.ndarray,
    theta_tilde: np.ndarray,
    sigma2: float,
) -> float:
    """Variational objective of one column for the structured posterior.

    Up to variational-parameter-free constants this is
        -||y - Theta mu||^2 / sigma2 - tr(Theta^H Theta Sigma) / sigma2
        - sum_n (|mu_n|^2 + tau_n) / gamma_n + ln det Sigma.
    Raises DomainError if the covariance is not positive definite.
    """
    gamma_m = np.asarray(gamma_m, dtype=np.float64)
    if np.any(gamma_m <= 0):
        raise DomainError("gamma entries must be positive")
    try:
        chol = cholesky_hermitian(np.asarray(sigma_m, dtype=np.complex128))
    except Exception as exc:
        raise DomainError(f"covariance is not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
    resid = y_m - theta_tilde @ mu_m
    th_sig = theta_tilde @ sigma_m
    trace_term = float(np.real(np.einsum("qn,qn->", theta_tilde.conj(), th_sig)))
    tau = np.real(np.diag(sigma_m))
    fit = float(np.real(resid.conj() @ resid)) + trace_term
    prior_term = float(np.sum((np.abs(mu_m) ** 2 + tau) / gamma_m))
    return -fit / sigma2 - prior_term + logdet


def elbo_gradients(
    mu_m: np.ndarray,
    sigma_m: np.ndarray,
    gamma_m: np.ndarray,
    y_m: np.ndarray,
    theta_tilde: np.ndarray,
    sigma2: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the structured objective w.r.t. mean and covariance.

    grad_mu uses the convention d(objective) = Re{grad_mu^H d mu}; the prior
    pull is -2 diag(gamma)^-1 mu (with the mean factor, so the closed-form
    E-step is its stationary point).
    """
    gamma_m = np.asarray(gamma_m, dtype=np.float64)
    gram_mu = theta_tilde.conj().T @ (theta_tilde @ mu_m)
    proj = theta_tilde.conj().T @ y_m
    grad_mu = -(2.0 / sigma2) * (gram_mu - proj) - 2.0 * mu_m / gamma_m
    sigma_inv = hermitian_solve(sigma_m, np.eye(sigma_m.shape[0], dtype=np.complex128))
    grad_sigma = -theta_tilde.conj().T @ theta_tilde / sigma2 - np.diag(1.0 / gamma_m) + sigma_inv
    return grad_mu, 0.5 * (grad_sigma + grad_sigma.conj().T)


def estep_update(
    y_m: np.ndarray, theta_tilde: np.ndarray, gamma_m: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form E-step for one column: posterior mean and covariance."""
    sigma = woodbury_posterior_covariance(theta_tilde, gamma_m, sigma2)
    mu = sigma @ (theta_tilde.conj().T @ y_m) / sigma2
    return mu, sigma


def mstep_precision(u_hat: np.ndarray, mu: np.ndarray, tau: np.ndarray, c: float, d: float) -> np.ndarray:
    """Per-column class precisions from posterior moments and a support.

    Returns a (2, M) array: row 0 the nonzero-class, row 1 the zero-class
    precision, each c / (class mean posterior energy + d) with energy
    e_nm = |mu_nm|^2 + tau_nm. An empty class falls back to the hyperprior
    value c/d exactly.

    The class-mean denominator keeps the update inside the admissible
    stationary interval [c/(sum_class e + d), (c + |class|)/(sum_class e + d))
    for every class size (equal to its lower end for singleton classes) while
    scaling like the expected-CLL maximizer; a class-sum denominator would
    make each entry's prior variance grow with the class size and de-regularize
    large classes.
    """
    u = np.asarray(u_hat, dtype=np.float64)
    e = np.abs(np.asarray(mu)) ** 2 + np.asarray(tau, dtype=np.float64)
    out = np.empty((2, u.shape[1]))
    for row, w in ((0, u), (1, 1.0 - u)):
        count = np.sum(w, axis=0)
        mean_e = np.divide(np.sum(w * e, axis=0), count, out=np.zeros_like(count), where=count > 0)
        out[row] = c / (mean_e + d)
    return out


def llrt_support(
    y_m: np.ndarray,
    theta_tilde: np.ndarray,
    gamma_m_with_hole: np.ndarray,
    sigma2: float,
    epsilon_fa: float,
) -> int:
    """Likelihood-ratio support decision for the element whose variance is zeroed.

    The tested index n is identified by the single zero entry of
    ``gamma_m_with_hole``; all other entries keep their prior variances. The
    statistic
        |th_n^H B^-1 y|^2 / (th_n^H B^-1 th_n),
    with B = sigma2 I + Theta diag(gamma) Theta^H, is compared against
    (Qinv(eps/2))^2.
    """
    gamma = np.asarray(gamma_m_with_hole, dtype=np.float64)
    holes = np.flatnonzero(gamma == 0.0)
    if holes.size != 1:
        raise DomainError(f"expected exactly one zeroed variance, found {holes.size}")
    if np.any(gamma < 0):
        raise DomainError("variances must be nonnegative")
    n = int(holes[0])
    rows = theta_tilde.shape[0]
    b = sigma2 * np.eye(rows, dtype=np.complex128) + (theta_tilde * gamma) @ theta_tilde.conj().T
    rhs = np.column_stack([theta_tilde[:, n], y_m])
    x = hermitian_solve(b, rhs)
    th_n = theta_tilde[:, n]
    s = float(np.real(th_n.conj() @ x[:, 0]))
    if s <= 0.0:
        return 0
    num = complex(th_n.conj() @ x[:, 1])
    statistic = abs(num) ** 2 / s
    return int(statistic >= llrt_threshold(epsilon_fa))


def llrt_support_column(
    y_m: np.ndarray,
    theta_tilde: np.ndarray,
    gamma_m: np.ndarray,
    sigma2: float,
    epsilon_fa: float,
) -> np.ndarray:
    """All NK support decisions of one column in a single pass.

    Equivalent to calling :func:`llrt_support` for every index; the per-index
    zeroed-variance system is obtained from the full-variance factorization
    by a rank-one downdate, so only one Q x Q factorization is needed.
    """
    stats = _llrt_statistics(
        y_m[:, None], theta_tilde, np.asarray(gamma_m, dtype=np.float64)[:, None], sigma2
    )[:, 0]
    return (stats >= llrt_threshold(epsilon_fa)).astype(np.int8)


def _llrt_statistics(
    y: np.ndarray,
    theta: np.ndarray,
    gamma: np.ndarray,
    sigma2: float,
    gram: np.ndarray | None = None,
    proj: np.ndarray | None = None,
) -> np.ndarray:
    """LLRT statistics for all (n, m); y is (rows, M), gamma (NK, M).

    The per-index zeroed-variance quantities come from the full-variance
    resolvent B = sigma2 I + Theta diag(gamma) Theta^H via a rank-one
    downdate: with t = Theta^H B^-1 y and s = diag(Theta^H B^-1 Theta), the
    statistic for index n is |t_n|^2 / (s_n (1 - gamma_n s_n)). B is handled
    in whichever of the measurement/state domains is smaller.
    """
    rows, nk = theta.shape
    m = y.shape[1]
    theta_h = theta.conj()
    stats = np.empty((nk, m))
    dim = min(rows, nk)
    chunk = max(1, min(m, _BATCH_BYTES // (dim * (max(rows, nk) + 1) * 16)))
    if nk <= rows:
        # state domain: C = Theta^H Theta + sigma2 diag(gamma)^-1, shared rhs
        if gram is None:
            gram = theta_h.T @ theta
        if proj is None:
            proj = theta_h.T @ y
        a_diag = np.real(np.diag(gram))
        idx = np.arange(nk)
        for start in range(0, m, chunk):
            sl = slice(start, min(start + chunk, m))
            g = gamma[:, sl].T  # (chunk, NK)
            cmat = np.broadcast_to(gram, (g.shape[0], nk, nk)).copy()
            cmat[:, idx, idx] += sigma2 / g
            rhs = np.concatenate(
                [np.broadcast_to(gram, (g.shape[0], nk, nk)), proj[:, sl].T[:, :, None]], axis=2
            )
            x = np.linalg.solve(cmat, rhs)
            s = (a_diag[None, :] - np.real(np.einsum("ij,cji->ci", gram, x[:, :, :nk]))) / sigma2
            t = (proj[:, sl].T - np.einsum("ij,cj->ci", gram, x[:, :, nk])) / sigma2
            stats[:, sl] = _llrt_from_st(t, s, g).T
    else:
        eye = sigma2 * np.eye(rows, dtype=np.complex128)
        for start in range(0, m, chunk):
            sl = slice(start, min(start + chunk, m))
            g = gamma[:, sl].T
            tu = theta[None, :, :] * g[:, None, :]
            b = tu @ theta_h.T + eye
            rhs = np.concatenate(
                [np.broadcast_to(theta, (g.shape[0], rows, nk)), y[:, sl].T[:, :, None]], axis=2
            )
            x = np.linalg.solve(b, rhs)
            t = np.einsum("qn,cq->cn", theta_h, x[:, :, nk])
            s = np.real(np.einsum("qn,cqn->cn", theta_h, x[:, :, :nk]))
            stats[:, sl] = _llrt_from_st(t, s, g).T
    return stats


def _llrt_from_st(t: np.ndarray, s: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Statistics from t = th^H B^-1 y, s = th^H B^-1 th and prior variances."""
    s = np.maximum(s, 0.0)
    denom = np.maximum(1.0 - gamma * s, 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        st = np.abs(t) ** 2 / (s * denom)
    return np.nan_to_num(st, nan=0.0, posinf=np.inf)


def _estep_all(
    theta: np.ndarray,
    gram: np.ndarray,
    gamma: np.ndarray,
    proj: np.ndarray,
    sigma2: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched E-step over all columns.

    Returns (mu (NK, M), sigma (M, NK, NK)). Uses the low-rank form whenever
    the measurement dimension is below the state dimension; both paths match
    :func:`estep_update` column by column.
    """
    rows, nk = theta.shape
    m = gamma.shape[1]
    sigma = np.empty((m, nk, nk), dtype=np.complex128)
    use_woodbury = rows < nk
    scratch = 16 * (nk * nk + 2 * rows * nk + rows * rows)
    chunk = max(1, min(m, _BATCH_BYTES // scratch))
    theta_h = theta.conj()
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        g = gamma[:, sl].T  # (chunk, NK)
        if use_woodbury:
            tu = theta[None, :, :] * g[:, None, :]
            b = tu @ theta_h.T + sigma2 * np.eye(rows, dtype=np.complex128)
            x = np.linalg.solve(b, tu)
            s = -np.einsum("cqi,cqj->cij", tu.conj(), x)
            idx = np.arange(nk)
            s[:, idx, idx] += g
        else:
            p = np.broadcast_to(gram / sigma2, (g.shape[0], nk, nk)).copy()
            idx = np.arange(nk)
            p[:, idx, idx] += 1.0 / g
            s = np.linalg.inv(p)
        sigma[sl] = 0.5 * (s + np.conj(np.swapaxes(s, 1, 2)))
    mu = np.einsum("mij,jm->im", sigma, proj) / sigma2
    return mu, sigma


def _delta(mu_prev: np.ndarray, mu: np.ndarray) -> float:
    """Summed per-column relative mean change (the stopping statistic)."""
    num = np.linalg.norm(mu_prev - mu, axis=0)
    den = np.linalg.norm(mu_prev, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    ratio = np.where(den == 0.0, np.where(num == 0.0, 0.0, np.inf), ratio)
    return float(np.sum(ratio))


def _detect_shared_block(theta: np.ndarray, k: int) -> np.ndarray | None:
    """Return the shared (Q, N) block if theta == kron(I_k, block), else None."""
    rows, nk = theta.shape
    if k <= 1 or rows % k or nk % k:
        return None
    q, n = rows // k, nk // k
    view = theta.reshape(k, q, k, n)
    block = view[0, :, 0, :]
    for a in range(k):
        for b in range(k):
            sub = view[a, :, b, :]
            ok = np.array_equal(sub, block) if a == b else not np.any(sub)
            if not ok:
                return None
    return np.ascontiguousarray(block)


def _fold_cols(x: np.ndarray, k: int) -> np.ndarray:
    """(k*r, M) -> (r, k*M): split the K stacked blocks into extra columns."""
    r, m = x.shape[0] // k, x.shape[1]
    return x.reshape(k, r, m).transpose(1, 0, 2).reshape(r, k * m)


def _unfold_cols(x: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`_fold_cols`."""
    r, m = x.shape[0], x.shape[1] // k
    return x.reshape(r, k, m).transpose(1, 0, 2).reshape(k * r, m)


class _SystemView:
    """Per-column linear systems of one measurement set.

    When the joint phase matrix is block diagonal with K identical blocks
    (the joint multi-user lift), every per-column factorization splits into K
    independent blocks, so the E-step and support test run on Q x Q / N x N
    problems instead of QK x QK / NK x NK ones. Falls back to the joint
    matrices otherwise. Both layouts produce identical results.
    """

    def __init__(self, theta: np.ndarray, y: np.ndarray, k: int, sigma2: float):
        self.theta = theta
        self.y = y
        self.sigma2 = sigma2
        self.m = y.shape[1]
        self.nk = theta.shape[1]
        block = _detect_shared_block(theta, k)
        self.k = k if block is not None else 1
        self.theta_eff = block if block is not None else theta
        self.y_eff = self.fold(y)
        self.gram_eff = self.theta_eff.conj().T @ self.theta_eff
        self.proj_eff = self.theta_eff.conj().T @ self.y_eff
        self.gram_diag = np.tile(np.real(np.diag(self.gram_eff)), self.k)
        self.fit0 = self._per_column(np.real(np.einsum("qc,qc->c", self.y_eff.conj(), self.y_eff)))

    def fold(self, x: np.ndarray) -> np.ndarray:
        return _fold_cols(x, self.k) if self.k > 1 else x

    def unfold(self, x: np.ndarray) -> np.ndarray:
        return _unfold_cols(x, self.k) if self.k > 1 else x

    def _per_column(self, sub: np.ndarray) -> np.ndarray:
        """Sum a per-subproblem (k*M,) quantity into per-column (M,)."""
        return sub.reshape(self.k, self.m).sum(axis=0) if self.k > 1 else sub

    def matvec(self, mu: np.ndarray) -> np.ndarray:
        """theta @ mu on the (NK, M) layout."""
        return self.unfold(self.theta_eff @ self.fold(mu))

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        """theta^H @ r on the (QK, M) layout."""
        return self.unfold(self.theta_eff.conj().T @ self.fold(r))

    def estep(self, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched E-step; returns (mu, tau, internal covariance stack)."""
        mu_f, sig_f = _estep_all(self.theta_eff, self.gram_eff, self.fold(gamma), self.proj_eff, self.sigma2)
        tau = self.unfold(np.real(np.diagonal(sig_f, axis1=1, axis2=2)).T.copy())
        return self.unfold(mu_f), tau, sig_f

    def elbo(self, mu: np.ndarray, sig_f: np.ndarray, tau: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Structured objective per column (matches :func:`elbo_structured`)."""
        resid = self.y - self.matvec(mu)
        fit = np.real(np.einsum("qm,qm->m", resid.conj(), resid))
        trace_term = self._per_column(np.real(np.einsum("ij,cji->c", self.gram_eff, sig_f)))
        prior_term = np.sum((np.abs(mu) ** 2 + tau) / gamma, axis=0)
        logdet = self._per_column(np.real(np.linalg.slogdet(sig_f)[1]))
        return -(fit + trace_term) / self.sigma2 - prior_term + logdet

    def elbo_initial(self, gamma: np.ndarray) -> np.ndarray:
        """Objective of the zero-mean, prior-covariance starting state."""
        return (
            -(self.fit0 + self.gram_diag @ gamma) / self.sigma2
            - float(self.nk)
            + np.sum(np.log(gamma), axis=0)
        )

    def llrt_stats(self, gamma: np.ndarray) -> np.ndarray:
        """Support-test statistics for all (n, m)."""
        return self.unfold(
            _llrt_statistics(
                self.y_eff, self.theta_eff, self.fold(gamma), self.sigma2,
                gram=self.gram_eff, proj=self.proj_eff,
            )
        )

    def full_sigma(self, sig_f: np.ndarray) -> list[np.ndarray]:
        """Materialize the per-column (NK, NK) covariances."""
        if self.k == 1:
            return list(sig_f)
        n = self.nk // self.k
        out = []
        for m in range(self.m):
            full = np.zeros((self.nk, self.nk), dtype=np.complex128)
            for ue in range(self.k):
                full[ue * n : (ue + 1) * n, ue * n : (ue + 1) * n] = sig_f[ue * self.m + m]
            out.append(full)
        return out


def _check_measurements(meas: MeasurementSet, cfg: ScenarioConfig) -> None:
    if meas.theta_tilde.shape != (cfg.qk, cfg.nk):
        raise ConfigError(
            f"theta_tilde shape {meas.theta_tilde.shape} inconsistent with config ({cfg.qk}, {cfg.nk})"
        )
    if meas.y_tilde.shape != (cfg.qk, cfg.m):
        raise ConfigError(f"y_tilde shape {meas.y_tilde.shape} inconsistent with config ({cfg.qk}, {cfg.m})")
    if meas.sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")


def run_smsbl(
    meas: MeasurementSet,
    cfg: ScenarioConfig,
    track_support: bool = True,
    track_posterior: bool = False,
    track_elbo: bool = True,
) -> tuple[np.ndarray, np.ndarray, StructuredPosterior, SolverTrace]:
    """Run the structured solver on one measurement set.

    Iterates the exact per-column E-step, the index-wise support test at the
    prior used by that E-step, and the class-precision update on the fresh
    support, until the summed relative mean change drops below ``cfg.eta`` or
    ``cfg.t_max`` iterations elapse.

    Returns the channel estimate (the posterior means), the support estimate,
    the structured posterior, and a :class:`SolverTrace`.
    """
    _check_measurements(meas, cfg)
    nk, m = cfg.nk, cfg.m
    system = _SystemView(meas.theta_tilde, meas.y_tilde, cfg.k, meas.sigma2)

    prior = initial_prior(cfg)
    gamma = assemble_gamma(prior)
    threshold = llrt_threshold(cfg.epsilon_fa)

    mu = np.zeros((nk, m), dtype=np.complex128)
    sig_f = None
    if track_elbo:
        prev_elbo = system.elbo_initial(gamma)

    elbos, deltas, gains, a_hist, supports, posteriors, seconds = [], [], [], [], [], [], []
    converged = False
    for t in range(1, cfg.t_max + 1):
        tic = time.perf_counter()
        mu_prev = mu
        mu, tau, sig_f = system.estep(gamma)
        if not np.all(np.isfinite(mu)):
            raise SolverDivergenceError("non-finite posterior mean", iteration=t)
        if track_elbo:
            elbo_now = system.elbo(mu, sig_f, tau, gamma)
            if not np.all(np.isfinite(elbo_now)):
                raise SolverDivergenceError("non-finite objective", iteration=t)
            elbos.append(elbo_now)
            gains.append(elbo_now - prev_elbo)

        # support test at the prior the E-step used, then precisions on the
        # fresh support (newly detected entries must not inherit the
        # empty-class precision c/d, which would pin them to zero)
        u_new = (system.llrt_stats(gamma) >= threshold).astype(np.int8)
        a_new = mstep_precision(u_new, mu, tau, prior.c, prior.d)
        prior = PriorState(a=a_new, u_hat=u_new, c=prior.c, d=prior.d)
        gamma = assemble_gamma(prior)
        if track_elbo:
            # re-baseline the previous objective under the new prior
            prev_elbo = system.elbo(mu, sig_f, tau, gamma)

        delta = _delta(mu_prev, mu)
        deltas.append(delta)
        a_hist.append(a_new)
        if track_support:
            supports.append(u_new.copy())
        if track_posterior:
            posteriors.append((mu.copy(), tau.copy()))
        seconds.append(time.perf_counter() - tic)
        if delta < cfg.eta:
            converged = True
            break

    trace = SolverTrace(
        elbo_per_iter=np.array(elbos) if elbos else np.zeros((0, m)),
        delta_per_iter=np.array(deltas),
        iters=len(deltas),
        converged=converged,
        estep_gain=np.array(gains) if gains else np.zeros((0, m)),
        a_history=np.array(a_hist),
        support_history=supports,
        posterior_history=posteriors,
        iter_seconds=np.array(seconds),
    )
    posterior = StructuredPosterior(mu=mu, sigma=system.full_sigma(sig_f))
    return mu.copy(), prior.u_hat.copy(), posterior, trace
