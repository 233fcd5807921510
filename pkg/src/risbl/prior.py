"""Column-wise coupled sparsity prior.

Every entry of the joint VAD channel is zero-mean complex Gaussian whose
precision is one of two per-column values: one shared by the entries flagged
nonzero in that column, one shared by the entries flagged zero. A Gamma(c, d)
hyperprior over the precisions keeps the evidence maximization tractable and
sparsity-promoting.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ScenarioConfig
from .exceptions import DomainError

NONZERO = 0  # row index of the nonzero-class precision in PriorState.a
ZERO = 1  # row index of the zero-class precision

GAMMA_INIT = 1e-2
HYPER_C = 1.0
HYPER_D = 1e-8


@dataclass
class PriorState:
    """Per-column class precisions plus the current binary support estimate.

    a     : (2, M) positive precisions; row 0 is the nonzero class, row 1 the
            zero class
    u_hat : (NK, M) binary support estimate
    c, d  : Gamma hyperprior shape and rate
    """

    a: np.ndarray
    u_hat: np.ndarray
    c: float = HYPER_C
    d: float = HYPER_D

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.u_hat = np.asarray(self.u_hat)
        if self.a.ndim != 2 or self.a.shape[0] != 2:
            raise DomainError(f"precision matrix must be (2, M), got {self.a.shape}")
        if np.any(self.a <= 0) or not np.all(np.isfinite(self.a)):
            raise DomainError("precisions must be positive and finite")
        if not np.isin(self.u_hat, (0, 1)).all():
            raise DomainError("support entries must be 0 or 1")
        if self.c <= 0 or self.d <= 0:
            raise DomainError("Gamma hyperparameters must be positive")


def assemble_gamma(state: PriorState) -> np.ndarray:
    """Per-element prior variances: gamma = 1 / (u*a_nz + (1-u)*a_z)."""
    u = state.u_hat.astype(np.float64)
    denom = u * state.a[NONZERO] + (1.0 - u) * state.a[ZERO]
    return 1.0 / denom


def log_prior_density(h_col: np.ndarray, gamma_col: np.ndarray) -> float:
    """Log density of one channel column under its per-element variances."""
    h = np.asarray(h_col, dtype=np.complex128)
    g = np.asarray(gamma_col, dtype=np.float64)
    if np.any(g <= 0):
        raise DomainError("gamma entries must be positive")
    return float(np.sum(-np.log(np.pi * g) - np.abs(h) ** 2 / g))


def initial_prior(cfg: ScenarioConfig) -> PriorState:
    """Starting state: no support, every variance 1e-2 (both classes at 100)."""
    a = np.full((2, cfg.m), 1.0 / GAMMA_INIT)
    u_hat = np.zeros((cfg.nk, cfg.m), dtype=np.int8)
    return PriorState(a=a, u_hat=u_hat, c=HYPER_C, d=HYPER_D)
