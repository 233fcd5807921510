"""Sparse Bayesian learning estimators for RIS-assisted mmWave cascaded
channels: simulator, structured/factorized variational solvers, baselines,
metrics, and a reproducible benchmark harness.
"""

__version__ = "0.1.0"

from .channel import (
    GroundTruth,
    MeasurementSet,
    ScenarioConfig,
    build_dictionaries,
    generate_channels,
    generate_pilots,
    steering_vector_upa,
    synthesize_measurements,
)
from .exceptions import (
    ConfigError,
    DomainError,
    RisblError,
    SingularMatrixError,
    SolverDivergenceError,
    UndefinedMetricError,
)
from .linalg import hermitian_solve, max_eigenvalue_hermitian, woodbury_posterior_covariance
from .prior import PriorState, assemble_gamma, initial_prior, log_prior_density
from .smsbl import (
    SolverTrace,
    StructuredPosterior,
    elbo_gradients,
    elbo_structured,
    estep_update,
    llrt_support,
    llrt_support_column,
    llrt_threshold,
    mstep_precision,
    run_smsbl,
)
from .fmsbl import (
    FactorizedPosterior,
    MajorizerState,
    elbo_factorized,
    elbo_majorized,
    fm_estep_update,
    lipschitz_constant,
    run_fmsbl,
)
from .baselines import BaselineResult, omp, oracle_mmse, save_variant, vanilla_sbl
from .metrics import gaussian_kl, nmse, nmse_db, nser, sum_se
from .harness import (
    SweepSpec,
    make_rng,
    run_kl_study,
    run_runtime_study,
    run_sweep,
    write_sweep_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
