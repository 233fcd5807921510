"""Cascaded UE-RIS-BS channel simulator.

Generates ground-truth virtual-angular-domain (VAD) channels with the
doubly-structured (shared column / partially shared row) plus individual
sparsity pattern, the random RIS phase pilots, and noisy effective
measurements. Path angles are drawn on the dictionary grid, so the VAD
channel is exactly sparse.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "ScenarioConfig",
    "GroundTruth",
    "MeasurementSet",
    "steering_vector_upa",
    "build_dictionaries",
    "generate_channels",
    "generate_pilots",
    "synthesize_measurements",
]


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation dimensions and solver hyperparameters.

    m1, m2 : BS uniform planar array dimensions (M = m1*m2 antennas)
    n1, n2 : RIS UPA dimensions (N = n1*n2 elements)
    k      : number of single-antenna UEs
    q      : pilot slots per UE
    l_c    : BS-RIS scatterers (shared nonzero columns per UE)
    l_r_k  : RIS-UE scatterers per UE (nonzero rows per nonzero column)
    l_r    : RIS-UE scatterers shared by all UEs (l_r <= l_r_k)
    snr_db : pilot SNR in dB; noise variance is 10**(-snr_db/10)
    d_over_lambda : antenna spacing over carrier wavelength
    seed   : 64-bit RNG seed
    epsilon_fa : support-test false-alarm probability, in (0, 1)
    t_max  : solver iteration cap
    eta    : solver stopping threshold on the summed relative mean change
    """

    m1: int = 4
    m2: int = 4
    n1: int = 8
    n2: int = 4
    k: int = 2
    q: int = 40
    l_c: int = 3
    l_r_k: int = 4
    l_r: int = 2
    snr_db: float = 10.0
    d_over_lambda: float = 0.5
    seed: int = 0
    epsilon_fa: float = 0.01
    t_max: int = 200
    eta: float = 1e-4

    def __post_init__(self):
        for name in ("m1", "m2", "n1", "n2", "k", "q", "l_c", "l_r_k", "l_r", "t_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.l_r > self.l_r_k:
            raise ConfigError(f"l_r ({self.l_r}) must not exceed l_r_k ({self.l_r_k})")
        if self.l_r_k > self.n:
            raise ConfigError(f"l_r_k ({self.l_r_k}) must not exceed N = {self.n}")
        if self.l_c > min(self.m, self.n):
            raise ConfigError(f"l_c ({self.l_c}) must not exceed min(M, N) = {min(self.m, self.n)}")
        if not (0.0 < self.epsilon_fa < 1.0):
            raise ConfigError(f"epsilon_fa must lie in (0, 1), got {self.epsilon_fa}")
        if self.d_over_lambda <= 0:
            raise ConfigError("d_over_lambda must be positive")
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")

    @property
    def m(self) -> int:
        return self.m1 * self.m2

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def nk(self) -> int:
        return self.n * self.k

    @property
    def qk(self) -> int:
        return self.q * self.k

    @property
    def sigma2(self) -> float:
        """Noise variance for unit pilot power: SNR = 1/sigma2."""
        return float(10.0 ** (-self.snr_db / 10.0))

    def with_updates(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class GroundTruth:
    """True cascaded channels plus their exact sparsity bookkeeping.

    h_tilde : joint VAD channel, (N*K, M); block k holds UE k's (N, M) channel
    u_true  : exact binary support of h_tilde, (N*K, M) int8
    h_physical_per_ue : list of K physical cascaded channels G diag(h_rk), (M, N)
    column_support : shared nonzero-column indices (length l_c)
    row_supports : per nonzero column, the row indices shared by all UEs
                   (list of length l_c, each of length l_r), aligned with
                   column_support
    """

    h_tilde: np.ndarray
    u_true: np.ndarray
    h_physical_per_ue: list[np.ndarray]
    column_support: np.ndarray
    row_supports: list[np.ndarray] = field(default_factory=list)


@dataclass
class MeasurementSet:
    """Effective joint measurements: y_tilde = theta_tilde @ h_tilde + noise.

    y_tilde     : (Q*K, M) effective received pilots
    theta_tilde : (Q*K, N*K) joint effective phase matrix, block diagonal with
                  K identical (Q, N) blocks
    sigma2      : per-entry noise variance
    """

    y_tilde: np.ndarray
    theta_tilde: np.ndarray
    sigma2: float


def steering_vector_upa(theta: float, psi: float, n1: int, n2: int, d_over_lambda: float) -> np.ndarray:
    """Normalized UPA steering vector for azimuth ``theta`` / elevation ``psi``.

    Returns (1/sqrt(n1*n2)) [e^{-j 2 pi d sin(theta) cos(psi) i1 / lambda}]
    kron [e^{-j 2 pi d sin(theta) i2 / lambda}] with i1 = 0..n1-1, i2 = 0..n2-1.
    """
    if n1 < 1 or n2 < 1:
        raise ConfigError("array dimensions must be >= 1")
    p1 = np.sin(theta) * np.cos(psi)
    p2 = np.sin(theta)
    f1 = np.exp(-2j * np.pi * d_over_lambda * p1 * np.arange(n1))
    f2 = np.exp(-2j * np.pi * d_over_lambda * p2 * np.arange(n2))
    return np.kron(f1, f2) / np.sqrt(n1 * n2)


def _dft_factor(p: int) -> np.ndarray:
    """p x p unitary steering dictionary on the uniform spatial-frequency grid.

    Column i is the length-p steering factor at spatial frequency i/(p * d/lambda)
    in the sine domain, which makes the Gram exactly the identity.
    """
    idx = np.arange(p)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / p) / np.sqrt(p)


def build_dictionaries(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unitary VAD dictionaries (U_M at the BS, U_N at the RIS).

    Columns are UPA steering vectors on the uniform sine-domain grid; the grid
    spacing is chosen so each factor is a unitary DFT-type matrix.
    """
    u_m = np.kron(_dft_factor(cfg.m1), _dft_factor(cfg.m2))
    u_n = np.kron(_dft_factor(cfg.n1), _dft_factor(cfg.n2))
    return u_m, u_n


def _draw_complex_gains(rng: np.random.Generator, size) -> np.ndarray:
    """i.i.d. CN(0, 1) gains."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def _grid_pair(rng: np.random.Generator, n1: int, n2: int, size: int) -> np.ndarray:
    """Draw `size` (i1, i2) grid index pairs uniformly, flattened as i1*n2 + i2."""
    return rng.integers(0, n1, size=size) * n2 + rng.integers(0, n2, size=size)


def _grid_add(a: np.ndarray, b, n1: int, n2: int) -> np.ndarray:
    """Componentwise modular sum of flattened UPA grid indices.

    The entrywise product of two on-grid steering columns is (1/sqrt(N)) times
    the column at the summed grid index, so cascading paths adds indices
    mod (n1, n2).
    """
    a1, a2 = np.divmod(np.asarray(a), n2)
    b1, b2 = np.divmod(np.asarray(b), n2)
    return ((a1 + b1) % n1) * n2 + ((a2 + b2) % n2)


def generate_channels(cfg: ScenarioConfig, rng: np.random.Generator) -> GroundTruth:
    """Draw a ground-truth scenario with on-grid Saleh-Valenzuela paths.

    The BS-RIS channel has l_c paths with CN(0,1) gains and grid-aligned
    angles shared by every UE; each UE's RIS link has l_r_k paths of which
    the first l_r use RIS angles common to all UEs. UE-specific RIS angles
    are drawn without replacement globally (across UEs, excluding the shared
    set) so the per-column support counts are exact.
    """
    m, n, k = cfg.m, cfg.n, cfg.k
    n_specific = cfg.k * (cfg.l_r_k - cfg.l_r)
    if cfg.l_r + n_specific > n:
        raise ConfigError(
            f"infeasible support: l_r + K*(l_r_k - l_r) = {cfg.l_r + n_specific} distinct RIS "
            f"grid angles required but only N = {n} exist"
        )
    if cfg.l_c * cfg.l_r_k > n * m:
        raise ConfigError("infeasible support: l_c * l_r_k exceeds the N*M grid capacity")

    u_m, u_n = build_dictionaries(cfg)

    # BS-side arrival angles: distinct grid columns, shared by all UEs.
    bs_cols = np.sort(rng.choice(m, size=cfg.l_c, replace=False))
    # RIS-side departure angle of each BS-RIS path (repeats allowed).
    ris_dep = _grid_pair(rng, cfg.n1, cfg.n2, cfg.l_c)
    g_gains = _draw_complex_gains(rng, cfg.l_c)

    # RIS-UE scatterer angles: l_r shared + (l_r_k - l_r) per UE, all distinct.
    ue_grid = rng.choice(n, size=cfg.l_r + n_specific, replace=False)
    shared = ue_grid[: cfg.l_r]
    specific = ue_grid[cfg.l_r :].reshape(cfg.k, cfg.l_r_k - cfg.l_r) if cfg.l_r_k > cfg.l_r else np.zeros((cfg.k, 0), dtype=int)

    scale = np.sqrt(m * n / (cfg.l_c * cfg.l_r_k))
    g_matrix = np.sqrt(m * n / cfg.l_c) * (u_m[:, bs_cols] * g_gains) @ u_n[:, ris_dep].T

    h_tilde = np.zeros((cfg.nk, m), dtype=np.complex128)
    u_true = np.zeros((cfg.nk, m), dtype=np.int8)
    h_physical = []
    for ue in range(k):
        ue_angles = np.concatenate([shared, specific[ue]])
        ue_gains = _draw_complex_gains(rng, cfg.l_r_k)
        h_rk = np.sqrt(n / cfg.l_r_k) * u_n[:, ue_angles] @ ue_gains
        h_physical.append(g_matrix @ np.diag(h_rk))

        base = ue * n
        for l in range(cfg.l_c):
            rows = _grid_add(ue_angles, ris_dep[l], cfg.n1, cfg.n2)
            vals = scale * np.conj(g_gains[l] * ue_gains)
            h_tilde[base + rows, bs_cols[l]] += vals
            u_true[base + rows, bs_cols[l]] = 1

    row_supports = [
        np.sort(_grid_add(shared, ris_dep[l], cfg.n1, cfg.n2)) for l in range(cfg.l_c)
    ]
    return GroundTruth(
        h_tilde=h_tilde,
        u_true=u_true,
        h_physical_per_ue=h_physical,
        column_support=bs_cols,
        row_supports=row_supports,
    )


def generate_pilots(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """RIS reflection pilot matrix (N, Q) with i.i.d. entries +-1/sqrt(N)."""
    signs = rng.integers(0, 2, size=(cfg.n, cfg.q)) * 2 - 1
    return signs / np.sqrt(cfg.n)


def synthesize_measurements(
    gt: GroundTruth, pilots: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator
) -> MeasurementSet:
    """Noisy effective measurements of a ground-truth scenario.

    Builds the effective phase matrix from the pilots and RIS dictionary,
    lifts it to the joint block-diagonal system over the K UEs, and adds
    CN(0, sigma2) noise with sigma2 = 10**(-snr_db/10) (unit pilot symbols).
    """
    _, u_n = build_dictionaries(cfg)
    theta_eff = (u_n.T @ pilots).conj().T  # (Q, N)
    if theta_eff.shape != (cfg.q, cfg.n):
        raise ConfigError(f"pilot matrix shape {pilots.shape} inconsistent with config (expected ({cfg.n}, {cfg.q}))")
    theta_joint = np.kron(np.eye(cfg.k), theta_eff)
    sigma2 = cfg.sigma2
    noise = np.sqrt(sigma2) * _draw_complex_gains(rng, (cfg.qk, cfg.m))
    y_tilde = theta_joint @ gt.h_tilde + noise
    return MeasurementSet(y_tilde=y_tilde, theta_tilde=theta_joint, sigma2=sigma2)
