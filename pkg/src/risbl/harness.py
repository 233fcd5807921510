"""Experiment runner: parameter sweeps, posterior-distance study, runtime
study, and deterministic CSV persistence.

Randomness comes from the counter-based Philox4x32-10 generator; every
(axis value, trial) cell derives its stream from the base seed via
``SeedSequence(entropy=seed, spawn_key=(value_index, trial))`` so results are
reproducible across runs and machines.
"""

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import omp, oracle_mmse, save_variant, vanilla_sbl
from .channel import (
    GroundTruth,
    MeasurementSet,
    ScenarioConfig,
    build_dictionaries,
    generate_channels,
    generate_pilots,
    synthesize_measurements,
)
from .exceptions import ConfigError, RisblError
from .fmsbl import run_fmsbl
from .metrics import gaussian_kl, nmse_db, nser, sum_se
from .prior import GAMMA_INIT
from .smsbl import run_smsbl

RNG_NAME = "Philox4x32-10"
AXES = ("snr", "pilots", "sparsity", "antennas", "power")
ESTIMATORS = ("oracle", "smsbl", "fmsbl", "sbl", "omp", "save")
SWEEP_COLUMNS = ("axis_value", "estimator", "trial", "nmse_db", "nser", "sum_se", "runtime_seconds", "iters")
TC_SYMBOLS = 1000  # coherence interval used for the spectral-efficiency prefactor


@dataclass
class SweepSpec:
    """A sweep over one scenario parameter.

    axis is one of snr, pilots, sparsity, antennas, power; values must be
    strictly increasing. Every estimator in a trial consumes the identical
    measurement set.
    """

    base: ScenarioConfig
    axis: str
    values: tuple
    trials: int
    estimators: tuple[str, ...]
    output_path: str

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise ConfigError("values must be nonempty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("values must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; expected from {ESTIMATORS}")
        if not self.estimators:
            raise ConfigError("estimators must be nonempty")


@dataclass
class ResultRow:
    axis_value: float
    estimator: str
    trial: int
    nmse_db: float | None
    nser: float | None
    sum_se: float | None
    runtime_seconds: float | None
    iters: int | None


def make_rng(seed: int, spawn_key: tuple = ()) -> np.random.Generator:
    """Philox stream for a (seed, substream) pair."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def build_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[GroundTruth, MeasurementSet]:
    gt = generate_channels(cfg, rng)
    pilots = generate_pilots(cfg, rng)
    return gt, synthesize_measurements(gt, pilots, cfg, rng)


def apply_axis(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis in ("snr", "power"):
        return base.with_updates(snr_db=float(value))
    if axis == "pilots":
        return base.with_updates(q=int(value))
    if axis == "sparsity":
        return base.with_updates(l_r_k=int(value))
    if axis == "antennas":
        return base.with_updates(m1=int(value))
    raise ConfigError(f"unknown axis {axis!r}")


def _vad_to_physical_per_ue(h_tilde: np.ndarray, cfg: ScenarioConfig) -> list[np.ndarray]:
    """Invert the VAD transform block-by-block: H_k = U_M Htilde_k^H U_N^T."""
    u_m, u_n = build_dictionaries(cfg)
    out = []
    for ue in range(cfg.k):
        block = h_tilde[ue * cfg.n : (ue + 1) * cfg.n, :]
        out.append(u_m @ block.conj().T @ u_n.T)
    return out


def run_estimator(
    name: str, meas: MeasurementSet, cfg: ScenarioConfig, gt: GroundTruth
) -> tuple[np.ndarray, np.ndarray | None, int]:
    """Dispatch one estimator; returns (h_hat, u_hat or None, iterations)."""
    if name == "smsbl":
        h, u, _, trace = run_smsbl(meas, cfg, track_support=False, track_elbo=False)
        return h, u, trace.iters
    if name == "fmsbl":
        h, u, _, trace = run_fmsbl(meas, cfg, track_support=False, track_elbo=False)
        return h, u, trace.iters
    if name == "sbl":
        res = vanilla_sbl(meas, cfg)
        return res.h_hat, res.u_hat, res.iters
    if name == "oracle":
        res = oracle_mmse(meas, gt.u_true, meas.sigma2, h_true=gt.h_tilde)
        return res.h_hat, res.u_hat, res.iters
    if name == "omp":
        genie_k = min(cfg.k * cfg.l_r_k, cfg.qk)
        res = omp(meas, cfg, genie_k)
        return res.h_hat, res.u_hat, res.iters
    if name == "save":
        res = save_variant(meas, cfg)
        return res.h_hat, res.u_hat, res.iters
    raise ConfigError(f"unknown estimator {name!r}")


def run_sweep(spec: SweepSpec, timing: bool = False) -> list[ResultRow]:
    """Run every (axis value, trial, estimator) cell of a sweep.

    Estimator failures are recorded as rows with empty metrics and the sweep
    continues. With ``timing=False`` (the default) wall-clock fields are left
    empty so repeated runs with the same seed are byte-identical.
    """
    rows: list[ResultRow] = []
    for vi, value in enumerate(spec.values):
        cfg_v = apply_axis(spec.base, spec.axis, value)
        for trial in range(spec.trials):
            rng = make_rng(spec.base.seed, (vi, trial))
            gt, meas = build_scenario(cfg_v, rng)
            theta_se = (rng.integers(0, 2, size=cfg_v.n) * 2 - 1) / np.sqrt(cfg_v.n)
            h_true_phys = gt.h_physical_per_ue
            for est in spec.estimators:
                tic = time.perf_counter()
                try:
                    h_hat, u_hat, iters = run_estimator(est, meas, cfg_v, gt)
                except (RisblError, np.linalg.LinAlgError):
                    rows.append(ResultRow(float(value), est, trial, None, None, None, None, None))
                    continue
                elapsed = time.perf_counter() - tic
                h_hat_phys = _vad_to_physical_per_ue(h_hat, cfg_v)
                row = ResultRow(
                    axis_value=float(value),
                    estimator=est,
                    trial=trial,
                    nmse_db=nmse_db(h_hat, gt.h_tilde),
                    nser=nser(u_hat, gt.u_true) if u_hat is not None else None,
                    sum_se=sum_se(h_hat_phys, h_true_phys, theta_se, meas.sigma2, cfg_v.q, TC_SYMBOLS),
                    runtime_seconds=elapsed if timing else None,
                    iters=iters,
                )
                rows.append(row)
    rows.sort(key=lambda r: (r.axis_value, r.estimator, r.trial))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def sweep_meta(spec: SweepSpec, timing: bool) -> dict[str, str]:
    meta = {
        "version": __version__,
        "rng": RNG_NAME,
        "seed": str(spec.base.seed),
        "spawn": "(value_index,trial)",
        "axis": spec.axis,
        "values": ",".join(_fmt(float(v)) for v in spec.values),
        "trials": str(spec.trials),
        "estimators": ",".join(spec.estimators),
        "timing": "on" if timing else "off",
        "scenario": " ".join(f"{f.name}={getattr(spec.base, f.name)}" for f in fields(ScenarioConfig)),
    }
    return meta


def write_csv(path: str | Path, title: str, meta: dict[str, str], columns: tuple[str, ...], rows) -> None:
    """CSV with a '#'-prefixed header block recording the full provenance."""
    lines = [f"# {title}"]
    lines.extend(f"# {k}={v}" for k, v in meta.items())
    lines.append(",".join(columns))
    for row in rows:
        values = [getattr(row, c) for c in columns] if hasattr(row, columns[0]) else list(row)
        lines.append(",".join(_fmt(v) for v in values))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(spec: SweepSpec, rows: list[ResultRow], timing: bool = False) -> None:
    write_csv(spec.output_path, "risbl sweep", sweep_meta(spec, timing), SWEEP_COLUMNS, rows)


def write_gnuplot_script(spec: SweepSpec, path: str | Path) -> None:
    """Companion gnuplot script plotting mean NMSE against the sweep axis."""
    lines = [
        "# gnuplot companion for the sweep CSV",
        "set datafile separator ','",
        f"set xlabel '{spec.axis}'",
        "set ylabel 'NMSE (dB)'",
        "set key outside",
        "plot " + ", \\\n     ".join(
            f"'{Path(spec.output_path).name}' using 1:(strcol(2) eq '{est}' ? $4 : NaN) title '{est}' with points"
            for est in spec.estimators
        ),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def kl_to_structured_posterior(
    sm_mu: np.ndarray, sm_sigma: list[np.ndarray], mu: np.ndarray, tau: np.ndarray
) -> float:
    """Summed per-column KL from the structured posterior (reference) to a
    factorized posterior."""
    total = 0.0
    for m in range(mu.shape[1]):
        total += gaussian_kl(sm_mu[:, m], sm_sigma[m], mu[:, m], tau[:, m])
    return total


@dataclass
class KlRow:
    iteration: int
    estimator: str
    kl: float


def run_kl_study(cfg: ScenarioConfig) -> list[KlRow]:
    """Per-iteration summed KL between the converged structured posterior and
    the factorized posteriors of the majorized and coordinate-ascent solvers.

    Direction convention: the structured posterior is the reference (first)
    argument, i.e. KL(structured || factorized).
    """
    rng = make_rng(cfg.seed, (0, 0))
    _, meas = build_scenario(cfg, rng)
    _, _, sm_post, _ = run_smsbl(meas, cfg, track_elbo=False, track_support=False)

    # precompute reference inverses once per column
    nk = cfg.nk
    sigma_inv = [np.linalg.inv(s) for s in sm_post.sigma]
    logdet_p = [float(np.linalg.slogdet(s)[1].real) for s in sm_post.sigma]
    w_diag = [np.real(np.diag(p)) for p in sigma_inv]

    def kl_fast(mu: np.ndarray, tau: np.ndarray) -> float:
        total = 0.0
        for m in range(cfg.m):
            d = sm_post.mu[:, m] - mu[:, m]
            quad = float(np.real(d.conj() @ (sigma_inv[m] @ d)))
            total += (
                float(w_diag[m] @ tau[:, m])
                + quad
                - nk
                + logdet_p[m]
                - float(np.sum(np.log(tau[:, m])))
            )
        return total

    rows: list[KlRow] = []
    mu0 = np.zeros((nk, cfg.m), dtype=np.complex128)
    tau0 = np.full((nk, cfg.m), GAMMA_INIT)
    for name in ("fmsbl", "save"):
        rows.append(KlRow(0, name, kl_fast(mu0, tau0)))
        if name == "fmsbl":
            _, _, _, trace = run_fmsbl(meas, cfg, track_posterior=True, track_support=False, track_elbo=False)
            history = trace.posterior_history
        else:
            res = save_variant(meas, cfg, track_posterior=True)
            history = res.trace.posterior_history
        for i, (mu_i, tau_i) in enumerate(history, start=1):
            rows.append(KlRow(i, name, kl_fast(mu_i, tau_i)))
    return rows


@dataclass
class RuntimeRow:
    q: int
    estimator: str
    median_total_seconds: float
    median_iter_seconds: float
    iters: int


def run_runtime_study(cfg: ScenarioConfig, q_values, repetitions: int = 5) -> list[RuntimeRow]:
    """Wall-clock comparison of the two solvers across pilot counts.

    Runs a fixed iteration budget (stopping disabled), excludes one warmup
    run, and reports medians over ``repetitions`` repetitions.
    """
    q_values = [int(q) for q in q_values]
    if any(b <= a for a, b in zip(q_values, q_values[1:])):
        raise ConfigError("q_values must be strictly increasing")
    rows: list[RuntimeRow] = []
    solvers = {"smsbl": run_smsbl, "fmsbl": run_fmsbl}
    for qi, q in enumerate(q_values):
        cfg_q = cfg.with_updates(q=q, eta=0.0)
        rng = make_rng(cfg.seed, (qi, 0))
        _, meas = build_scenario(cfg_q, rng)
        for name, solver in solvers.items():
            totals, per_iter = [], []
            for rep in range(repetitions + 1):
                _, _, _, trace = solver(meas, cfg_q, track_support=False, track_elbo=False)
                if rep == 0:
                    continue  # warmup
                totals.append(float(np.sum(trace.iter_seconds)))
                per_iter.append(float(np.median(trace.iter_seconds)))
            rows.append(
                RuntimeRow(
                    q=q,
                    estimator=name,
                    median_total_seconds=float(np.median(totals)),
                    median_iter_seconds=float(np.median(per_iter)),
                    iters=cfg_q.t_max,
                )
            )
    return rows
