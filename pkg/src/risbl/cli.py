"""Command-line entry point.

Subcommands: sweep, kl, runtime, generate. Configuration files are flat
key=value text ('#' comments); scenario keys match ScenarioConfig field
names, sweep files additionally carry axis/values/trials/estimators/
output_path. Exit codes: 0 success, 2 configuration error, 3 solver failure
in all trials.
"""

import argparse
import sys
from pathlib import Path

from .container import (
    parse_key_values,
    save_ground_truth,
    save_measurements,
    scenario_from_mapping,
    write_scenario,
)
from .exceptions import ConfigError, RisblError
from .harness import (
    RNG_NAME,
    SWEEP_COLUMNS,
    SweepSpec,
    build_scenario,
    make_rng,
    run_kl_study,
    run_runtime_study,
    run_sweep,
    sweep_meta,
    write_csv,
    write_gnuplot_script,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risbl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="key=value configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="override the output path")

    p_sweep = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    p_sweep.add_argument("--estimators", default=None, help="comma-separated estimator list override")
    p_sweep.add_argument("--trials", type=int, default=None, help="trial count override")
    p_sweep.add_argument("--timing", action="store_true", help="record wall-clock times (breaks byte-identical reruns)")
    p_sweep.add_argument("--gnuplot", default=None, help="also write a gnuplot companion script here")

    sub.add_parser("kl", parents=[common], help="per-iteration posterior-distance study")

    p_rt = sub.add_parser("runtime", parents=[common], help="solver runtime study over pilot counts")
    p_rt.add_argument("--q-values", default=None, help="comma-separated pilot counts override")

    sub.add_parser("generate", parents=[common], help="dump a scenario, its ground truth and measurements")
    return parser


def _load_mapping(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_key_values(p.read_text())


def _scenario(mapping: dict[str, str], seed_override: int | None):
    cfg = scenario_from_mapping(mapping, ignore_extra=True)
    if seed_override is not None:
        cfg = cfg.with_updates(seed=seed_override)
    return cfg


def _cmd_sweep(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _scenario(mapping, args.seed)
    for key in ("axis", "values", "output_path"):
        if key not in mapping and not (key == "output_path" and args.out):
            raise ConfigError(f"sweep config missing {key!r}")
    estimators = args.estimators or mapping.get("estimators", "oracle,smsbl,fmsbl,sbl")
    trials = args.trials if args.trials is not None else int(mapping.get("trials", "1"))
    spec = SweepSpec(
        base=cfg,
        axis=mapping["axis"],
        values=tuple(float(v) for v in mapping["values"].split(",")),
        trials=trials,
        estimators=tuple(e.strip() for e in estimators.split(",") if e.strip()),
        output_path=args.out or mapping["output_path"],
    )
    rows = run_sweep(spec, timing=args.timing)
    write_csv(spec.output_path, "risbl sweep", sweep_meta(spec, args.timing), SWEEP_COLUMNS, rows)
    if args.gnuplot:
        write_gnuplot_script(spec, args.gnuplot)
    print(f"wrote {len(rows)} rows to {spec.output_path}")
    if rows and all(r.nmse_db is None for r in rows):
        print("all trials failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_kl(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _scenario(mapping, args.seed)
    out = args.out or mapping.get("output_path")
    if not out:
        raise ConfigError("kl study needs an output path (config output_path= or --out)")
    rows = run_kl_study(cfg)
    meta = {
        "version_rng": RNG_NAME,
        "seed": str(cfg.seed),
        "kl_direction": "KL(structured_reference||factorized)",
    }
    write_csv(out, "risbl kl study", meta, ("iteration", "estimator", "kl"), rows)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _cmd_runtime(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _scenario(mapping, args.seed)
    out = args.out or mapping.get("output_path")
    if not out:
        raise ConfigError("runtime study needs an output path (config output_path= or --out)")
    q_text = args.q_values or mapping.get("q_values")
    if not q_text:
        raise ConfigError("runtime study needs pilot counts (config q_values= or --q-values)")
    q_values = [int(v) for v in q_text.split(",")]
    repetitions = int(mapping.get("repetitions", "5"))
    rows = run_runtime_study(cfg, q_values, repetitions=repetitions)
    meta = {"seed": str(cfg.seed), "repetitions": str(repetitions)}
    write_csv(
        out,
        "risbl runtime study",
        meta,
        ("q", "estimator", "median_total_seconds", "median_iter_seconds", "iters"),
        rows,
    )
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _scenario(mapping, args.seed)
    out = args.out or mapping.get("output_path")
    if not out:
        raise ConfigError("generate needs an output prefix (config output_path= or --out)")
    gt, meas = build_scenario(cfg, make_rng(cfg.seed))
    prefix = Path(out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_scenario(cfg, f"{prefix}_scenario.txt")
    save_ground_truth(gt, f"{prefix}_ground_truth.bin")
    save_measurements(meas, f"{prefix}_measurements.bin")
    print(f"wrote {prefix}_scenario.txt, {prefix}_ground_truth.bin, {prefix}_measurements.bin")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "sweep": _cmd_sweep,
        "kl": _cmd_kl,
        "runtime": _cmd_runtime,
        "generate": _cmd_generate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RisblError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
