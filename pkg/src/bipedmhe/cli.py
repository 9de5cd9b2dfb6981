"""Command-line interface.

Subcommands: simulate (write a sensor log), estimate (run estimators on a
persisted log), evaluate (score persisted traces), bench (end to end).
Exit codes: 0 success, 2 configuration error, 3 estimator fault.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (EVAL_START, make_log, run_benchmark, run_estimator,
                    summarize)
from .config import ConfigError, ScenarioConfig, load_scenario, save_scenario
from .logio import (load_estimate_trace, load_sensor_log, save_estimate_trace,
                    save_report, save_sensor_log)
from .metrics import EstimatorMetrics, MetricsReport, evaluate_estimator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3


def _add_common(sub, *flags):
    if "config" in flags:
        sub.add_argument("--config", help="scenario file (INI)")
    if "seed" in flags:
        sub.add_argument("--seed", type=int, help="override scenario seed")
    if "out" in flags:
        sub.add_argument("--out", help="override output directory")
    if "estimators" in flags:
        sub.add_argument("--estimators",
                         help="comma-separated subset of mhe,mhe_nc,dkf,mbo")
    if "no-constraints" in flags:
        sub.add_argument("--no-constraints", action="store_true",
                         help="run the MHE without contact constraints")
    if "window" in flags:
        sub.add_argument("--window", type=int, help="MHE window size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bipedmhe",
        description="Simulate, estimate, and benchmark GRF/state estimation "
                    "on a planar biped.")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="simulate and write a sensor log")
    _add_common(sim, "config", "seed", "out")

    est = subs.add_parser("estimate", help="run estimators on a stored log")
    _add_common(est, "config", "out", "estimators", "no-constraints",
                "window")
    est.add_argument("--log", help="log directory (default: output dir)")

    ev = subs.add_parser("evaluate", help="score stored estimate traces")
    _add_common(ev, "config", "out", "estimators")
    ev.add_argument("--log", help="log directory (default: output dir)")

    bench = subs.add_parser("bench", help="simulate, estimate, and score")
    _add_common(bench, "config", "seed", "out", "estimators",
                "no-constraints", "window")
    return parser


def _scenario(args) -> ScenarioConfig:
    config = load_scenario(args.config) if args.config else ScenarioConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "estimators", None):
        updates["estimators"] = tuple(
            name.strip() for name in args.estimators.split(",")
            if name.strip())
    if getattr(args, "window", None) is not None:
        updates["window_size"] = args.window
    if updates:
        config = replace(config, **updates)
    if getattr(args, "no_constraints", False):
        names = tuple("mhe_nc" if n == "mhe" else n
                      for n in config.estimators)
        config = replace(config, estimators=names)
    return config


def _cmd_simulate(args) -> int:
    config = _scenario(args)
    model, log = make_log(config)
    out = Path(config.out_dir)
    save_sensor_log(log, out)
    save_scenario(config, out / "scenario.ini")
    print(f"wrote sensor log ({log.n_ticks} ticks) to {out}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    config = _scenario(args)
    log_dir = Path(args.log) if args.log else Path(config.out_dir)
    if not (log_dir / "imu.csv").is_file():
        raise ConfigError(f"no sensor log under {log_dir}")
    log = load_sensor_log(log_dir)
    model = config.resolve_model()
    out = Path(config.out_dir)
    status = EXIT_OK
    for name in config.estimators:
        try:
            trace = run_estimator(name, log, model, config)
        except Exception as exc:
            print(f"estimator {name} failed: {exc}", file=sys.stderr)
            status = EXIT_FAULT
            continue
        path = save_estimate_trace(trace, out / f"estimate_{name}.csv")
        print(f"wrote {path}")
    return status


def _cmd_evaluate(args) -> int:
    config = _scenario(args)
    log_dir = Path(args.log) if args.log else Path(config.out_dir)
    if not (log_dir / "truth.csv").is_file():
        raise ConfigError(f"no truth record under {log_dir}")
    log = load_sensor_log(log_dir)
    out = Path(config.out_dir)

    report = MetricsReport(duration=float(log.truth_t[-1]), seed=config.seed)
    status = EXIT_OK
    for name in config.estimators:
        path = out / f"estimate_{name}.csv"
        if not path.is_file():
            raise ConfigError(f"missing estimate trace {path}")
        try:
            trace = load_estimate_trace(path)
            report.rows.append(
                evaluate_estimator(name, trace, log, t_min=EVAL_START))
        except Exception as exc:
            report.rows.append(EstimatorMetrics(
                name=name, fault=f"{type(exc).__name__}: {exc}"))
            status = EXIT_FAULT
    save_report(report, out)
    print(summarize(report), end="")
    return status


def _cmd_bench(args) -> int:
    config = _scenario(args)
    report = run_benchmark(config)
    save_scenario(config, Path(config.out_dir) / "scenario.ini")
    print(summarize(report), end="")
    if any(row.fault for row in report.rows):
        return EXIT_FAULT
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"simulate": _cmd_simulate, "estimate": _cmd_estimate,
                "evaluate": _cmd_evaluate, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
