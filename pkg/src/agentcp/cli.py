"""Command-line front end: run experiments, verify weights, emit reports.

Subcommands
-----------
``design``            run the design-loop experiment from a config file
``active-learning``   run the active-learning experiment from a config file
``verify-weights``    cross-check the three weight computations and report
                      per-depth call counts and timings

Experiment runs write ``records.csv`` (one row per seed/step/method),
``summary.csv`` (per-method-per-step aggregates), ``manifest.json``, and a
``figures/`` directory of PNGs into the output directory.

Exit codes: 0 success; 2 usage or config error; 3 numerical or
verification failure.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import yaml

from . import __version__
from .errors import AgentcpError, ConfigError, NumericalError, ParameterError
from .sim import (
    ExperimentConfig,
    StepRecord,
    SummaryRow,
    aggregate,
    config_from_mapping,
    expand_methods,
    parse_seed_range,
    run_experiment,
)
from .weights import (
    TabularInteractionEvaluator,
    brute_force_weights,
    factorized_joint_density,
    mfcs_dstep_weights,
    mfcs_exact_weights,
)

__all__ = ["main"]

WORKERS_ENV_VAR = "AGENTCP_WORKERS"
VERIFY_TOLERANCE = 1e-9
_VERIFY_FACTORIAL_CAP = 5040

RECORDS_HEADER = "seed,t,method,covered,width,metric,bound_relative,wall_ms"
SUMMARY_HEADER = (
    "method,t,n,coverage_mean,coverage_se,width_median,width_q25,width_q75,"
    "frac_infinite_width,metric_mean,metric_se"
)


def _fmt(value) -> str:
    """Canonical CSV cell: lowercase booleans, shortest float repr, literal inf."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _record_row(rec: StepRecord) -> str:
    return ",".join(
        (
            _fmt(rec.seed),
            _fmt(rec.t),
            rec.method,
            _fmt(rec.covered),
            _fmt(float(rec.width)),
            _fmt(float(rec.metric)),
            _fmt(rec.bound_relative if rec.bound_relative is None else float(rec.bound_relative)),
            _fmt(float(rec.wall_ms)),
        )
    )


def _summary_row(row: SummaryRow) -> str:
    return ",".join(
        (
            row.method,
            _fmt(row.t),
            _fmt(row.n_records),
            _fmt(float(row.coverage_mean)),
            _fmt(float(row.coverage_se)),
            _fmt(float(row.width_median)),
            _fmt(float(row.width_q25)),
            _fmt(float(row.width_q75)),
            _fmt(float(row.frac_infinite_width)),
            _fmt(float(row.metric_mean)),
            _fmt(float(row.metric_se)),
        )
    )


def _write_lines(path: Path, header: str, lines: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def _config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(dataclasses.asdict(config), sort_keys=True, default=list)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _resolve_workers(flag: Optional[int]) -> int:
    if flag is not None:
        if flag < 1:
            raise ConfigError(f"parallelism must be >= 1, got {flag}")
        return flag
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {env!r}") from exc
        if value < 1:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def _seed_worker(payload) -> Tuple[int, list, Optional[str]]:
    config, seed, timing = payload
    try:
        return seed, run_experiment(config, seed, timing=timing), None
    except Exception as exc:  # per-seed isolation: one bad seed must not kill the run
        return seed, [], f"{type(exc).__name__}: {exc}"


def _execute_seeds(
    config: ExperimentConfig, workers: int, timing: bool
) -> Tuple[List[StepRecord], List[Tuple[int, str]]]:
    payloads = [(config, seed, timing) for seed in config.seeds]
    results = {}
    if workers == 1:
        for payload in payloads:
            seed, recs, err = _seed_worker(payload)
            results[seed] = (recs, err)
            _log_seed(seed, recs, err)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, recs, err in pool.map(_seed_worker, payloads):
                results[seed] = (recs, err)
                _log_seed(seed, recs, err)
    records: List[StepRecord] = []
    errors: List[Tuple[int, str]] = []
    for seed in config.seeds:  # deterministic order regardless of completion order
        recs, err = results[seed]
        records.extend(recs)
        if err is not None:
            errors.append((seed, err))
    return records, errors


def _log_seed(seed: int, recs: list, err: Optional[str]) -> None:
    if err is None:
        print(f"seed {seed}: {len(recs)} records")
    else:
        print(f"seed {seed}: FAILED ({err})")


def _load_config(path: str, expected_mode: str, args) -> ExperimentConfig:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        data = yaml.safe_load(cfg_path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    config = config_from_mapping(data)
    if config.mode != expected_mode:
        raise ConfigError(
            f"config mode is {config.mode!r} but the subcommand expects {expected_mode!r}"
        )
    overrides = {}
    if args.seeds is not None:
        start, stop = parse_seed_range(args.seeds)
        overrides.update(seed_start=start, seed_stop=stop)
    if args.bounded:
        overrides["bounded"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_experiment(args, mode: str) -> int:
    config = _load_config(args.config, mode, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = _resolve_workers(args.parallelism)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    records, errors = _execute_seeds(config, workers, args.timing)
    elapsed = time.perf_counter() - t0

    _write_lines(out_dir / "records.csv", RECORDS_HEADER, [_record_row(r) for r in records])
    outputs = ["records.csv"]
    if errors:
        _write_lines(
            out_dir / "errors.csv",
            "seed,error",
            [f"{seed},{msg.replace(',', ';')}" for seed, msg in errors],
        )
        outputs.append("errors.csv")
    summary_rows: List[SummaryRow] = []
    if records:
        summary_rows = aggregate(records)
        _write_lines(out_dir / "summary.csv", SUMMARY_HEADER, [_summary_row(r) for r in summary_rows])
        outputs.append("summary.csv")
        if not args.no_figures:
            from .figures import render_report_figures  # deferred: pulls in matplotlib

            figure_paths = render_report_figures(
                summary_rows, records, out_dir / "figures", config.mode, config.alpha
            )
            outputs.extend(str(p.relative_to(out_dir)) for p in figure_paths)
    manifest = {
        "config_hash": _config_hash(config),
        "version": __version__,
        "mode": config.mode,
        "seeds": f"{config.seed_start}..{config.seed_stop}",
        "methods": expand_methods(config),
        "parallelism": workers,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "elapsed_seconds": round(elapsed, 3),
        "outputs": outputs,
        "failed_seeds": [seed for seed, _ in errors],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if errors:
        print(f"{len(errors)} seed(s) failed; see errors.csv", file=sys.stderr)
        return 3
    return 0


def cmd_design(args) -> int:
    return _cmd_experiment(args, "design")


def cmd_active_learning(args) -> int:
    return _cmd_experiment(args, "active-learning")


def _parse_depth_list(text: Optional[str], t: int) -> List[int]:
    if text is None:
        return list(range(1, t + 1))
    try:
        depths = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"depths must be comma-separated integers, got {text!r}") from exc
    if not depths or any(not 1 <= d <= t for d in depths):
        raise ConfigError(f"depths must lie in [1, t={t}], got {text!r}")
    return depths


def cmd_verify_weights(args) -> int:
    """Cross-check the factorial oracle, the exact route, and the recursion.

    Runs ``trials`` seeded instances, reports the maximum absolute weight
    deviations, then a per-depth table of evaluator-call counts (which must
    equal the closed-form falling factorial) and one-shot wall times.
    """
    n, t = args.n, args.t
    if n < 0 or t < 1:
        raise ConfigError(f"need n >= 0 and t >= 1, got n={n}, t={t}")
    m = n + t
    if math.factorial(m) > _VERIFY_FACTORIAL_CAP:
        raise ConfigError(
            f"(n+t)! = {math.factorial(m)} exceeds the oracle cap {_VERIFY_FACTORIAL_CAP}"
        )
    depths = _parse_depth_list(args.depths, t)
    max_dev_exact = 0.0
    max_dev_recursive = 0.0
    per_depth_dev = {d: 0.0 for d in depths}
    for trial in range(args.trials):
        evaluator = TabularInteractionEvaluator(m, args.seed * 1_000_003 + trial)
        points = evaluator.candidate_points()
        reference = brute_force_weights(points, factorized_joint_density(evaluator, n))
        exact = mfcs_exact_weights(points, evaluator, n, t)
        recursive = mfcs_dstep_weights(points, evaluator, t)
        max_dev_exact = max(max_dev_exact, float(abs(reference.values - exact.values).max()))
        max_dev_recursive = max(
            max_dev_recursive, float(abs(reference.values - recursive.values).max())
        )
        for d in depths:
            w = mfcs_dstep_weights(points, evaluator, d)
            per_depth_dev[d] = max(
                per_depth_dev[d], float(abs(reference.values - w.values).max())
            )

    timing_rows = []
    evaluator = TabularInteractionEvaluator(m, args.seed)
    points = evaluator.candidate_points()
    expected_calls = []
    for d in depths:
        expected = 1
        for j in range(d):
            expected *= m - j
        expected_calls.append(expected)
        start = time.perf_counter()
        w = mfcs_dstep_weights(points, evaluator, d)
        wall_ms = (time.perf_counter() - start) * 1000.0
        timing_rows.append((d, w.deepest_level_calls, expected, wall_ms, per_depth_dev[d]))

    print(f"instances: {args.trials}  points: m = n + t = {m}")
    print(f"max |brute - exact|      = {max_dev_exact:.3e}")
    print(f"max |brute - depth-t|    = {max_dev_recursive:.3e}")
    print("depth  calls       expected    wall_ms   max_dev_vs_brute")
    calls_ok = True
    for d, calls, expected, wall_ms, dev in timing_rows:
        mark = "ok" if calls == expected else "MISMATCH"
        calls_ok = calls_ok and calls == expected
        note = "" if d == t else "  (informational)"
        print(f"{d:>5}  {calls:>10}  {expected:>10}  {wall_ms:>8.2f}   {dev:.3e} {mark}{note}")
    report = {
        "trials": args.trials,
        "n": n,
        "t": t,
        "max_deviation_exact": max_dev_exact,
        "max_deviation_depth_t": max_dev_recursive,
        "per_depth": [
            {"depth": d, "calls": calls, "expected_calls": expected,
             "wall_ms": wall_ms, "max_deviation": dev}
            for d, calls, expected, wall_ms, dev in timing_rows
        ],
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "verify_report.json").write_text(json.dumps(report, indent=2) + "\n")
    ok = (
        max_dev_exact <= VERIFY_TOLERANCE
        and max_dev_recursive <= VERIFY_TOLERANCE
        and calls_ok
    )
    if not ok:
        print("verification FAILED", file=sys.stderr)
        return 3
    print("verification passed")
    return 0


def _add_experiment_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the YAML config document")
    sub.add_argument("--out", required=True, help="output directory for reports")
    sub.add_argument(
        "--parallelism", type=int, default=None,
        help=f"worker count (default: logical cores; env {WORKERS_ENV_VAR} overrides the default)",
    )
    sub.add_argument(
        "--seeds", default=None, metavar="A..B",
        help="override the config's inclusive seed range",
    )
    sub.add_argument(
        "--bounded", action="store_true",
        help="force the capped proposal regardless of the config",
    )
    sub.add_argument(
        "--timing", action="store_true",
        help="record real per-interval wall times (makes records.csv non-reproducible)",
    )
    sub.add_argument(
        "--no-figures", action="store_true",
        help="skip rendering the report figures (CSV outputs only)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentcp",
        description="Weighted conformal prediction under agent-induced feedback loops",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    design = subs.add_parser("design", help="run the design-loop experiment")
    _add_experiment_args(design)
    design.set_defaults(func=cmd_design)

    active = subs.add_parser("active-learning", help="run the active-learning experiment")
    _add_experiment_args(active)
    active.set_defaults(func=cmd_active_learning)

    verify = subs.add_parser(
        "verify-weights", help="cross-check weight computations on seeded instances"
    )
    verify.add_argument("--n", type=int, required=True, help="initial sample count")
    verify.add_argument("--t", type=int, required=True, help="feedback step count")
    verify.add_argument(
        "--depths", default=None, help="comma-separated depths to instrument (default 1..t)"
    )
    verify.add_argument("--trials", type=int, default=100)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", default=None, help="optional directory for verify_report.json")
    verify.set_defaults(func=cmd_verify_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except AgentcpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
