"""Command-line front end.

Subcommands
-----------
trace            integrate one trajectory and dump (t, x, y, z, rho,
                 lambda1, rate) samples
lyapunov         run the doubling-horizon classification for one start point
qle              ensemble estimate of the density-weighted leading exponent,
                 with periodic checkpointing and automatic resume
validate         run one named consistency experiment
sensitivity-map  project classified start points in a slab onto a plane

Every data product is CSV or JSON with a documented column order, and each
gets a companion PNG figure unless --no-plots is passed.  Exit codes: 0
success/pass, 1 usage error, 2 trajectory failure or failed check, 3
undecided at the horizon cap, 4 invalid ensemble report.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .flow import local_rates
from .lyapunov import VerdictKind, estimate_lambda1
from .qle import (
    classification_map,
    estimate_qle,
    records_from_csv,
    records_to_csv,
)
from .validate import (
    density_relation_check,
    exponent_robustness_histogram,
    measure_invariance_check,
    sum_rule_check,
    wavefunction_sensitivity,
)
from .wavepacket import NodeProximity, WavepacketFlow

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
EXIT_UNDECIDED = 3
EXIT_INVALID = 4

_VALIDATE_CHECKS = (
    "density_relation",
    "sum_rule",
    "measure_invariance",
    "robustness",
    "sensitivity",
)


def _parse_r0(text: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError('expected three numbers, e.g. "1,0.5,2"')
    return np.array([float(p) for p in parts])


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=None, help="worker threads")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qflow",
        description="Trajectory flows of hydrogen wave packets and their chaos measures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_trace = sub.add_parser("trace", help="dump one trajectory")
    _add_common(p_trace)
    p_trace.add_argument("--r0", type=_parse_r0, required=True)
    p_trace.add_argument("--t-max", type=float, required=True)
    p_trace.add_argument("--dt", type=float, default=1.0, help="output stride (a.u.)")

    p_ly = sub.add_parser("lyapunov", help="classify one trajectory")
    _add_common(p_ly)
    p_ly.add_argument("--r0", type=_parse_r0, required=True)

    p_qle = sub.add_parser("qle", help="ensemble exponent estimate")
    _add_common(p_qle)
    p_qle.add_argument("--samples", type=int, default=None, help="override sample count")

    p_val = sub.add_parser("validate", help="run a consistency experiment")
    _add_common(p_val)
    p_val.add_argument("check", choices=_VALIDATE_CHECKS)
    p_val.add_argument("--r0", type=_parse_r0, default=None)
    p_val.add_argument("--t-max", type=float, default=None)

    p_map = sub.add_parser("sensitivity-map", help="chaos-class map of start points")
    _add_common(p_map)
    p_map.add_argument(
        "--records", type=Path, default=None, help="records.csv from a qle run"
    )
    p_map.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p_map.add_argument("--lo", type=float, default=-0.5)
    p_map.add_argument("--hi", type=float, default=0.5)
    return parser


def _load(args) -> config_mod.RunConfig:
    cfg = (
        config_mod.load_config(args.config)
        if args.config is not None
        else config_mod.default_config()
    )
    samples = getattr(args, "samples", None)
    return config_mod.with_overrides(
        cfg,
        seed=args.seed,
        jobs=args.jobs,
        out_dir=str(args.out) if args.out is not None else None,
        samples=samples,
    )


def _outdir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_trace(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    provider = WavepacketFlow(cfg.to_spec())
    k_max = int(round(args.t_max / args.dt))
    try:
        series = local_rates(provider, args.r0, args.dt, k_max, cfg.integrator)
    except (NodeProximity, Exception) as exc:
        if isinstance(exc, (NodeProximity,)) or "underflow" in str(exc):
            print(f"trajectory failed: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        raise
    rows = [
        (
            repr(series.times[k]),
            repr(series.positions[k, 0]),
            repr(series.positions[k, 1]),
            repr(series.positions[k, 2]),
            repr(series.densities[k]),
            repr(series.running_mean[k]),
            repr(series.rates[k]),
        )
        for k in range(k_max)
    ]
    path = out / "trace.csv"
    _write_csv(path, ("t", "x", "y", "z", "rho", "lambda1", "rate"), rows)
    print(f"wrote {path}")
    if not args.no_plots:
        from . import plots

        fig = plots.plot_trace(
            series.times,
            series.positions,
            series.densities,
            series.running_mean,
            series.rates,
            out / "trace.png",
        )
        print(f"wrote {fig}")
    return EXIT_OK


def _write_series(out: Path, series) -> Path:
    rows = [
        (
            repr(series.times[k]),
            repr(series.lambdas[k, 0]),
            repr(series.lambdas[k, 1]),
            repr(series.lambdas[k, 2]),
            repr(float(series.lambdas[k].sum())),
        )
        for k in range(series.times.size)
    ]
    path = out / "exponents.csv"
    _write_csv(path, ("t", "lambda1", "lambda2", "lambda3", "sum"), rows)
    return path


def _cmd_lyapunov(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    provider = WavepacketFlow(cfg.to_spec())
    try:
        verdict, series = estimate_lambda1(
            provider, args.r0, cfg.lyapunov, cfg.integrator
        )
    except Exception as exc:
        print(f"trajectory failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    path = _write_series(out, series)
    print(f"wrote {path}")
    vpath = out / "verdict.json"
    with open(vpath, "w") as fh:
        json.dump(
            {
                "kind": verdict.kind.value,
                "lambda1": verdict.lambda1_estimate,
                "fit_rmse": verdict.fit_rmse,
                "window": list(verdict.window),
                "config_digest": config_mod.config_digest(cfg),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {vpath}")
    if not args.no_plots:
        from . import plots

        fig = plots.plot_convergence(
            series.times,
            series.lambda1(),
            verdict.window,
            verdict.kind.value,
            out / "convergence.png",
        )
        print(f"wrote {fig}")
    print(f"verdict: {verdict.kind.value} lambda1={verdict.lambda1_estimate}")
    return EXIT_UNDECIDED if verdict.kind == VerdictKind.UNDECIDED else EXIT_OK


def _cmd_qle(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    digest = config_mod.config_digest(cfg)
    meta_path = out / "qle_meta.json"
    partial_path = out / "records_partial.csv"
    records_path = out / "records.csv"

    existing = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("config_digest") == digest:
            source = records_path if records_path.exists() else partial_path
            if source.exists():
                existing = records_from_csv(source)
                existing = {i: r for i, r in existing.items() if i < cfg.samples}
                print(f"resuming from {source} with {len(existing)} records")
        else:
            print("checkpoint digest mismatch; starting fresh")
    with open(meta_path, "w") as fh:
        json.dump({"config_digest": digest, "samples": cfg.samples}, fh, sort_keys=True)
        fh.write("\n")

    done = dict(existing)
    since_flush = 0

    def on_record(rec):
        nonlocal since_flush
        done[rec.index] = rec
        since_flush += 1
        if since_flush >= cfg.checkpoint_every:
            records_to_csv([done[i] for i in sorted(done)], partial_path)
            since_flush = 0

    report = estimate_qle(
        cfg.to_spec(),
        cfg.to_region(),
        cfg.samples,
        lyap_cfg=cfg.lyapunov,
        flow_cfg=cfg.integrator,
        rng_seed=cfg.seed,
        parallelism=cfg.jobs,
        existing=existing,
        on_record=on_record,
    )
    records_to_csv(report.records, records_path)
    partial_path.unlink(missing_ok=True)
    print(f"wrote {records_path}")
    report_path = out / "report.json"
    with open(report_path, "w") as fh:
        fh.write(report.to_json())
    print(f"wrote {report_path}")

    rows = classification_map(report.records)
    map_path = out / "classification_map.csv"
    _write_csv(
        map_path,
        ("y", "z", "region_class"),
        [(repr(a), repr(b), c) for a, b, c in rows],
    )
    print(f"wrote {map_path}")
    if not args.no_plots:
        from . import plots

        fig = plots.plot_classification_map(rows, ("y", "z"), out / "classification_map.png")
        print(f"wrote {fig}")
    print(
        f"lambda1_mean={report.lambda1_mean:.6g} +/- {report.std_error:.2g} "
        f"(n={report.n_included}/{report.n_samples}, classes={report.class_counts})"
    )
    return EXIT_INVALID if report.invalid else EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    spec = cfg.to_spec()
    r0 = args.r0 if args.r0 is not None else np.array([3.0, -2.0, 1.0])
    from . import plots

    if args.check == "density_relation":
        t_max = args.t_max or 500.0
        outcome = density_relation_check(spec, r0, t_max, cfg.integrator)
        _write_csv(
            out / "density_relation.csv",
            ("t", "rho_direct", "rho_reconstructed", "rel_error"),
            zip(
                map(repr, outcome.series["t"]),
                map(repr, outcome.series["rho_direct"]),
                map(repr, outcome.series["rho_reconstructed"]),
                map(repr, outcome.series["rel_error"]),
            ),
        )
        if not args.no_plots:
            plots.plot_density_check(
                outcome.series["t"],
                outcome.series["rho_direct"],
                outcome.series["rho_reconstructed"],
                out / "density_relation.png",
            )
    elif args.check == "sum_rule":
        t_max = args.t_max or 10000.0
        outcome = sum_rule_check(spec, r0, t_max, cfg.integrator)
        _write_csv(
            out / "sum_rule.csv",
            ("t", "lambda1", "lambda2", "lambda3", "sum"),
            zip(
                map(repr, outcome.series["t"]),
                map(repr, outcome.series["lambda1"]),
                map(repr, outcome.series["lambda2"]),
                map(repr, outcome.series["lambda3"]),
                map(repr, outcome.series["sum"]),
            ),
        )
        if not args.no_plots:
            lambdas = np.stack(
                [
                    outcome.series["lambda1"],
                    outcome.series["lambda2"],
                    outcome.series["lambda3"],
                ],
                axis=1,
            )
            plots.plot_exponent_series(outcome.series["t"], lambdas, out / "sum_rule.png")
    elif args.check == "measure_invariance":
        t_max = args.t_max or 10.0
        outcome = measure_invariance_check(
            spec, cfg.to_region(), 20000, t_max, seed=cfg.seed
        )
    elif args.check == "robustness":
        outcome = exponent_robustness_histogram(
            spec,
            r0,
            n_repeats=100,
            lyap_cfg=cfg.lyapunov,
            flow_cfg=cfg.integrator,
            seed=cfg.seed,
            parallelism=cfg.jobs,
        )
        values = outcome.series["lambda1"]
        _write_csv(out / "robustness.csv", ("lambda1",), [(repr(v),) for v in values])
        if not args.no_plots:
            plots.plot_histogram(
                values,
                out / "robustness.png",
                mean=outcome.details["mean"],
                sigma=outcome.details["sigma"],
            )
    elif args.check == "sensitivity":
        t_max = args.t_max or 400.0
        outcome = wavefunction_sensitivity(
            spec, 1e-4, r0, t_max, flow_cfg=cfg.integrator, lyap_cfg=cfg.lyapunov
        )
        _write_csv(
            out / "sensitivity.csv",
            ("t", "separation"),
            zip(map(repr, outcome.series["t"]), map(repr, outcome.series["separation"])),
        )
        if not args.no_plots:
            plots.plot_separation(
                outcome.series["t"],
                outcome.series["separation"],
                out / "sensitivity.png",
                window=outcome.details.get("window"),
            )
    else:  # pragma: no cover - argparse restricts choices
        return EXIT_USAGE

    opath = out / f"{args.check}_outcome.json"
    with open(opath, "w") as fh:
        json.dump(
            {
                "name": outcome.name,
                "statistic": outcome.statistic,
                "tolerance": outcome.tolerance,
                "passed": outcome.passed,
                "details": {
                    k: v for k, v in outcome.details.items() if not isinstance(v, np.ndarray)
                },
                "config_digest": config_mod.config_digest(cfg),
            },
            fh,
            indent=2,
            sort_keys=True,
            default=float,
        )
        fh.write("\n")
    print(f"wrote {opath}")
    print(
        f"{outcome.name}: statistic={outcome.statistic:.4g} "
        f"tolerance={outcome.tolerance:.4g} passed={outcome.passed}"
    )
    return EXIT_OK if outcome.passed else EXIT_FAILURE


def _cmd_sensitivity_map(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    records_path = args.records or (Path(cfg.out_dir) / "records.csv")
    if not Path(records_path).exists():
        print(f"no records at {records_path}; run `qflow qle` first", file=sys.stderr)
        return EXIT_USAGE
    records = records_from_csv(records_path)
    rows = classification_map(
        [records[i] for i in sorted(records)], axis=args.axis, lo=args.lo, hi=args.hi
    )
    labels = [ax for ax in "xyz" if ax != args.axis]
    map_path = out / "sensitivity_map.csv"
    _write_csv(
        map_path,
        (labels[0], labels[1], "region_class"),
        [(repr(a), repr(b), c) for a, b, c in rows],
    )
    print(f"wrote {map_path}")
    if not args.no_plots:
        from . import plots

        fig = plots.plot_classification_map(rows, labels, out / "sensitivity_map.png")
        print(f"wrote {fig}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "trace": _cmd_trace,
        "lyapunov": _cmd_lyapunov,
        "qle": _cmd_qle,
        "validate": _cmd_validate,
        "sensitivity-map": _cmd_sensitivity_map,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
