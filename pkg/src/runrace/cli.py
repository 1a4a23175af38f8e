"""Command line entry point: ``runrace <subcommand> ...``.

Exit status is 0 on success.  Failures print one JSON object
``{"error": <class>, "message": ...}`` on stderr and exit 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .advisory import serve
from .criteria import CRITERIA, HaltPolicy, select_k
from .errors import DomainError, NotFoundError, RunRaceError
from .formats import ReportDocument, TraceSet, emit_report, emit_trace, load_traces, save_traces
from .inference import InferenceConfig, derive_seed, fit_curve
from .race import CurveFitter, RaceConfig, gen_synthetic, run_race, sweep

DEFAULT_DELTAS = "0.01,0.05,0.1,0.3,0.5"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "usage-error", "message": message}) + "\n")
        raise SystemExit(2)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def _policy_flags(p, criterion=True):
    if criterion:
        p.add_argument("--criterion", choices=CRITERIA, default="f")
        p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--guards", action="store_true", help="never halt the current best; screen predictions")
    p.add_argument("--seed", type=int, default=0, help="master seed for the samplers")
    p.add_argument("--min-epochs", type=int, default=5, help="warm-up epochs before any prediction")
    p.add_argument("--horizon", type=int, help="budget T (default: manifest, else trace length)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="runrace", description="Early stopping for parallel run races.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="replay a trace file under one halting policy")
    p.add_argument("traces")
    _policy_flags(p)
    p.add_argument("--format", choices=("machine", "table"), default="machine")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="replay a trace file over criteria x delta")
    p.add_argument("traces")
    p.add_argument("--criteria", default="a,f")
    p.add_argument("--deltas", type=_floats, default=_floats(DEFAULT_DELTAS))
    p.add_argument("--testbed", default=None, help="row label (default: trace file stem)")
    _policy_flags(p, criterion=False)
    p.add_argument("--out", help="report document path; plot series go to <stem>.series.json")

    p = sub.add_parser("ktable", help="print select_k over an (n, delta) grid")
    p.add_argument("--n", type=_ints, default=_ints("1,2,5,10,20,50,100,250"))
    p.add_argument("--deltas", type=_floats, default=_floats(DEFAULT_DELTAS))
    p.add_argument("--out")

    p = sub.add_parser("synth", help="write a seeded synthetic trace corpus")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--gap", type=float, default=0.05, help="minimum asymptote gap; 0 draws freely")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="trace path (manifest written beside it); stdout if omitted")

    p = sub.add_parser("serve", help="advisory mode: JSON lines on stdin/stdout")
    _policy_flags(p)

    p = sub.add_parser("fit", help="posterior prediction for one run")
    p.add_argument("traces")
    p.add_argument("--run", required=True)
    p.add_argument("--epochs", type=int, help="use only the first N epochs")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.add_argument("--samples", action="store_true", help="include the predictive draws")
    p.add_argument("--out")
    return ap


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _race_config(args, horizon: int, criterion="f", delta=0.5) -> RaceConfig:
    policy = HaltPolicy(criterion, delta, args.guards, args.min_epochs)
    inference = InferenceConfig(min_observations=min(5, args.min_epochs))
    return RaceConfig(horizon, policy, inference, args.seed)


def _load(args) -> tuple[TraceSet, int]:
    ts = load_traces(args.traces)
    T = args.horizon or ts.horizon()
    return ts, T


def cmd_simulate(args) -> None:
    ts, T = _load(args)
    rep = run_race(ts.traces, _race_config(args, T, args.criterion, args.delta))
    _write(emit_report(rep, args.format), args.out)


def cmd_sweep(args) -> None:
    ts, T = _load(args)
    criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
    for c in criteria:
        if c not in CRITERIA:
            raise DomainError(f"unknown criterion {c!r}")
    cfg = _race_config(args, T)
    fitter = CurveFitter(cfg.inference, cfg.master_seed, T)
    result = sweep(ts.traces, criteria, args.deltas, cfg, fitter)
    name = args.testbed or Path(args.traces).stem
    doc = ReportDocument({name: tuple(result.reports.values())},
                         {"traces": str(args.traces), "criteria": criteria, "deltas": args.deltas,
                          "guards": args.guards, "seed": args.seed, "min_epochs": args.min_epochs,
                          "horizon_T": T})
    sys.stdout.write(emit_report(doc, "table"))
    if args.out:
        Path(args.out).write_text(emit_report(doc, "machine"))
        series = Path(args.out).with_name(Path(args.out).stem + ".series.json")
        series.write_text(json.dumps(result.series(), indent=2, sort_keys=True) + "\n")


def cmd_ktable(args) -> None:
    for d in args.deltas:
        if not 0 < d < 1:
            raise DomainError(f"delta must lie in (0, 1), got {d}")
    head = ["n"] + [format(d, "g") for d in args.deltas]
    rows = [[str(n)] + [str(select_k(n, d)) for d in args.deltas] for n in args.n]
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head, *rows]]
    _write("\n".join(lines) + "\n", args.out)


def cmd_synth(args) -> None:
    corpus = gen_synthetic(args.runs, args.horizon, noise_sigma=args.noise, seed=args.seed,
                           asymptote_gap=args.gap or None)
    configs = {r: {"family": corpus.families[r], "asymptote": corpus.asymptotes[r],
                   "params": [float(x) for x in corpus.params[r]]} for r in corpus.traces}
    ts = TraceSet(corpus.traces, args.horizon, configs)
    if args.out:
        save_traces(ts, args.out)
    else:
        sys.stdout.write(emit_trace(ts))


def cmd_serve(args) -> None:
    if args.horizon is None:
        raise DomainError("serve needs --horizon")
    serve(_race_config(args, args.horizon, args.criterion, args.delta))


def cmd_fit(args) -> None:
    ts, T = _load(args)
    if args.run not in ts.traces:
        raise NotFoundError(f"unknown run {args.run!r}")
    values = ts.traces[args.run]
    if args.epochs is not None:
        values = values[: args.epochs]
    cfg = InferenceConfig(seed=derive_seed(args.seed, args.run, values.size), quantile_delta=args.delta)
    fit = fit_curve(values, T, cfg, args.run)
    pred = fit.prediction(args.delta, screen=True)
    doc = {
        "run_id": args.run,
        "epochs_observed": int(values.size),
        "horizon_T": T,
        "delta": args.delta,
        "point_estimate": pred.point_estimate,
        "conservative_estimate": pred.conservative_estimate,
        "quantiles": {q: float(np.quantile(pred.samples, float(q))) for q in ("0.05", "0.5", "0.95")},
        "validity": pred.reason,
        "n_samples": int(pred.samples.size),
        "fitted_mean": [float(x) for x in fit.fitted_mean],
    }
    if args.samples:
        doc["samples"] = [float(x) for x in pred.samples]
    _write(json.dumps(doc, indent=2) + "\n", args.out)


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "ktable": cmd_ktable,
            "synth": cmd_synth, "serve": cmd_serve, "fit": cmd_fit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except RunRaceError as exc:
        sys.stderr.write(json.dumps({"error": exc.code, "message": str(exc)}) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io-error", "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
