"""Command-line entry point.

Every command is deterministic given ``--seed``. Exit codes: 0 success,
2 validation error, 3 numerical failure. ``TRAFFICDBN_THREADS`` sets the
number of worker threads used for the per-day E-step.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .cpd import CPD_KINDS, init_params
from .em import RING3_SEED, EmReport, likelihood_check, run_em
from .generator import (
    PATTERNS,
    GeneratorError,
    build_benchmark,
    build_ring3,
    read_dataset,
    write_dataset,
)
from .oracle import OracleCapError, exact_forward
from .params import dump_theta, load_theta
from .particle_filter import filter_day
from .predictor import RouteQuery, predict_route
from .rng import STREAM_FILTER, STREAM_INIT, STREAM_PREDICT, substream

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("trafficdbn")


class NumericalFailure(RuntimeError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_params(path: str, net):
    return load_theta(Path(path).read_text(), net)


def cmd_generate(args) -> int:
    if args.fixture == "ring3":
        net, theta, data = build_ring3(args.seed, n_days=args.days, n_epochs=args.steps)
    else:
        net, theta, data = build_benchmark(args.pattern, args.seed, args.days, args.steps, args.delta)
    write_dataset(args.out, net, theta, data)
    print(f"wrote {data.n_days} days x {data.n_epochs} epochs on {net.n_links} links to {args.out}")
    return EXIT_OK


def _format_report(report: EmReport) -> str:
    lines = ["iteration max_delta particle_loglik exact_loglik retained"]
    if report.initial_exact_loglik is not None:
        lines.append(f"0 nan nan {report.initial_exact_loglik:.6f} 0")
    for it in report.iterations:
        exact = "nan" if it.exact_loglik is None else f"{it.exact_loglik:.6f}"
        lines.append(f"{it.iteration} {it.max_delta:.6g} {it.particle_loglik:.6f} {exact} {it.retained}")
    return "\n".join(lines) + "\n"


def cmd_learn(args) -> int:
    net, truth, data = read_dataset(args.traces)
    if truth is None and args.init is None:
        raise ValueError("need params.txt in the trace directory or --init for observation parameters")
    if args.days:
        data = data.subset(args.days)
    if args.init:
        init = _load_params(args.init, net)
        if init.kind != args.cpd:
            raise ValueError(f"--init holds {init.kind} parameters but --cpd is {args.cpd}")
    else:
        init = truth.with_cpd(init_params(args.cpd, net, substream(args.seed, STREAM_INIT)))
    theta, report = run_em(
        data, net, init, args.particles, args.iters, args.seed, tol=args.tol, exact_monitor=args.exact_monitor
    )
    Path(args.out).write_text(dump_theta(theta))
    if args.report:
        Path(args.report).write_text(_format_report(report))
    print(f"wrote {args.cpd} parameters after {len(report.iterations)} iterations to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    net, _, data = read_dataset(args.traces)
    theta = _load_params(args.params, net)
    if not 0 <= args.day < data.n_days:
        raise ValueError(f"day {args.day} not in data (0..{data.n_days - 1})")
    if not 0 <= args.upto_epoch <= data.n_epochs:
        raise ValueError(f"epoch {args.upto_epoch} beyond data ({data.n_epochs} epochs)")
    net.check_path(args.route)
    query = RouteQuery(tuple(args.route), args.alpha_s, args.upto_epoch)
    day = data.days[args.day][: args.upto_epoch]
    filt = filter_day(day, theta, net, args.particles, substream(args.seed, STREAM_FILTER, 0, args.day))
    pred = predict_route(query, theta, net, filt.particles, substream(args.seed, STREAM_PREDICT, 0), keep_trace=args.trace)
    if not np.isfinite(pred.mtt):
        raise NumericalFailure("prediction is not finite")
    print(f"{pred.mtt:.6f} {pred.segments}")
    if args.trace:
        for st in pred.trace:
            print(f"# mtt={st.mtt:.6f} fut_step={st.fut_step} cur_st={st.cur_st:.6f} suffix={','.join(map(str, st.suffix))}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    net, _, data = read_dataset(args.traces)
    test_days = args.test_days if args.test_days else list(range(max(0, data.n_days - 2), data.n_days))
    test = data.subset(test_days)
    models = {"noisyor": _load_params(args.noisyor, net), "satpat": _load_params(args.satpat, net)}
    trips = evaluation.trips_for_horizons(test, args.horizons, args.seed, args.max_trips)
    report = evaluation.compare_models(models, net, test, trips, args.particles, args.seed)
    report.header = f"test days {','.join(map(str, test_days))}; particles {args.particles}; seed {args.seed}"
    report.write(args.out)
    sys.stdout.write(report.table())
    sys.stdout.write(report.worst_block())
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.check_likelihood:
        check = likelihood_check(seed=args.seed, iters=args.iters, n_particles=args.particles, slack=args.slack)
        for k, ll in enumerate(check.logliks):
            print(f"{k} {ll:.6f}")
        print(
            f"# non-decreasing within {check.slack}: {check.n_ok}/{check.increments.size}; "
            f"true {check.true_loglik:.6f}; final gap {check.final_gap:.4f}"
        )
        if not check.passed:
            raise NumericalFailure("exact log-likelihood check failed")
        return EXIT_OK
    if not (args.traces and args.params):
        raise ValueError("oracle needs --check-likelihood or both --traces and --params")
    net, _, data = read_dataset(args.traces)
    theta = _load_params(args.params, net)
    days = [args.day] if args.day is not None else range(data.n_days)
    total = 0.0
    for d in days:
        res = exact_forward(theta, net, data.days[d])
        total += res.loglik
        print(f"day {d} loglik {res.loglik:.6f}")
    print(f"total {total:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficdbn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace directory")
    g.add_argument("--pattern", choices=PATTERNS, default="short")
    g.add_argument("--fixture", choices=("grid20", "ring3"), default="grid20")
    g.add_argument("--days", type=int, default=8)
    g.add_argument("--steps", type=int, default=60)
    g.add_argument("--delta", type=float, default=300.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    lrn = sub.add_parser("learn", help="fit transition parameters by particle-filter EM")
    lrn.add_argument("--cpd", choices=CPD_KINDS, required=True)
    lrn.add_argument("--traces", required=True)
    lrn.add_argument("--particles", type=int, default=2000)
    lrn.add_argument("--iters", type=int, default=20)
    lrn.add_argument("--tol", type=float, default=1e-4)
    lrn.add_argument("--seed", type=int, default=0)
    lrn.add_argument("--days", type=_int_list, default=None, help="training day indices (default: all)")
    lrn.add_argument("--init", default=None, help="starting parameter file")
    lrn.add_argument("--exact-monitor", action="store_true")
    lrn.add_argument("--report", default=None)
    lrn.add_argument("--out", required=True)
    lrn.set_defaults(func=cmd_learn)

    pr = sub.add_parser("predict", help="mean travel time of a route")
    pr.add_argument("--params", required=True)
    pr.add_argument("--traces", required=True)
    pr.add_argument("--day", type=int, default=0)
    pr.add_argument("--upto-epoch", type=int, default=0)
    pr.add_argument("--route", type=_int_list, required=True)
    pr.add_argument("--alpha-s", type=float, default=1.0)
    pr.add_argument("--particles", type=int, default=2000)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--trace", action="store_true", help="print per-segment state")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="compare two learned models on held-out days")
    ev.add_argument("--traces", required=True)
    ev.add_argument("--noisyor", required=True)
    ev.add_argument("--satpat", required=True)
    ev.add_argument("--test-days", type=_int_list, default=None)
    ev.add_argument("--horizons", type=_int_list, default=list(evaluation.DEFAULT_HORIZONS), help="in epochs")
    ev.add_argument("--max-trips", type=int, default=None)
    ev.add_argument("--particles", type=int, default=2000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    orc = sub.add_parser("oracle", help="exact likelihoods on small networks")
    orc.add_argument("--check-likelihood", action="store_true")
    orc.add_argument("--traces")
    orc.add_argument("--params")
    orc.add_argument("--day", type=int, default=None)
    orc.add_argument("--iters", type=int, default=20)
    orc.add_argument("--particles", type=int, default=2000)
    orc.add_argument("--slack", type=float, default=1e-2)
    orc.add_argument("--seed", type=int, default=RING3_SEED)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (NumericalFailure, GeneratorError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OracleCapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
