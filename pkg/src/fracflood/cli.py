"""Command line front end: simulation runs, type curves, synthetic
observations, history matching and conversion-timing sweeps.

Exit codes are a stable scripting contract: 0 success, 2 input error,
3 solver failure, 4 matcher failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .deck import DeckError, read_deck
from .histmatch import (
    MatchAbort,
    MatchConfig,
    MatchError,
    ObservationSet,
    decode,
    run_match,
    sample_observations,
)
from .params import RepresentativeParams
from .simulator import SolverFailure, run
from .welltest import DimensionlessParams, laplace_pwd, stehfest_invert, type_curve

SWEEP_METRICS = ("cumulative_oil", "final_water_cut", "avg_pressure")


def _default_jobs() -> int:
    return os.cpu_count() or 1


def _read_deck(path):
    try:
        return read_deck(path)
    except DeckError as exc:
        raise DeckError(f"{path}: {exc}") from None


def _write_run_artifacts(out_dir: str, result) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(result.series.to_csv())
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(result.summary, fh, indent=2)
        fh.write("\n")


def cmd_simulate(args) -> int:
    deck = _read_deck(args.deck)
    try:
        result = run(deck)
        code = 0
    except SolverFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        code = 3
    _write_run_artifacts(args.out, result)
    rows = len(result.series.rows)
    print(f"wrote {os.path.join(args.out, 'results.csv')} ({rows} rows)")
    return code


def cmd_welltest(args) -> int:
    params = DimensionlessParams.from_fractions(
        args.omega_f, args.lambda_ip, kf0=args.kf,
        cd=args.cd, skin=args.skin,
    )
    if args.points < 1:
        raise ValueError("points must be at least 1")
    if args.tmin <= 0.0:
        raise ValueError("tmin must be positive")
    if args.points > 1 and args.tmax <= args.tmin:
        raise ValueError("tmax must exceed tmin")

    if args.points == 1:
        t = args.tmin
        h = 1e-3

        def pwd(at):
            return stehfest_invert(lambda s: laplace_pwd(s, params), at)

        deriv = (pwd(t * math.exp(h)) - pwd(t * math.exp(-h))) / (2.0 * h)
        rows = np.array([[t, pwd(t), deriv]])
    else:
        t_d = np.logspace(math.log10(args.tmin), math.log10(args.tmax),
                          args.points)
        rows = type_curve(params, t_d)

    lines = ["t_D,p_wD,derivative"]
    for row in rows:
        lines.append(",".join("%.10g" % v for v in row))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def cmd_gen_obs(args) -> int:
    deck = _read_deck(args.deck)
    with open(args.truth) as fh:
        truth_doc = json.load(fh)
    theta = RepresentativeParams.from_dict(truth_doc)
    trial = decode(theta, deck)
    result = run(trial)
    rng = np.random.default_rng(args.seed)
    obs = sample_observations(result.series, deck, stride=args.stride,
                              noise=args.noise, rng=rng)
    obs.save(args.out)
    with open(os.path.join(args.out, "provenance.json"), "w") as fh:
        json.dump({
            "theta": theta.to_dict(),
            "seed": args.seed,
            "noise": args.noise,
            "stride": args.stride,
            "points": obs.n_points(),
        }, fh, indent=2)
        fh.write("\n")
    print(f"wrote {obs.n_points()} observation points to {args.out}")
    return 0


def _load_match_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise MatchError("match config must be a JSON object")
    allowed = {
        "bounds", "p_min", "p_max", "population", "seed", "sigma0",
        "initial", "max_evaluations", "target_alpha", "tolfun", "tolx",
        "stagnation_generations", "max_steps",
    }
    for key in doc:
        if key not in allowed:
            raise MatchError(f"unknown match config key {key!r}")
    if "initial" in doc:
        doc["initial"] = RepresentativeParams.from_dict(doc["initial"])
    if "bounds" in doc:
        doc["bounds"] = {k: tuple(v) for k, v in doc["bounds"].items()}
    return doc


def cmd_match(args) -> int:
    deck = _read_deck(args.deck)
    observations = ObservationSet.load(args.obs)
    fields = _load_match_config(args.config)
    if args.seed is not None:
        fields["seed"] = args.seed
    config = MatchConfig(jobs=args.jobs, out_dir=args.out, **fields)
    report = run_match(deck, observations, config)
    print(f"best alpha {report.alpha:.6g} after {report.evaluations} "
          f"evaluations ({report.generations} generations, {report.reason})")
    return 0


def _stage_index(deck, name: str) -> int:
    for i, stage in enumerate(deck.stages):
        if stage.name == name:
            return i
    raise ValueError(f"no stage named {name!r} in the schedule")


def _sweep_case(deck, stage_idx: int, duration: float, metric: str):
    stages = list(deck.stages)
    stages[stage_idx] = replace(stages[stage_idx], duration=duration)
    trial = replace(deck, stages=tuple(stages))
    result = run(trial)
    series = result.series
    times = series.times()

    if metric == "cumulative_oil":
        value = result.summary["cumulative_m3"]["oil_produced"]
    elif metric == "avg_pressure":
        value = float(series.column("field_avg_p_MPa")[-1])
    else:
        producers = [w.name for w in deck.wells if w.kind == "producer"]
        lpr = sum(float(series.column(n + "_lpr_m3d")[-1]) for n in producers)
        wpr = sum(float(series.column(n + "_wpr_m3d")[-1]) for n in producers)
        value = wpr / lpr if lpr > 0.0 else 0.0

    stage_end = sum(st.duration for st in stages[:stage_idx + 1])
    idx = int(np.argmin(np.abs(times - stage_end)))
    if abs(times[idx] - stage_end) > 1e-6:
        raise ValueError(f"no report row at stage end t={stage_end:g}")
    p_coeff = float(series.column("field_p_coeff")[idx])
    return value, p_coeff


def cmd_sweep(args) -> int:
    deck = _read_deck(args.deck)
    if args.metric not in SWEEP_METRICS:
        raise ValueError(f"unknown metric {args.metric!r}; choose from "
                         f"{', '.join(SWEEP_METRICS)}")
    stage_idx = _stage_index(deck, args.stage)
    durations = [float(x) for x in args.durations.split(",") if x.strip()]
    if not durations:
        raise ValueError("durations list is empty")
    for d in durations:
        if d < 0.0:
            raise ValueError("durations must be non-negative")

    lines = [f"duration_days,{args.metric},field_p_coeff_stage_end"]
    code = 0
    for duration in durations:
        try:
            value, p_coeff = _sweep_case(deck, stage_idx, duration,
                                         args.metric)
        except SolverFailure as exc:
            print(f"error: duration {duration:g}: {exc}", file=sys.stderr)
            code = 3
            break
        lines.append("%.10g,%.10g,%.10g" % (duration, value, p_coeff))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({len(lines) - 1} rows)")
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracflood",
        description="dual-porosity fracturing-flooding simulator and "
                    "history matcher",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one deck")
    p.add_argument("--deck", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("welltest", help="dual-media type curve")
    p.add_argument("--omega-f", type=float, required=True, dest="omega_f")
    p.add_argument("--lambda", type=float, required=True, dest="lambda_ip")
    p.add_argument("--kf", type=float, default=1.0)
    p.add_argument("--cd", type=float, default=0.0)
    p.add_argument("--skin", type=float, default=0.0)
    p.add_argument("--tmin", type=float, default=1e-2)
    p.add_argument("--tmax", type=float, default=1e7)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", required=True, help="output CSV file")
    p.set_defaults(func=cmd_welltest)

    p = sub.add_parser("gen-obs", help="synthetic observations from a "
                                       "truth parameter set")
    p.add_argument("--deck", required=True)
    p.add_argument("--truth", required=True,
                   help="JSON file with the truth parameters")
    p.add_argument("--noise", type=float, default=0.0,
                   help="relative gaussian noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=1,
                   help="sample every n-th report row")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_obs)

    p = sub.add_parser("match", help="history match a deck to observations")
    p.add_argument("--deck", required=True)
    p.add_argument("--obs", required=True, help="observation directory")
    p.add_argument("--config", default=None, help="matcher config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", help="rerun one stage over a list of "
                                     "durations")
    p.add_argument("--deck", required=True)
    p.add_argument("--stage", required=True)
    p.add_argument("--durations", required=True,
                   help="comma separated list of days")
    p.add_argument("--metric", required=True,
                   help=f"one of {', '.join(SWEEP_METRICS)}")
    p.add_argument("--out", required=True, help="output CSV file")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return 3
    except MatchAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
