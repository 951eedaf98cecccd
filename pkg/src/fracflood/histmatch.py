"""Observation handling, deviation objectives and the matching loop.

The matcher drives the reservoir simulator through CMA-ES in a
normalized search space: each representative rock parameter is mapped
linearly onto [0, 1] by its bounds, a candidate decodes into a modified
deck, and the objective is the mean of the per-series L1 deviations
between simulated and observed data, each divided by the observed
series mean so the terms are dimensionless.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cmaes import CmaesConfig, minimize
from .deck import Deck, DeckError
from .params import PARAM_BOUNDS, PARAM_NAMES, RepresentativeParams
from .simulator import SolverFailure, TimeSeries, run, series_columns

# series kinds: well pressure, water injection rate, water cut and the
# two principal fracture extents
SERIES_KINDS = ("bhp", "wir", "wct", "dx", "dy")

_COLUMN_SUFFIX = {
    "bhp": "_bhp_MPa",
    "wir": "_wir_m3d",
    "wct": "_wct",
    "dx": "_dx_m",
    "dy": "_dy_m",
}

_OBS_FILES = {"bhp": "obs_bhp.csv", "wir": "obs_wir.csv", "wct": "obs_wct.csv"}
_FRAC_FILE = "obs_frac.csv"

MEAN_FLOOR = 1e-9
PENALTY_FLOOR = 1e3
SIMPLIFIED_DIMENSION = len(PARAM_NAMES)

_TIME_EPS = 1e-9


class MatchError(ValueError):
    """Invalid observations or matcher configuration."""


class MatchAbort(RuntimeError):
    """The matching loop cannot proceed (no candidate simulates)."""


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class ObservedSeries:
    """One well's observed (time, value) samples for a single quantity."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise MatchError("observed series needs matching non-empty "
                             "time and value vectors")
        if np.any(np.diff(t) <= 0.0):
            raise MatchError("observation times must be strictly ascending")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise MatchError("observations must be finite")

    def __eq__(self, other):
        if not isinstance(other, ObservedSeries):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class ObservationSet:
    """Observed series grouped by kind, then by well name."""

    bhp: dict = field(default_factory=dict)
    wir: dict = field(default_factory=dict)
    wct: dict = field(default_factory=dict)
    dx: dict = field(default_factory=dict)
    dy: dict = field(default_factory=dict)

    def __post_init__(self):
        if not any(self.by_kind(k) for k in SERIES_KINDS):
            raise MatchError("observation set is empty")
        for kind in SERIES_KINDS:
            for well, series in self.by_kind(kind).items():
                if not isinstance(series, ObservedSeries):
                    raise MatchError(f"{kind} series for well {well!r} must "
                                     "be an ObservedSeries")
        for well, series in self.wct.items():
            if np.any(series.values < 0.0) or np.any(series.values > 1.0):
                raise MatchError(f"water cut for well {well!r} outside [0, 1]")

    def by_kind(self, kind: str) -> dict:
        if kind not in SERIES_KINDS:
            raise MatchError(f"unknown series kind {kind!r}")
        return getattr(self, kind)

    def means(self) -> dict:
        """Global mean observed value per series kind."""
        out = {}
        for kind in SERIES_KINDS:
            groups = self.by_kind(kind)
            if groups:
                allv = np.concatenate([s.values for s in groups.values()])
                out[kind] = float(np.mean(allv))
        return out

    def n_points(self) -> int:
        return sum(s.times.size
                   for kind in SERIES_KINDS
                   for s in self.by_kind(kind).values())

    def save(self, out_dir: str) -> None:
        """Write one CSV per kind (well,time_days,value) and a combined
        fracture-extent file (well,time_days,dx_m,dy_m)."""
        os.makedirs(out_dir, exist_ok=True)
        for kind, fname in _OBS_FILES.items():
            groups = self.by_kind(kind)
            if not groups:
                continue
            with open(os.path.join(out_dir, fname), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["well", "time_days", "value"])
                for well in sorted(groups):
                    s = groups[well]
                    for t, v in zip(s.times, s.values):
                        writer.writerow([well, _fmt(t), _fmt(v)])
        if self.dx or self.dy:
            if set(self.dx) != set(self.dy):
                raise MatchError("fracture extents need both dx and dy "
                                 "series per well")
            with open(os.path.join(out_dir, _FRAC_FILE), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["well", "time_days", "dx_m", "dy_m"])
                for well in sorted(self.dx):
                    sx, sy = self.dx[well], self.dy[well]
                    if not np.array_equal(sx.times, sy.times):
                        raise MatchError(f"fracture extent times differ for "
                                         f"well {well!r}")
                    for t, vx, vy in zip(sx.times, sx.values, sy.values):
                        writer.writerow([well, _fmt(t), _fmt(vx), _fmt(vy)])

    @classmethod
    def load(cls, obs_dir: str) -> "ObservationSet":
        """Read every observation CSV present in obs_dir."""
        if not os.path.isdir(obs_dir):
            raise MatchError(f"observation directory not found: {obs_dir}")
        kinds = {k: {} for k in SERIES_KINDS}
        for kind, fname in _OBS_FILES.items():
            path = os.path.join(obs_dir, fname)
            if os.path.exists(path):
                kinds[kind] = _read_value_csv(path)
        frac = os.path.join(obs_dir, _FRAC_FILE)
        if os.path.exists(frac):
            kinds["dx"], kinds["dy"] = _read_frac_csv(frac)
        return cls(**kinds)


def _read_rows(path: str, expected_header: list):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MatchError(f"{path}: empty file") from None
        if header != expected_header:
            raise MatchError(f"{path}: expected header "
                             f"{','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise MatchError(f"{path}: line {lineno}: expected "
                                 f"{len(expected_header)} fields")
            try:
                yield row[0], [float(x) for x in row[1:]]
            except ValueError:
                raise MatchError(f"{path}: line {lineno}: non-numeric "
                                 "value") from None


def _read_value_csv(path: str) -> dict:
    per_well = {}
    for well, nums in _read_rows(path, ["well", "time_days", "value"]):
        per_well.setdefault(well, []).append(nums)
    return {w: ObservedSeries([r[0] for r in rows], [r[1] for r in rows])
            for w, rows in per_well.items()}


def _read_frac_csv(path: str) -> tuple:
    per_well = {}
    for well, nums in _read_rows(path, ["well", "time_days", "dx_m", "dy_m"]):
        per_well.setdefault(well, []).append(nums)
    dx = {w: ObservedSeries([r[0] for r in rows], [r[1] for r in rows])
          for w, rows in per_well.items()}
    dy = {w: ObservedSeries([r[0] for r in rows], [r[2] for r in rows])
          for w, rows in per_well.items()}
    return dx, dy


# ------------------------------------------------------------ objectives


def series_deviation(sim_times, sim_values, observed: ObservedSeries,
                     well: str = "", kind: str = "") -> float:
    """Sum of |observed - simulated| with the simulated series linearly
    interpolated to the observation instants."""
    st = np.asarray(sim_times, dtype=float)
    sv = np.asarray(sim_values, dtype=float)
    if st.size == 0:
        raise MatchError("simulated series is empty")
    lo, hi = st[0] - _TIME_EPS, st[-1] + _TIME_EPS
    bad = (observed.times < lo) | (observed.times > hi)
    if np.any(bad):
        t = float(observed.times[np.argmax(bad)])
        raise MatchError(
            f"{kind or 'series'} observation for well {well!r} at "
            f"t={t:g} lies outside the simulated range "
            f"[{st[0]:g}, {st[-1]:g}]")
    interp = np.interp(observed.times, st, sv)
    return float(np.sum(np.abs(observed.values - interp)))


def total_objective(components: dict, means: dict) -> float:
    """Average of the per-kind deviations divided by the observed series
    means; a kind is dropped when absent or its mean is below 1e-9."""
    total = 0.0
    active = 0
    for kind in SERIES_KINDS:
        if kind not in components:
            continue
        mean = means.get(kind)
        if mean is None or mean < MEAN_FLOOR:
            continue
        total += components[kind] / mean
        active += 1
    if active == 0:
        raise MatchError("no active objective terms: every observed "
                         "series is absent or has a near-zero mean")
    return total / active


def variable_count_audit(n_points: int) -> int:
    """Optimization variable count of the unsimplified parameterization
    with n pressure points per table: 12 n + 1."""
    if n_points < 1:
        raise MatchError("need at least one characteristic pressure point")
    return 12 * n_points + 1


# --------------------------------------------------------------- decoding


def decode(theta: RepresentativeParams, deck: Deck,
           p_min: float = None, p_max: float = None) -> Deck:
    """Copy of the deck with the representative parameters installed;
    the table pressure span defaults to the deck's existing span."""
    span = deck.table_span()
    pn = span[0] if p_min is None else float(p_min)
    px = span[1] if p_max is None else float(p_max)
    theta.validate(pn, px)
    return replace(deck, representative=theta, rock_pair=None,
                   rep_p_min=pn, rep_p_max=px)


def validate_observations(deck: Deck, observations: ObservationSet) -> None:
    """Every observed series must map onto a simulated output column."""
    cols = set(series_columns(deck))
    for kind in SERIES_KINDS:
        for well in observations.by_kind(kind):
            try:
                deck.well_by_name(well)
            except DeckError:
                raise MatchError(
                    f"observations reference unknown well {well!r}") from None
            if well + _COLUMN_SUFFIX[kind] not in cols:
                raise MatchError(
                    f"no simulated {kind} series for well {well!r}")


def deviation_components(series: TimeSeries,
                         observations: ObservationSet) -> dict:
    """Per-kind deviation sums over all observed wells."""
    times = series.times()
    out = {}
    for kind in SERIES_KINDS:
        groups = observations.by_kind(kind)
        if not groups:
            continue
        total = 0.0
        for well, obs in groups.items():
            sim = series.column(well + _COLUMN_SUFFIX[kind])
            total += series_deviation(times, sim, obs, well=well, kind=kind)
        out[kind] = total
    return out


@dataclass(frozen=True)
class EvalResult:
    """Outcome of simulating one candidate against the observations."""

    ok: bool
    alpha: float
    components: dict
    failure: str = None
    series: TimeSeries = None


def evaluate(theta: RepresentativeParams, deck: Deck,
             observations: ObservationSet, p_min: float = None,
             p_max: float = None, keep_series: bool = False,
             max_steps: int = None) -> EvalResult:
    """Decode, simulate and score one candidate; simulator failures are
    reported through the ok flag instead of raising. max_steps caps the
    simulation work per candidate (exceeding it counts as a failure)."""
    validate_observations(deck, observations)
    try:
        trial = decode(theta, deck, p_min=p_min, p_max=p_max)
        result = run(trial, max_steps=max_steps)
    except (SolverFailure, ValueError) as exc:
        return EvalResult(False, math.inf, {}, failure=str(exc))
    components = deviation_components(result.series, observations)
    alpha = total_objective(components, observations.means())
    if not math.isfinite(alpha):
        return EvalResult(False, math.inf, {},
                          failure="objective evaluated non-finite")
    return EvalResult(True, alpha, components,
                      series=result.series if keep_series else None)


def _evaluate_task(payload) -> EvalResult:
    vec, deck, observations, p_min, p_max, max_steps = payload
    theta = RepresentativeParams.from_vector(vec)
    return evaluate(theta, deck, observations, p_min=p_min, p_max=p_max,
                    max_steps=max_steps)


# ------------------------------------------------------- synthetic twins


def sample_observations(series: TimeSeries, deck: Deck, stride: int = 1,
                        noise: float = 0.0, rng=None,
                        include_initial: bool = False) -> ObservationSet:
    """Turn simulated report rows into an observation set: pressure for
    every well, injection rate and fracture extents for injectors, water
    cut for producers. Relative Gaussian noise is applied per sample."""
    if stride < 1:
        raise MatchError("stride must be at least 1")
    times = series.times()
    start = 0 if include_initial else 1
    idx = np.arange(start, times.size, stride)
    if idx.size == 0:
        raise MatchError("no report rows to sample")
    if noise < 0.0:
        raise MatchError("noise level must be non-negative")
    if noise > 0.0 and rng is None:
        rng = np.random.default_rng(0)

    def sampled(col, clip01=False):
        v = np.asarray(series.column(col))[idx].copy()
        if noise > 0.0:
            v = v * (1.0 + noise * rng.standard_normal(v.size))
        if clip01:
            v = np.clip(v, 0.0, 1.0)
        return ObservedSeries(times[idx], v)

    kinds = {k: {} for k in SERIES_KINDS}
    for w in deck.wells:
        kinds["bhp"][w.name] = sampled(w.name + "_bhp_MPa")
        if w.kind == "injector":
            kinds["wir"][w.name] = sampled(w.name + "_wir_m3d")
            kinds["dx"][w.name] = sampled(w.name + "_dx_m")
            kinds["dy"][w.name] = sampled(w.name + "_dy_m")
        else:
            kinds["wct"][w.name] = sampled(w.name + "_wct", clip01=True)
    return ObservationSet(**kinds)


# ----------------------------------------------------------- match loop


@dataclass
class MatchConfig:
    """Matcher settings; unset optimizer fields fall back to the CMA-ES
    defaults for an 11-dimensional normalized box."""

    bounds: dict = None
    p_min: float = None
    p_max: float = None
    population: int = None
    seed: int = 0
    sigma0: float = None
    initial: RepresentativeParams = None
    max_evaluations: int = 3000
    target_alpha: float = None
    tolfun: float = None
    tolx: float = None
    stagnation_generations: int = None
    max_steps: int = None
    jobs: int = 1
    out_dir: str = None


@dataclass(frozen=True)
class GenerationRow:
    generation: int
    evaluations: int
    best_alpha: float
    mean_fitness: float
    best_overall: float


@dataclass
class MatchReport:
    best: RepresentativeParams
    alpha: float
    components: dict
    evaluations: int
    generations: int
    reason: str
    trace: list
    series: TimeSeries
    p_min: float
    p_max: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "alpha": self.alpha,
            "components": dict(self.components),
            "evaluations": self.evaluations,
            "generations": self.generations,
            "reason": self.reason,
            "p_min": self.p_min,
            "p_max": self.p_max,
            "seed": self.seed,
            "trace": [
                {
                    "generation": r.generation,
                    "evaluations": r.evaluations,
                    "best_alpha": r.best_alpha,
                    "mean_fitness": r.mean_fitness,
                    "best_overall": r.best_overall,
                }
                for r in self.trace
            ],
        }

    def save(self, out_dir: str) -> None:
        """Write report.json, trace.csv and the best-fit results.csv."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "evaluations", "best_alpha",
                             "mean_fitness", "best_overall"])
            for r in self.trace:
                writer.writerow([r.generation, r.evaluations,
                                 _fmt(r.best_alpha), _fmt(r.mean_fitness),
                                 _fmt(r.best_overall)])
        with open(os.path.join(out_dir, "results.csv"), "w") as fh:
            fh.write(self.series.to_csv())


def default_pressure_window(deck: Deck) -> tuple:
    """(P_min, P_max) inferred from the deck: initial pressure minus
    5 MPa and the highest injector pressure ceiling plus 2 MPa."""
    p_min = deck.init_pressure - 5.0
    ceilings = []
    for stage in deck.stages:
        for wname, ctl in stage.controls.items():
            if deck.well_by_name(wname).kind != "injector":
                continue
            if ctl.bhp_limit is not None:
                ceilings.append(ctl.bhp_limit)
            if ctl.mode == "bhp":
                ceilings.append(ctl.target)
    if not ceilings:
        raise MatchError("cannot infer the table pressure ceiling: no "
                         "injector bhp limit in the schedule; set p_max")
    return p_min, max(ceilings) + 2.0


def _resolve_bounds(config: MatchConfig, p_min: float, p_max: float):
    table = dict(PARAM_BOUNDS)
    table["p_b"] = (p_min, p_max)
    if config.bounds:
        for name, pair in config.bounds.items():
            if name not in table:
                raise MatchError(f"unknown parameter {name!r} in bounds")
            table[name] = (float(pair[0]), float(pair[1]))
    lo = np.array([table[n][0] for n in PARAM_NAMES])
    hi = np.array([table[n][1] for n in PARAM_NAMES])
    if not np.all(lo < hi):
        bad = PARAM_NAMES[int(np.argmin(hi - lo))]
        raise MatchError(f"empty bound interval for parameter {bad!r}")
    return lo, hi


def run_match(deck: Deck, observations: ObservationSet,
              config: MatchConfig = None) -> MatchReport:
    """Recover the representative parameters that best reproduce the
    observations. Deterministic for a fixed seed: candidate fitnesses
    are reduced in index order regardless of the worker count."""
    config = config or MatchConfig()
    validate_observations(deck, observations)

    p_min, p_max = default_pressure_window(deck)
    if config.p_min is not None:
        p_min = float(config.p_min)
    if config.p_max is not None:
        p_max = float(config.p_max)
    if not p_min < p_max:
        raise MatchError("p_min must lie below p_max")
    lo, hi = _resolve_bounds(config, p_min, p_max)
    span = hi - lo

    cma_kwargs = {}
    for name in ("population", "sigma0", "tolfun", "tolx"):
        value = getattr(config, name)
        if value is not None:
            cma_kwargs[name] = value
    if config.stagnation_generations is not None:
        cma_kwargs["stagnation_generations"] = config.stagnation_generations
    initial_mean = None
    if config.initial is not None:
        config.initial.validate(p_min, p_max)
        initial_mean = (np.array(config.initial.as_vector()) - lo) / span
    cma_config = CmaesConfig(
        dimension=SIMPLIFIED_DIMENSION,
        lower=np.zeros(SIMPLIFIED_DIMENSION),
        upper=np.ones(SIMPLIFIED_DIMENSION),
        initial_mean=initial_mean,
        seed=config.seed,
        max_evaluations=config.max_evaluations,
        target_fitness=config.target_alpha,
        **cma_kwargs,
    )

    trace: list = []
    best = {"alpha": math.inf, "theta": None}
    state = {"worst": None, "generation": 0, "evaluations": 0}

    with contextlib.ExitStack() as stack:
        if config.jobs and config.jobs > 1:
            pool = stack.enter_context(
                ProcessPoolExecutor(max_workers=config.jobs))

            def mapper(payloads):
                return list(pool.map(_evaluate_task, payloads))
        else:
            def mapper(payloads):
                return [_evaluate_task(p) for p in payloads]

        def eval_batch(population):
            state["generation"] += 1
            payloads = [
                (list(lo + z * span), deck, observations, p_min, p_max,
                 config.max_steps)
                for z in population
            ]
            results = mapper(payloads)
            fitnesses = []
            failures = []
            # walk in candidate index order so penalties (and therefore
            # the whole run) do not depend on evaluation scheduling
            for vec_payload, res in zip(payloads, results):
                if res.ok:
                    if state["worst"] is None or res.alpha > state["worst"]:
                        state["worst"] = res.alpha
                    if res.alpha < best["alpha"]:
                        best["alpha"] = res.alpha
                        best["theta"] = RepresentativeParams.from_vector(
                            vec_payload[0])
                    fitnesses.append(res.alpha)
                else:
                    failures.append(res.failure)
                    worst = state["worst"]
                    floor = PENALTY_FLOOR if worst is None \
                        else max(worst, PENALTY_FLOOR)
                    fitnesses.append(10.0 * floor)
            state["evaluations"] += len(fitnesses)
            if state["generation"] == 1 and best["theta"] is None:
                raise MatchAbort(
                    "every candidate in the first generation failed to "
                    f"simulate; first error: {failures[0]}")
            gen_best = min(fitnesses)
            trace.append(GenerationRow(
                generation=state["generation"],
                evaluations=state["evaluations"],
                best_alpha=gen_best,
                mean_fitness=float(np.mean(fitnesses)),
                best_overall=best["alpha"],
            ))
            return fitnesses

        _, _, cma_trace = minimize(None, cma_config,
                                   batch_evaluator=eval_batch)

    final = evaluate(best["theta"], deck, observations,
                     p_min=p_min, p_max=p_max, keep_series=True,
                     max_steps=config.max_steps)
    if not final.ok:
        raise MatchAbort("best candidate failed on re-evaluation: "
                         f"{final.failure}")
    report = MatchReport(
        best=best["theta"],
        alpha=final.alpha,
        components=final.components,
        evaluations=state["evaluations"],
        generations=len(trace),
        reason=cma_trace.reason,
        trace=trace,
        series=final.series,
        p_min=p_min,
        p_max=p_max,
        seed=config.seed,
    )
    if config.out_dir:
        report.save(config.out_dir)
    return report
