"""Covariance Matrix Adaptation Evolution Strategy for bounded minimization.

Self-contained ask/tell implementation: sample a population from a scaled
multivariate normal, rank by fitness, move the mean to the weighted best,
and adapt the step size and covariance from the evolution paths. Bounds
are handled by clamping samples into the box and adding a normalized
quadratic penalty to the reported fitness.

Only ranks enter the updates, so the algorithm is invariant to monotone
transformations of the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# window (generations) over which the tolfun spread criterion is measured
TOLFUN_WINDOW = 20


class CmaesError(ValueError):
    """Invalid optimizer configuration or input."""


def default_weights(mu: int) -> np.ndarray:
    """Log-rank recombination weights: positive, decreasing, summing to 1."""
    if mu < 1:
        raise CmaesError("parent count must be at least 1")
    i = np.arange(1, mu + 1)
    denom = mu * math.log(mu + 1) - math.lgamma(mu + 1)
    return (math.log(mu + 1) - np.log(i)) / denom


@dataclass
class CmaesConfig:
    """Problem definition and strategy settings.

    Unset strategy fields take the standard defaults: population
    4 + floor(3 ln n), parents population//2, sigma0 at 30% of the mean
    bound range, initial mean at the box center.
    """

    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    initial_mean: np.ndarray = None
    sigma0: float = None
    population: int = None
    parents: int = None
    seed: int = 0
    max_evaluations: int = 20000
    target_fitness: float = None
    tolfun: float = 1e-12
    tolx: float = 1e-14
    stagnation_generations: int = 80

    def __post_init__(self):
        n = self.dimension
        if n < 1:
            raise CmaesError("dimension must be at least 1")
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise CmaesError("bounds must be vectors of length dimension")
        if not np.all(self.lower < self.upper):
            raise CmaesError("lower bounds must lie strictly below upper bounds")
        if self.population is None:
            self.population = 4 + int(3 * math.log(n))
        if self.population < 2:
            raise CmaesError("population must be at least 2")
        if self.parents is None:
            self.parents = self.population // 2
        if not (1 <= self.parents <= self.population):
            raise CmaesError("parent count must lie in [1, population]")
        if self.initial_mean is None:
            self.initial_mean = 0.5 * (self.lower + self.upper)
        self.initial_mean = np.asarray(self.initial_mean, dtype=float)
        if self.initial_mean.shape != (n,):
            raise CmaesError("initial mean must have length dimension")
        if self.sigma0 is None:
            self.sigma0 = 0.3 * float(np.mean(self.upper - self.lower))
        if self.sigma0 <= 0.0:
            raise CmaesError("initial step size must be positive")


@dataclass(frozen=True)
class StrategyConstants:
    """Learning rates and normalizers derived from (n, parents)."""

    weights: np.ndarray
    mu_eff: float
    c_c: float
    c_sigma: float
    d_sigma: float
    c_one: float
    c_mu: float
    chi_n: float


def strategy_constants(config: CmaesConfig) -> StrategyConstants:
    n = config.dimension
    w = default_weights(config.parents)
    mu_eff = 1.0 / float(np.sum(w**2))
    c_c = 4.0 / (n + 4.0)
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 3.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_one = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_one,
               2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))
    return StrategyConstants(w, mu_eff, c_c, c_sigma, d_sigma, c_one, c_mu, chi_n)


@dataclass
class CmaesState:
    """Mutable strategy state; owned by a single optimization loop."""

    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    p_c: np.ndarray
    p_sigma: np.ndarray
    generation: int
    rng: np.random.Generator
    evaluations: int = 0
    best_x: np.ndarray = None
    best_f: float = math.inf
    # penalties of the most recent ask() population, by candidate index
    pending_penalties: np.ndarray = None
    basis: np.ndarray = None  # eigenvectors of cov
    scales: np.ndarray = None  # sqrt of eigenvalues


def init_state(config: CmaesConfig) -> CmaesState:
    n = config.dimension
    state = CmaesState(
        mean=config.initial_mean.copy(),
        cov=np.eye(n),
        sigma=float(config.sigma0),
        p_c=np.zeros(n),
        p_sigma=np.zeros(n),
        generation=0,
        rng=np.random.Generator(np.random.PCG64(config.seed)),
    )
    _refresh_decomposition(state)
    return state


def _refresh_decomposition(state: CmaesState) -> None:
    """Eigendecompose the covariance, repairing it once if degenerate."""
    for attempt in (0, 1):
        try:
            vals, vecs = np.linalg.eigh(state.cov)
        except np.linalg.LinAlgError:
            vals = None
        if vals is not None and np.all(np.isfinite(vals)):
            floor = 1e-14 * max(float(np.trace(state.cov)), 1e-300)
            if vals[0] < floor:
                vals = np.maximum(vals, floor)
                state.cov = (vecs * vals) @ vecs.T
            state.basis = vecs
            state.scales = np.sqrt(vals)
            return
        if attempt == 0:
            # repair: keep only the finite diagonal as an axis-aligned guess
            diag = np.diag(state.cov).copy()
            diag[~np.isfinite(diag) | (diag <= 0.0)] = 1.0
            state.cov = np.diag(diag)
    raise CmaesError("covariance factorization failed after repair")


def repair_bounds(x: np.ndarray, bounds: tuple) -> tuple:
    """Clamp x into the box; penalty is the squared range-relative overshoot."""
    lower, upper = bounds
    clamped = np.clip(x, lower, upper)
    penalty = float(np.sum(((x - clamped) / (upper - lower)) ** 2))
    return clamped, penalty


def ask(state: CmaesState, config: CmaesConfig) -> np.ndarray:
    """Sample one population; rows are feasible candidates.

    The clamp penalties are stashed on the state by candidate index
    (pending_penalties) and must be added to the fitnesses given to tell.
    """
    z = state.rng.standard_normal((config.population, config.dimension))
    steps = (z * state.scales) @ state.basis.T
    raw = state.mean + state.sigma * steps
    clamped = np.clip(raw, config.lower, config.upper)
    span = config.upper - config.lower
    state.pending_penalties = np.sum(((raw - clamped) / span) ** 2, axis=1)
    return clamped


def tell(state: CmaesState, population: np.ndarray, fitnesses,
         config: CmaesConfig) -> CmaesState:
    """Consume ranked fitnesses and advance the strategy one generation."""
    consts = strategy_constants(config)
    fitnesses = np.asarray(fitnesses, dtype=float)
    if fitnesses.shape != (config.population,):
        raise CmaesError("need one fitness per candidate")
    if not np.all(np.isfinite(fitnesses)):
        raise CmaesError("fitnesses must be finite (apply penalties first)")
    population = np.asarray(population, dtype=float)

    order = np.argsort(fitnesses, kind="stable")
    selected = population[order[: config.parents]]
    w = consts.weights

    sigma_old = state.sigma
    mean_old = state.mean
    mean_new = w @ selected
    y_w = (mean_new - mean_old) / sigma_old

    # conjugate path in whitened coordinates drives step-size control
    whitened = state.basis @ ((state.basis.T @ y_w) / state.scales)
    cs = consts.c_sigma
    state.p_sigma = (1.0 - cs) * state.p_sigma + math.sqrt(
        cs * (2.0 - cs) * consts.mu_eff) * whitened

    cc = consts.c_c
    state.p_c = (1.0 - cc) * state.p_c + math.sqrt(
        cc * (2.0 - cc) * consts.mu_eff) * y_w

    steps = (selected - mean_old) / sigma_old
    rank_mu = (w[:, None] * steps).T @ steps
    c1, cmu = consts.c_one, consts.c_mu
    cov = ((1.0 - c1 - cmu) * state.cov
           + c1 * np.outer(state.p_c, state.p_c)
           + cmu * rank_mu)
    state.cov = 0.5 * (cov + cov.T)

    arg = (cs / consts.d_sigma) * (
        float(np.linalg.norm(state.p_sigma)) / consts.chi_n - 1.0)
    state.sigma = sigma_old * math.exp(min(arg, 50.0))

    state.mean = mean_new
    state.generation += 1
    _refresh_decomposition(state)

    best_idx = int(order[0])
    if fitnesses[best_idx] < state.best_f:
        state.best_f = float(fitnesses[best_idx])
        state.best_x = population[best_idx].copy()
    return state


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    evaluations: int
    best: float
    mean_fitness: float
    sigma: float
    best_ever: float


@dataclass
class MinimizeTrace:
    records: list = field(default_factory=list)
    reason: str = ""
    evaluations: int = 0


def minimize(objective, config: CmaesConfig, batch_evaluator=None):
    """Run the ask/tell loop to termination.

    objective: callable on a single vector. Alternatively pass
    batch_evaluator, a callable mapping the (population, n) candidate
    array to a fitness sequence; results must come back in candidate
    index order, which keeps runs deterministic under any parallelism.
    Returns (best_x, best_f, MinimizeTrace).
    """
    state = init_state(config)
    trace = MinimizeTrace()
    gen_best_window: list[float] = []
    last_improvement_gen = 0
    best_seen = math.inf

    while True:
        population = ask(state, config)
        if batch_evaluator is not None:
            raw = batch_evaluator(population)
        else:
            raw = [objective(x) for x in population]
        fitnesses = np.asarray(raw, dtype=float) + state.pending_penalties
        state.evaluations += config.population
        tell(state, population, fitnesses, config)

        gen_best = float(np.min(fitnesses))
        if gen_best < best_seen:
            best_seen = gen_best
            last_improvement_gen = state.generation
        gen_best_window.append(gen_best)
        if len(gen_best_window) > TOLFUN_WINDOW:
            gen_best_window.pop(0)
        trace.records.append(GenerationRecord(
            generation=state.generation,
            evaluations=state.evaluations,
            best=gen_best,
            mean_fitness=float(np.mean(fitnesses)),
            sigma=state.sigma,
            best_ever=state.best_f,
        ))

        if config.target_fitness is not None and state.best_f <= config.target_fitness:
            trace.reason = "target_fitness"
            break
        if state.evaluations >= config.max_evaluations:
            trace.reason = "max_evaluations"
            break
        if (len(gen_best_window) == TOLFUN_WINDOW
                and max(gen_best_window) - min(gen_best_window) <= config.tolfun):
            trace.reason = "tolfun"
            break
        if state.sigma * float(np.max(state.scales)) < config.tolx:
            trace.reason = "tolx"
            break
        if state.generation - last_improvement_gen >= config.stagnation_generations:
            trace.reason = "stagnation"
            break

    trace.evaluations = state.evaluations
    return state.best_x.copy(), state.best_f, trace
