"""Budget-tracked multifidelity Bayesian optimization loop.

Runs the sequential select / evaluate / refit cycle under a cumulative
cost budget, with either the plain multifidelity expected improvement or
its two-step lookahead extension driving the selection of the next
(input, fidelity) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import CandidateSet, McConfig, TwoStepEvaluator, mfei_batch
from .benchmarks import BenchmarkProblem, normalized_error
from .doe import DesignSpec, latin_hypercube, uniform_pool
from .gp import FitConfig, NoiseParams
from .mfgp import MfGpModel, Sample, TrainingSet, fit_mf

__all__ = [
    "MFEI_BASELINE",
    "TWO_STEP",
    "OptimizerConfig",
    "BudgetTracker",
    "StepRecord",
    "TrialRecord",
    "derive_seed",
    "maximize_acquisition",
    "run",
]

MFEI_BASELINE = "mfei"
TWO_STEP = "two_step"

# tags for per-purpose seed derivation, kept stable so paired runs and
# reference implementations can reproduce every stream
SEED_INIT = 1
SEED_FIT = 2
SEED_POOL = 3
SEED_MC = 4
SEED_INNER = 5


def derive_seed(base_seed: int, tag: int, index: int = 0) -> int:
    """Stable per-purpose child seed of ``base_seed``."""
    ss = np.random.SeedSequence([int(base_seed), int(tag), int(index)])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of one optimization run.

    ``n0_per_level[l-1]`` initial samples at level ``l``; the loop stops
    once spending the next selected evaluation would exceed
    ``budget_max`` (optionally allowing a single overshooting evaluation).
    """

    n0_per_level: tuple
    budget_max: float
    acquisition: str = MFEI_BASELINE
    mc: McConfig | None = None
    outer_candidates: int = 64
    seed: int = 0
    allow_final_overshoot: bool = False
    noise_std: float = 0.0
    fit_starts: int = 8
    fit_passes: int = 4
    refit_starts: int = 1
    refit_passes: int = 1
    refit_max_evals: int = 60
    refit_every: int = 1  # full refit cadence; reconditions in between
    refine_sweeps: int = 2

    def __post_init__(self):
        object.__setattr__(self, "n0_per_level", tuple(int(c) for c in self.n0_per_level))
        if any(c < 0 for c in self.n0_per_level):
            raise ValueError("initial sample counts must be nonnegative")
        if self.n0_per_level[-1] < 1:
            raise ValueError("at least one initial top-fidelity sample is required")
        if self.budget_max <= 0.0:
            raise ValueError("budget_max must be positive")
        if self.acquisition not in (MFEI_BASELINE, TWO_STEP):
            raise ValueError(f"unknown acquisition {self.acquisition!r}")
        if self.outer_candidates < 1:
            raise ValueError("outer_candidates must be positive")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")


@dataclass
class BudgetTracker:
    """Cumulative evaluation cost, including the initial design."""

    spent: float = 0.0

    def charge(self, cost: float) -> float:
        if cost < 0.0:
            raise ValueError("cost must be nonnegative")
        self.spent += cost
        return self.spent


@dataclass(frozen=True)
class StepRecord:
    """One evaluation: design rows carry iteration 0."""

    iteration: int
    x: tuple
    level: int
    y: float
    budget: float
    incumbent: float
    delta_f: float
    flag: str = ""


@dataclass
class TrialRecord:
    """Full history of one optimization run."""

    problem: str
    seed: int
    steps: list = field(default_factory=list)
    final_x: tuple | None = None
    final_incumbent: float | None = None
    aborted: bool = False
    note: str = ""

    @property
    def budgets(self) -> np.ndarray:
        return np.array([s.budget for s in self.steps])

    @property
    def incumbents(self) -> np.ndarray:
        return np.array([s.incumbent for s in self.steps])

    @property
    def delta_f(self) -> np.ndarray:
        return np.array([s.delta_f for s in self.steps])


def _coordinate_refine(f, x0, v0, bounds, sweeps: int):
    """Greedy per-coordinate probing around ``x0`` with shrinking steps."""
    x = np.asarray(x0, dtype=float).copy()
    v = float(v0)
    lo, hi = bounds[:, 0], bounds[:, 1]
    for s in range(sweeps):
        step = (hi - lo) * (0.1 / 2.0**s)
        for d in range(x.shape[0]):
            for delta in (step[d], -step[d]):
                xt = x.copy()
                xt[d] = min(max(x[d] + delta, lo[d]), hi[d])
                if xt[d] == x[d]:
                    continue
                vt = float(f(xt))
                if vt > v:
                    x, v = xt, vt
    return x, v


def maximize_acquisition(model: MfGpModel, acq_fn, pool: np.ndarray,
                         bounds, refine_sweeps: int = 2):
    """Argmax of an acquisition over a candidate pool crossed with all levels.

    ``acq_fn(X, level)`` must return one value per row of ``X``.  The best
    pool point of each level is refined by local coordinate search; ties
    are broken toward the higher fidelity and then the lower pool index.
    When the acquisition vanishes everywhere the point of maximum
    top-level posterior variance is returned instead, flagged as an
    exploration fallback.

    Returns
    -------
    (x, level, value, flag)
    """
    bounds = np.asarray(bounds, dtype=float)
    pool = np.atleast_2d(np.asarray(pool, dtype=float))

    # best pool point per level; argmax keeps the lowest index on ties
    champions = []
    for level in range(model.n_levels, 0, -1):
        values = np.asarray(acq_fn(pool, level), dtype=float)
        idx = int(np.argmax(values))
        champions.append((level, pool[idx].copy(), float(values[idx])))

    if max(v for _, _, v in champions) <= 0.0:
        # nothing promising anywhere: probe the most uncertain point
        _, var = model.posterior_batch(pool, model.n_levels)
        idx = int(np.argmax(var))
        return pool[idx].copy(), model.n_levels, 0.0, "exploration_fallback"

    best_x, best_level, best_val = None, None, -np.inf
    for level, x0, v0 in champions:  # descending levels: higher wins ties
        if refine_sweeps > 0:
            x0, v0 = _coordinate_refine(
                lambda xt: acq_fn(xt[None, :], level)[0],
                x0, v0, bounds, refine_sweeps)
        if v0 > best_val:
            best_x, best_level, best_val = x0, level, v0

    return best_x, best_level, best_val, ""


def _initial_design(problem: BenchmarkProblem, cfg: OptimizerConfig):
    """Independent per-level LHS designs, evaluated from the top level down."""
    samples = []
    for level in range(problem.n_levels, 0, -1):
        n = cfg.n0_per_level[level - 1]
        if n == 0:
            continue
        spec = DesignSpec(n, problem.dimension, problem.bounds,
                          seed=derive_seed(cfg.seed, SEED_INIT, level))
        for x in latin_hypercube(spec):
            y = problem.evaluate(x, level)
            samples.append(Sample(x, level, y, problem.costs[level - 1]))
    return samples


def _fit_config(cfg: OptimizerConfig, iteration: int, warm=None) -> FitConfig:
    if iteration == 0:
        return FitConfig(n_starts=cfg.fit_starts, max_passes=cfg.fit_passes,
                         seed=derive_seed(cfg.seed, SEED_FIT, 0))
    return FitConfig(n_starts=cfg.refit_starts, max_passes=cfg.refit_passes,
                     max_evals=cfg.refit_max_evals,
                     seed=derive_seed(cfg.seed, SEED_FIT, iteration),
                     warm_start=warm)


def run(problem: BenchmarkProblem, cfg: OptimizerConfig) -> TrialRecord:
    """One budget-tracked optimization run, deterministic given the seed.

    Seeds the model with per-level Latin hypercube designs, then loops:
    maximize the configured acquisition over a fresh candidate pool
    crossed with every fidelity, evaluate the winner, recondition or
    refit the surrogate, and stop when the next evaluation no longer fits
    the remaining budget.
    """
    if len(cfg.n0_per_level) != problem.n_levels:
        raise ValueError("one initial sample count per fidelity level required")
    L = problem.n_levels
    d = problem.dimension
    bounds = problem.bounds_array
    costs = problem.costs
    mc = cfg.mc if cfg.mc is not None else McConfig(inner_candidates=128 * d)

    record = TrialRecord(problem=problem.name, seed=cfg.seed)
    tracker = BudgetTracker()

    init_cost = sum(cfg.n0_per_level[l] * costs[l] for l in range(L))
    if cfg.budget_max < init_cost:
        raise ValueError(
            f"budget_max {cfg.budget_max} cannot cover the initial design cost {init_cost}"
        )

    samples = _initial_design(problem, cfg)
    incumbent = np.inf
    for s in samples:
        tracker.charge(s.cost)
        if s.level == L:
            incumbent = min(incumbent, s.y)
        record.steps.append(StepRecord(
            0, tuple(s.x), s.level, s.y, tracker.spent,
            incumbent, normalized_error(problem, incumbent)))

    train = TrainingSet(samples, n_levels=L)
    noise = NoiseParams(noise_std=cfg.noise_std)
    model = fit_mf(train, _fit_config(cfg, 0), noise, bounds=bounds)

    iteration = 0
    overshot = False
    while tracker.spent < cfg.budget_max:
        iteration += 1
        pool = uniform_pool(DesignSpec(cfg.outer_candidates, d, problem.bounds,
                                       seed=derive_seed(cfg.seed, SEED_POOL, iteration)))

        if cfg.acquisition == TWO_STEP:
            inner = uniform_pool(DesignSpec(mc.inner_candidates, d, problem.bounds,
                                            seed=derive_seed(cfg.seed, SEED_INNER, iteration)))
            mc_i = McConfig(mc.n_mc, mc.inner_candidates,
                            seed=derive_seed(cfg.seed, SEED_MC, iteration))
            evaluator = TwoStepEvaluator(model, CandidateSet.cross_levels(inner, L),
                                         mc_i, costs=costs)

            def acq_fn(X, level):
                return np.array([v.total for v in evaluator.batch(X, level)])
        else:
            def acq_fn(X, level):
                return mfei_batch(model, X, level, costs=costs)

        x, level, value, flag = maximize_acquisition(
            model, acq_fn, pool, bounds, refine_sweeps=cfg.refine_sweeps)

        cost = costs[level - 1]
        if tracker.spent + cost > cfg.budget_max:
            if not (cfg.allow_final_overshoot and not overshot):
                break
            overshot = True

        try:
            y = problem.evaluate(x, level)
        except Exception as exc:  # evaluator failure: keep the partial record
            record.aborted = True
            record.note = f"objective evaluation failed at iteration {iteration}: {exc}"
            break

        tracker.charge(cost)
        train = train.with_sample(Sample(x, level, y, cost))
        if level == L:
            incumbent = min(incumbent, y)
        record.steps.append(StepRecord(
            iteration, tuple(x), level, y, tracker.spent,
            incumbent, normalized_error(problem, incumbent), flag))

        if iteration % cfg.refit_every == 0:
            model = fit_mf(train, _fit_config(cfg, iteration, warm=model.fit_theta),
                           noise, bounds=bounds)
        else:
            model = model.with_observation(x, level, y, cost)

    top = [s for s in train.samples if s.level == L]
    best = min(top, key=lambda s: s.y)
    record.final_x = tuple(best.x)
    record.final_incumbent = best.y
    return record
