"""Experiment harness: paired multi-seed trials and convergence curves.

Runs the baseline and the two-step lookahead arm from identical initial
designs for every seed, interpolates each trial's normalized error onto
a shared budget grid, and aggregates pointwise percentiles.  Results are
persisted as delimited files plus a JSON manifest, with a rendered
convergence figure alongside.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .acquisition import McConfig
from .benchmarks import BenchmarkProblem, get_problem, registry
from .optimizer import MFEI_BASELINE, TWO_STEP, OptimizerConfig, StepRecord, TrialRecord, run

__all__ = [
    "ARMS",
    "EXPERIMENT_PRESETS",
    "ExperimentConfig",
    "AggregateCurve",
    "ExperimentResult",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "run_experiment",
    "emit_outputs",
    "load_results",
    "aggregate_directory",
]

ARMS = {"baseline": MFEI_BASELINE, "non_myopic": TWO_STEP}

# per-problem experiment setup: initial samples per level (ascending) and budget
EXPERIMENT_PRESETS = {
    "forrester": {"n0_per_level": (5, 2), "budget_max": 100.0},
    "rosenbrock2d": {"n0_per_level": (10, 5), "budget_max": 200.0},
    "rosenbrock5d": {"n0_per_level": (30, 15), "budget_max": 500.0},
    "rosenbrock10d": {"n0_per_level": (250, 50), "budget_max": 1000.0},
    "borehole": {"n0_per_level": (500, 100), "budget_max": 800.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one paired-arm experiment.

    ``n0_per_level``, ``budget_max`` and ``inner_candidates`` fall back
    to the per-problem presets / dimension-scaled defaults when omitted.
    """

    problem: str
    problem_file: str | None = None
    trials: int = 5
    base_seed: int = 0
    seeds: tuple | None = None
    arms: tuple = ("baseline", "non_myopic")
    out_dir: str = "results"
    n0_per_level: tuple | None = None
    budget_max: float | None = None
    outer_candidates: int = 64
    n_mc: int = 64
    inner_candidates: int | None = None
    fit_starts: int = 8
    refit_starts: int = 2
    refit_every: int = 1
    refine_sweeps: int = 2
    noise_std: float = 0.0
    allow_final_overshoot: bool = False
    grid_points: int = 200

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
            if len(self.seeds) != self.trials:
                raise ValueError("number of seeds must equal trials")
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.arms or any(a not in ARMS for a in self.arms):
            raise ValueError(f"arms must be a nonempty subset of {sorted(ARMS)}")
        if self.n0_per_level is not None:
            object.__setattr__(self, "n0_per_level",
                               tuple(int(c) for c in self.n0_per_level))
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")

    def trial_seeds(self) -> tuple:
        if self.seeds is not None:
            return self.seeds
        state = np.random.SeedSequence(self.base_seed).generate_state(self.trials)
        return tuple(int(s) for s in state)

    def resolve(self, problem: BenchmarkProblem) -> "ExperimentConfig":
        """Fill preset-dependent fields so the config is self-contained."""
        preset = EXPERIMENT_PRESETS.get(problem.name, {})
        n0 = self.n0_per_level or preset.get("n0_per_level")
        budget = self.budget_max or preset.get("budget_max")
        if n0 is None or budget is None:
            raise ValueError(
                f"no experiment preset for {problem.name!r}: set n0_per_level and budget_max"
            )
        inner = self.inner_candidates or 128 * problem.dimension
        return replace(self, n0_per_level=tuple(n0), budget_max=float(budget),
                       inner_candidates=int(inner), seeds=self.trial_seeds())

    def optimizer_config(self, arm: str, seed: int) -> OptimizerConfig:
        if self.n0_per_level is None or self.budget_max is None:
            raise ValueError("resolve() the config against a problem first")
        return OptimizerConfig(
            n0_per_level=self.n0_per_level,
            budget_max=self.budget_max,
            acquisition=ARMS[arm],
            mc=McConfig(n_mc=self.n_mc, inner_candidates=self.inner_candidates),
            outer_candidates=self.outer_candidates,
            seed=seed,
            allow_final_overshoot=self.allow_final_overshoot,
            noise_std=self.noise_std,
            fit_starts=self.fit_starts,
            refit_starts=self.refit_starts,
            refit_every=self.refit_every,
            refine_sweeps=self.refine_sweeps,
        )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    for key in ("seeds", "arms", "n0_per_level"):
        if out[key] is not None:
            out[key] = list(out[key])
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "problem" not in raw:
        raise ValueError("config needs a 'problem' name")
    return ExperimentConfig(**raw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


# ----------------------------------------------------------------------
# Aggregation
# ----------------------------------------------------------------------

@dataclass
class AggregateCurve:
    """Pointwise percentile curves of normalized error over budget."""

    budgets: np.ndarray
    arms: dict  # arm -> {"p25": ndarray, "median": ndarray, "p75": ndarray}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: BenchmarkProblem
    seeds: tuple
    trials: dict  # (arm, seed) -> TrialRecord
    curve: AggregateCurve | None
    partial: bool = False


def step_interpolate(budgets, values, grid) -> np.ndarray:
    """Previous-value interpolation of a step function onto a grid."""
    budgets = np.asarray(budgets, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(budgets, np.asarray(grid, dtype=float), side="right") - 1
    return values[np.clip(idx, 0, budgets.size - 1)]


def budget_grid(cfg: ExperimentConfig, problem: BenchmarkProblem) -> np.ndarray:
    init_cost = sum(n * c for n, c in zip(cfg.n0_per_level, problem.costs))
    return np.linspace(init_cost, cfg.budget_max, cfg.grid_points)


def aggregate_trials(trials: dict, grid, arms) -> AggregateCurve:
    """Pointwise 25/50/75 percentiles per arm over the budget grid."""
    out = {}
    for arm in arms:
        rows = [step_interpolate(rec.budgets, rec.delta_f, grid)
                for (a, _), rec in sorted(trials.items(), key=lambda kv: kv[0])
                if a == arm]
        if not rows:
            continue
        mat = np.vstack(rows)
        p25, p50, p75 = np.percentile(mat, [25.0, 50.0, 75.0], axis=0)
        out[arm] = {"p25": p25, "median": p50, "p75": p75}
    return AggregateCurve(np.asarray(grid, dtype=float), out)


def _run_job(args):
    problem_name, problem_file, opt_cfg = args
    if problem_file is not None:
        registry().load_file(problem_file, replace=True)
    return run(get_problem(problem_name), opt_cfg)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run every (arm, seed) trial and aggregate the convergence curves.

    Both arms share each seed, hence identical initial designs per seed.
    A trial abort does not stop the experiment; the result is marked
    partial instead.
    """
    if cfg.problem_file is not None:
        registry().load_file(cfg.problem_file, replace=True)
    problem = get_problem(cfg.problem)
    cfg = cfg.resolve(problem)
    seeds = cfg.seeds

    jobs = [(arm, seed) for seed in seeds for arm in cfg.arms]
    job_args = [(cfg.problem, cfg.problem_file, cfg.optimizer_config(arm, seed))
                for arm, seed in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, job_args))
    else:
        records = [_run_job(a) for a in job_args]

    trials = {key: rec for key, rec in zip(jobs, records)}
    partial = any(rec.aborted for rec in records)
    curve = aggregate_trials(trials, budget_grid(cfg, problem), cfg.arms)
    return ExperimentResult(cfg, problem, seeds, trials, curve, partial)


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def _float_repr(v: float) -> str:
    return repr(float(v))


def _trial_filename(arm: str, seed: int) -> str:
    return f"trial_{arm}_{seed}.csv"


def _write_trial_csv(path, record: TrialRecord, dimension: int):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"x{k}" for k in range(dimension)]
                        + ["level", "y", "budget", "incumbent", "delta_f"])
        for s in record.steps:
            writer.writerow([s.iteration] + [_float_repr(v) for v in s.x]
                            + [s.level, _float_repr(s.y), _float_repr(s.budget),
                               _float_repr(s.incumbent), _float_repr(s.delta_f)])


def _write_aggregate_csv(path, curve: AggregateCurve | None, arms):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "arm", "p25", "median", "p75"])
        if curve is None:
            return
        for arm in arms:
            if arm not in curve.arms:
                continue
            stats = curve.arms[arm]
            for i, b in enumerate(curve.budgets):
                writer.writerow([_float_repr(b), arm, _float_repr(stats["p25"][i]),
                                 _float_repr(stats["median"][i]),
                                 _float_repr(stats["p75"][i])])


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"nmfbo": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def emit_outputs(result: ExperimentResult, out_dir) -> list[str]:
    """Write per-trial CSVs, the aggregate CSV, the manifest and the figure.

    Fails before any computation if the directory cannot be written.
    Output bytes are stable across reruns with identical inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    try:
        with open(probe, "w") as fh:
            fh.write("ok")
    except OSError as exc:
        raise OSError(f"output directory {out_dir!r} is not writable: {exc}") from exc
    finally:
        if os.path.exists(probe):
            os.remove(probe)

    written = []
    cfg = result.config
    for (arm, seed), rec in sorted(result.trials.items(), key=lambda kv: kv[0]):
        path = os.path.join(out_dir, _trial_filename(arm, seed))
        _write_trial_csv(path, rec, result.problem.dimension)
        written.append(path)

    agg_path = os.path.join(out_dir, "aggregate.csv")
    _write_aggregate_csv(agg_path, result.curve, cfg.arms)
    written.append(agg_path)

    manifest = {
        "config": config_to_dict(cfg),
        "seeds": list(result.seeds),
        "versions": _versions(),
        "problem": {
            "name": result.problem.name,
            "dimension": result.problem.dimension,
            "n_levels": result.problem.n_levels,
            "costs": list(result.problem.costs),
            "f_star": result.problem.f_star,
            "f_max": result.problem.f_max,
            "reference_note": result.problem.reference_note,
        },
        "partial": result.partial,
        "aborted_trials": sorted(
            f"{arm}:{seed}" for (arm, seed), r in result.trials.items() if r.aborted
        ),
    }
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(man_path)

    if result.curve is not None and result.curve.arms:
        from .plots import render_convergence
        fig_path = os.path.join(out_dir, "convergence.png")
        render_convergence(result.curve, result.problem.name, fig_path)
        written.append(fig_path)
    return written


def load_results(out_dir) -> ExperimentResult:
    """Rebuild an ExperimentResult from a results directory."""
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = config_from_dict(manifest["config"])
    if cfg.problem_file is not None and os.path.exists(cfg.problem_file):
        registry().load_file(cfg.problem_file, replace=True)
    problem = get_problem(cfg.problem)

    trials = {}
    for arm in cfg.arms:
        for seed in cfg.seeds or ():
            path = os.path.join(out_dir, _trial_filename(arm, seed))
            if not os.path.exists(path):
                continue
            trials[(arm, seed)] = _read_trial_csv(path, problem, seed)
    curve = aggregate_trials(trials, budget_grid(cfg, problem), cfg.arms) if trials else None
    partial = bool(manifest.get("partial", False))
    return ExperimentResult(cfg, problem, tuple(cfg.seeds or ()), trials, curve, partial)


def _read_trial_csv(path, problem: BenchmarkProblem, seed: int) -> TrialRecord:
    record = TrialRecord(problem=problem.name, seed=seed)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        d = problem.dimension
        for row in reader:
            x = tuple(float(row[f"x{k}"]) for k in range(d))
            record.steps.append(StepRecord(
                int(row["iteration"]), x, int(row["level"]), float(row["y"]),
                float(row["budget"]), float(row["incumbent"]), float(row["delta_f"])))
    top = [(s.y, s.x) for s in record.steps if s.level == problem.n_levels]
    if top:
        best = min(top, key=lambda t: t[0])
        record.final_incumbent, record.final_x = best
    return record


def aggregate_directory(out_dir) -> ExperimentResult:
    """Recompute the aggregate CSV and figure from stored trial CSVs."""
    result = load_results(out_dir)
    _write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"),
                         result.curve, result.config.arms)
    if result.curve is not None and result.curve.arms:
        from .plots import render_convergence
        render_convergence(result.curve, result.problem.name,
                           os.path.join(out_dir, "convergence.png"))
    return result
