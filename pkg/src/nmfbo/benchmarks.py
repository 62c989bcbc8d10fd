"""Multifidelity benchmark problems.

Each problem bundles per-fidelity evaluators, per-level evaluation
costs, box bounds and reference optima used for normalized-error
reporting.  Reference values were precomputed by dense grid / Latin
hypercube oracles with bounded local refinement; the resolution is
recorded on each problem.

Additional problems (for example a shifted-and-rotated Rastrigin or a
mass-spring system) are not baked in: register them at runtime with
:func:`register_problem` or load them from a declarative JSON file with
:func:`load_problem_file`, which also supports external command
evaluators speaking a line-based numeric protocol.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BenchmarkProblem",
    "UnknownProblemError",
    "EvaluatorError",
    "ProblemRegistry",
    "forrester",
    "rosenbrock_mf",
    "borehole",
    "forrester_problem",
    "rosenbrock_problem",
    "borehole_problem",
    "registry",
    "get_problem",
    "register_problem",
    "normalized_error",
    "command_evaluator",
    "load_problem_file",
]


class UnknownProblemError(KeyError):
    """Lookup of a name the registry does not know."""


class EvaluatorError(RuntimeError):
    """An external command evaluator failed or returned garbage."""


@dataclass(frozen=True)
class BenchmarkProblem:
    """A multifidelity optimization test problem.

    ``evaluators[l-1]`` maps a point in the box to the level-``l``
    objective value; costs follow the same ordering with the top level
    normalized to cost 1.
    """

    name: str
    dimension: int
    bounds: tuple
    evaluators: tuple
    costs: tuple
    f_star: float
    f_max: float
    x_star: tuple | None = None
    reference_note: str = ""

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(self.dimension, 2)
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each dimension needs low < high")
        object.__setattr__(self, "bounds", tuple(map(tuple, b)))
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        object.__setattr__(self, "evaluators", tuple(self.evaluators))
        if len(self.evaluators) != len(self.costs):
            raise ValueError("one cost per fidelity level required")
        if not self.evaluators:
            raise ValueError("at least one fidelity level required")
        if any(c <= 0.0 for c in self.costs):
            raise ValueError("costs must be positive")
        if not math.isclose(self.costs[-1], 1.0):
            raise ValueError("the top-fidelity cost is normalized to 1")
        if not self.f_star < self.f_max:
            raise ValueError("f_star must be below f_max")
        if self.x_star is not None:
            object.__setattr__(self, "x_star", tuple(float(v) for v in self.x_star))

    @property
    def n_levels(self) -> int:
        return len(self.evaluators)

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)

    def evaluate(self, x, level: int) -> float:
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"fidelity level {level} outside 1..{self.n_levels}")
        return float(self.evaluators[level - 1](np.atleast_1d(np.asarray(x, dtype=float))))


def normalized_error(problem: BenchmarkProblem, f_incumbent: float) -> float:
    """Incumbent error normalized to [0, 1] by the problem's value range."""
    return (float(f_incumbent) - problem.f_star) / (problem.f_max - problem.f_star)


# ----------------------------------------------------------------------
# Built-in test functions
# ----------------------------------------------------------------------

def _forrester_hi(x):
    x = float(np.atleast_1d(x)[0])
    return (6.0 * x - 2.0) ** 2 * math.sin(12.0 * x - 4.0)


def _forrester_lo(x):
    x0 = float(np.atleast_1d(x)[0])
    return 0.5 * _forrester_hi(x) + 10.0 * (x0 - 0.5) - 5.0


def forrester(level: int):
    """One-dimensional two-fidelity test function on [0, 1].

    High fidelity ``(6x-2)^2 sin(12x-4)``; the low fidelity halves it and
    adds a linear drift.
    """
    if level == 1:
        return _forrester_lo
    if level == 2:
        return _forrester_hi
    raise ValueError("forrester has fidelity levels 1 and 2")


def _rosenbrock_hi(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def _rosenbrock_lo(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(
        np.sum(50.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2)
        - np.sum(0.5 * x)
    )


def rosenbrock_mf(d: int, level: int):
    """Rosenbrock valley on [-2, 2]^d with a halved-curvature low fidelity."""
    if d < 2:
        raise ValueError("rosenbrock needs d >= 2")
    if level == 1:
        return _rosenbrock_lo
    if level == 2:
        return _rosenbrock_hi
    raise ValueError("rosenbrock has fidelity levels 1 and 2")


_BOREHOLE_BOUNDS = (
    (0.05, 0.15),        # borehole radius
    (100.0, 50000.0),    # radius of influence
    (63070.0, 115600.0), # upper aquifer transmissivity
    (990.0, 1110.0),     # upper aquifer head
    (63.1, 116.0),       # lower aquifer transmissivity
    (700.0, 820.0),      # lower aquifer head
    (1120.0, 1680.0),    # borehole length
    (9855.0, 12045.0),   # hydraulic conductivity
)


def _borehole_terms(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rw, r, Tu, Hu, Tl, Hl, L, Kw = x
    lnr = math.log(r / rw)
    frac = 2.0 * L * Tu / (lnr * rw**2 * Kw) + Tu / Tl
    return Tu * (Hu - Hl), lnr, frac


def _borehole_hi(x):
    num, lnr, frac = _borehole_terms(x)
    return 2.0 * math.pi * num / (lnr * (1.0 + frac))


def _borehole_lo(x):
    num, lnr, frac = _borehole_terms(x)
    return 5.0 * num / (lnr * (1.5 + frac))


def borehole(level: int):
    """Eight-dimensional water-flow function, two fidelities."""
    if level == 1:
        return _borehole_lo
    if level == 2:
        return _borehole_hi
    raise ValueError("borehole has fidelity levels 1 and 2")


def forrester_problem() -> BenchmarkProblem:
    return BenchmarkProblem(
        name="forrester",
        dimension=1,
        bounds=((0.0, 1.0),),
        evaluators=(forrester(1), forrester(2)),
        costs=(0.05, 1.0),
        f_star=-6.020740055767069,
        f_max=15.829731945974109,
        x_star=(0.7572487528294125,),
        reference_note="1e6-point grid with bounded local refinement",
    )


def rosenbrock_problem(d: int) -> BenchmarkProblem:
    return BenchmarkProblem(
        name=f"rosenbrock{d}d",
        dimension=d,
        bounds=tuple((-2.0, 2.0) for _ in range(d)),
        evaluators=(rosenbrock_mf(d, 1), rosenbrock_mf(d, 2)),
        costs=(0.5, 1.0),
        f_star=0.0,
        f_max=3609.0 * (d - 1),
        x_star=tuple(1.0 for _ in range(d)),
        reference_note="analytic optimum; maximum from corner enumeration "
                       "cross-checked by a 2e5-point uniform oracle",
    )


def borehole_problem() -> BenchmarkProblem:
    return BenchmarkProblem(
        name="borehole",
        dimension=8,
        bounds=_BOREHOLE_BOUNDS,
        evaluators=(borehole(1), borehole(2)),
        costs=(0.5, 1.0),
        f_star=7.821620642708707,
        f_max=307.70933507732735,
        x_star=None,
        reference_note="2e5-point Latin hypercube oracle with bounded local refinement",
    )


# ----------------------------------------------------------------------
# Registry
# ----------------------------------------------------------------------

_BUILTIN_FORMS = {
    "forrester": forrester,
    "rosenbrock2d": lambda level: rosenbrock_mf(2, level),
    "rosenbrock5d": lambda level: rosenbrock_mf(5, level),
    "rosenbrock10d": lambda level: rosenbrock_mf(10, level),
    "borehole": borehole,
}


class ProblemRegistry:
    """Name-indexed problem set with pluggable registration."""

    def __init__(self, problems=()):
        self._problems: dict[str, BenchmarkProblem] = {}
        for p in problems:
            self.register(p)

    def names(self) -> list[str]:
        return sorted(self._problems)

    def register(self, problem: BenchmarkProblem, replace: bool = False) -> None:
        if not replace and problem.name in self._problems:
            raise ValueError(f"problem {problem.name!r} is already registered")
        self._problems[problem.name] = problem

    def get(self, name: str) -> BenchmarkProblem:
        try:
            return self._problems[name]
        except KeyError:
            raise UnknownProblemError(
                f"unknown problem {name!r}; available: {', '.join(self.names())}"
            ) from None

    def load_file(self, path, replace: bool = False) -> BenchmarkProblem:
        problem = load_problem_file(path)
        self.register(problem, replace=replace)
        return problem


_default_registry: ProblemRegistry | None = None


def registry() -> ProblemRegistry:
    """The process-wide registry, preloaded with the built-in problems."""
    global _default_registry
    if _default_registry is None:
        _default_registry = ProblemRegistry([
            forrester_problem(),
            rosenbrock_problem(2),
            rosenbrock_problem(5),
            rosenbrock_problem(10),
            borehole_problem(),
        ])
    return _default_registry


def get_problem(name: str) -> BenchmarkProblem:
    return registry().get(name)


def register_problem(problem: BenchmarkProblem, replace: bool = False) -> None:
    registry().register(problem, replace=replace)


# ----------------------------------------------------------------------
# Declarative problem files and external evaluators
# ----------------------------------------------------------------------

def command_evaluator(argv, timeout: float = 60.0):
    """Evaluator that shells out per point.

    The point is written to the command's stdin as one line of
    whitespace-separated floats; the command must print the objective
    value as a single float on stdout.
    """
    argv = [str(a) for a in argv]

    def evaluate(x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        line = " ".join(repr(float(v)) for v in x) + "\n"
        try:
            proc = subprocess.run(argv, input=line, capture_output=True,
                                  text=True, timeout=timeout)
        except OSError as exc:
            raise EvaluatorError(f"cannot run {argv[0]!r}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise EvaluatorError(f"evaluator {argv[0]!r} timed out") from exc
        if proc.returncode != 0:
            raise EvaluatorError(
                f"evaluator {argv[0]!r} exited {proc.returncode}: {proc.stderr.strip()}"
            )
        try:
            return float(proc.stdout.strip().split()[0])
        except (IndexError, ValueError) as exc:
            raise EvaluatorError(
                f"evaluator {argv[0]!r} printed {proc.stdout!r}, expected one float"
            ) from exc

    return evaluate


def _resolve_level_spec(spec, dimension):
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in _BUILTIN_FORMS:
            raise ValueError(
                f"unknown builtin form {name!r}; available: {', '.join(sorted(_BUILTIN_FORMS))}"
            )
        return _BUILTIN_FORMS[name](int(spec["level"]))
    if "command" in spec:
        return command_evaluator(spec["command"], timeout=float(spec.get("timeout", 60.0)))
    raise ValueError(f"level spec needs 'builtin' or 'command': {spec!r}")


def load_problem_file(path) -> BenchmarkProblem:
    """Build a problem from a declarative JSON definition.

    Expected keys: name, dimension, bounds, costs, levels (list of
    ``{"builtin": name, "level": int}`` or ``{"command": [argv...]}``),
    f_star, f_max; optional x_star and note.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        dimension = int(raw["dimension"])
        evaluators = tuple(_resolve_level_spec(s, dimension) for s in raw["levels"])
        return BenchmarkProblem(
            name=str(raw["name"]),
            dimension=dimension,
            bounds=tuple(map(tuple, raw["bounds"])),
            evaluators=evaluators,
            costs=tuple(raw["costs"]),
            f_star=float(raw["f_star"]),
            f_max=float(raw["f_max"]),
            x_star=tuple(raw["x_star"]) if raw.get("x_star") is not None else None,
            reference_note=str(raw.get("note", f"loaded from {path}")),
        )
    except KeyError as exc:
        raise ValueError(f"problem file {path} is missing key {exc}") from exc
