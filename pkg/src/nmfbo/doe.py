"""Space-filling designs for initial sampling and candidate pools."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DesignSpec", "latin_hypercube", "uniform_pool"]


@dataclass(frozen=True)
class DesignSpec:
    """Size, dimension, per-dimension (low, high) bounds and seed of a design."""

    n_points: int
    dimension: int
    bounds: tuple
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        b = np.asarray(self.bounds, dtype=float).reshape(self.dimension, 2)
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each dimension needs low < high")
        object.__setattr__(self, "bounds", tuple(map(tuple, b)))

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)


def latin_hypercube(spec: DesignSpec) -> np.ndarray:
    """Randomized Latin hypercube design.

    Each dimension is split into ``n_points`` equal-width bins holding
    exactly one point (random permutation per dimension, uniform jitter
    within each bin).  Deterministic given ``spec.seed``.

    Returns
    -------
    ndarray, shape (n_points, dimension)
    """
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_points, spec.dimension
    unit = np.empty((n, d))
    for k in range(d):
        perm = rng.permutation(n)
        unit[:, k] = (perm + rng.uniform(size=n)) / n
    b = spec.bounds_array
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])


def uniform_pool(spec: DesignSpec) -> np.ndarray:
    """I.i.d. uniform points within bounds, deterministic given the seed."""
    rng = np.random.default_rng(spec.seed)
    b = spec.bounds_array
    return rng.uniform(b[:, 0], b[:, 1], size=(spec.n_points, spec.dimension))
