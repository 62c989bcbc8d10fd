"""Acquisition functions for multifidelity Bayesian optimization.

Expected improvement, its multifidelity extension with correlation,
noise-reduction and cost-ratio utilities, fantasy model updates, and the
Monte Carlo estimator of the two-step lookahead acquisition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .mfgp import DEGENERATE_VAR, MfGpModel

__all__ = [
    "McConfig",
    "AcquisitionValue",
    "CandidateSet",
    "MissingIncumbentError",
    "expected_improvement",
    "alpha1",
    "alpha2",
    "alpha3",
    "noise_discount",
    "mfei",
    "mfei_batch",
    "fantasize",
    "TwoStepEvaluator",
    "two_step_acquisition",
]

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class MissingIncumbentError(RuntimeError):
    """Raised when an incumbent-based acquisition has no top-level sample."""


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings for the lookahead term.

    ``n_mc`` disturbance draws, ``inner_candidates`` second-step
    candidate points, and the seed that makes the estimator a pure
    function of its inputs.
    """

    n_mc: int = 64
    inner_candidates: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be at least 1")
        if self.inner_candidates < 1:
            raise ValueError("inner_candidates must be at least 1")


@dataclass(frozen=True)
class AcquisitionValue:
    """Two-step acquisition split into its immediate and lookahead parts."""

    total: float
    immediate: float
    lookahead: float
    mc_std_error: float = 0.0


@dataclass(frozen=True)
class CandidateSet:
    """Pool of (input, fidelity) pairs sharing one coordinate array."""

    X: np.ndarray        # (m, d)
    levels: np.ndarray   # (m,) 1-based

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        lv = np.broadcast_to(np.asarray(self.levels, dtype=int), (X.shape[0],)).copy()
        if X.shape[0] == 0:
            raise ValueError("candidate pool must be nonempty")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "levels", lv)

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def cross_levels(cls, X, n_levels: int) -> "CandidateSet":
        """Every point crossed with every fidelity level."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        return cls(np.tile(X, (n_levels, 1)),
                   np.repeat(np.arange(1, n_levels + 1), m))


def expected_improvement(mu, sigma, f_star):
    """Expected improvement over ``f_star`` for minimization.

    ``sigma * (g * Phi(g) + phi(g))`` with ``g = (f_star - mu) / sigma``;
    zero wherever ``sigma`` is zero.  Accepts scalars or arrays.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    scalar = mu.ndim == 0 and sigma.ndim == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(sigma > 0.0, (f_star - mu) / np.where(sigma > 0.0, sigma, 1.0), 0.0)
        ei = sigma * (g * ndtr(g) + INV_SQRT_2PI * np.exp(-0.5 * g * g))
    ei = np.where(sigma > 0.0, np.maximum(ei, 0.0), 0.0)
    return float(ei) if scalar else ei


def alpha1(model: MfGpModel, x, level: int) -> float:
    """Correlation utility: posterior correlation with the top fidelity."""
    return model.fidelity_correlation(x, level)


def noise_discount(variance: float, noise_std: float) -> float:
    """Utility ``1 - noise / sqrt(variance + noise^2)`` with 0/0 -> 0."""
    if variance <= 0.0:
        return 0.0
    if noise_std == 0.0:
        return 1.0
    return 1.0 - noise_std / math.sqrt(variance + noise_std**2)


def alpha2(model: MfGpModel, x, level: int) -> float:
    """Uncertainty-reduction utility at ``(x, level)``."""
    model._check_level(level)
    q = model.query_cache(np.atleast_2d(np.asarray(x, dtype=float)), level)
    return noise_discount(float(q.var[0]), model.noise.noise_std)


def alpha3(costs, level: int) -> float:
    """Cost utility: top-level cost divided by the queried level's cost."""
    costs = [float(c) for c in costs]
    if level < 1 or level > len(costs):
        raise ValueError(f"level {level} outside 1..{len(costs)}")
    if any(c <= 0.0 for c in costs):
        raise ValueError("per-level costs must be positive")
    return costs[-1] / costs[level - 1]


def _resolve_costs(model: MfGpModel, costs) -> list[float]:
    if costs is not None:
        costs = [float(c) for c in costs]
        if len(costs) != model.n_levels:
            raise ValueError("one cost per fidelity level required")
        return costs
    derived = model.level_costs()
    out = []
    for l in range(1, model.n_levels + 1):
        c = derived[l]
        if c is None or c <= 0.0:
            raise ValueError(
                f"no evaluation cost known for fidelity level {l}; pass costs explicitly"
            )
        out.append(c)
    return out


def _incumbent(model: MfGpModel) -> float:
    f_star = model.train.incumbent
    if f_star is None:
        raise MissingIncumbentError(
            "no top-fidelity observation yet: seed the training set with at "
            "least one sample at the highest fidelity before using the "
            "improvement-based acquisitions"
        )
    return f_star


def _utility_product(var_l, var_L, cross, levels, n_levels, noise_std, costs) -> np.ndarray:
    """alpha1 * alpha2 * alpha3 from posterior variances and cross-covariance."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = np.clip(cross / np.sqrt(np.maximum(var_l * var_L, 1e-300)), -1.0, 1.0)
    a1 = np.where((var_l < DEGENERATE_VAR) | (var_L < DEGENERATE_VAR), 0.0, a1)
    a1 = np.where(levels == n_levels, 1.0, a1)

    if noise_std == 0.0:
        a2 = np.where(var_l > 0.0, 1.0, 0.0)
    else:
        a2 = 1.0 - noise_std / np.sqrt(var_l + noise_std**2)

    carr = np.asarray(costs, dtype=float)
    a3 = carr[-1] / carr[levels - 1]
    return a1 * a2 * a3


def _alpha_product(model: MfGpModel, qp, qL, levels, costs) -> np.ndarray:
    """alpha1 * alpha2 * alpha3 for a query batch (standardized terms)."""
    L = model.n_levels
    cross = model._prior_cov[levels - 1, L - 1] - np.sum(qp.v * qL.v, axis=0)
    return _utility_product(qp.var, qL.var, cross, levels, L,
                            model.noise.noise_std, costs)


def mfei_batch(model: MfGpModel, X, levels, costs=None) -> np.ndarray:
    """Multifidelity expected improvement over a batch of (x, level) pairs.

    EI of the top-fidelity posterior times the three utilities; clamped
    at zero (anticorrelated fidelities carry no improvement value).
    """
    f_star = _incumbent(model)
    costs = _resolve_costs(model, costs)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    levels = np.broadcast_to(np.asarray(levels, dtype=int), (X.shape[0],)).copy()
    L = model.n_levels
    qp = model.query_cache(X, levels)
    qL = qp if np.all(levels == L) else model.query_cache(X, L)
    tr = model.transform
    ei = expected_improvement(tr.y_inv(qL.mean), tr.y_scale * np.sqrt(qL.var), f_star)
    return np.maximum(ei * _alpha_product(model, qp, qL, levels, costs), 0.0)


def mfei(model: MfGpModel, x, level: int, costs=None) -> float:
    """Multifidelity expected improvement at one (x, level) pair."""
    model._check_level(level)
    return float(mfei_batch(model, np.atleast_2d(np.asarray(x, dtype=float)),
                            level, costs)[0])


def fantasize(model: MfGpModel, x, level: int, z: float, cost=None) -> MfGpModel:
    """Model conditioned on a simulated observation at ``(x, level)``.

    The fantasy value is the posterior mean plus ``z`` posterior standard
    deviations; hyperparameters are frozen and the cached factorization
    is extended in place of a refit.
    """
    model._check_level(level)
    post = model.posterior(x, level)
    y_f = post.mean + post.std * float(z)
    if cost is None:
        cost = model.level_costs().get(level) or 0.0
    return model.with_observation(x, level, y_f, cost)


class TwoStepEvaluator:
    """Two-step lookahead acquisition over a fixed candidate pool.

    Pool posterior terms and the disturbance draws are computed once at
    construction and shared by every ``value`` call, so scoring many
    proposal points against the same pool costs one covariance solve per
    proposal.  Each fantasy update uses exact single-point conditioning,
    which shifts the pool means linearly in the draw and drops the pool
    variances by a draw-independent amount; no refactorization happens
    inside the Monte Carlo loop.
    """

    def __init__(self, model: MfGpModel, candidates: CandidateSet, cfg: McConfig,
                 costs=None, disturbances=None):
        self.model = model
        self.candidates = candidates
        self.cfg = cfg
        self.costs = _resolve_costs(model, costs)
        self.f_star = _incumbent(model)

        L = model.n_levels
        self._lv = candidates.levels
        self._qp = model.query_cache(candidates.X, self._lv)
        self._qL = model.query_cache(candidates.X, L)
        self._cov_lL = (model._prior_cov[self._lv - 1, L - 1]
                        - np.sum(self._qp.v * self._qL.v, axis=0))
        if disturbances is not None:
            self._zs = np.atleast_1d(np.asarray(disturbances, dtype=float))
        else:
            self._zs = np.random.default_rng(cfg.seed).standard_normal(cfg.n_mc)

    def batch(self, X, level: int) -> list[AcquisitionValue]:
        """Acquisition values for many proposal points at one fidelity.

        Vectorized over proposals: one covariance solve for the whole
        batch, then an (n_mc, pool, batch) tensor of next-step
        improvements reduced over the pool.
        """
        model = self.model
        model._check_level(level)
        L = model.n_levels
        tr = model.transform
        X = np.atleast_2d(np.asarray(X, dtype=float))

        immediate = mfei_batch(model, X, level, self.costs)

        qu = model.query_cache(X, level)
        var_u = qu.var                                  # (b,)
        sd_u = np.sqrt(var_u)
        denom = var_u + model.noise.noise_std**2 + model.jitter_used

        # posterior covariance of each pool entry against each fantasy point
        Xp, lv = self.candidates.X, self._lv
        cov_pu_l = model.prior_cross_gram(Xp, lv, X, level) - self._qp.v.T @ qu.v
        cov_pu_L = model.prior_cross_gram(Xp, L, X, level) - self._qL.v.T @ qu.v

        # one-point conditioning: variances and cross-covariances drop by a
        # draw-independent amount, means shift linearly in the draw
        var_l_f = np.maximum(self._qp.var[:, None] - cov_pu_l**2 / denom, 0.0)
        var_L_f = np.maximum(self._qL.var[:, None] - cov_pu_L**2 / denom, 0.0)
        cov_lL_f = self._cov_lL[:, None] - cov_pu_l * cov_pu_L / denom
        utility = _utility_product(var_l_f, var_L_f, cov_lL_f, lv[:, None], L,
                                   model.noise.noise_std, self.costs)

        # pool entries with no positive utility for any proposal cannot
        # contribute to the maximum; drop them before the big tensor
        keep = np.nonzero(np.max(utility, axis=1) > 0.0)[0]
        if keep.size == 0:
            keep = np.array([0])
        utility = utility[keep]
        shift = (cov_pu_L * (sd_u / denom))[keep]       # (m', b)
        sd_L_f = tr.y_scale * np.sqrt(var_L_f[keep])    # (m', b)
        mean_base = self._qL.mean[keep]

        zs = self._zs
        f_star_n = float(tr.y_fwd(self.f_star))
        # (n_mc, m', b) fantasy means at the top fidelity
        mean_f = mean_base[None, :, None] + zs[:, None, None] * shift[None, :, :]
        if level == L:
            f_best = np.minimum(f_star_n, qu.mean[None, :] + sd_u[None, :] * zs[:, None])
            f_best = f_best[:, None, :]                 # (n_mc, 1, b)
        else:
            f_best = np.full((zs.size, 1, 1), f_star_n)
        ei = expected_improvement(tr.y_inv(mean_f), sd_L_f[None, :, :],
                                  tr.y_inv(f_best))
        maxima = np.max(np.maximum(ei * utility[None, :, :], 0.0), axis=1)  # (n_mc, b)

        lookahead = np.mean(maxima, axis=0)
        if zs.size > 1:
            se = np.std(maxima, axis=0, ddof=1) / math.sqrt(zs.size)
        else:
            se = np.zeros(lookahead.shape)
        return [AcquisitionValue(float(immediate[i] + lookahead[i]), float(immediate[i]),
                                 float(lookahead[i]), float(se[i]))
                for i in range(X.shape[0])]

    def value(self, x, level: int) -> AcquisitionValue:
        return self.batch(np.atleast_2d(np.asarray(x, dtype=float)), level)[0]


def two_step_acquisition(model: MfGpModel, x, level: int, candidates: CandidateSet,
                         cfg: McConfig, costs=None, disturbances=None) -> AcquisitionValue:
    """Two-step lookahead acquisition estimated by Monte Carlo.

    The immediate term is the multifidelity expected improvement at
    ``(x, level)``.  For each disturbance draw the model is conditioned
    on the corresponding fantasy observation, the incumbent updated when
    the fantasy is top-fidelity, and the best multifidelity expected
    improvement over the shared candidate pool recorded; the lookahead
    term is the average of those maxima.  Deterministic given
    ``cfg.seed``.

    Parameters
    ----------
    candidates : CandidateSet
        Second-step (input, level) pool shared across all draws.
    costs : sequence of float, optional
        Per-level evaluation costs; defaults to costs recorded on the
        training samples.
    disturbances : ndarray, optional
        Explicit standard-normal draws overriding the seeded ones.

    Returns
    -------
    AcquisitionValue
        total = immediate + lookahead, with the Monte Carlo standard
        error of the lookahead term.
    """
    return TwoStepEvaluator(model, candidates, cfg, costs, disturbances).value(x, level)
