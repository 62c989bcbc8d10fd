"""Autoregressive multifidelity Gaussian process surrogate.

Each fidelity builds on the one below it through a constant scaling
factor plus an independent GP discrepancy, which induces a joint
covariance over (input, fidelity) pairs.  The model conditions on all
observations at all fidelities at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .gp import (
    FitConfig,
    KernelParams,
    NoiseParams,
    PosteriorMoments,
    Transform,
    _chol_with_escalation,
    _fit_se,
    _lml_from_chol,
    multistart_minimize,
    se_gram,
    standardizing_transform,
)

__all__ = [
    "Sample",
    "TrainingSet",
    "MfGpModel",
    "mf_cov",
    "mf_posterior",
    "posterior_fidelity_correlation",
    "fit_mf",
]

# Posterior variances below this (in standardized units) are treated as
# degenerate when forming the cross-fidelity correlation.
DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class Sample:
    """One observation: input point, fidelity level (1-based), value, cost."""

    x: np.ndarray
    level: int
    y: float
    cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if self.level < 1:
            raise ValueError("fidelity level must be >= 1")
        if self.cost < 0.0:
            raise ValueError("cost must be nonnegative")


class TrainingSet:
    """Ordered collection of multifidelity samples.

    Immutable: adding an observation returns a new set.  The incumbent is
    the best (minimum) value observed at the highest fidelity, or None
    until such a sample exists.
    """

    def __init__(self, samples=(), n_levels: int | None = None):
        self.samples = tuple(samples)
        if n_levels is None:
            n_levels = max((s.level for s in self.samples), default=1)
        if n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        for s in self.samples:
            if s.level > n_levels:
                raise ValueError(f"sample level {s.level} exceeds n_levels={n_levels}")
        self.n_levels = n_levels

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples[0].x.shape[0] if self.samples else 0

    @property
    def X(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack([s.x for s in self.samples])

    @property
    def levels(self) -> np.ndarray:
        return np.array([s.level for s in self.samples], dtype=int)

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=float)

    @property
    def incumbent(self) -> float | None:
        top = [s.y for s in self.samples if s.level == self.n_levels]
        return min(top) if top else None

    def with_sample(self, sample: Sample) -> "TrainingSet":
        return TrainingSet(self.samples + (sample,), self.n_levels)

    def level_costs(self) -> dict[int, float | None]:
        """Per-level evaluation cost taken from the first sample seen."""
        costs: dict[int, float | None] = {l: None for l in range(1, self.n_levels + 1)}
        for s in self.samples:
            if costs[s.level] is None:
                costs[s.level] = s.cost
        return costs

    def levels_present(self) -> tuple[int, ...]:
        return tuple(sorted({s.level for s in self.samples}))


def _level_weights(rho: np.ndarray, n_levels: int) -> np.ndarray:
    """W[j, l] = product of scaling factors carrying level j+1 into l+1.

    Zero below the diagonal; W[j, j] = 1.
    """
    W = np.zeros((n_levels, n_levels))
    for j in range(n_levels):
        W[j, j] = 1.0
        for l in range(j + 1, n_levels):
            W[j, l] = W[j, l - 1] * rho[l - 1]
    return W


def _joint_gram(X1, lv1, X2, lv2, kernels, W) -> np.ndarray:
    """Joint covariance between (input, level) pairs, levels 0-based."""
    L = len(kernels)
    if L == 1:
        return se_gram(X1, X2, kernels[0])
    K = np.zeros((X1.shape[0], X2.shape[0]))
    for j in range(L):
        i1 = np.nonzero(lv1 >= j)[0]
        i2 = np.nonzero(lv2 >= j)[0]
        if i1.size == 0 or i2.size == 0:
            continue
        a = W[j, lv1[i1]]
        b = W[j, lv2[i2]]
        G = se_gram(X1[i1], X2[i2], kernels[j])
        K[np.ix_(i1, i2)] += (a[:, None] * b[None, :]) * G
    return K


@dataclass
class _QueryCache:
    """Solved covariance terms for a batch of queries (standardized units)."""

    kq: np.ndarray      # (n_train, m) cross-covariances
    v: np.ndarray       # (n_train, m) L^{-1} kq
    mean: np.ndarray    # (m,)
    var: np.ndarray     # (m,) clamped >= 0


class MfGpModel:
    """Fitted multifidelity GP: immutable, with a cached factorization.

    Kernel parameters live in the transformed (unit-cube input,
    standardized output) space; predictions are reported in original
    units.  ``kernels[0]`` models the lowest fidelity, ``kernels[l]`` the
    discrepancy added at level ``l+1``; ``rho[l-1]`` scales level ``l``
    into level ``l+1``.
    """

    def __init__(self, train: TrainingSet, kernels, rho=(), noise: NoiseParams = NoiseParams(),
                 transform: Transform | None = None, missing_levels=(), fit_lml=None,
                 fit_theta=None):
        kernels = tuple(kernels)
        rho = np.atleast_1d(np.asarray(rho, dtype=float)) if len(np.atleast_1d(rho)) else np.zeros(0)
        if len(kernels) != train.n_levels:
            raise ValueError("one kernel parameter set required per fidelity level")
        if rho.shape[0] != train.n_levels - 1:
            raise ValueError("one scaling factor required per level transition")
        if not np.all(np.isfinite(rho)):
            raise ValueError("scaling factors must be finite")
        self.train = train
        self.kernels = kernels
        self.rho = rho
        self.noise = noise
        dim = kernels[0].dim
        self.transform = transform if transform is not None else Transform.identity(dim)
        self.missing_levels = tuple(missing_levels)
        self.fit_lml = fit_lml
        self.fit_theta = fit_theta

        self._W = _level_weights(rho, train.n_levels)
        sv = np.array([k.signal_variance for k in kernels])
        # prior covariance between levels at a common point (stationary kernel)
        self._prior_cov = self._W.T @ (sv[:, None] * self._W)

        n = len(train)
        if n:
            self._Xn = self.transform.x_fwd(train.X)
            self._lv = train.levels - 1
            self._yn = np.asarray(self.transform.y_fwd(train.y), dtype=float)
            K = _joint_gram(self._Xn, self._lv, self._Xn, self._lv, kernels, self._W)
            K[np.diag_indices_from(K)] += noise.noise_std**2
            self._L, self.jitter_used = _chol_with_escalation(K, noise.jitter)
            self._alpha = cho_solve((self._L, True), self._yn)
        else:
            self._Xn = np.zeros((0, dim))
            self._lv = np.zeros(0, dtype=int)
            self._yn = np.zeros(0)
            self._L = np.zeros((0, 0))
            self.jitter_used = noise.jitter
            self._alpha = np.zeros(0)

    # ------------------------------------------------------------------
    @property
    def n_levels(self) -> int:
        return self.train.n_levels

    @property
    def dim(self) -> int:
        return self.kernels[0].dim

    @property
    def n(self) -> int:
        return len(self.train)

    def level_costs(self) -> dict[int, float | None]:
        return self.train.level_costs()

    def prior_cov_levels(self, level: int, level2: int) -> float:
        """Prior covariance between two fidelities at any common point."""
        self._check_level(level)
        self._check_level(level2)
        return float(self._prior_cov[level - 1, level2 - 1])

    def _check_level(self, level: int):
        if not 1 <= level <= self.n_levels:
            raise ValueError(f"fidelity level {level} outside 1..{self.n_levels}")

    # ------------------------------------------------------------------
    def cov(self, x, level: int, x2, level2: int) -> float:
        """Induced covariance between two (input, level) pairs, original units."""
        self._check_level(level)
        self._check_level(level2)
        X1 = self.transform.x_fwd(np.atleast_2d(np.asarray(x, dtype=float)))
        X2 = self.transform.x_fwd(np.atleast_2d(np.asarray(x2, dtype=float)))
        k = _joint_gram(X1, np.array([level - 1]), X2, np.array([level2 - 1]),
                        self.kernels, self._W)
        return float(self.transform.var_inv(k[0, 0]))

    def prior_cross_gram(self, X1, levels1, X2, levels2) -> np.ndarray:
        """Prior covariance between two (input, level) batches, standardized units."""
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        lv1 = np.broadcast_to(np.asarray(levels1, dtype=int), (X1.shape[0],)).copy() - 1
        lv2 = np.broadcast_to(np.asarray(levels2, dtype=int), (X2.shape[0],)).copy() - 1
        return _joint_gram(self.transform.x_fwd(X1), lv1,
                           self.transform.x_fwd(X2), lv2, self.kernels, self._W)

    def query_cache(self, X, levels) -> _QueryCache:
        """Posterior terms for a query batch in standardized units.

        ``levels`` may be a scalar or one 1-based level per row of ``X``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lv = np.broadcast_to(np.asarray(levels, dtype=int), (X.shape[0],)).copy() - 1
        Xq = self.transform.x_fwd(X)
        prior = self._prior_cov[lv, lv]
        if self.n == 0:
            m = X.shape[0]
            return _QueryCache(np.zeros((0, m)), np.zeros((0, m)),
                               np.zeros(m), prior.astype(float).copy())
        kq = _joint_gram(self._Xn, self._lv, Xq, lv, self.kernels, self._W)
        v = solve_triangular(self._L, kq, lower=True)
        mean = kq.T @ self._alpha
        var = np.maximum(prior - np.sum(v**2, axis=0), 0.0)
        return _QueryCache(kq, v, mean, var)

    def posterior_batch(self, X, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances at fidelity ``level``, original units."""
        self._check_level(level)
        q = self.query_cache(X, level)
        return self.transform.y_inv(q.mean), self.transform.var_inv(q.var)

    def posterior(self, x, level: int) -> PosteriorMoments:
        mean, var = self.posterior_batch(np.atleast_2d(np.asarray(x, dtype=float)), level)
        return PosteriorMoments(float(mean[0]), float(var[0]))

    def fidelity_correlation(self, x, level: int) -> float:
        """Posterior correlation between fidelity ``level`` and the top level at ``x``."""
        self._check_level(level)
        L = self.n_levels
        if level == L:
            return 1.0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        q = self.query_cache(np.stack([x, x]), np.array([level, L]))
        prior_cross = self.prior_cov_levels(level, L)
        cross = prior_cross - float(q.v[:, 0] @ q.v[:, 1])
        var_l, var_L = float(q.var[0]), float(q.var[1])
        if var_l < DEGENERATE_VAR or var_L < DEGENERATE_VAR:
            return 0.0
        return float(np.clip(cross / math.sqrt(var_l * var_L), -1.0, 1.0))

    def log_marginal_likelihood(self) -> float:
        if self.n == 0:
            raise ValueError("log marginal likelihood requires observations")
        return _lml_from_chol(self._L, self._alpha, self._yn)

    # ------------------------------------------------------------------
    def with_observation(self, x, level: int, y: float, cost: float = 0.0) -> "MfGpModel":
        """New model conditioned on one extra sample, hyperparameters frozen.

        Extends the cached Cholesky factor by one row; falls back to a
        full refactorization if the extension breaks down numerically.
        """
        self._check_level(level)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        new_train = self.train.with_sample(Sample(x, level, float(y), cost))
        noise = replace(self.noise, jitter=self.jitter_used)
        if self.n == 0:
            return MfGpModel(new_train, self.kernels, self.rho, noise,
                             self.transform, self.missing_levels)
        q = self.query_cache(x[None, :], level)
        d2 = (self.prior_cov_levels(level, level) + self.noise.noise_std**2
              + self.jitter_used - float(q.v[:, 0] @ q.v[:, 0]))
        if d2 <= 1e-14 * (self.prior_cov_levels(level, level) + self.jitter_used):
            # breakdown: rebuild from scratch at the same jitter
            return MfGpModel(new_train, self.kernels, self.rho, noise,
                             self.transform, self.missing_levels)
        n = self.n
        L_ext = np.zeros((n + 1, n + 1))
        L_ext[:n, :n] = self._L
        L_ext[n, :n] = q.v[:, 0]
        L_ext[n, n] = math.sqrt(d2)

        model = object.__new__(MfGpModel)
        model.train = new_train
        model.kernels = self.kernels
        model.rho = self.rho
        model.noise = noise
        model.transform = self.transform
        model.missing_levels = self.missing_levels
        model.fit_lml = None
        model.fit_theta = self.fit_theta
        model._W = self._W
        model._prior_cov = self._prior_cov
        model._Xn = np.vstack([self._Xn, self.transform.x_fwd(x)[None, :]])
        model._lv = np.append(self._lv, level - 1)
        model._yn = np.append(self._yn, self.transform.y_fwd(float(y)))
        model._L = L_ext
        model.jitter_used = self.jitter_used
        model._alpha = cho_solve((L_ext, True), model._yn)
        return model


# ----------------------------------------------------------------------
# Module-level operations
# ----------------------------------------------------------------------

def mf_cov(x, level: int, x2, level2: int, model: MfGpModel) -> float:
    """Covariance induced by the autoregressive scheme between two pairs."""
    return model.cov(x, level, x2, level2)


def mf_posterior(model: MfGpModel, x, level: int) -> PosteriorMoments:
    """Posterior moments of fidelity ``level`` at ``x`` (prior if no data)."""
    return model.posterior(x, level)


def posterior_fidelity_correlation(model: MfGpModel, x, level: int) -> float:
    """Posterior correlation with the highest fidelity; 1 at the top level."""
    return model.fidelity_correlation(x, level)


# ----------------------------------------------------------------------
# Joint maximum-likelihood fitting
# ----------------------------------------------------------------------

def _theta_split(theta, n_levels, d, fit_noise):
    kernels = []
    off = 0
    for _ in range(n_levels):
        sv = math.exp(theta[off])
        ls = np.exp(theta[off + 1 : off + 1 + d])
        kernels.append(KernelParams(sv, ls))
        off += 1 + d
    rho = np.asarray(theta[off : off + n_levels - 1], dtype=float)
    off += n_levels - 1
    noise_std = math.exp(theta[off]) if fit_noise else None
    return tuple(kernels), rho, noise_std


def fit_mf(train: TrainingSet, config: FitConfig = FitConfig(),
           noise: NoiseParams = NoiseParams(), bounds=None) -> MfGpModel:
    """Fit all kernel parameter sets and scaling factors jointly by MLE.

    Inputs are mapped to the unit hypercube when ``bounds`` is given and
    outputs are standardized internally; the returned model reports in
    original units.  Deterministic given ``config.seed``.  Fidelity
    levels declared but absent from the data leave their kernels at the
    start values and are recorded on ``model.missing_levels``.
    """
    if len(train) == 0:
        raise ValueError("cannot fit a model without observations")
    L = train.n_levels
    d = train.dim
    y = train.y

    transform = standardizing_transform(bounds, y, d)
    Xn = transform.x_fwd(train.X)
    yn = np.asarray(transform.y_fwd(y), dtype=float)
    lv = train.levels - 1
    noise_n = replace(noise, noise_std=noise.noise_std / transform.y_scale)

    missing = tuple(l for l in range(1, L + 1) if l not in train.levels_present())

    if L == 1:
        # degenerate multifidelity: exactly the single-fidelity fit
        params, fitted_noise, theta, lml = _fit_se(Xn, yn, config, noise_n)
        return MfGpModel(train, (params,), (), fitted_noise, transform,
                         missing_levels=missing, fit_lml=lml, fit_theta=tuple(theta))

    span = Xn.max(axis=0) - Xn.min(axis=0)
    span[span <= 0.0] = 1.0
    var_y = float(np.var(yn))
    if var_y <= 0.0:
        var_y = 1.0

    lo_sv, hi_sv = config.signal_variance_bounds
    lo_ls, hi_ls = config.length_scale_bounds
    block_bounds = [(math.log(lo_sv), math.log(hi_sv))]
    block_bounds += [(math.log(lo_ls * s), math.log(hi_ls * s)) for s in span]
    bounds_theta = block_bounds * L + [config.rho_bounds] * (L - 1)
    if config.fit_noise:
        bounds_theta.append((math.log(config.noise_bounds[0]),
                             math.log(config.noise_bounds[1])))

    rng = np.random.default_rng(config.seed)
    starts = []
    if config.warm_start is not None:
        starts.append(np.asarray(config.warm_start, dtype=float))
    canonical = []
    for l in range(L):
        sv0 = var_y if l == 0 else 0.2 * var_y
        canonical.append(np.concatenate(([math.log(sv0)], np.log(0.3 * span))))
    canonical = np.concatenate(canonical + [np.ones(L - 1)])
    if config.fit_noise:
        canonical = np.append(canonical, math.log(max(noise_n.noise_std, 1e-3)))
    starts.append(canonical)
    while len(starts) < config.n_starts:
        blocks = []
        for l in range(L):
            sv = math.log(var_y) + rng.uniform(math.log(0.1), math.log(10.0))
            ls = np.log(span) + rng.uniform(math.log(0.05), math.log(2.0), size=d)
            blocks.append(np.concatenate(([sv], ls)))
        theta0 = np.concatenate(blocks + [rng.uniform(0.0, 2.0, size=L - 1)])
        if config.fit_noise:
            theta0 = np.append(theta0, math.log(max(noise_n.noise_std, 1e-3))
                               + rng.uniform(-2.0, 2.0))
        starts.append(theta0)
    starts = starts[: config.n_starts]

    def objective(theta):
        kernels, rho, nz_std = _theta_split(theta, L, d, config.fit_noise)
        nz = noise_n if nz_std is None else replace(noise_n, noise_std=nz_std)
        try:
            W = _level_weights(rho, L)
            K = _joint_gram(Xn, lv, Xn, lv, kernels, W)
            K[np.diag_indices_from(K)] += nz.noise_std**2
            Lc, _ = _chol_with_escalation(K, nz.jitter)
            alpha = cho_solve((Lc, True), yn)
            return -_lml_from_chol(Lc, alpha, yn)
        except Exception:
            return np.inf

    theta, neg = multistart_minimize(objective, starts, bounds_theta,
                                     config.max_passes, config.max_evals)
    kernels, rho, nz_std = _theta_split(theta, L, d, config.fit_noise)
    fitted_noise = noise_n if nz_std is None else replace(noise_n, noise_std=nz_std)
    return MfGpModel(train, kernels, rho, fitted_noise, transform,
                     missing_levels=missing, fit_lml=-neg, fit_theta=tuple(theta))
