"""Single-output Gaussian process machinery.

Squared-exponential kernel, jitter-escalating Cholesky factorization,
posterior prediction, log marginal likelihood and derivative-free
maximum-likelihood fitting.  The multifidelity surrogate reuses every
primitive in this module.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

__all__ = [
    "KernelParams",
    "NoiseParams",
    "PosteriorMoments",
    "Transform",
    "FitConfig",
    "NumericsError",
    "FactorizationError",
    "kernel_se",
    "se_gram",
    "factorize",
    "GpModel",
    "gp_posterior",
    "log_marginal_likelihood",
    "fit_mle",
]

LOG_2PI = math.log(2.0 * math.pi)

# Jitter escalation policy: start at JITTER_FLOOR * mean(diag K), grow by
# JITTER_GROWTH until JITTER_CEIL * mean(diag K), then give up.
JITTER_FLOOR = 1e-10
JITTER_CEIL = 1e-4
JITTER_GROWTH = 10.0


class NumericsError(RuntimeError):
    """Numerical failure in GP linear algebra."""


class FactorizationError(NumericsError):
    """Covariance matrix could not be factorized after jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters.

    ``signal_variance`` is the marginal variance at zero distance and
    ``length_scales`` holds one strictly positive scale per input
    dimension.
    """

    signal_variance: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if self.signal_variance <= 0.0:
            raise ValueError("signal_variance must be strictly positive")
        if not np.all(ls > 0.0):
            raise ValueError("length_scales must be strictly positive")

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]


@dataclass(frozen=True)
class NoiseParams:
    """Observation noise standard deviation plus a stabilizing jitter.

    ``jitter`` is an absolute diagonal boost used as the starting point of
    the escalation schedule in :func:`factorize`.
    """

    noise_std: float = 0.0
    jitter: float = 1e-10

    def __post_init__(self):
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")
        if self.jitter <= 0.0:
            raise ValueError("jitter must be strictly positive")


@dataclass(frozen=True)
class PosteriorMoments:
    """Predictive mean and (clamped nonnegative) variance at one point."""

    mean: float
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "variance", max(float(self.variance), 0.0))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def kernel_se(x, x2, params: KernelParams) -> float:
    """Squared-exponential covariance between two points.

    Returns ``signal_variance * exp(-0.5 * sum(((x - x2) / ls)**2))``.
    Raises ``ValueError`` on dimension mismatch.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.shape[0] != params.dim:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x2 {x2.shape}, "
            f"length_scales {params.length_scales.shape}"
        )
    r2 = np.sum(((x - x2) / params.length_scales) ** 2)
    return float(params.signal_variance * math.exp(-0.5 * r2))


def se_gram(X, X2, params: KernelParams) -> np.ndarray:
    """Squared-exponential Gram matrix between two point sets.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    X2 : ndarray, shape (m, d)
    params : KernelParams

    Returns
    -------
    ndarray, shape (n, m)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != params.dim or X2.shape[1] != params.dim:
        raise ValueError("dimension mismatch between points and length_scales")
    Xs = X / params.length_scales
    X2s = X2 / params.length_scales
    # ||a-b||^2 = ||a||^2 + ||b||^2 - 2 a.b, clamped against roundoff
    r2 = (
        np.sum(Xs**2, axis=1)[:, None]
        + np.sum(X2s**2, axis=1)[None, :]
        - 2.0 * (Xs @ X2s.T)
    )
    np.maximum(r2, 0.0, out=r2)
    return params.signal_variance * np.exp(-0.5 * r2)


def _chol_with_escalation(K: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    """Cholesky of ``K + j*I``, escalating ``j`` from ``jitter`` upward.

    Returns the lower factor together with the jitter actually used.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    mean_diag = float(np.mean(np.diag(K)))
    scale = mean_diag if mean_diag > 0.0 else 1.0
    tried = []
    j = float(jitter)
    while True:
        tried.append(j)
        try:
            L = np.linalg.cholesky(K + j * np.eye(n)) if j != 0.0 else np.linalg.cholesky(K)
            return L, j
        except np.linalg.LinAlgError:
            pass
        if j >= JITTER_CEIL * scale:
            raise FactorizationError(
                f"matrix not positive definite; final jitter tried {tried[-1]:.3e} "
                f"(schedule {tried[0]:.3e} .. {tried[-1]:.3e}, n={n})"
            )
        j = JITTER_FLOOR * scale if j < JITTER_FLOOR * scale else j * JITTER_GROWTH


def factorize(K: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular Cholesky factor of ``K + jitter*I``.

    If the factorization fails, the jitter is escalated geometrically up
    to ``1e-4`` times the mean diagonal before raising
    :class:`FactorizationError` naming the final jitter tried.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be a square matrix")
    L, _ = _chol_with_escalation(K, jitter)
    return L


def _posterior_from_chol(L, alpha, k_vec, prior_var):
    """Mean/variance from a cached factorization.

    ``alpha = K^{-1} y``; ``k_vec`` the covariance of the query against the
    training points; ``prior_var`` the query's own prior variance.
    """
    mean = float(k_vec @ alpha)
    v = solve_triangular(L, k_vec, lower=True)
    var = float(prior_var - v @ v)
    return mean, max(var, 0.0)


@dataclass(frozen=True)
class Transform:
    """Affine map taking raw inputs/outputs to the modelled space.

    Inputs are rescaled per-dimension onto the unit hypercube and outputs
    standardized; the identity transform leaves everything untouched.
    """

    x_lo: np.ndarray
    x_span: np.ndarray
    y_shift: float
    y_scale: float

    @classmethod
    def identity(cls, dim: int) -> "Transform":
        return cls(np.zeros(dim), np.ones(dim), 0.0, 1.0)

    @classmethod
    def from_data(cls, bounds, y) -> "Transform":
        bounds = np.asarray(bounds, dtype=float)
        lo = bounds[:, 0]
        span = bounds[:, 1] - bounds[:, 0]
        if np.any(span <= 0.0):
            raise ValueError("bounds must satisfy low < high")
        y = np.asarray(y, dtype=float)
        shift = float(np.mean(y)) if y.size else 0.0
        scale = float(np.std(y)) if y.size else 1.0
        if scale <= 0.0:
            scale = 1.0
        return cls(lo, span, shift, scale)

    @property
    def is_identity(self) -> bool:
        return (
            self.y_shift == 0.0
            and self.y_scale == 1.0
            and np.all(self.x_lo == 0.0)
            and np.all(self.x_span == 1.0)
        )

    def x_fwd(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_lo) / self.x_span

    def y_fwd(self, y):
        return (y - self.y_shift) / self.y_scale

    def y_inv(self, y):
        return self.y_shift + self.y_scale * y

    def var_inv(self, var):
        return var * self.y_scale**2


class GpModel:
    """Immutable fitted single-fidelity GP with a cached factorization.

    Hyperparameters live in the transformed space; all predictions are
    reported in the original units of ``X`` and ``y``.
    """

    def __init__(self, X, y, params: KernelParams, noise: NoiseParams,
                 transform: Transform | None = None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        self.X = X
        self.y = y
        self.params = params
        self.noise = noise
        self.transform = transform if transform is not None else Transform.identity(X.shape[1] if X.size else params.dim)
        self.fit_theta = None
        self.fit_lml = None

        self._Xn = self.transform.x_fwd(X) if X.size else X
        self._yn = np.asarray(self.transform.y_fwd(y), dtype=float)
        n = X.shape[0]
        if n:
            K = se_gram(self._Xn, self._Xn, params)
            K[np.diag_indices_from(K)] += noise.noise_std**2
            self._L, self.jitter_used = _chol_with_escalation(K, noise.jitter)
            self._alpha = cho_solve((self._L, True), self._yn)
        else:
            self._L = np.zeros((0, 0))
            self.jitter_used = noise.jitter
            self._alpha = np.zeros(0)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def posterior(self, x) -> PosteriorMoments:
        """Posterior mean and variance at a single query point."""
        mean, var = self.posterior_batch(np.atleast_2d(np.asarray(x, dtype=float)))
        return PosteriorMoments(float(mean[0]), float(var[0]))

    def posterior_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances at many query points.

        Returns arrays of shape (m,) in original output units; reverts to
        the prior when the model holds no observations.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xq = self.transform.x_fwd(X)
        prior = self.params.signal_variance
        if self.n == 0:
            mean_n = np.zeros(X.shape[0])
            var_n = np.full(X.shape[0], prior)
        else:
            Ks = se_gram(self._Xn, Xq, self.params)
            mean_n = Ks.T @ self._alpha
            V = solve_triangular(self._L, Ks, lower=True)
            var_n = np.maximum(prior - np.sum(V**2, axis=0), 0.0)
        return self.transform.y_inv(mean_n), self.transform.var_inv(var_n)

    def log_marginal_likelihood(self) -> float:
        """Gaussian log evidence of the held data (transformed space)."""
        if self.n == 0:
            raise ValueError("log marginal likelihood requires observations")
        return _lml_from_chol(self._L, self._alpha, self._yn)

    @classmethod
    def fit(cls, X, y, config: "FitConfig | None" = None,
            noise: NoiseParams = NoiseParams(), bounds=None) -> "GpModel":
        """Fit hyperparameters by MLE and return the conditioned model.

        Inputs are mapped to the unit hypercube when ``bounds`` is given
        and outputs standardized internally; predictions come back in
        original units.
        """
        config = config if config is not None else FitConfig()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        transform = standardizing_transform(bounds, y, X.shape[1])
        Xn = transform.x_fwd(X)
        yn = np.asarray(transform.y_fwd(y), dtype=float)
        noise_n = replace(noise, noise_std=noise.noise_std / transform.y_scale)
        params, fitted_noise, theta, lml = _fit_se(Xn, yn, config, noise_n)
        model = cls(X, y, params, fitted_noise, transform)
        model.fit_theta = tuple(theta)
        model.fit_lml = lml
        return model


def _lml_from_chol(L, alpha, y) -> float:
    n = y.shape[0]
    return float(-0.5 * (y @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def gp_posterior(model: GpModel, x) -> PosteriorMoments:
    """Posterior moments of ``model`` at ``x`` (prior if no data)."""
    return model.posterior(x)


def log_marginal_likelihood(X, y, params: KernelParams, noise: NoiseParams) -> float:
    """Log marginal likelihood of ``y`` under a zero-mean SE-kernel GP.

    The covariance includes the noise variance and the jitter actually
    used for factorization on its diagonal.  Factorization failures
    propagate as :class:`FactorizationError`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size == 0:
        raise ValueError("log marginal likelihood requires observations")
    K = se_gram(X, X, params)
    K[np.diag_indices_from(K)] += noise.noise_std**2
    L, _ = _chol_with_escalation(K, noise.jitter)
    alpha = cho_solve((L, True), y)
    return _lml_from_chol(L, alpha, y)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the multi-start derivative-free likelihood search.

    Bounds are understood per hyperparameter in the space the data is fit
    in, scaled by the observed per-dimension input range (length scales)
    and output variance (signal variance).
    """

    n_starts: int = 8
    seed: int = 0
    max_passes: int = 4
    max_evals: int | None = None  # objective-evaluation cap per start
    length_scale_bounds: tuple[float, float] = (1e-3, 1e3)
    signal_variance_bounds: tuple[float, float] = (1e-6, 1e6)
    rho_bounds: tuple[float, float] = (-5.0, 5.0)
    noise_bounds: tuple[float, float] = (1e-8, 1e1)
    fit_noise: bool = False
    warm_start: tuple | None = None  # opaque theta vector from a prior fit

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


def multistart_minimize(objective, starts, bounds, max_passes, max_evals=None):
    """Best of several bounded Powell searches.

    The returned point is never worse than any raw start.  Raises
    :class:`NumericsError` when every evaluation failed.
    """
    best_theta = None
    best_val = np.inf
    n_failed = 0
    options = {"maxiter": max_passes, "xtol": 1e-4, "ftol": 1e-4}
    if max_evals is not None:
        options["maxfev"] = max_evals
    for theta0 in starts:
        v0 = objective(theta0)
        if np.isfinite(v0) and v0 < best_val:
            best_val, best_theta = v0, np.asarray(theta0, dtype=float)
        if not np.isfinite(v0):
            n_failed += 1
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # budgeted Powell may stop early
            res = minimize(
                objective,
                np.asarray(theta0, dtype=float),
                method="Powell",
                bounds=bounds,
                options=options,
            )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = float(res.fun), np.asarray(res.x, dtype=float)
    if best_theta is None:
        raise NumericsError(
            f"all {len(starts)} starts failed factorization "
            f"({n_failed} raw evaluations non-finite)"
        )
    return best_theta, best_val


def _se_fit_starts(rng, n_starts, d, warm=None, ls_scale=None, sv_scale=1.0):
    """Start points in (log sv, log ls_1..d) space: warm, canonical, random."""
    ls_scale = np.ones(d) if ls_scale is None else ls_scale
    starts = []
    if warm is not None:
        starts.append(np.asarray(warm, dtype=float))
    starts.append(np.concatenate(([math.log(sv_scale)], np.log(0.3 * ls_scale))))
    while len(starts) < n_starts:
        sv = math.log(sv_scale) + rng.uniform(math.log(0.1), math.log(10.0))
        ls = np.log(ls_scale) + rng.uniform(math.log(0.05), math.log(2.0), size=d)
        starts.append(np.concatenate(([sv], ls)))
    return starts[:n_starts]


def standardizing_transform(bounds, y, dim: int) -> Transform:
    """Transform mapping inputs onto the unit cube and outputs to zero mean, unit variance."""
    if bounds is not None:
        return Transform.from_data(bounds, y)
    y = np.asarray(y, dtype=float)
    scale = float(np.std(y)) if y.size else 1.0
    return Transform(np.zeros(dim), np.ones(dim),
                     float(np.mean(y)) if y.size else 0.0,
                     scale if scale > 0.0 else 1.0)


def _fit_se(X, y, config: FitConfig, noise: NoiseParams):
    """Multi-start SE-kernel fit on data as given.

    Start points and bounds are scaled by the per-dimension input range
    and output variance.  Returns ``(params, noise, theta, lml)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size == 0:
        raise ValueError("cannot fit hyperparameters without observations")
    d = X.shape[1]

    span = X.max(axis=0) - X.min(axis=0)
    span[span <= 0.0] = 1.0
    var_y = float(np.var(y))
    if var_y <= 0.0:
        var_y = 1.0

    lo_sv, hi_sv = config.signal_variance_bounds
    lo_ls, hi_ls = config.length_scale_bounds
    bounds = [(math.log(lo_sv), math.log(hi_sv))]
    bounds += [(math.log(lo_ls * s), math.log(hi_ls * s)) for s in span]
    if config.fit_noise:
        bounds.append((math.log(config.noise_bounds[0]), math.log(config.noise_bounds[1])))

    def objective(theta):
        params = KernelParams(math.exp(theta[0]), np.exp(theta[1 : 1 + d]))
        nz = noise if not config.fit_noise else replace(noise, noise_std=math.exp(theta[1 + d]))
        try:
            return -log_marginal_likelihood(X, y, params, nz)
        except FactorizationError:
            return np.inf

    rng = np.random.default_rng(config.seed)
    starts = _se_fit_starts(rng, config.n_starts, d, warm=config.warm_start,
                            ls_scale=span, sv_scale=var_y)
    if config.fit_noise:
        starts = [
            np.concatenate((s, [math.log(max(noise.noise_std, 1e-3))]))
            if s.shape[0] == 1 + d else s
            for s in starts
        ]
    theta, neg = multistart_minimize(objective, starts, bounds,
                                     config.max_passes, config.max_evals)

    params = KernelParams(math.exp(theta[0]), np.exp(theta[1 : 1 + d]))
    fitted_noise = noise
    if config.fit_noise:
        fitted_noise = replace(noise, noise_std=math.exp(theta[1 + d]))
    return params, fitted_noise, np.asarray(theta, dtype=float), -neg


def fit_mle(X, y, config: FitConfig = FitConfig(),
            noise: NoiseParams = NoiseParams()) -> tuple[KernelParams, NoiseParams]:
    """Fit SE-kernel hyperparameters by maximum likelihood.

    Multi-start Powell search over log hyperparameters; deterministic
    given ``config.seed``.  The outputs are rescaled to unit variance for
    the search and the result mapped back, so the returned
    hyperparameters apply to the raw ``(X, y)`` data.
    ``noise.noise_std`` is held fixed unless ``config.fit_noise`` is set.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_scale = float(np.std(y)) if y.size else 1.0
    if y_scale <= 0.0:
        y_scale = 1.0
    noise_n = replace(noise, noise_std=noise.noise_std / y_scale)
    params_n, noise_f, _, _ = _fit_se(X, y / y_scale, config, noise_n)
    params = KernelParams(params_n.signal_variance * y_scale**2, params_n.length_scales)
    fitted_noise = replace(noise, noise_std=noise_f.noise_std * y_scale)
    return params, fitted_noise
