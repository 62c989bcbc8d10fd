"""Shared fixtures and independent oracle helpers."""

import numpy as np
import pytest

from nmfbo.gp import KernelParams, NoiseParams, kernel_se
from nmfbo.mfgp import MfGpModel, Sample, TrainingSet


def dense_mf_cov(xa, la, xb, lb, kernels, rho):
    """Covariance of the autoregressive scheme, written out recursively.

    Levels are 1-based; deliberately built from scalar kernel calls so it
    shares nothing with the vectorized model path.
    """
    def scale(j, l):
        out = 1.0
        for k in range(j, l):
            out *= rho[k - 1]
        return out

    total = 0.0
    for j in range(1, min(la, lb) + 1):
        total += scale(j, la) * scale(j, lb) * kernel_se(xa, xb, kernels[j - 1])
    return total


def dense_mf_posterior(train, kernels, rho, noise_std, jitter, x, level):
    """From-scratch dense solve of the joint multifidelity posterior."""
    X, lv, y = train.X, train.levels, train.y
    n = len(train)
    K = np.array([[dense_mf_cov(X[i], lv[i], X[j], lv[j], kernels, rho)
                   for j in range(n)] for i in range(n)])
    K += (noise_std**2 + jitter) * np.eye(n)
    k = np.array([dense_mf_cov(X[i], lv[i], x, level, kernels, rho) for i in range(n)])
    mean = k @ np.linalg.solve(K, y)
    var = dense_mf_cov(x, level, x, level, kernels, rho) - k @ np.linalg.solve(K, k)
    return mean, max(var, 0.0)


def make_mf_train(rng, n_low=8, n_high=4, d=1, n_levels=2, bounds=(0.0, 1.0)):
    """Smooth synthetic two-or-three-level training set."""
    lo, hi = bounds

    def f(x, level):
        base = float(np.sin(2 * np.pi * x[0]) + 0.3 * np.sum(x))
        return base * (1.0 + 0.5 * level) + 0.1 * level * float(np.cos(3 * x[0]))

    samples = []
    counts = {1: n_low, n_levels: n_high}
    for level in range(1, n_levels + 1):
        n = counts.get(level, max(2, n_high))
        for x in rng.uniform(lo, hi, size=(n, d)):
            samples.append(Sample(x, level, f(x, level), 0.1 * level))
    return TrainingSet(samples, n_levels=n_levels)


@pytest.fixture
def toy_model():
    """Small fixed 2-level model with known hyperparameters."""
    rng = np.random.default_rng(42)
    train = make_mf_train(rng, n_low=8, n_high=4)
    kernels = (KernelParams(1.2, [0.25]), KernelParams(0.2, [0.35]))
    return MfGpModel(train, kernels, rho=[1.4], noise=NoiseParams(0.0))


@pytest.fixture
def toy_kernels():
    return (KernelParams(1.2, [0.25]), KernelParams(0.2, [0.35]))
