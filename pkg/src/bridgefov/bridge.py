"""Gaussian-bridge diffusion between paired images, plus a conditional-DDPM
baseline sampler.

The bridge runs between a clean target image (k=0) and a degraded input
image (k=K). Intermediate states are exact Gaussians whose mean is a convex
combination of the endpoints, so training needs no simulation and sampling
can take arbitrarily few steps, including exactly one.

All operations work on plain float arrays in model units; images enter and
leave model units via :func:`hu_to_model` / :func:`model_to_hu`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Betas are quantized to this grid so that every prefix sum, suffix sum and
# difference of accumulated variances is exact in float64 (the scaled values
# stay far below 2**53). The schedule identities asserted downstream are then
# exact equalities, not approximations.
_BETA_QUANTUM = 2.0**-40

HU_WINDOW = (-1000.0, 2000.0)   # HU range mapped onto [-1, 1] model units


def hu_to_model(hu):
    """Affine map of the HU window onto [-1, 1], clamped outside it."""
    lo, hi = HU_WINDOW
    u = 2.0 * (np.asarray(hu, dtype=float) - lo) / (hi - lo) - 1.0
    return np.clip(u, -1.0, 1.0)


def model_to_hu(u):
    lo, hi = HU_WINDOW
    return (np.asarray(u, dtype=float) + 1.0) / 2.0 * (hi - lo) + lo


@dataclass(frozen=True)
class Schedule:
    """Discrete diffusion schedule with exactly-accumulated variances.

    Arrays are indexed by timestep k = 0..K; slot 0 of ``beta`` is unused.
    ``sigma2[k]`` is the variance accumulated from 0 to k, ``sigma_bar2[k]``
    the remainder up to K, and ``sigma2[k] + sigma_bar2[k] == sigma2[K]``
    holds exactly for every k.
    """

    K: int
    beta: np.ndarray         # (K+1,), per-step variance increments
    sigma2: np.ndarray       # (K+1,), prefix sums of beta
    sigma_bar2: np.ndarray   # (K+1,), sigma2[K] - sigma2[k]

    @property
    def total_variance(self):
        return float(self.sigma2[self.K])

    def sigma(self, k: int) -> float:
        return float(np.sqrt(self.sigma2[k]))

    def alpha2(self, k_prev: int, k: int) -> float:
        """Variance accumulated between two timesteps, sigma2[k] - sigma2[k_prev]."""
        return float(self.sigma2[k] - self.sigma2[k_prev])


def make_schedule(K: int, beta_max: float = 0.3, beta_min: float = 1e-4) -> Schedule:
    """Symmetric piecewise-linear schedule: beta rises from beta_min/K to
    beta_max/K at mid-chain and falls back mirror-symmetrically
    (beta[k] == beta[K+1-k]).
    """
    if K < 2 or K % 2 != 0:
        raise ValueError("K must be an even integer >= 2")
    if not (0 < beta_min <= beta_max):
        raise ValueError("need 0 < beta_min <= beta_max")

    half = K // 2
    if half == 1:
        ramp = np.array([beta_max / K])
    else:
        ramp = (beta_min + (beta_max - beta_min) * np.arange(half) / (half - 1)) / K
    beta = np.zeros(K + 1)
    beta[1:half + 1] = ramp
    beta[half + 1:] = ramp[::-1]
    beta[1:] = np.maximum(np.round(beta[1:] / _BETA_QUANTUM), 1.0) * _BETA_QUANTUM

    sigma2 = np.zeros(K + 1)
    sigma2[1:] = np.cumsum(beta[1:])
    sigma_bar2 = sigma2[K] - sigma2
    return Schedule(K=K, beta=beta, sigma2=sigma2, sigma_bar2=sigma_bar2)


@dataclass(frozen=True)
class BridgePair:
    """A training pair in model units: clean target x0, degraded input x1."""

    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise ValueError("paired images must share a grid")


@dataclass(frozen=True)
class SamplerConfig:
    nfe: int = 1
    seed: int = 0

    def validate(self, K: int):
        if not (1 <= self.nfe <= K):
            raise ValueError("nfe must lie in [1, K]")


def _check_k(sched: Schedule, k: int, lo: int = 0):
    if not (lo <= k <= sched.K):
        raise ValueError(f"timestep {k} outside [{lo}, {sched.K}]")


def marginal_sample(sched: Schedule, x0: np.ndarray, x1: np.ndarray, k: int, seed) -> np.ndarray:
    """Draw from the bridge marginal at timestep k.

    mean = (sigma_bar2/sigma2_K) x0 + (sigma2/sigma2_K) x1,
    var  = sigma2 * sigma_bar2 / sigma2_K per pixel.
    The endpoints k=0 and k=K return x0/x1 exactly, with no noise leakage.
    """
    _check_k(sched, k)
    if x0.shape != x1.shape:
        raise ValueError("x0 and x1 must share a grid")
    if k == 0:
        return x0.astype(float, copy=True)
    if k == sched.K:
        return x1.astype(float, copy=True)
    total = sched.total_variance
    w1 = sched.sigma2[k] / total
    w0 = 1.0 - w1
    std = np.sqrt(sched.sigma2[k] * sched.sigma_bar2[k] / total)
    z = np.random.default_rng(seed).standard_normal(x0.shape)
    return w0 * x0 + w1 * x1 + std * z


def training_target(x0: np.ndarray, xk: np.ndarray, sched: Schedule, k: int) -> np.ndarray:
    """Regression target for the noise estimator: (x_k - x0) / sigma_k."""
    _check_k(sched, k, lo=1)
    return (xk - x0) / sched.sigma(k)


def predict_x0(xk: np.ndarray, eps: np.ndarray, sched: Schedule, k: int) -> np.ndarray:
    """Denoised endpoint estimate x_k - sigma_k * eps."""
    _check_k(sched, k, lo=1)
    return xk - sched.sigma(k) * eps


def posterior_step(x0_hat: np.ndarray, xk: np.ndarray, sched: Schedule,
                   k_prev: int, k: int, seed) -> np.ndarray:
    """One reverse step: sample x_{k_prev} given (x0_hat, x_k).

    mean = (alpha2/sigma2_k) x0_hat + (sigma2_{k_prev}/sigma2_k) x_k with
    alpha2 = sigma2_k - sigma2_{k_prev}; the two mean coefficients sum to 1
    exactly. Variance is sigma2_{k_prev} * alpha2 / sigma2_k; it vanishes at
    k_prev = 0, where x0_hat is returned unchanged.
    """
    if not (0 <= k_prev < k <= sched.K):
        raise ValueError("need 0 <= k_prev < k <= K")
    if k_prev == 0:
        return x0_hat.astype(float, copy=True)
    s2k = sched.sigma2[k]
    c0 = sched.alpha2(k_prev, k) / s2k
    c_prev = 1.0 - c0
    var = sched.sigma2[k_prev] * sched.alpha2(k_prev, k) / s2k
    z = np.random.default_rng(seed).standard_normal(xk.shape)
    return c0 * x0_hat + c_prev * xk + np.sqrt(var) * z


def nfe_timesteps(K: int, nfe: int) -> list[int]:
    """Strictly decreasing timesteps K..0 with uniform spacing in k."""
    if not (1 <= nfe <= K):
        raise ValueError("nfe must lie in [1, K]")
    ts = [int(round(K * (nfe - i) / nfe)) for i in range(nfe + 1)]
    for i in range(1, len(ts)):
        ts[i] = min(ts[i], ts[i - 1] - 1)
    if ts[-1] != 0:
        raise ValueError("timestep grid failed to reach 0")
    return ts


def sample(denoise_fn, x1: np.ndarray, sched: Schedule, cfg: SamplerConfig,
           on_step=None) -> np.ndarray:
    """Run the reverse bridge from the degraded input down to a clean estimate.

    ``denoise_fn(x, k)`` returns the noise estimate at timestep k. The walk
    visits nfe+1 uniformly spaced timesteps; the last step has k_prev = 0 and
    zero variance, so the output equals the final denoised estimate.
    ``on_step(step, k, x0_hat)``, when given, observes each intermediate
    estimate. Deterministic per (seed, nfe).
    """
    cfg.validate(sched.K)
    ts = nfe_timesteps(sched.K, cfg.nfe)
    x = np.asarray(x1, dtype=float).copy()
    for step, (k, k_prev) in enumerate(zip(ts[:-1], ts[1:])):
        eps = denoise_fn(x, k)
        x0_hat = predict_x0(x, eps, sched, k)
        if on_step is not None:
            on_step(step, k, x0_hat)
        x = posterior_step(x0_hat, x, sched, k_prev, k, seed=(cfg.seed, step))
    return x


@dataclass(frozen=True)
class CddpmSchedule:
    """Variance-preserving noise schedule for the conditional-DDPM baseline.

    a[t] = sqrt(alpha_bar_t) and b[t] = sqrt(1 - alpha_bar_t) scale signal
    and noise so that a^2 + b^2 = 1; index 0 holds alpha_bar = 1.
    """

    T: int
    beta: np.ndarray         # (T+1,), slot 0 unused
    alpha_bar: np.ndarray    # (T+1,), cumulative products, alpha_bar[0] = 1

    @property
    def a(self):
        return np.sqrt(self.alpha_bar)

    @property
    def b(self):
        return np.sqrt(1.0 - self.alpha_bar)


def cddpm_schedule(T: int, beta1: float = 1e-4, betaT: float = 0.02) -> CddpmSchedule:
    if T < 1:
        raise ValueError("T must be positive")
    if not (0 < beta1 <= betaT < 1):
        raise ValueError("need 0 < beta1 <= betaT < 1")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta1, betaT, T)
    alpha_bar = np.ones(T + 1)
    alpha_bar[1:] = np.cumprod(1.0 - beta[1:])
    return CddpmSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def cddpm_sample(cond_denoise_fn, condition: np.ndarray, sched: CddpmSchedule, seed) -> np.ndarray:
    """Ancestral sampling from pure Gaussian noise, conditioned at every step.

    ``cond_denoise_fn(x, condition, t)`` estimates the injected noise; the
    condition image rides along as a second input channel. The final step has
    zero posterior variance and returns the clean estimate directly.
    """
    rng = np.random.default_rng((seed, 0))
    x = rng.standard_normal(condition.shape)
    a, b = sched.a, sched.b
    for t in range(sched.T, 0, -1):
        eps = cond_denoise_fn(x, condition, t)
        x0_hat = (x - b[t] * eps) / a[t]
        abar_t, abar_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
        beta_t = sched.beta[t]
        coef0 = np.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
        coefx = np.sqrt(1.0 - beta_t) * (1.0 - abar_prev) / (1.0 - abar_t)
        mean = coef0 * x0_hat + coefx * x
        if t == 1:
            x = mean
        else:
            var = beta_t * (1.0 - abar_prev) / (1.0 - abar_t)
            z = np.random.default_rng((seed, t)).standard_normal(x.shape)
            x = mean + np.sqrt(var) * z
    return x
