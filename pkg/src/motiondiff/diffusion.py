"""Diffusion schedules, forward noising, reverse posterior step, and CFG.

Pure functions over numpy arrays; schedules are immutable and safe to share
across concurrent samplers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class ScheduleError(ValueError):
    pass


def _asarray(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


@dataclass(frozen=True)
class DiffusionSchedule:
    """beta/alpha/alpha_bar arrays of length T plus posterior coefficients.

    Index convention: arrays are 0-based; step t in [1, T] reads index t-1.
    """

    kind: str
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ScheduleError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ScheduleError("all beta must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - beta))

    @property
    def T(self) -> int:
        return self.beta.size

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"step t={t} outside [1, {self.T}]")
        return t

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar at t-1, with the empty-product convention of 1 at t=1."""
        self._check_t(t)
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def posterior_mean_coeffs(self, t: int) -> tuple[float, float]:
        """(coefficient of x0_hat, coefficient of x_t) of the DDPM posterior mean."""
        self._check_t(t)
        ab_t = float(self.alpha_bar[t - 1])
        ab_prev = self.alpha_bar_prev(t)
        beta_t = float(self.beta[t - 1])
        alpha_t = float(self.alpha[t - 1])
        c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
        ct = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
        return c0, ct

    def posterior_variance(self, t: int) -> float:
        """Var of q(x_{t-1} | x_t, x0); zero at the deterministic t=1 step."""
        self._check_t(t)
        if t == 1:
            return 0.0
        ab_t = float(self.alpha_bar[t - 1])
        ab_prev = self.alpha_bar_prev(t)
        return float(self.beta[t - 1]) * (1.0 - ab_prev) / (1.0 - ab_t)


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance scale; s < 1 trades fidelity for diversity."""

    scale: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise ValueError("guidance scale must be finite")


DEFAULT_T = 500


def build_schedule(T: int = DEFAULT_T, kind: str = "cosine") -> DiffusionSchedule:
    """Linear (1e-4..0.02) or improved-DDPM cosine schedule of length T."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if kind == "linear":
        # endpoints follow the standard DDPM convention, rescaled for T
        scale = 1000.0 / T
        beta = np.linspace(scale * 1e-4, min(scale * 0.02, 0.999), T)
    elif kind == "cosine":
        def f(u):
            return np.cos((u + 0.008) / 1.008 * np.pi / 2.0) ** 2

        ts = np.arange(T + 1) / T
        alpha_bar = f(ts) / f(0.0)
        beta = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-12, 0.999)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(kind=kind, beta=beta)


def q_sample(x0, t: int, eps, sched: DiffusionSchedule) -> np.ndarray:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    sched._check_t(t)
    x0 = _asarray(x0)
    eps = _asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0/eps shape mismatch: {x0.shape} vs {eps.shape}")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_step(x_t, x_hat0, t: int, sched: DiffusionSchedule, noise,
                   simplified: bool = False) -> np.ndarray:
    """One reverse step x_t -> x_{t-1} given the x0-prediction.

    Default is the standard x0-parameterized DDPM posterior. With
    simplified=True the step instead draws from
    N(sqrt(ab_{t-1}) * x_hat0, (1 - ab_{t-1}) I), ignoring x_t.
    t=1 is deterministic in both modes.
    """
    sched._check_t(t)
    x_t = _asarray(x_t)
    x_hat0 = _asarray(x_hat0)
    noise = _asarray(noise)
    if simplified:
        ab_prev = sched.alpha_bar_prev(t)
        mean = np.sqrt(ab_prev) * x_hat0
        sigma = 0.0 if t == 1 else np.sqrt(1.0 - ab_prev)
    else:
        c0, ct = sched.posterior_mean_coeffs(t)
        mean = c0 * x_hat0 + ct * x_t
        sigma = np.sqrt(sched.posterior_variance(t))
    return mean + sigma * noise


def cfg_combine(uncond, cond, cfg: GuidanceConfig) -> np.ndarray:
    """uncond + s * (cond - uncond); bit-identical to cond at s=1."""
    uncond = _asarray(uncond)
    cond = _asarray(cond)
    if uncond.shape != cond.shape:
        raise ValueError(f"cfg shape mismatch: {uncond.shape} vs {cond.shape}")
    if not cfg.enabled or cfg.scale == 1.0:
        return cond.copy()
    if cfg.scale == 0.0:
        return uncond.copy()
    return uncond + cfg.scale * (cond - uncond)
