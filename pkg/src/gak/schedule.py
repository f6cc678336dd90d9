"""Noise schedule, closed-form forward diffusion and the DDIM update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances; index 0 of ``alpha_bar`` is the clean level (1.0)."""

    T: int
    beta: np.ndarray  # (T,) beta_1..beta_T
    alpha: np.ndarray  # (T,)
    alpha_bar: np.ndarray  # (T + 1,)

    def abar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise InvalidInputError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linear beta schedule over t = 1..T."""
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidInputError("require 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar)


def q_sample(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, applied to every view."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise InvalidInputError(f"noise shape {eps.shape} differs from image shape {x0.shape}")
    ab = sched.abar(t)
    if t == 0:
        return x0.copy()
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_eps(xt, x0_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Noise implied by (x_t, x0_hat): (x_t - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t)."""
    if t < 1:
        raise InvalidInputError("predict_eps needs t >= 1")
    ab = sched.abar(t)
    xt = np.asarray(xt, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if xt.shape != x0_hat.shape:
        raise InvalidInputError("x_t and x0_hat shapes differ")
    return (xt - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


def ddim_sigma(t: int, t_prev: int, sched: NoiseSchedule, eta: float = 0.0) -> float:
    """eta-scaled DDIM noise level; eta=1 is the stochastic upper bound."""
    if eta == 0.0:
        return 0.0
    ab, ab_prev = sched.abar(t), sched.abar(t_prev)
    return float(eta * np.sqrt((1 - ab_prev) / (1 - ab)) * np.sqrt(1 - ab / ab_prev))


def ddim_step(xt, x0_hat, t: int, t_prev: int, sigma: float, eps_draw, sched: NoiseSchedule) -> np.ndarray:
    """x_{t_prev} = sqrt(abar_prev) x0_hat + c eps_hat + sigma eps.

    c = sqrt(1 - abar_prev - sigma^2); every alpha here is cumulative.
    """
    if not 0 <= t_prev < t <= sched.T:
        raise InvalidInputError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_prev = sched.abar(t_prev)
    c2 = 1.0 - ab_prev - sigma * sigma
    if c2 < -1e-15:
        raise InvalidInputError(f"sigma^2 = {sigma * sigma} exceeds 1 - abar_prev = {1 - ab_prev}")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    eps_hat = predict_eps(xt, x0_hat, t, sched)
    out = np.sqrt(ab_prev) * x0_hat + np.sqrt(max(c2, 0.0)) * eps_hat
    if sigma != 0.0:
        out = out + sigma * np.asarray(eps_draw, dtype=np.float64)
    return out
