"""Linear-beta diffusion schedule and the forward noising process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadRange, BadTimestep


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_min: float
    beta_max: float
    betas: np.ndarray       # (T,)
    alphas: np.ndarray      # (T,) = 1 - betas
    alpha_bars: np.ndarray  # (T,) running product of alphas

    def as_config(self) -> dict:
        return {"T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}


def make_schedule(T: int = 100, beta_min: float = 1e-4,
                  beta_max: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise BadRange(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise BadRange(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    if T == 1:
        betas = np.array([beta_min], dtype=np.float64)
    else:
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alphas = 1.0 - betas
    # sequential product, not np.cumprod: pins the op order so any runtime
    # computing it the obvious way gets bit-identical float64 values
    alpha_bars = np.empty(T, dtype=np.float64)
    acc = 1.0
    for i in range(T):
        acc *= alphas[i]
        alpha_bars[i] = acc
    return NoiseSchedule(T, beta_min, beta_max, betas, alphas, alpha_bars)


def forward_noise(schedule: NoiseSchedule, x0: np.ndarray, t: np.ndarray,
                  eps: np.ndarray) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t integer in [0, T)."""
    t = np.asarray(t)
    if t.ndim == 0:
        t = t.reshape(1)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise BadTimestep(f"timesteps must lie in [0, {schedule.T}), got {t}")
    ab = schedule.alpha_bars[t]
    shape = (-1,) + (1,) * (x0.ndim - 1)
    return np.sqrt(ab).reshape(shape) * x0 + np.sqrt(1.0 - ab).reshape(shape) * eps
