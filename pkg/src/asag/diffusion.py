"""Noise schedule, forward noising, Tweedie denoising and the DDIM step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, InputError
from .tensor import Tensor, mean, mul


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables indexed by ``t = 1..T`` (stored zero-based)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def abar(self, t: int) -> float:
        """``alpha_bar_t`` with the convention ``alpha_bar_0 = 1``."""
        if not 0 <= t <= self.T:
            raise ContractError(f"timestep {t} outside 0..{self.T}")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1 or not (0 < beta_start <= beta_end < 1):
        raise InputError(f"invalid schedule T={T}, beta in [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def schedule_from_betas(beta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size == 0 or np.any(beta <= 0) or np.any(beta >= 1):
        raise InputError("betas must lie strictly between 0 and 1")
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 1 <= t <= sched.T:
        raise ContractError(f"timestep {t} outside 1..{sched.T}")


def q_sample(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} and eps {eps.shape} differ")
    _check_t(t, sched)
    ab = sched.abar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_sample_batch(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Vectorized :func:`q_sample` with one timestep per leading index."""
    ab = sched.alpha_bar[np.asarray(t) - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def tweedie_denoise(x_t, eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Posterior-mean estimate of ``x0`` from ``x_t`` and a noise prediction."""
    _check_t(t, sched)
    ab = sched.abar(t)
    if ab <= 0:
        raise ContractError("alpha_bar_t is zero; x0 is not identifiable")
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def ddim_step(x_t, eps_hat, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= sched.T:
        raise ContractError(f"DDIM needs 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    x0_hat = tweedie_denoise(x_t, eps_hat, t, sched)
    ab_prev = sched.abar(t_prev)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * np.asarray(eps_hat)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Evenly strided timesteps over ``1..T``, largest first, starting at ``T``."""
    if not 1 <= steps <= T:
        raise ContractError(f"steps must be in 1..{T}, got {steps}")
    stride = T // steps
    return [T - i * stride for i in range(steps)]


def dsm_loss(model_eps, true_eps):
    """Mean squared error over every coordinate; accepts arrays or Tensors."""
    if model_eps.shape != true_eps.shape:
        raise DimensionError(f"prediction {model_eps.shape} and target {true_eps.shape} differ")
    if isinstance(model_eps, Tensor) or isinstance(true_eps, Tensor):
        diff = model_eps - true_eps
        return mean(mul(diff, diff))
    diff = np.asarray(model_eps) - np.asarray(true_eps)
    return float(np.mean(diff * diff))


def gaussian_optimal_eps(x_t, t: int, sched: NoiseSchedule, data_var: float = 1.0, data_mean=0.0):
    """``E[eps | x_t]`` when the data are ``N(data_mean, data_var I)``."""
    ab = sched.abar(t)
    centered = np.asarray(x_t) - np.sqrt(ab) * np.asarray(data_mean)
    return np.sqrt(1.0 - ab) * centered / (ab * data_var + 1.0 - ab)


def ddim_sample(eps_fn, x_T: np.ndarray, sched: NoiseSchedule, steps: int) -> np.ndarray:
    """Run the DDIM chain from ``x_T`` with ``eps_fn(x_t, t)`` as the predictor."""
    ts = ddim_timesteps(sched.T, steps)
    x = np.asarray(x_T, dtype=np.float64)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        x = ddim_step(x, eps_fn(x, t), t, t_prev, sched)
    return x
