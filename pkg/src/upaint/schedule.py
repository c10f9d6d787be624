"""Closed-form Gaussian diffusion arithmetic.

Schedules, forward noising, clean-image prediction, posterior statistics,
and the ancestral / deterministic reverse steps. Schedule constants are
computed and stored in float64; image tensors keep whatever dtype they
arrive with (float32 in normal use), so coefficients are exact to double
precision even when applied to single-precision data.

Timesteps are 1-indexed: t runs over [1, T], and alpha_bar(0) == 1 by
convention so that t=1 posterior and t_prev=0 DDIM endpoints need no
special-casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError

VARIANCE_MODES = ("beta", "beta_tilde")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-timestep diffusion constants.

    betas[i], alphas[i], alpha_bars[i], posterior_variances[i] hold the
    values for timestep t = i + 1. `variance_mode` selects the fixed
    reverse-step variance: "beta" uses beta_t, "beta_tilde" uses the
    posterior variance beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_variances: np.ndarray
    variance_mode: str = "beta_tilde"

    def validate(self) -> None:
        if self.T < 2:
            raise ValueError(f"schedule needs T >= 2, got T={self.T}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        for name in ("betas", "alphas", "alpha_bars", "posterior_variances"):
            vec = getattr(self, name)
            if vec.shape != (self.T,):
                raise ValueError(f"{name} must have shape ({self.T},)")
        if not np.all((self.betas > 0.0) & (self.betas < 1.0)):
            raise ValueError("betas must lie strictly in (0, 1)")
        if not np.array_equal(self.alphas, 1.0 - self.betas):
            raise ValueError("alphas must equal 1 - betas exactly")
        if not np.all(np.diff(self.alpha_bars) < 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        if self.alpha_bars[0] != self.alphas[0]:
            raise ValueError("alpha_bars[0] must equal alphas[0]")
        if not np.all(self.posterior_variances <= self.betas):
            raise ValueError("posterior variances must not exceed betas")

    def alpha_bar(self, t: int) -> float:
        """Cumulative product abar_t, with abar_0 == 1 by convention."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def posterior_variance(self, t: int) -> float:
        self._check_t(t)
        return float(self.posterior_variances[t - 1])

    def step_variance(self, t: int) -> float:
        """The fixed reverse-step variance selected by variance_mode."""
        return self.beta(t) if self.variance_mode == "beta" else self.posterior_variance(t)

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")


@dataclass(frozen=True)
class NoisySample:
    """An image at a point of the forward process."""

    x: torch.Tensor
    t: int | torch.Tensor


def make_linear_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    variance_mode: str = "beta_tilde",
) -> NoiseSchedule:
    """Linearly interpolated betas, inclusive of both endpoints."""
    if T < 2:
        raise ValueError(f"linear schedule needs T >= 2, got T={T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev_bars = np.concatenate(([1.0], alpha_bars[:-1]))
    posterior_variances = (1.0 - prev_bars) / (1.0 - alpha_bars) * betas
    for vec in (betas, alphas, alpha_bars, posterior_variances):
        vec.setflags(write=False)
    sched = NoiseSchedule(
        T=T,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_variances=posterior_variances,
        variance_mode=variance_mode,
    )
    sched.validate()
    return sched


def _per_item(values: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Gather 1-indexed per-timestep constants for a batch of timesteps.

    Returns a tensor shaped (B, 1, ..., 1) that broadcasts against `like`.
    """
    idx = t.long().cpu().numpy() - 1
    if idx.min() < 0 or idx.max() >= len(values):
        raise ValueError(f"timestep batch outside [1, {len(values)}]")
    out = torch.from_numpy(values[idx]).to(like.dtype)
    return out.reshape(-1, *([1] * (like.dim() - 1)))


def _coef(values: np.ndarray, t, like: torch.Tensor):
    """Per-timestep constant as a float (scalar t) or broadcastable tensor."""
    if isinstance(t, torch.Tensor) and t.dim() > 0:
        return _per_item(values, t, like)
    t = int(t)
    if not 1 <= t <= len(values):
        raise ValueError(f"timestep {t} outside [1, {len(values)}]")
    return float(values[t - 1])


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> NoisySample:
    """Forward-noise x0 to timestep t: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    signal = _coef(np.sqrt(sched.alpha_bars), t, x0)
    noise = _coef(np.sqrt(1.0 - sched.alpha_bars), t, x0)
    return NoisySample(x=signal * x0 + noise * eps, t=t)


def predict_x0(x_t: torch.Tensor, t, eps_pred: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Invert the forward closed form: x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)."""
    if eps_pred.shape != x_t.shape:
        raise ShapeError(f"eps shape {tuple(eps_pred.shape)} != x_t shape {tuple(x_t.shape)}")
    abar = _coef(sched.alpha_bars, t, x_t)
    if isinstance(abar, float):
        if abar == 0.0:
            raise ValueError(f"alpha_bar is zero at t={t}; x0 prediction is singular")
    elif torch.any(abar == 0.0):
        raise ValueError("alpha_bar is zero inside the batch; x0 prediction is singular")
    noise = _coef(np.sqrt(1.0 - sched.alpha_bars), t, x_t)
    return (x_t - noise * eps_pred) / (abar**0.5)


def posterior_mean_variance(
    x0: torch.Tensor, x_t: torch.Tensor, t, sched: NoiseSchedule
) -> tuple[torch.Tensor, float | torch.Tensor]:
    """Mean and variance of the forward-process posterior q(x_{t-1} | x_t, x0).

    mean = sqrt(abar_{t-1}) beta_t / (1 - abar_t) * x0
         + sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t) * x_t
    variance = beta_tilde_t
    """
    if x_t.shape != x0.shape:
        raise ShapeError(f"x_t shape {tuple(x_t.shape)} != x0 shape {tuple(x0.shape)}")
    prev_bars = np.concatenate(([1.0], sched.alpha_bars[:-1]))
    coef_x0 = np.sqrt(prev_bars) * sched.betas / (1.0 - sched.alpha_bars)
    coef_xt = np.sqrt(sched.alphas) * (1.0 - prev_bars) / (1.0 - sched.alpha_bars)
    mean = _coef(coef_x0, t, x0) * x0 + _coef(coef_xt, t, x_t) * x_t
    return mean, _coef(sched.posterior_variances, t, x_t)


def mu_sigma_from_eps(
    x_t: torch.Tensor, t, eps_pred: torch.Tensor, sched: NoiseSchedule
) -> tuple[torch.Tensor, float | torch.Tensor]:
    """Reverse-step mean from a noise prediction, plus the fixed variance.

    mean = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)
    variance = beta_t or beta_tilde_t, per sched.variance_mode
    """
    if eps_pred.shape != x_t.shape:
        raise ShapeError(f"eps shape {tuple(eps_pred.shape)} != x_t shape {tuple(x_t.shape)}")
    # beta_t = 0 (noiseless step) makes the ratio 0/0; its limit is 0
    with np.errstate(divide="ignore", invalid="ignore"):
        coef_vec = np.where(sched.betas == 0.0, 0.0, sched.betas / np.sqrt(1.0 - sched.alpha_bars))
    eps_coef = _coef(coef_vec, t, x_t)
    inv_sqrt_alpha = _coef(1.0 / np.sqrt(sched.alphas), t, x_t)
    mean = inv_sqrt_alpha * (x_t - eps_coef * eps_pred)
    var_vec = sched.betas if sched.variance_mode == "beta" else sched.posterior_variances
    return mean, _coef(var_vec, t, x_t)


def ddpm_step(
    x_t: torch.Tensor, t, eps_pred: torch.Tensor, noise: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """One ancestral reverse step: mean + sqrt(variance) * noise.

    The terminal step t=1 returns the mean; no noise is injected.
    """
    if noise.shape != x_t.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != x_t shape {tuple(x_t.shape)}")
    mean, var = mu_sigma_from_eps(x_t, t, eps_pred, sched)
    if isinstance(t, torch.Tensor) and t.dim() > 0:
        scale = var**0.5 * (t != 1).to(x_t.dtype).reshape(-1, *([1] * (x_t.dim() - 1)))
        return mean + scale * noise
    if int(t) == 1:
        return mean
    return mean + var**0.5 * noise


def ddim_step(
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    eps_hat: torch.Tensor,
    sched: NoiseSchedule,
    eta: float = 0.0,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Jump from timestep t to t_prev (t_prev may be 0, meaning clean data).

    With eta=0 the step is fully deterministic:
        x_{t_prev} = sqrt(abar_{t_prev}) x0_hat + sqrt(1 - abar_{t_prev}) eps_hat
    For eta > 0 the noise coefficient interpolates toward the ancestral
    sampler's variance and `noise` must be supplied.
    """
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    x0_hat = predict_x0(x_t, t, eps_hat, sched)
    abar_prev = sched.alpha_bar(t_prev)
    if eta == 0.0:
        return abar_prev**0.5 * x0_hat + (1.0 - abar_prev) ** 0.5 * eps_hat
    abar_t = sched.alpha_bar(t)
    sigma = (
        eta
        * ((1.0 - abar_prev) / (1.0 - abar_t)) ** 0.5
        * (1.0 - abar_t / abar_prev) ** 0.5
    )
    direction = max(1.0 - abar_prev - sigma**2, 0.0) ** 0.5
    out = abar_prev**0.5 * x0_hat + direction * eps_hat
    if t_prev == 0 or sigma == 0.0:
        return out
    if noise is None:
        raise ValueError("eta > 0 requires a noise tensor")
    if noise.shape != x_t.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != x_t shape {tuple(x_t.shape)}")
    return out + sigma * noise


def make_ddim_timesteps(T: int, steps: int) -> list[int]:
    """Strictly decreasing uniform-stride subsequence of [1, T], starting at T."""
    if not 1 <= steps <= T:
        raise ValueError(f"need 1 <= steps <= T, got steps={steps}, T={T}")
    stride = T // steps
    return [T - k * stride for k in range(steps)]
