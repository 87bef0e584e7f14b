"""Core DDPM mechanics: noise schedules, forward/reverse steps, loss, sampling.

All operations are pure functions of their inputs. Steps are indexed
1..T as in the usual DDPM convention; index 0 is the clean sample.
Randomness always comes from an explicitly passed ``torch.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch


class ScheduleError(ValueError):
    """Raised for invalid noise-schedule configurations."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise coefficients of a diffusion chain.

    ``beta[i]``, ``alpha[i]``, ``alpha_bar[i]`` and ``sigma[i]`` hold the
    values for step t = i + 1. ``sigma`` is the posterior noise scale used
    in the reverse step; it is zero at t = 1 so sampling terminates
    deterministically.
    """

    T: int
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "sigma"):
            v = getattr(self, name)
            if v.shape != (self.T,):
                raise ScheduleError(f"{name} must have shape ({self.T},), got {tuple(v.shape)}")

    def beta_at(self, t: int) -> torch.Tensor:
        return self.beta[t - 1]

    def alpha_at(self, t: int) -> torch.Tensor:
        return self.alpha[t - 1]

    def alpha_bar_at(self, t: int) -> torch.Tensor:
        return self.alpha_bar[t - 1]

    def sigma_at(self, t: int) -> torch.Tensor:
        return self.sigma[t - 1]


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
    dtype: torch.dtype = torch.float32,
) -> NoiseSchedule:
    """Build a noise schedule of ``T`` steps.

    ``linear`` interpolates beta uniformly from ``beta_start`` to
    ``beta_end``; ``cosine`` derives beta from the squared-cosine
    cumulative-alpha curve, clipped into [beta_start, beta_end].
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    elif kind == "cosine":
        s = 0.008
        ts = torch.arange(T + 1, dtype=torch.float64) / T
        f = torch.cos((ts + s) / (1 + s) * torch.pi / 2) ** 2
        beta = (1 - f[1:] / f[:-1]).clamp(beta_start, beta_end)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")

    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    sigma = torch.sqrt(beta)
    sigma[0] = 0.0
    return NoiseSchedule(
        T=T,
        beta=beta.to(dtype),
        alpha=alpha.to(dtype),
        alpha_bar=alpha_bar.to(dtype),
        sigma=sigma.to(dtype),
    )


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _check_t(t: int, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step t={t} outside [1, {schedule.T}]")


def forward_step(
    x_prev: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """One forward noising step: sqrt(a_t) * x_{t-1} + sqrt(1 - a_t) * eps."""
    _check_shapes(x_prev, eps)
    _check_t(t, schedule)
    a = schedule.alpha_at(t)
    return torch.sqrt(a) * x_prev + torch.sqrt(1.0 - a) * eps


def q_sample(
    x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Closed-form jump to step t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _check_shapes(x0, eps)
    _check_t(t, schedule)
    ab = schedule.alpha_bar_at(t)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def reverse_step(
    x_t: torch.Tensor,
    t: int,
    eps_pred: torch.Tensor,
    z: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """One denoising step.

    x_{t-1} = (x_t - (1 - a_t) / (1 - abar_t) * eps_pred) / sqrt(a_t) + sigma_t * z

    ``eps_pred`` is the predicted full noise component, i.e. the
    sqrt(1 - abar_t) * eps term of the noising jump; on unit noise the
    removal coefficient then reduces to the familiar
    beta_t / sqrt(1 - abar_t).
    """
    _check_shapes(x_t, eps_pred)
    _check_shapes(x_t, z)
    _check_t(t, schedule)
    a = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    one_minus_a = 1.0 - a
    one_minus_ab = 1.0 - ab
    if float(one_minus_ab) == 0.0:
        if float(one_minus_a) != 0.0:
            raise ScheduleError(f"singular schedule at t={t}: alpha_bar=1 with alpha<1")
        coeff = torch.zeros_like(a)
    else:
        coeff = one_minus_a / one_minus_ab
    mean = (x_t - coeff * eps_pred) / torch.sqrt(a)
    return mean + schedule.sigma_at(t) * z


def ddpm_loss(
    denoiser: Callable[..., torch.Tensor],
    x0: torch.Tensor,
    t: int,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
    cond=None,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Noise-prediction MSE at step t, optionally restricted to ``mask``.

    The denoiser is called as ``denoiser(x_t, t, cond)``. With a mask the
    squared error is averaged over masked elements only.
    """
    x_t = q_sample(x0, t, eps, schedule)
    pred = denoiser(x_t, t, cond)
    _check_shapes(pred, eps)
    sq = (pred - eps) ** 2
    if mask is not None:
        denom = mask.sum()
        if float(denom) == 0.0:
            loss = sq.sum() * 0.0
        else:
            loss = (sq * mask).sum() / denom
    else:
        loss = sq.mean()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite diffusion loss at t={t}")
    return loss


def sample_loop(
    denoiser: Callable[..., torch.Tensor],
    cond,
    shape: Sequence[int],
    schedule: NoiseSchedule,
    seed: int,
    known: torch.Tensor | None = None,
    known_mask: torch.Tensor | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Run the full reverse chain from seeded unit-normal noise.

    The denoiser predicts unit-scale noise (the ``ddpm_loss`` target); the
    reverse step removes the full noise component, so the prediction is
    scaled by sqrt(1 - alpha_bar_t) here. With that scaling the chain is
    the standard denoising recursion and a perfect predictor at T = 1
    recovers the clean sample exactly.

    When ``known`` and ``known_mask`` are given, elements where the mask is
    1 are clamped at every step to a correspondingly noised version of
    ``known`` (and to ``known`` itself at the end), so only the complement
    is generated.
    """
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(list(shape), generator=gen, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        eps_pred = torch.sqrt(1.0 - schedule.alpha_bar_at(t)) * denoiser(x, t, cond)
        z = (
            torch.randn(list(shape), generator=gen, dtype=dtype)
            if t > 1
            else torch.zeros(list(shape), dtype=dtype)
        )
        x = reverse_step(x, t, eps_pred, z, schedule)
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite sample at step t={t}")
        if known is not None:
            if t > 1:
                eps_k = torch.randn(list(shape), generator=gen, dtype=dtype)
                x_known = q_sample(known, t - 1, eps_k, schedule)
            else:
                x_known = known
            x = torch.where(known_mask.bool(), x_known, x)
    return x
