"""Variance schedule, noising, the denoiser loss and frequency-guided generation.

Timesteps are 1-based at every public entry point (``t = 1 .. T``); the
schedule arrays are stored 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .frequency import build_masks, condense, condition_dense, dct2, default_k, fuse, idct2, uncondense
from .perturbation import generate_perturbed

__all__ = [
    "GenerationResult",
    "VarianceSchedule",
    "denoise_step",
    "diffusion_loss",
    "forward_noise",
    "frequency_guided_generate",
    "make_schedule",
]


@dataclass(frozen=True)
class VarianceSchedule:
    T: int
    beta_start: float
    beta_end: float
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return t

    def a(self, t: int) -> float:
        return float(self.alpha[self.check_t(t) - 1])

    def abar(self, t: int) -> float:
        return float(self.alpha_bar[self.check_t(t) - 1])


def make_schedule(T: int = 10, beta_start: float = 1e-4, beta_end: float = 0.5) -> VarianceSchedule:
    """Linear beta schedule, ``alpha = 1 - beta``, ``alpha_bar = cumprod(alpha)``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - betas
    alpha_bar = np.cumprod(alpha)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return VarianceSchedule(T, float(beta_start), float(beta_end), alpha, alpha_bar)


def _coef(values: np.ndarray, t, like):
    """Per-sample schedule coefficient broadcastable against ``like``."""
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        table = torch.tensor(values, dtype=like.dtype, device=like.device)
        if bool(((t < 1) | (t > len(values))).any()):
            raise ValueError(f"timesteps outside [1, {len(values)}]")
        return table[t.long() - 1].reshape(-1, *([1] * (like.ndim - 1)))
    t = int(t)
    if not 1 <= t <= len(values):
        raise ValueError(f"timestep {t} outside [1, {len(values)}]")
    return float(values[t - 1])


def forward_noise(x, t, eps, sched: VarianceSchedule):
    """``sqrt(abar_t) x + sqrt(1 - abar_t) eps``; ``t`` may be per-sample."""
    if tuple(np.shape(x)) != tuple(np.shape(eps)):
        raise ValueError(f"noise shape {tuple(np.shape(eps))} != motion shape {tuple(np.shape(x))}")
    abar = _coef(sched.alpha_bar, t, x)
    if isinstance(abar, float):
        return math.sqrt(abar) * x + math.sqrt(1.0 - abar) * eps
    return abar.sqrt() * x + (1.0 - abar).sqrt() * eps


def _conditioning(batch: torch.Tensor, cond, k):
    if cond is not None:
        return cond
    n, c, j = batch.shape[-3:]
    return condition_dense(batch.detach(), default_k(n, c, j) if k is None else k)


def diffusion_loss(batch, predictor, generator, lambda_p: float, sched: VarianceSchedule, rng,
                   *, cond=None, k=None, timesteps=None):
    """Mean squared noise-prediction error on (perturbed) noisy motions.

    Draw order from ``rng``: timesteps ``t ~ U{1..T}`` (skipped when
    ``timesteps`` is given), then ``eps ~ N(0, I)``. Conditioning is the
    top-``k`` DCT code of the clean batch unless ``cond`` is supplied.
    """
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ValueError(f"expected a non-empty [B, N, C, J] batch, got {tuple(batch.shape)}")
    B = batch.shape[0]
    if timesteps is None:
        timesteps = torch.randint(1, sched.T + 1, (B,), generator=rng)
    eps = torch.randn(batch.shape, generator=rng, dtype=batch.dtype)
    x_t = forward_noise(batch, timesteps, eps, sched)
    if generator is not None:
        x_t = generate_perturbed(x_t, timesteps, generator, lambda_p)
    pred = predictor(x_t, timesteps, _conditioning(batch, cond, k))
    return (eps - pred).pow(2).mean()


def denoise_step(x_c, t: int, cond, predictor, sched: VarianceSchedule, eps):
    """One reverse step as printed, noise scaled by ``1 - alpha_t``; ``eps`` ignored at ``t = 1``."""
    t = sched.check_t(t)
    a, abar = sched.a(t), sched.abar(t)
    batched = x_c.ndim == 4
    xb = x_c if batched else x_c.unsqueeze(0)
    cb = cond if cond is None or cond.ndim == 3 else cond.unsqueeze(0)
    tt = torch.full((xb.shape[0],), t, dtype=torch.long)
    pred = predictor(xb, tt, cb)
    out = (xb - (1.0 - a) / math.sqrt(1.0 - abar) * pred) / math.sqrt(a)
    if t > 1:
        out = out + (1.0 - a) * (eps if batched else eps.unsqueeze(0))
    return out if batched else out.squeeze(0)


@dataclass
class GenerationResult:
    generated: torch.Tensor
    per_step_fused: list[torch.Tensor] | None = None


def _require_finite(x: torch.Tensor, step: str, t: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise FloatingPointError(f"non-finite values after {step} at t={t}")


@torch.no_grad()
def frequency_guided_generate(x_o, predictor, generator, sched: VarianceSchedule, lambda_p: float,
                              lambda_dct: float, rng, *, k=None, cond=None,
                              keep_intermediates: bool = False) -> GenerationResult:
    """Reconstruct ``x_o`` (``[N, C, J]`` or ``[B, N, C, J]``) with frequency guidance.

    Per step: noise the observation, perturb observation and current
    generation, swap in the generation's coefficients at the observation's
    top-``lambda_dct`` magnitude positions, invert and denoise. ``rng`` is
    consumed as: initial Gaussian, then one fresh draw per step for
    ``t = T .. 2``. The same per-step draw noises the observation and feeds
    the reverse step's noise term.
    """
    x_o = torch.as_tensor(x_o)
    batched = x_o.ndim == 4
    xb = x_o if batched else x_o.unsqueeze(0)
    channels = xb.shape[-2]
    if cond is None:
        cond = _conditioning(xb, None, k)
    elif cond.ndim == 2:
        cond = cond.unsqueeze(0)

    x_g = torch.randn(xb.shape, generator=rng, dtype=xb.dtype)
    fused = [] if keep_intermediates else None
    for t in range(sched.T, 0, -1):
        eps = torch.randn(xb.shape, generator=rng, dtype=xb.dtype) if t != 1 else torch.zeros_like(xb)
        x_t_o = forward_noise(xb, t, eps, sched)
        x_hat_o = generate_perturbed(x_t_o, t, generator, lambda_p)
        x_hat_g = generate_perturbed(x_g, t, generator, lambda_p)
        y_o = dct2(condense(x_hat_o))
        y_g = dct2(condense(x_hat_g))
        y_c = fuse(y_o, y_g, build_masks(y_o, lambda_dct))
        x_c = uncondense(idct2(y_c), channels)
        _require_finite(x_c, "fusion", t)
        if fused is not None:
            fused.append(x_c if batched else x_c.squeeze(0))
        x_g = denoise_step(x_c, t, cond, predictor, sched, eps)
        _require_finite(x_g, "denoising", t)
    return GenerationResult(x_g if batched else x_g.squeeze(0), fused)
