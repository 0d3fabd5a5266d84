"""Bounded sign perturbations: FGSM reference, learned generator, generator objective.

Every perturbation emitted by :func:`generate_perturbed` is checked on the
spot: ``max|delta| <= lambda_p`` and ``||delta||_2 <= sqrt(d) * lambda_p`` per
sample. Violations raise :class:`PerturbationBoundError`.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass

import numpy as np
import torch

__all__ = [
    "PerturbationBoundError",
    "PerturbationConfig",
    "PerturbationRecord",
    "fgsm_perturb",
    "fgsm_reference",
    "generate_perturbed",
    "generator_objective",
    "record_perturbations",
    "sign_map",
]


class PerturbationBoundError(AssertionError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    lambda_p: float = 0.1

    def __post_init__(self):
        if not math.isfinite(self.lambda_p) or self.lambda_p < 0:
            raise ValueError(f"lambda_p must be finite and >= 0, got {self.lambda_p}")


@dataclass
class PerturbationRecord:
    """Running bound statistics collected inside :func:`record_perturbations`."""

    calls: int = 0
    samples: int = 0
    max_linf_ratio: float = 0.0  # max |delta| / lambda_p
    max_l2_ratio: float = 0.0  # max ||delta||_2 / (sqrt(d) lambda_p)


_recorder: contextvars.ContextVar[PerturbationRecord | None] = contextvars.ContextVar(
    "fgdiff_perturbation_recorder", default=None
)


@contextlib.contextmanager
def record_perturbations():
    rec = PerturbationRecord()
    token = _recorder.set(rec)
    try:
        yield rec
    finally:
        _recorder.reset(token)


def _lambda(cfg) -> float:
    lam = cfg.lambda_p if isinstance(cfg, PerturbationConfig) else float(cfg)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda_p must be finite and >= 0, got {lam}")
    return lam


def sign_map(v):
    """Three-valued elementwise sign, ``sign(0) == 0``."""
    if isinstance(v, torch.Tensor):
        return torch.sign(v)
    return np.sign(np.asarray(v))


def fgsm_perturb(x, grad, cfg):
    """``x + lambda_p * sign(grad)``."""
    if tuple(x.shape) != tuple(grad.shape):
        raise ValueError(f"shape mismatch: x {tuple(x.shape)} vs grad {tuple(grad.shape)}")
    return x + _lambda(cfg) * sign_map(grad)


def _check_bounds(delta: torch.Tensor, lam: float) -> None:
    d = delta.detach().reshape(delta.shape[0], -1) if delta.ndim > 3 else delta.detach().reshape(1, -1)
    # the bound is exact for lambda_p as represented in the working dtype
    lam = float(torch.tensor(lam, dtype=d.dtype))
    linf = d.abs().amax(dim=1)
    if bool((linf > lam).any()):
        raise PerturbationBoundError(f"perturbation exceeds L-inf bound {lam}: {float(linf.max())}")
    dim = d.shape[1]
    l2 = d.double().pow(2).sum(dim=1).sqrt()
    l2_bound = math.sqrt(dim) * lam
    # squares of +-lam summed in float64: allow one ulp-scale rounding slack
    if bool((l2 > l2_bound * (1 + 1e-12)).any()):
        raise PerturbationBoundError(f"perturbation exceeds L2 bound {l2_bound}: {float(l2.max())}")
    rec = _recorder.get()
    if rec is not None:
        rec.calls += 1
        rec.samples += d.shape[0]
        if lam > 0:
            rec.max_linf_ratio = max(rec.max_linf_ratio, float(linf.max()) / lam)
            rec.max_l2_ratio = max(rec.max_l2_ratio, float(l2.max()) / l2_bound)


def _as_timesteps(t, batch: int, device) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        t = t.to(device=device, dtype=torch.long)
        return t.expand(batch) if t.ndim == 0 else t
    return torch.full((batch,), int(t), dtype=torch.long, device=device)


def generate_perturbed(x_t: torch.Tensor, t, gen, cfg) -> torch.Tensor:
    """``x_t + lambda_p * sign(G(x_t, t))``.

    Backward passes use the tanh derivative in place of the sign's (zero)
    derivative so the generator can be trained; the forward value is the
    exact sign.
    """
    lam = _lambda(cfg)
    if gen is None:
        return x_t
    batched = x_t.ndim == 4
    xb = x_t if batched else x_t.unsqueeze(0)
    raw = gen(xb, _as_timesteps(t, xb.shape[0], xb.device))
    if tuple(raw.shape) != tuple(xb.shape):
        raise ValueError(f"generator changed shape {tuple(xb.shape)} -> {tuple(raw.shape)}")
    if not bool(torch.isfinite(raw).all()):
        raise FloatingPointError("perturbation generator produced non-finite output")
    s = torch.sign(raw)
    if raw.requires_grad:
        soft = torch.tanh(raw)
        s = s + (soft - soft.detach())
    delta = lam * s
    _check_bounds(delta, lam)
    out = xb + delta
    return out if batched else out.squeeze(0)


def generator_objective(batch, predictor, gen, cfg, sched, rng, *, cond=None, k=None):
    """Diffusion loss on generator-perturbed inputs (the quantity the generator ascends)."""
    from .diffusion import diffusion_loss

    return diffusion_loss(batch, predictor, gen, _lambda(cfg), sched, rng, cond=cond, k=k)


def fgsm_reference(batch, predictor, cfg, sched, rng, *, cond=None, k=None):
    """Gradient-sign perturbation of clean motions against the diffusion loss."""
    from .diffusion import diffusion_loss

    x = batch.detach().clone().requires_grad_(True)
    loss = diffusion_loss(x, predictor, None, 0.0, sched, rng, cond=cond, k=k)
    (grad,) = torch.autograd.grad(loss, x)
    return fgsm_perturb(batch.detach(), grad, cfg)
