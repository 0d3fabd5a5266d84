"""Alternating min-max training of the noise predictor and perturbation generator."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .diffusion import VarianceSchedule, forward_noise, make_schedule
from .frequency import condition_dense, default_k
from .motion_data import TrajectoryCorpus, stack_windows
from .networks import SkeletonGraph, build_generator, build_predictor
from .perturbation import generate_perturbed

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "TrainHistory", "TrainingDiverged", "AdversarialTrainer", "train"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 2000
    batch_size: int = 64
    lr_base: float = 0.01
    lr_decay: float = 0.99
    lambda_p: float = 0.1
    T: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.5
    k: int | None = None
    seed: int = 0
    generator_update_period: int = 1
    width: int = 32
    depth: int = 4
    kernel: int = 9
    gen_width: int = 8
    gen_depth: int = 2
    gen_kernel: int = 5
    grad_clip: float = 1.0

    def __post_init__(self):
        for name in ("max_iters", "batch_size", "T", "generator_update_period", "width", "depth",
                     "gen_width", "gen_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr_base > 0:
            raise ValueError("lr_base must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if not (math.isfinite(self.lambda_p) and self.lambda_p >= 0):
            raise ValueError(f"lambda_p must be finite and >= 0, got {self.lambda_p}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")

    def schedule(self) -> VarianceSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class TrainHistory:
    iteration: list[int] = field(default_factory=list)
    loss_theta: list[float] = field(default_factory=list)
    loss_phi: list[float] = field(default_factory=list)  # nan on iterations without a generator step
    lr: list[float] = field(default_factory=list)
    grad_norm_theta: list[float] = field(default_factory=list)
    grad_norm_phi: list[float] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        lines = ["iter\tloss_theta\tloss_phi\tlr"]
        for i, a, b, lr in zip(self.iteration, self.loss_theta, self.loss_phi, self.lr):
            lines.append(f"{i}\t{a:.8e}\t{b:.8e}\t{lr:.8e}")
        return lines


def _grad_norm(params, clip: float) -> float:
    params = [p for p in params if p.grad is not None]
    if not params:
        return 0.0
    limit = clip if clip and clip > 0 else float("inf")
    return float(torch.nn.utils.clip_grad_norm_(params, limit))


class AdversarialTrainer:
    """Holds both networks, their optimizers and the three random streams.

    Streams: ``data`` (epoch shuffles), ``theta`` (timesteps and noise of
    predictor updates) and ``phi`` (noise of generator updates), so enabling
    or disabling the generator never shifts the predictor's draws.
    """

    def __init__(self, data: torch.Tensor, cfg: TrainConfig, graph: SkeletonGraph | None = None,
                 use_generator: bool = True):
        if data.ndim != 4 or data.shape[0] == 0:
            raise ValueError("training needs a non-empty [B, N, C, J] window stack")
        self.cfg = cfg
        self.data = data.float()
        B, N, C, J = self.data.shape
        self.graph = graph or SkeletonGraph.default(J)
        self.k = cfg.k if cfg.k is not None else default_k(N, C, J)
        self.sched = cfg.schedule()
        self.cond = condition_dense(self.data, self.k)

        self.predictor = build_predictor(self.graph, N, C, cfg.width, cfg.depth, cfg.kernel, seed=cfg.seed)
        self.generator = (
            build_generator(self.graph, N, C, cfg.gen_width, cfg.gen_depth, cfg.gen_kernel, seed=cfg.seed + 1)
            if use_generator else None
        )
        self.opt_theta = torch.optim.Adam(self.predictor.parameters(), lr=cfg.lr_base)
        self.opt_phi = (
            torch.optim.Adam(self.generator.parameters(), lr=cfg.lr_base) if self.generator else None
        )
        self.rng_data = torch.Generator().manual_seed(cfg.seed)
        self.rng_theta = torch.Generator().manual_seed(cfg.seed + 1_000_003)
        self.rng_phi = torch.Generator().manual_seed(cfg.seed + 2_000_003)
        self.iters_per_epoch = max(1, math.ceil(B / cfg.batch_size))
        self._order = torch.empty(0, dtype=torch.long)
        self._pos = 0
        self.iteration = 0
        self.history = TrainHistory()

    def lr_at(self, iteration: int) -> float:
        return self.cfg.lr_base * self.cfg.lr_decay ** (iteration // self.iters_per_epoch)

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt_theta, self.opt_phi):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr

    def next_batch(self) -> torch.Tensor:
        n = self.data.shape[0]
        if self._pos >= len(self._order):
            self._order = torch.randperm(n, generator=self.rng_data)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.cfg.batch_size]
        self._pos += self.cfg.batch_size
        return idx

    def _noisy(self, x, t, rng):
        eps = torch.randn(x.shape, generator=rng)
        return forward_noise(x, t, eps, self.sched), eps

    def theta_step(self, idx: torch.Tensor, t: torch.Tensor) -> tuple[float, float]:
        """Predictor descent on generator-perturbed noisy inputs (generator frozen)."""
        x, cond = self.data[idx], self.cond[idx]
        x_t, eps = self._noisy(x, t, self.rng_theta)
        if self.generator is not None:
            with torch.no_grad():
                x_t = generate_perturbed(x_t, t, self.generator, self.cfg.lambda_p)
        loss = (eps - self.predictor(x_t, t, cond)).pow(2).mean()
        self.opt_theta.zero_grad(set_to_none=True)
        loss.backward()
        gnorm = _grad_norm(self.predictor.parameters(), self.cfg.grad_clip)
        self.opt_theta.step()
        return float(loss.detach()), gnorm

    def phi_step(self, idx: torch.Tensor, t: torch.Tensor) -> tuple[float, float]:
        """Generator ascent on the same loss (predictor frozen)."""
        x, cond = self.data[idx], self.cond[idx]
        x_t, eps = self._noisy(x, t, self.rng_phi)
        frozen = [p.requires_grad for p in self.predictor.parameters()]
        for p in self.predictor.parameters():
            p.requires_grad_(False)
        try:
            x_hat = generate_perturbed(x_t, t, self.generator, self.cfg.lambda_p)
            loss = (eps - self.predictor(x_hat, t, cond)).pow(2).mean()
            self.opt_phi.zero_grad(set_to_none=True)
            (-loss).backward()
        finally:
            for p, flag in zip(self.predictor.parameters(), frozen):
                p.requires_grad_(flag)
        gnorm = _grad_norm(self.generator.parameters(), self.cfg.grad_clip)
        self.opt_phi.step()
        return float(loss.detach()), gnorm

    def step(self) -> None:
        i = self.iteration
        lr = self.lr_at(i)
        self._set_lr(lr)
        idx = self.next_batch()
        t = torch.randint(1, self.sched.T + 1, (len(idx),), generator=self.rng_theta)
        loss_theta, g_theta = self.theta_step(idx, t)
        loss_phi, g_phi = float("nan"), float("nan")
        if self.generator is not None and (i + 1) % self.cfg.generator_update_period == 0:
            loss_phi, g_phi = self.phi_step(idx, t)
        bad = [name for name, v in (("loss_theta", loss_theta), ("grad_theta", g_theta)) if not math.isfinite(v)]
        if self.generator is not None and not math.isnan(loss_phi):
            bad += [name for name, v in (("loss_phi", loss_phi), ("grad_phi", g_phi)) if not math.isfinite(v)]
        if bad:
            raise TrainingDiverged(f"iteration {i}: non-finite {', '.join(bad)} (lr={lr:.3e})")
        h = self.history
        h.iteration.append(i)
        h.loss_theta.append(loss_theta)
        h.loss_phi.append(loss_phi)
        h.lr.append(lr)
        h.grad_norm_theta.append(g_theta)
        h.grad_norm_phi.append(g_phi)
        self.iteration += 1

    def run(self, iters: int | None = None, callback=None) -> TrainHistory:
        iters = self.cfg.max_iters if iters is None else iters
        for _ in range(iters):
            self.step()
            if callback is not None:
                callback(self)
            if self.iteration % 100 == 0:
                log.info("iter %d loss_theta %.5f loss_phi %.5f", self.iteration,
                         self.history.loss_theta[-1], self.history.loss_phi[-1])
        return self.history


def train(corpus: TrajectoryCorpus, cfg: TrainConfig, graph: SkeletonGraph | None = None,
          use_generator: bool = True):
    """Fit predictor and generator on the corpus' normalized windows.

    Returns ``(predictor, generator, history)``; ``generator`` is ``None``
    when ``use_generator`` is false.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    data = torch.as_tensor(stack_windows(corpus), dtype=torch.float32)
    trainer = AdversarialTrainer(data, cfg, graph, use_generator)
    history = trainer.run()
    trainer.predictor.eval()
    if trainer.generator is not None:
        trainer.generator.eval()
    return trainer.predictor, trainer.generator, history
