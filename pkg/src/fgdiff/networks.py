"""Space-time graph-convolutional noise predictor and perturbation generator.

Both networks map ``[B, N, C, J]`` motions to tensors of the same shape.
Internally activations are laid out ``[B, width, N, J]``: graph convolution
mixes joints through the normalized adjacency, a 1-D convolution along the
frame axis mixes time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "COCO17_EDGES",
    "NoisePredictor",
    "PerturbationGenerator",
    "SkeletonGraph",
    "build_generator",
    "build_predictor",
    "count_parameters",
]

# COCO-17 keypoints: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles
COCO17_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6), (5, 6),
    (5, 7), (7, 9), (6, 8), (8, 10), (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    edges: tuple[tuple[int, int], ...]

    @property
    def adjacency(self) -> np.ndarray:
        """Symmetric adjacency with self-loops, row-normalized."""
        a = np.eye(self.num_joints)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a / a.sum(axis=1, keepdims=True)

    def is_connected(self) -> bool:
        seen = {0}
        frontier = [0]
        nbrs = {j: set() for j in range(self.num_joints)}
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        while frontier:
            for n in nbrs[frontier.pop()] - seen:
                seen.add(n)
                frontier.append(n)
        return len(seen) == self.num_joints

    @classmethod
    def chain(cls, num_joints: int) -> "SkeletonGraph":
        return cls(num_joints, tuple((j, j + 1) for j in range(num_joints - 1)))

    @classmethod
    def coco17(cls) -> "SkeletonGraph":
        return cls(17, COCO17_EDGES)

    @classmethod
    def default(cls, num_joints: int) -> "SkeletonGraph":
        return cls.coco17() if num_joints == 17 else cls.chain(num_joints)

    def __post_init__(self):
        if self.num_joints < 1:
            raise ValueError("graph needs at least one joint")
        for i, j in self.edges:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise ValueError(f"edge ({i}, {j}) outside {self.num_joints} joints")


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


def _groups(width: int) -> int:
    for g in (8, 4, 2):
        if width % g == 0:
            return g
    return 1


class STGraphBlock(nn.Module):
    """Graph conv over joints, temporal conv over frames, residual."""

    def __init__(self, width: int, adjacency: torch.Tensor, kernel: int, emb_dim: int):
        super().__init__()
        self.register_buffer("adjacency", adjacency)
        self.spatial = nn.Conv2d(width, width, 1)
        self.temporal = nn.Conv2d(width, width, (kernel, 1), padding=(kernel // 2, 0))
        self.norm1 = nn.GroupNorm(_groups(width), width)
        self.norm2 = nn.GroupNorm(_groups(width), width)
        self.emb = nn.Linear(emb_dim, width) if emb_dim else None
        self.act = nn.SiLU()

    def forward(self, h: torch.Tensor, emb: torch.Tensor | None) -> torch.Tensor:
        r = h
        h = self.spatial(torch.einsum("bcnj,kj->bcnk", h, self.adjacency))
        if self.emb is not None:
            h = h + self.emb(emb)[:, :, None, None]
        h = self.act(self.norm1(h))
        h = self.act(self.norm2(self.temporal(h)))
        return r + h


class _Backbone(nn.Module):
    def __init__(self, graph: SkeletonGraph, channels: int, width: int, depth: int,
                 kernel: int, emb_dim: int):
        super().__init__()
        if width <= 0 or depth <= 0:
            raise ValueError(f"width and depth must be positive, got {width}, {depth}")
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"temporal kernel must be odd and positive, got {kernel}")
        adj = torch.as_tensor(graph.adjacency, dtype=torch.float32)
        self.graph = graph
        self.inp = nn.Conv2d(channels, width, 1)
        self.blocks = nn.ModuleList(STGraphBlock(width, adj, kernel, emb_dim) for _ in range(depth))
        self.out = nn.Conv2d(width, channels, 1)

    def run(self, x: torch.Tensor, emb: torch.Tensor | None, pos: torch.Tensor | None = None) -> torch.Tensor:
        h = self.inp(x.permute(0, 2, 1, 3))  # [B, N, C, J] -> [B, C, N, J]
        if pos is not None:
            h = h + pos
        for block in self.blocks:
            h = block(h, emb)
        return self.out(h).permute(0, 2, 1, 3)


class NoisePredictor(_Backbone):
    """``eps_theta(x_t, t, c)`` with timestep and conditioning-code embeddings summed."""

    def __init__(self, graph: SkeletonGraph, N: int, C: int, width: int = 32, depth: int = 4,
                 kernel: int = 9):
        emb_dim = 4 * width
        super().__init__(graph, C, width, depth, kernel, emb_dim)
        self.N, self.C, self.width = N, C, width
        # learned (frame, joint) embedding: graph and temporal convs alone cannot tell joints apart
        self.pos = nn.Parameter(torch.zeros(1, width, N, graph.num_joints))
        self.time_mlp = nn.Sequential(nn.Linear(width, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.cond_mlp = nn.Sequential(
            nn.Linear(N * C * graph.num_joints, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.width).to(x.dtype))
        if cond is not None:
            emb = emb + self.cond_mlp(cond.reshape(cond.shape[0], -1).to(x.dtype))
        return self.run(x, emb, self.pos)


class PerturbationGenerator(_Backbone):
    """Lightweight ``G_phi(x_t, t)``; only the sign of its output is used downstream."""

    def __init__(self, graph: SkeletonGraph, N: int, C: int, width: int = 8, depth: int = 2,
                 kernel: int = 5):
        emb_dim = 2 * width
        super().__init__(graph, C, width, depth, kernel, emb_dim)
        self.width = width
        self.time_mlp = nn.Sequential(nn.Linear(width, emb_dim), nn.SiLU())

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return self.run(x, self.time_mlp(timestep_embedding(t, self.width).to(x.dtype)))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_predictor(graph: SkeletonGraph, N: int, C: int, width: int = 32, depth: int = 4,
                    kernel: int = 9, seed: int | None = None) -> NoisePredictor:
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        return NoisePredictor(graph, N, C, width, depth, kernel)


def build_generator(graph: SkeletonGraph, N: int, C: int, width: int = 8, depth: int = 2,
                    kernel: int = 5, seed: int | None = None) -> PerturbationGenerator:
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        return PerturbationGenerator(graph, N, C, width, depth, kernel)
