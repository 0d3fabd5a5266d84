"""2D-DCT analysis of condensed motions, conditioning codes and frequency masks.

Every function accepts either numpy arrays or torch tensors and returns the
same kind. Leading batch dimensions are supported throughout; the transforms
act on the last two axes (time rows x joint-channel columns).

Condensed column order is joint-major then channel: column ``j * C + c``
holds channel ``c`` of joint ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

__all__ = [
    "ConditionCode",
    "FrequencyMask",
    "build_masks",
    "condense",
    "condition_code",
    "condition_dense",
    "dct2",
    "dct_matrix",
    "fuse",
    "idct2",
    "uncondense",
]


@dataclass(frozen=True)
class FrequencyMask:
    """Complementary selectors over DCT coefficients.

    ``low`` marks the top ``lambda_dct`` fraction of coefficients by magnitude
    (global structure), ``high`` is its complement (local detail). ``tau`` is
    the magnitude of the smallest admitted coefficient (``inf`` when none is
    admitted); it is an array when the mask is batched.
    """

    low: np.ndarray | torch.Tensor
    high: np.ndarray | torch.Tensor
    lambda_dct: float
    tau: float | np.ndarray | torch.Tensor


@dataclass(frozen=True)
class ConditionCode:
    values: np.ndarray
    positions: np.ndarray  # (k, 2) row/column indices
    k: int
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        """Zero-padded coefficient matrix holding only the retained values."""
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.positions[:, 0], self.positions[:, 1]] = self.values
        return out


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def _check_finite(x, what: str) -> None:
    ok = bool(torch.isfinite(x).all()) if _is_torch(x) else bool(np.isfinite(x).all())
    if not ok:
        raise ValueError(f"{what}: input contains non-finite values")


@lru_cache(maxsize=64)
def _dct_matrix_np(n: int) -> np.ndarray:
    i = np.arange(n)
    u = i[:, None]
    mat = np.cos(np.pi * (2 * i[None, :] + 1) * u / (2 * n))
    mat *= np.sqrt(2.0 / n)
    mat[0] = np.sqrt(1.0 / n)
    mat.setflags(write=False)
    return mat


def dct_matrix(n: int, like=None):
    """Orthonormal DCT-II basis ``D`` with ``D[u, i] = a(u) cos(pi (2i+1) u / 2n)``.

    ``D @ D.T`` is the identity, so the inverse (DCT-III) is ``D.T``.
    """
    if n < 1:
        raise ValueError(f"DCT size must be positive, got {n}")
    mat = _dct_matrix_np(n)
    if like is not None and _is_torch(like):
        return torch.tensor(mat, dtype=like.dtype, device=like.device)
    if like is not None and np.issubdtype(np.asarray(like).dtype, np.floating):
        return mat.astype(np.asarray(like).dtype, copy=False)
    return mat


def dct2(x):
    """Orthonormal type-II 2D DCT over the last two axes."""
    _check_finite(x, "dct2")
    if not _is_torch(x):
        x = np.asarray(x, dtype=np.result_type(np.asarray(x).dtype, np.float64))
    rows = dct_matrix(x.shape[-2], like=x)
    cols = dct_matrix(x.shape[-1], like=x)
    return rows @ x @ cols.T


def idct2(y):
    """Inverse of :func:`dct2` (orthonormal type-III 2D DCT)."""
    _check_finite(y, "idct2")
    if not _is_torch(y):
        y = np.asarray(y, dtype=np.result_type(np.asarray(y).dtype, np.float64))
    rows = dct_matrix(y.shape[-2], like=y)
    cols = dct_matrix(y.shape[-1], like=y)
    return rows.T @ y @ cols


def condense(x):
    """``[..., N, C, J]`` motion -> ``[..., N, J*C]`` matrix (joint-major columns)."""
    n, c, j = x.shape[-3:]
    if _is_torch(x):
        return x.transpose(-1, -2).reshape(*x.shape[:-3], n, j * c)
    return np.swapaxes(x, -1, -2).reshape(*x.shape[:-3], n, j * c)


def uncondense(m, channels: int):
    """Inverse of :func:`condense`."""
    n, cols = m.shape[-2:]
    if cols % channels:
        raise ValueError(f"{cols} columns do not split into {channels} channels")
    j = cols // channels
    if _is_torch(m):
        return m.reshape(*m.shape[:-2], n, j, channels).transpose(-1, -2)
    return np.swapaxes(m.reshape(*m.shape[:-2], n, j, channels), -1, -2)


def _magnitude_order(y):
    """Flat indices sorted by decreasing magnitude, row-major among ties."""
    flat = y.reshape(*y.shape[:-2], -1)
    if _is_torch(flat):
        return torch.argsort(-flat.abs(), dim=-1, stable=True), flat
    return np.argsort(-np.abs(flat), axis=-1, kind="stable"), flat


def build_masks(y, lambda_dct: float) -> FrequencyMask:
    """Split coefficients at the magnitude rank admitting ``round(lambda_dct * size)``.

    Exactly that many entries go to ``low``; ties at the threshold are
    admitted in row-major order.
    """
    if not 0.0 <= lambda_dct <= 1.0:
        raise ValueError(f"lambda_dct must lie in [0, 1], got {lambda_dct}")
    size = y.shape[-2] * y.shape[-1]
    keep = int(round(lambda_dct * size))
    order, flat = _magnitude_order(y)

    if _is_torch(y):
        ranks = torch.empty_like(order)
        ranks.scatter_(-1, order, torch.arange(size, device=y.device).expand_as(order))
        low = (ranks < keep).to(y.dtype).reshape(y.shape)
        if keep:
            tau = flat.abs().gather(-1, order[..., keep - 1 : keep]).squeeze(-1)
        else:
            tau = torch.full(flat.shape[:-1], float("inf"), dtype=y.dtype)
    else:
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.broadcast_to(np.arange(size), order.shape), axis=-1)
        low = (ranks < keep).astype(flat.dtype).reshape(y.shape)
        if keep:
            tau = np.take_along_axis(np.abs(flat), order[..., keep - 1 : keep], axis=-1)[..., 0]
        else:
            tau = np.full(flat.shape[:-1], np.inf)
    if getattr(tau, "ndim", 0) == 0:
        tau = float(tau)
    return FrequencyMask(low=low, high=1 - low, lambda_dct=lambda_dct, tau=tau)


def fuse(y_o, y_g, mask: FrequencyMask):
    """Observed coefficients on ``high`` positions, generated ones on ``low``."""
    if tuple(y_o.shape) != tuple(y_g.shape) or tuple(y_o.shape) != tuple(mask.low.shape):
        raise ValueError(
            f"shape mismatch: observed {tuple(y_o.shape)}, generated {tuple(y_g.shape)}, "
            f"mask {tuple(mask.low.shape)}"
        )
    # selection rather than arithmetic keeps non-selected values out entirely
    if _is_torch(y_o):
        return torch.where(mask.low.bool(), y_g, y_o)
    return np.where(mask.low.astype(bool), y_g, y_o)


def condition_code(x, k: int) -> ConditionCode:
    """Top-``k`` magnitude DCT coefficients of a single ``[N, C, J]`` motion."""
    x = np.asarray(x, dtype=np.float64)
    y = dct2(condense(x))
    size = y.size
    if not 1 <= k <= size:
        raise ValueError(f"k must lie in [1, {size}], got {k}")
    order, flat = _magnitude_order(y)
    top = order[:k]
    positions = np.stack(np.unravel_index(top, y.shape), axis=1)
    return ConditionCode(values=flat[top], positions=positions, k=k, shape=y.shape)


def condition_dense(x, k: int):
    """Batched zero-padded conditioning layout ``[..., N, J*C]`` for motions ``[..., N, C, J]``."""
    y = dct2(condense(x))
    size = y.shape[-2] * y.shape[-1]
    if not 1 <= k <= size:
        raise ValueError(f"k must lie in [1, {size}], got {k}")
    order, flat = _magnitude_order(y)
    top = order[..., :k]
    if _is_torch(y):
        dense = torch.zeros_like(flat).scatter(-1, top, flat.gather(-1, top))
    else:
        dense = np.zeros_like(flat)
        np.put_along_axis(dense, top, np.take_along_axis(flat, top, axis=-1), axis=-1)
    return dense.reshape(y.shape)


def default_k(n: int, channels: int, joints: int) -> int:
    return max(1, int(round(0.25 * n * channels * joints)))
