"""Single-file model archive: both networks plus everything inference needs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .diffusion import VarianceSchedule, make_schedule
from .networks import NoisePredictor, PerturbationGenerator, SkeletonGraph, build_generator, build_predictor

__all__ = ["FORMAT_VERSION", "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint"]

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint; the CLI maps it to exit code 4."""


@dataclass
class Checkpoint:
    predictor: NoisePredictor
    generator: PerturbationGenerator | None
    schedule: VarianceSchedule
    lambda_p: float
    lambda_dct: float
    k: int
    N: int
    C: int
    J: int
    arch: dict
    config: str = ""  # resolved run configuration echoed at training time


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "predictor": ck.predictor.state_dict(),
        "generator": None if ck.generator is None else ck.generator.state_dict(),
        "T": ck.schedule.T,
        "beta_start": ck.schedule.beta_start,
        "beta_end": ck.schedule.beta_end,
        "lambda_p": float(ck.lambda_p),
        "lambda_dct": float(ck.lambda_dct),
        "k": int(ck.k),
        "N": ck.N,
        "C": ck.C,
        "J": ck.J,
        "edges": [list(e) for e in ck.predictor.graph.edges],
        "arch": dict(ck.arch),
        "config": ck.config,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:  # torch raises assorted pickle/zip errors
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path}: not an fgdiff checkpoint")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {payload['format_version']} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        graph = SkeletonGraph(payload["J"], tuple(tuple(e) for e in payload["edges"]))
        arch = payload["arch"]
        N, C = payload["N"], payload["C"]
        predictor = build_predictor(graph, N, C, arch["width"], arch["depth"], arch["kernel"])
        predictor.load_state_dict(payload["predictor"])
        predictor.eval()
        generator = None
        if payload["generator"] is not None:
            generator = build_generator(graph, N, C, arch["gen_width"], arch["gen_depth"], arch["gen_kernel"])
            generator.load_state_dict(payload["generator"])
            generator.eval()
        schedule = make_schedule(payload["T"], payload["beta_start"], payload["beta_end"])
    except (KeyError, RuntimeError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint contents: {exc}") from None
    return Checkpoint(
        predictor=predictor,
        generator=generator,
        schedule=schedule,
        lambda_p=payload["lambda_p"],
        lambda_dct=payload["lambda_dct"],
        k=payload["k"],
        N=N,
        C=C,
        J=payload["J"],
        arch=dict(arch),
        config=payload.get("config", ""),
    )
