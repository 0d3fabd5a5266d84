"""Flat ``key = value`` run configuration shared by every command.

Precedence is command-line flag > config file > default. Every key is
validated against :data:`SCHEMA` before any work starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

__all__ = ["SCHEMA", "ConfigError", "RunConfig", "Key", "parse_config_text"]


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


def _float_list(text: str) -> list[float]:
    items = [s for s in text.replace(";", ",").split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return [float(s) for s in items]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


def _pos(v) -> bool:
    return v is not None and v > 0


def _nonneg(v) -> bool:
    return math.isfinite(v) and v >= 0


def _unit(v) -> bool:
    return 0.0 <= v <= 1.0


SCHEMA: dict[str, Key] = {
    # data
    "train_data": Key(str, "", "directory of normal training trajectories"),
    "test_data": Key(str, "", "directory of labeled test trajectories"),
    "window_length": Key(int, 24, "frames per motion window (N)", lambda v: v >= 2, ">= 2"),
    "train_stride": Key(int, 4, "window stride for training", _pos, "> 0"),
    "eval_stride": Key(int, 1, "window stride for evaluation and scoring", _pos, "> 0"),
    "channels": Key(int, 2, "coordinates per joint (C)", lambda v: v in (2, 3), "2 or 3"),
    "num_joints": Key(_opt_int, None, "joints per pose (J); auto-detected when unset",
                      lambda v: v is None or v > 0, "> 0"),
    "graph": Key(str, "auto", "skeleton layout: auto, chain or coco17",
                 lambda v: v in ("auto", "chain", "coco17"), "auto|chain|coco17"),
    # diffusion
    "T": Key(int, 10, "diffusion steps", _pos, "> 0"),
    "beta_start": Key(float, 1e-4, "first noise variance", lambda v: 0 < v < 1, "in (0, 1)"),
    "beta_end": Key(float, 0.5, "last noise variance", lambda v: 0 < v < 1, "in (0, 1)"),
    "k": Key(_opt_int, None, "conditioning coefficients kept; default round(0.25 N C J)",
             lambda v: v is None or v > 0, "> 0"),
    "lambda_p": Key(float, 0.1, "training perturbation intensity", _nonneg, ">= 0"),
    "lambda_dct": Key(float, 0.1, "fraction of top-magnitude coefficients regenerated", _unit, "in [0, 1]"),
    "lambda_pi": Key(_float_list, [0.0], "comma-separated inference perturbation intensities",
                     lambda v: all(_nonneg(x) for x in v), "all >= 0"),
    # training
    "max_iters": Key(int, 2000, "training iterations", _pos, "> 0"),
    "batch_size": Key(int, 64, "training batch size", _pos, "> 0"),
    "lr_base": Key(float, 0.01, "initial learning rate", lambda v: v > 0, "> 0"),
    "lr_decay": Key(float, 0.99, "learning-rate decay per epoch", lambda v: 0 < v <= 1, "in (0, 1]"),
    "generator_update_period": Key(int, 1, "predictor updates per generator update", _pos, "> 0"),
    "use_generator": Key(_bool, True, "train the perturbation generator"),
    "grad_clip": Key(float, 1.0, "gradient-norm clip (0 disables)", _nonneg, ">= 0"),
    "width": Key(int, 32, "predictor channel width", _pos, "> 0"),
    "depth": Key(int, 4, "predictor blocks", _pos, "> 0"),
    "kernel": Key(int, 9, "predictor temporal kernel", lambda v: v > 0 and v % 2 == 1, "odd, > 0"),
    "gen_width": Key(int, 8, "generator channel width", _pos, "> 0"),
    "gen_depth": Key(int, 2, "generator blocks", _pos, "> 0"),
    "gen_kernel": Key(int, 5, "generator temporal kernel", lambda v: v > 0 and v % 2 == 1, "odd, > 0"),
    # evaluation
    "smooth_window": Key(int, 9, "frame-score moving-average window", lambda v: v > 0 and v % 2 == 1, "odd, > 0"),
    "eval_batch_size": Key(int, 512, "windows reconstructed per batch", _pos, "> 0"),
    # synthesis
    "n_videos": Key(int, 250, "synthetic test videos", lambda v: v >= 1, ">= 1"),
    "n_train_videos": Key(int, 200, "synthetic normal training videos", lambda v: v >= 1, ">= 1"),
    "anomaly_ratio": Key(float, 0.2, "fraction of anomalous synthetic test videos", _unit, "in [0, 1]"),
    "n_frames": Key(int, 64, "frames per synthetic video", lambda v: v >= 2, ">= 2"),
    "synth_joints": Key(int, 8, "joints of synthetic skeletons", _pos, "> 0"),
    # common
    "seed": Key(int, 0, "master random seed"),
    "out": Key(str, "run", "output directory"),
    "checkpoint": Key(str, "", "checkpoint path (eval/score); default <out>/checkpoint.pt"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    values: dict[str, Any]
    explicit: set[str] = field(default_factory=set)  # keys set by a file or flag

    @classmethod
    def resolve(cls, config_path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> "RunConfig":
        """Defaults, then the config file, then ``overrides`` (strings or typed values)."""
        values = {name: key.default for name, key in SCHEMA.items()}
        explicit: set[str] = set()
        layers: list[tuple[str, dict[str, Any]]] = []
        if config_path is not None:
            path = Path(config_path)
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
            layers.append((str(path), parse_config_text(text, str(path))))
        if overrides:
            layers.append(("command line", {k: v for k, v in overrides.items() if v is not None}))
        for source, layer in layers:
            for name, value in layer.items():
                if name not in SCHEMA:
                    raise ConfigError(f"{source}: unknown key {name!r}")
                values[name] = cls._coerce(name, value, source)
                explicit.add(name)
        return cls(values, explicit)

    @staticmethod
    def _coerce(name: str, value: Any, source: str) -> Any:
        key = SCHEMA[name]
        if isinstance(value, str):
            try:
                value = key.parse(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: bad value for {name!r}: {exc}") from None
        if not key.check(value):
            raise ConfigError(f"{source}: {name} = {value!r} violates {key.rule}")
        return value

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def require(self, *names: str) -> None:
        for name in names:
            if self.values[name] in ("", None):
                raise ConfigError(f"missing required key {name!r}")

    def dump(self) -> str:
        """Resolved configuration in the same ``key = value`` format it is read from."""
        lines = []
        for name in SCHEMA:
            v = self.values[name]
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"
