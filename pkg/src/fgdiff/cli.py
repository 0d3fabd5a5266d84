"""``fgdiff`` command line: train, eval, score, synth, plot.

Exit codes: 0 success, 2 usage or configuration error, 3 training failure,
4 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import SCHEMA, ConfigError, RunConfig
from .evaluation import (
    InferenceConfig,
    evaluate_sweep,
    frame_aggregate,
    read_score_file,
    score_windows,
    smooth,
    write_score_files,
)
from .frequency import default_k
from .motion_data import SynthConfig, load_trajectories, stack_windows, synth_tracks, write_tracks
from .networks import SkeletonGraph, count_parameters
from .training import AdversarialTrainer, TrainConfig, TrainingDiverged

log = logging.getLogger("fgdiff")

EXIT_OK, EXIT_USAGE, EXIT_TRAIN, EXIT_CHECKPOINT = 0, 2, 3, 4


def _set_threads() -> None:
    raw = os.environ.get("FGDIFF_NUM_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FGDIFF_NUM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FGDIFF_NUM_THREADS must be a positive integer, got {raw!r}")
    torch.set_num_threads(n)


def _graph(cfg: RunConfig, joints: int) -> SkeletonGraph:
    kind = cfg["graph"]
    if kind == "coco17":
        if joints != 17:
            raise ConfigError(f"graph = coco17 needs 17 joints, data has {joints}")
        return SkeletonGraph.coco17()
    if kind == "chain":
        return SkeletonGraph.chain(joints)
    return SkeletonGraph.default(joints)


def _load_corpus(cfg: RunConfig, key: str, stride: int, num_joints=None):
    cfg.require(key)
    try:
        return load_trajectories(cfg[key], cfg["window_length"], stride, channels=cfg["channels"],
                                 num_joints=num_joints if num_joints is not None else cfg["num_joints"])
    except FileNotFoundError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        max_iters=cfg["max_iters"], batch_size=cfg["batch_size"], lr_base=cfg["lr_base"],
        lr_decay=cfg["lr_decay"], lambda_p=cfg["lambda_p"], T=cfg["T"], beta_start=cfg["beta_start"],
        beta_end=cfg["beta_end"], k=cfg["k"], seed=cfg["seed"],
        generator_update_period=cfg["generator_update_period"], width=cfg["width"], depth=cfg["depth"],
        kernel=cfg["kernel"], gen_width=cfg["gen_width"], gen_depth=cfg["gen_depth"],
        gen_kernel=cfg["gen_kernel"], grad_clip=cfg["grad_clip"],
    )


def cmd_train(cfg: RunConfig) -> int:
    if not cfg["beta_start"] <= cfg["beta_end"]:
        raise ConfigError("beta_start must not exceed beta_end")
    corpus = _load_corpus(cfg, "train_data", cfg["train_stride"])
    if len(corpus) == 0:
        raise ConfigError(f"train_data: no window of {cfg['window_length']} frames in {cfg['train_data']}")
    if corpus.frame_labels is not None and any(lab.any() for lab in corpus.frame_labels.values()):
        log.warning("training data contains labeled anomalous frames; training is meant to see normal motion only")
    N, C, J = corpus.shape
    k = cfg["k"] if cfg["k"] is not None else default_k(N, C, J)
    if k > N * C * J:
        raise ConfigError(f"k = {k} exceeds the {N * C * J} coefficients of a window")
    graph = _graph(cfg, J)
    tc = _train_config(cfg)
    data = torch.as_tensor(stack_windows(corpus), dtype=torch.float32)
    trainer = AdversarialTrainer(data, tc, graph, use_generator=cfg["use_generator"])
    n_pred = count_parameters(trainer.predictor)
    n_gen = count_parameters(trainer.generator) if trainer.generator is not None else 0
    log.info("windows %d, N=%d C=%d J=%d, parameters: predictor %d, generator %d, total %d",
             len(corpus), N, C, J, n_pred, n_gen, n_pred + n_gen)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        history = trainer.run()
    except (TrainingDiverged, FloatingPointError) as exc:
        (out / "metrics.tsv").write_text("\n".join(trainer.history.log_lines()) + "\n")
        log.error("training failed: %s", exc)
        return EXIT_TRAIN
    (out / "metrics.tsv").write_text("\n".join(history.log_lines()) + "\n")
    ck = Checkpoint(
        predictor=trainer.predictor.eval(),
        generator=None if trainer.generator is None else trainer.generator.eval(),
        schedule=trainer.sched,
        lambda_p=tc.lambda_p,
        lambda_dct=cfg["lambda_dct"],
        k=k, N=N, C=C, J=J,
        arch={name: cfg[name] for name in ("width", "depth", "kernel", "gen_width", "gen_depth", "gen_kernel")},
        config=cfg.dump(),
    )
    path = Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.pt"
    save_checkpoint(path, ck)
    (out / "config.txt").write_text(cfg.dump())
    log.info("final loss_theta %.5f; checkpoint written to %s", history.loss_theta[-1], path)
    return EXIT_OK


def _checkpoint(cfg: RunConfig) -> Checkpoint:
    path = Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out"]) / "checkpoint.pt"
    return load_checkpoint(path)


def _inference_config(cfg: RunConfig, ck: Checkpoint, lambda_pi: float = 0.0) -> InferenceConfig:
    lambda_dct = cfg["lambda_dct"] if "lambda_dct" in cfg.explicit else ck.lambda_dct
    return InferenceConfig(schedule=ck.schedule, k=ck.k, lambda_dct=lambda_dct, lambda_pi=lambda_pi,
                           smooth_window=cfg["smooth_window"], seed=cfg["seed"],
                           batch_size=cfg["eval_batch_size"])


def _load_for_checkpoint(cfg: RunConfig, ck: Checkpoint, key: str):
    try:
        return _load_corpus(cfg, key, cfg["eval_stride"], num_joints=ck.J)
    except ConfigError:
        # readable with another joint count: the data does not fit this checkpoint
        corpus = _load_corpus(cfg, key, cfg["eval_stride"])
        raise CheckpointError(
            f"checkpoint expects {ck.J} joints, {key} has {corpus.shape[2] if len(corpus) else 'another count'}"
        ) from None


def _check_shape(corpus, ck: Checkpoint, key: str) -> None:
    if len(corpus) == 0:
        raise ConfigError(f"{key}: no window of {corpus.window_length} frames found")
    if corpus.shape != (ck.N, ck.C, ck.J):
        raise CheckpointError(f"checkpoint expects windows {(ck.N, ck.C, ck.J)}, {key} has {corpus.shape}")


def _lpi_tag(lpi: float) -> str:
    return f"lpi_{lpi:g}"


def cmd_eval(cfg: RunConfig) -> int:
    ck = _checkpoint(cfg)
    corpus = _load_for_checkpoint(cfg, ck, "test_data")
    _check_shape(corpus, ck, "test_data")
    if corpus.frame_labels is None:
        raise ConfigError(f"test_data: {cfg['test_data']} has no labels/ directory; use 'score' for unlabeled data")
    base = _inference_config(cfg, ck)
    reports = evaluate_sweep(corpus, ck.predictor, ck.generator, base, cfg["lambda_pi"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    summary = ["lambda_pi\tauc"]
    for rep in reports:
        tag = _lpi_tag(rep.lambda_pi)
        (out / f"report_{tag}.json").write_text(rep.to_json() + "\n")
        write_score_files(rep.series, out / "scores" / tag)
        summary.append(f"{rep.lambda_pi:g}\t{rep.auc:.6f}")
        log.info("lambda_pi %g: frame AUC %.4f", rep.lambda_pi, rep.auc)
    (out / "eval_metrics.tsv").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    ck = _checkpoint(cfg)
    corpus = _load_for_checkpoint(cfg, ck, "test_data")
    _check_shape(corpus, ck, "test_data")
    out = Path(cfg["out"])
    for lpi in cfg["lambda_pi"]:
        ic = _inference_config(cfg, ck, lpi)
        scores = score_windows(stack_windows(corpus), ck.predictor, ck.generator, ic)
        entries = [(w.video_id, w.person_id, w.start_frame, s) for w, s in zip(corpus.windows, scores)]
        series = frame_aggregate(entries, corpus.frames_per_video, corpus.window_length, corpus.frame_labels)
        series = [smooth(s, ic.smooth_window) for s in series]
        paths = write_score_files(series, out / "scores" / _lpi_tag(lpi))
        log.info("lambda_pi %g: wrote %d score files", lpi, len(paths))
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg["out"])
    base = dict(N=cfg["window_length"], J=cfg["synth_joints"], C=cfg["channels"], n_frames=cfg["n_frames"],
                stride=cfg["train_stride"])
    try:
        test_cfg = SynthConfig(n_videos=cfg["n_videos"], anomaly_ratio=cfg["anomaly_ratio"], seed=cfg["seed"], **base)
        train_cfg = SynthConfig(n_videos=cfg["n_train_videos"], anomaly_ratio=0.0, seed=cfg["seed"] + 1, **base)
        splits = {"train": synth_tracks(train_cfg), "test": synth_tracks(test_cfg)}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        for name, (tracks, frames, labels) in splits.items():
            write_tracks(out / name, tracks, frames, labels)
    except OSError as exc:
        raise ConfigError(f"cannot write synthetic corpus under {out}: {exc.strerror or exc}") from None
    n_anom = sum(int(lab.any()) for lab in splits["test"][2].values())
    log.info("synthetic corpus in %s: %d training videos, %d test videos (%d anomalous)",
             out, cfg["n_train_videos"], cfg["n_videos"], n_anom)
    return EXIT_OK


def cmd_plot(cfg: RunConfig, files: list[str]) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not files:
        raise ConfigError("plot needs at least one score file")
    series = []
    for f in files:
        try:
            series.append(read_score_file(f))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"malformed score file: {exc}") from None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for s in series:
        fig, ax = plt.subplots(figsize=(8, 2.6))
        frames = np.arange(len(s.scores))
        if s.labels is not None:
            for start, stop in _spans(s.labels):
                ax.axvspan(start - 0.5, stop - 0.5, color="tab:red", alpha=0.2, lw=0)
        ax.plot(frames, s.scores, color="tab:blue", lw=1.2)
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        ax.set_title(s.video_id)
        ax.set_xlim(-0.5, max(len(s.scores) - 0.5, 0.5))
        fig.tight_layout()
        fig.savefig(out / f"{s.video_id}.png", dpi=100, metadata={"Software": None})
        plt.close(fig)
    log.info("wrote %d plots to %s", len(series), out)
    return EXIT_OK


def _spans(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` runs of label 1."""
    padded = np.concatenate([[0], np.asarray(labels, dtype=int), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fgdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train predictor and perturbation generator")
    p.add_argument("--data", dest="train_data", help="training trajectory directory")
    for name in ("eval", "score"):
        p = sub.add_parser(name, parents=[common],
                           help="evaluate labeled data" if name == "eval" else "write score files for any data")
        p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--data", dest="test_data", help="test trajectory directory")
        p.add_argument("--lambda-pi", dest="lambda_pi", help="comma-separated inference perturbation intensities")
        p.add_argument("--lambda-dct", dest="lambda_dct", help="override the checkpoint's lambda_dct")
    sub.add_parser("synth", parents=[common], help="write a synthetic train/test corpus")
    p = sub.add_parser("plot", parents=[common], help="plot score files")
    p.add_argument("files", nargs="*", help="score files written by eval or score")
    parser.epilog = "configuration keys: " + ", ".join(SCHEMA)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        over[key] = value
    for name in ("train_data", "test_data", "checkpoint", "lambda_pi", "lambda_dct", "out"):
        value = getattr(args, name, None)
        if value is not None:
            over[name] = value
    if args.seed is not None:
        over["seed"] = str(args.seed)
    return over


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        _set_threads()
        cfg = RunConfig.resolve(args.config, _overrides(args))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "score":
            return cmd_score(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        return cmd_plot(cfg, args.files)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
