"""Reconstruction scoring, frame-level aggregation, smoothing and AUC."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .diffusion import VarianceSchedule, frequency_guided_generate
from .frequency import condition_dense
from .motion_data import TrajectoryCorpus, stack_windows

__all__ = [
    "EvalReport",
    "InferenceConfig",
    "ScoreSeries",
    "auc",
    "evaluate",
    "evaluate_sweep",
    "frame_aggregate",
    "motion_score",
    "score_windows",
    "smooth",
    "write_score_files",
]


@dataclass
class ScoreSeries:
    video_id: str
    scores: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.isfinite(self.scores).all():
            raise ValueError(f"non-finite scores for video {self.video_id}")
        if self.labels is not None and len(self.labels) != len(self.scores):
            raise ValueError(f"{self.video_id}: {len(self.labels)} labels for {len(self.scores)} frames")


@dataclass(frozen=True)
class InferenceConfig:
    schedule: VarianceSchedule
    k: int
    lambda_dct: float = 0.1
    lambda_pi: float = 0.0
    smooth_window: int = 9
    seed: int = 0
    batch_size: int = 1024

    def echo(self) -> dict:
        return {
            "T": self.schedule.T,
            "beta_start": self.schedule.beta_start,
            "beta_end": self.schedule.beta_end,
            "k": self.k,
            "lambda_dct": self.lambda_dct,
            "lambda_pi": self.lambda_pi,
            "smooth_window": self.smooth_window,
            "seed": self.seed,
            "batch_size": self.batch_size,
        }


@dataclass
class EvalReport:
    auc: float
    per_video_auc: dict[str, float]
    config_echo: dict
    lambda_pi: float
    series: list[ScoreSeries] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "lambda_pi": self.lambda_pi,
            "per_video_auc": dict(sorted(self.per_video_auc.items())),
            "config": self.config_echo,
            "n_videos": len(self.series),
            "n_frames": int(sum(len(s.scores) for s in self.series)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def motion_score(x_o, x_g) -> float | np.ndarray:
    """Squared L2 reconstruction error over all frames, channels and joints.

    Accepts single ``[N, C, J]`` motions or ``[B, N, C, J]`` batches.
    """
    if tuple(np.shape(x_o)) != tuple(np.shape(x_g)):
        raise ValueError(f"shape mismatch: {tuple(np.shape(x_o))} vs {tuple(np.shape(x_g))}")
    diff = np.asarray(x_o, dtype=np.float64) - np.asarray(x_g, dtype=np.float64)
    if diff.ndim == 3:
        return float((diff**2).sum())
    return (diff**2).reshape(diff.shape[0], -1).sum(axis=1)


def frame_aggregate(window_scores, frames_per_video: dict[str, int], window_length: int,
                    frame_labels: dict[str, np.ndarray] | None = None) -> list[ScoreSeries]:
    """Per frame: max over persons of the mean over that person's covering windows.

    ``window_scores`` holds ``(video_id, person_id, start_frame, score)``
    tuples. Uncovered frames get the video's minimum covered score (0 when the
    video has no windows). Videos are returned in sorted id order.
    """
    window_scores = list(window_scores)
    if not window_scores:
        raise ValueError("no window scores to aggregate")
    sums: dict[tuple[str, str], np.ndarray] = {}
    counts: dict[tuple[str, str], np.ndarray] = {}
    for vid, pid, start, score in window_scores:
        total = frames_per_video[vid]
        start = int(start)
        if start < 0 or start + window_length > total:
            raise ValueError(f"window {vid}/{pid}@{start} outside {total} frames")
        key = (vid, pid)
        if key not in sums:
            sums[key] = np.zeros(total)
            counts[key] = np.zeros(total)
        sums[key][start : start + window_length] += float(score)
        counts[key][start : start + window_length] += 1

    per_video: dict[str, list[tuple[str, np.ndarray]]] = defaultdict(list)
    for (vid, pid), s in sums.items():
        c = counts[(vid, pid)]
        mean = np.full(len(s), -np.inf)
        np.divide(s, c, out=mean, where=c > 0)
        per_video[vid].append((pid, mean))

    out = []
    for vid in sorted(frames_per_video):
        persons = per_video.get(vid)
        if persons:
            # fixed person order keeps the float reduction order-independent
            stacked = np.stack([m for _, m in sorted(persons, key=lambda p: p[0])])
            frame = stacked.max(axis=0)
            covered = np.isfinite(frame)
            frame[~covered] = frame[covered].min()
        else:
            frame = np.zeros(frames_per_video[vid])
        labels = None if frame_labels is None else np.asarray(frame_labels[vid])
        out.append(ScoreSeries(vid, frame, labels))
    return out


def smooth(series: ScoreSeries, window: int) -> ScoreSeries:
    """Centered moving average; the window shrinks symmetrically-by-truncation at the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd integer, got {window}")
    s = series.scores
    if window == 1 or len(s) == 0:
        return ScoreSeries(series.video_id, s.copy(), series.labels)
    h = window // 2
    csum = np.concatenate([[0.0], np.cumsum(s)])
    idx = np.arange(len(s))
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, len(s))
    out = (csum[hi] - csum[lo]) / (hi - lo)
    # cumulative sums can drift one ulp outside the input range
    out = np.clip(out, s.min(), s.max())
    return ScoreSeries(series.video_id, out, series.labels)


def auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via midranks (Mann-Whitney)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@torch.no_grad()
def score_windows(windows: np.ndarray, predictor, generator, cfg: InferenceConfig) -> np.ndarray:
    """Reconstruction score for each normalized window ``[B, N, C, J]``."""
    x = torch.as_tensor(windows, dtype=torch.float32)
    rng = torch.Generator().manual_seed(cfg.seed)
    scores = np.empty(len(x))
    for s in range(0, len(x), cfg.batch_size):
        xb = x[s : s + cfg.batch_size]
        cond = condition_dense(xb, cfg.k)
        gen = frequency_guided_generate(xb, predictor, generator, cfg.schedule, cfg.lambda_pi,
                                        cfg.lambda_dct, rng, cond=cond).generated
        scores[s : s + len(xb)] = motion_score(xb.double().numpy(), gen.double().numpy())
    return scores


def _report(corpus: TrajectoryCorpus, scores: np.ndarray, cfg: InferenceConfig) -> EvalReport:
    entries = [(w.video_id, w.person_id, w.start_frame, sc) for w, sc in zip(corpus.windows, scores)]
    series = frame_aggregate(entries, corpus.frames_per_video, corpus.window_length or corpus.shape[0],
                             corpus.frame_labels)
    series = [smooth(s, cfg.smooth_window) for s in series]
    all_scores = np.concatenate([s.scores for s in series])
    all_labels = np.concatenate([s.labels for s in series])
    per_video = {
        s.video_id: auc(s.scores, s.labels) for s in series if 0 < s.labels.sum() < len(s.labels)
    }
    return EvalReport(auc(all_scores, all_labels), per_video, cfg.echo(), cfg.lambda_pi, series)


def evaluate(corpus: TrajectoryCorpus, predictor, generator, cfg: InferenceConfig,
             windows: np.ndarray | None = None) -> EvalReport:
    """Score every window, aggregate to frames, smooth and compute dataset-level AUC."""
    if corpus.frame_labels is None:
        raise ValueError("evaluation needs frame labels")
    if windows is None:
        windows = stack_windows(corpus)
    return _report(corpus, score_windows(windows, predictor, generator, cfg), cfg)


def evaluate_sweep(corpus: TrajectoryCorpus, predictor, generator, cfg: InferenceConfig,
                   lambda_pis) -> list[EvalReport]:
    from dataclasses import replace

    windows = stack_windows(corpus)
    return [evaluate(corpus, predictor, generator, replace(cfg, lambda_pi=float(lp)), windows)
            for lp in lambda_pis]


def write_score_files(series: list[ScoreSeries], out_dir: str | Path) -> list[Path]:
    """One ``<video_id>.csv`` per video: ``frame_idx,score[,label]``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in series:
        path = out / f"{s.video_id}.csv"
        with open(path, "w") as fh:
            fh.write("frame_idx,score,label\n" if s.labels is not None else "frame_idx,score\n")
            for i, v in enumerate(s.scores):
                row = f"{i},{v:.10e}"
                if s.labels is not None:
                    row += f",{int(s.labels[i])}"
                fh.write(row + "\n")
        paths.append(path)
    return paths


def read_score_file(path: str | Path) -> ScoreSeries:
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty score file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["frame_idx", "score"] or len(header) > 3:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    has_labels = len(header) == 3
    if has_labels and header[2] != "label":
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    scores, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} columns")
        try:
            scores.append(float(parts[1]))
            if has_labels:
                labels.append(int(parts[2]))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
    if not scores:
        raise ValueError(f"{path}: no score rows")
    return ScoreSeries(path.stem, np.asarray(scores), np.asarray(labels) if has_labels else None)
