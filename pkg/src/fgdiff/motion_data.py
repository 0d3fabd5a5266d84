"""Skeleton trajectory ingestion, windowing, normalization and synthetic corpora.

Trajectory files are per-person CSVs named ``<video_id>_<person_id>.csv``
with one row per tracked frame::

    frame_idx, x_1, y_1, [c_1,] ..., x_J, y_J[, c_J]

Confidence columns are optional. Frame labels live next to them in
``labels/<video_id>.txt`` (one 0/1 per line).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "MotionSequence",
    "NormalizationParams",
    "SynthConfig",
    "Track",
    "TrajectoryCorpus",
    "denormalize_window",
    "load_synth_config",
    "load_trajectories",
    "normal_only",
    "normalize_window",
    "read_tracks",
    "stack_windows",
    "synth_corpus",
    "synth_tracks",
    "window_starts",
    "window_tracks",
    "write_tracks",
]


@dataclass(frozen=True)
class MotionSequence:
    data: np.ndarray  # [N, C, J]
    person_id: str
    video_id: str
    start_frame: int

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"motion data must be [N, C, J] with positive sizes, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError(f"non-finite coordinates in window {self.video_id}/{self.person_id}@{self.start_frame}")
        self.data.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NormalizationParams:
    center: np.ndarray  # [C]
    scale: float
    degenerate: bool = False


@dataclass(frozen=True)
class Track:
    """Full trajectory of one tracked person, frames ``start .. start + len - 1``."""

    video_id: str
    person_id: str
    start: int
    data: np.ndarray  # [F, C, J]
    kind: str = "normal"


@dataclass
class TrajectoryCorpus:
    windows: list[MotionSequence]
    frames_per_video: dict[str, int]
    frame_labels: dict[str, np.ndarray] | None = None
    window_length: int = 0
    person_kinds: dict[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        for w in self.windows:
            n = w.data.shape[0]
            total = self.frames_per_video.get(w.video_id)
            if total is None or w.start_frame < 0 or w.start_frame + n > total:
                raise ValueError(
                    f"window {w.video_id}/{w.person_id}@{w.start_frame} exceeds video range {total}"
                )
        if self.frame_labels is not None:
            for vid, lab in self.frame_labels.items():
                if len(lab) != self.frames_per_video[vid]:
                    raise ValueError(
                        f"label length {len(lab)} != frame count {self.frames_per_video[vid]} for video {vid}"
                    )

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def shape(self) -> tuple[int, int, int]:
        if not self.windows:
            raise ValueError("empty corpus has no window shape")
        return self.windows[0].shape


# --------------------------------------------------------------------------- windowing


def window_starts(length: int, window_length: int, stride: int) -> list[int]:
    """Starts at every stride multiple, plus the final full window."""
    if window_length < 1 or stride < 1:
        raise ValueError("window_length and stride must be positive")
    if length < window_length:
        return []
    starts = list(range(0, length - window_length + 1, stride))
    last = length - window_length
    if starts[-1] != last:
        starts.append(last)
    return starts


def _contiguous_runs(frames: np.ndarray) -> list[tuple[int, int]]:
    """(start_index, stop_index) runs of consecutive frame numbers."""
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    edges = [0, *breaks.tolist(), len(frames)]
    return list(zip(edges[:-1], edges[1:]))


def window_tracks(
    tracks: list[Track],
    frames_per_video: dict[str, int],
    window_length: int,
    stride: int,
    frame_labels: dict[str, np.ndarray] | None = None,
) -> TrajectoryCorpus:
    """Cut tracks into windows ordered by (video_id, person_id, start_frame)."""
    windows = []
    for tr in sorted(tracks, key=lambda t: (t.video_id, t.person_id, t.start)):
        for s in window_starts(tr.data.shape[0], window_length, stride):
            windows.append(
                MotionSequence(
                    data=np.array(tr.data[s : s + window_length], dtype=np.float64),
                    person_id=tr.person_id,
                    video_id=tr.video_id,
                    start_frame=tr.start + s,
                )
            )
    windows.sort(key=lambda w: (w.video_id, w.person_id, w.start_frame))
    return TrajectoryCorpus(
        windows=windows,
        frames_per_video=dict(frames_per_video),
        frame_labels=frame_labels,
        window_length=window_length,
        person_kinds={(t.video_id, t.person_id): t.kind for t in tracks},
    )


# --------------------------------------------------------------------------- file IO


def _interpolate_missing(data: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Linear temporal fill of missing joints; endpoints held."""
    out = data.copy()
    frames = np.arange(data.shape[0])
    for j in range(data.shape[2]):
        ok = present[:, j]
        if ok.all():
            continue
        if not ok.any():
            # joint never observed: park it on the per-frame centroid of the others
            others = present.copy()
            others[:, j] = False
            for f in frames:
                sel = others[f]
                out[f, :, j] = data[f][:, sel].mean(axis=1) if sel.any() else 0.0
            continue
        for c in range(data.shape[1]):
            out[:, c, j] = np.interp(frames, frames[ok], data[ok, c, j])
    return out


def _parse_track_file(path: Path, channels: int, num_joints: int | None):
    rows = []
    frame_idx = []
    ncols = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p.strip() for p in text.split(",")]
            if lineno == 1 and parts[0].lower().startswith("frame"):
                continue
            if ncols is None:
                ncols = len(parts)
            elif len(parts) != ncols:
                raise ValueError(f"{path}:{lineno}: expected {ncols} columns, found {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if not float(vals[0]).is_integer():
                raise ValueError(f"{path}:{lineno}: frame index {vals[0]} is not an integer")
            frame_idx.append(int(vals[0]))
            rows.append(vals[1:])
    if not rows:
        return None
    width = ncols - 1
    if num_joints is not None:
        if width == num_joints * channels:
            conf = False
        elif width == num_joints * (channels + 1):
            conf = True
        else:
            raise ValueError(
                f"{path}:1: {width} value columns fit neither {num_joints}x{channels} "
                f"nor {num_joints}x{channels + 1}"
            )
    elif width % channels == 0:
        conf = False
    elif width % (channels + 1) == 0:
        conf = True
    else:
        raise ValueError(f"{path}:1: cannot infer joint layout from {width} value columns")
    per_joint = channels + 1 if conf else channels
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), width // per_joint, per_joint)
    coords = np.transpose(arr[:, :, :channels], (0, 2, 1))  # [F, C, J]
    present = arr[:, :, channels] > 0 if conf else np.ones(arr.shape[:2], dtype=bool)
    frames = np.asarray(frame_idx)
    order = np.argsort(frames, kind="stable")
    frames, coords, present = frames[order], coords[order], present[order]
    if np.any(np.diff(frames) == 0):
        raise ValueError(f"{path}: duplicate frame indices")
    if (frames < 0).any():
        raise ValueError(f"{path}: negative frame index")
    return frames, coords, present


def read_tracks(
    root_path: str | Path, channels: int = 2, num_joints: int | None = None
) -> tuple[list[Track], dict[str, int], dict[str, np.ndarray] | None]:
    """Read every trajectory file under ``root_path``.

    Returns tracks split at gaps in frame numbering, per-video frame counts
    and labels (``None`` when no label directory exists).
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"trajectory directory not found: {root}")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise ValueError(f"no trajectory files (*.csv) in {root}")

    tracks: list[Track] = []
    last_frame: dict[str, int] = {}
    for path in files:
        stem = path.stem
        if "_" not in stem:
            raise ValueError(f"{path}: file name must be <video_id>_<person_id>.csv")
        video_id, person_id = stem.rsplit("_", 1)
        parsed = _parse_track_file(path, channels, num_joints)
        if parsed is None:
            last_frame.setdefault(video_id, -1)
            continue
        frames, coords, present = parsed
        last_frame[video_id] = max(last_frame.get(video_id, -1), int(frames[-1]))
        for a, b in _contiguous_runs(frames):
            data = _interpolate_missing(coords[a:b], present[a:b])
            tracks.append(Track(video_id, person_id, int(frames[a]), data))

    labels = None
    label_dir = root / "labels"
    if label_dir.is_dir():
        labels = {}
        for path in sorted(label_dir.glob("*.txt")):
            lab = np.loadtxt(path, dtype=np.int64, ndmin=1)
            if not np.isin(lab, (0, 1)).all():
                raise ValueError(f"{path}: labels must be 0/1")
            labels[path.stem] = lab
            last_frame.setdefault(path.stem, -1)
    frames_per_video = {vid: last + 1 for vid, last in last_frame.items()}
    if labels is not None:
        for vid, lab in labels.items():
            if len(lab) < frames_per_video[vid]:
                raise ValueError(
                    f"labels for {vid} cover {len(lab)} frames but tracks reach frame {frames_per_video[vid] - 1}"
                )
            frames_per_video[vid] = len(lab)
        missing = sorted(set(frames_per_video) - set(labels))
        if missing:
            raise ValueError(f"videos without label files: {missing[:5]}")
    return tracks, frames_per_video, labels


def load_trajectories(
    root_path: str | Path,
    window_length: int,
    stride: int,
    *,
    channels: int = 2,
    num_joints: int | None = None,
) -> TrajectoryCorpus:
    if window_length < 2:
        raise ValueError(f"window_length must be >= 2, got {window_length}")
    tracks, frames, labels = read_tracks(root_path, channels=channels, num_joints=num_joints)
    return window_tracks(tracks, frames, window_length, stride, labels)


def write_tracks(
    out_dir: str | Path,
    tracks: list[Track],
    frames_per_video: dict[str, int],
    frame_labels: dict[str, np.ndarray] | None = None,
) -> None:
    """Write tracks (and labels) in the format :func:`read_tracks` consumes.

    Coordinates are written with ``repr`` precision so reading back is lossless.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for tr in tracks:
        flat = np.transpose(tr.data, (0, 2, 1)).reshape(tr.data.shape[0], -1)
        with open(out / f"{tr.video_id}_{tr.person_id}.csv", "w") as fh:
            for i, row in enumerate(flat):
                fh.write(",".join([str(tr.start + i), *(repr(float(v)) for v in row)]) + "\n")
    if frame_labels is not None:
        (out / "labels").mkdir(exist_ok=True)
        for vid in sorted(frames_per_video):
            lab = frame_labels[vid]
            (out / "labels" / f"{vid}.txt").write_text("".join(f"{int(v)}\n" for v in lab))


# --------------------------------------------------------------------------- normalization


def normalize_window(m: MotionSequence) -> tuple[MotionSequence, NormalizationParams]:
    """Center each channel on its window mean and divide by the max absolute deviation."""
    data = m.data
    center = data.mean(axis=(0, 2))
    dev = data - center[None, :, None]
    scale = float(np.abs(dev).max())
    degenerate = not scale > 0.0
    if degenerate:
        log.debug("degenerate window %s/%s@%d: scale clamped to 1", m.video_id, m.person_id, m.start_frame)
        scale = 1.0
    out = MotionSequence(dev / scale, m.person_id, m.video_id, m.start_frame)
    return out, NormalizationParams(center=center, scale=scale, degenerate=degenerate)


def denormalize_window(m: MotionSequence, params: NormalizationParams) -> MotionSequence:
    data = m.data * params.scale + params.center[None, :, None]
    return MotionSequence(data, m.person_id, m.video_id, m.start_frame)


def stack_windows(corpus: TrajectoryCorpus, normalize: bool = True) -> np.ndarray:
    """All windows as one ``[B, N, C, J]`` float64 array (normalized by default)."""
    if not corpus.windows:
        raise ValueError("corpus has no windows")
    if normalize:
        return np.stack([normalize_window(w)[0].data for w in corpus.windows])
    return np.stack([w.data for w in corpus.windows])


def normal_only(corpus: TrajectoryCorpus) -> TrajectoryCorpus:
    """Windows from videos whose frame labels are all zero (all windows if unlabeled)."""
    if corpus.frame_labels is None:
        return corpus
    keep = {vid for vid, lab in corpus.frame_labels.items() if not lab.any()}
    windows = [w for w in corpus.windows if w.video_id in keep]
    return TrajectoryCorpus(
        windows=windows,
        frames_per_video={v: n for v, n in corpus.frames_per_video.items() if v in keep},
        frame_labels={v: lab for v, lab in corpus.frame_labels.items() if v in keep},
        window_length=corpus.window_length,
        person_kinds={k: v for k, v in corpus.person_kinds.items() if k[0] in keep},
    )


# --------------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthConfig:
    """Toy skeleton corpus.

    Normal people perform one shared periodic action (a template of at most
    three harmonics per joint) with per-person jitter in period, amplitude
    and phase plus tracker noise whose level varies between people. In
    anomalous videos one span of the main person's track is replaced by
    either its own frames reordered within ``N``-frame blocks, or the same
    frames under strong frame-to-frame jitter. Only that span is labeled 1.
    """

    n_videos: int = 20
    anomaly_ratio: float = 0.2
    N: int = 24
    J: int = 8
    C: int = 2
    seed: int = 0
    n_frames: int = 64
    stride: int = 4
    template_seed: int = 0
    n_harmonics: int = 3
    base_period: float = 32.0
    period_jitter: float = 0.15
    amplitude_jitter: float = 0.15
    phase_jitter: float = 0.3
    noise_min: float = 0.0
    noise_max: float = 0.04
    jitter_amplitude: float = 0.5
    second_person_prob: float = 0.5
    shuffle_segment: int = 1
    motion_amplitude: float = 2.5

    def __post_init__(self):
        if self.n_videos < 0 or not 0.0 <= self.anomaly_ratio <= 1.0:
            raise ValueError("n_videos must be >= 0 and anomaly_ratio in [0, 1]")
        if self.C not in (2, 3):
            raise ValueError(f"C must be 2 or 3, got {self.C}")
        if self.n_frames < self.N or self.N < 2 or self.J < 1:
            raise ValueError("need n_frames >= N >= 2 and J >= 1")
        if self.n_harmonics < 1 or self.n_harmonics > 3:
            raise ValueError("n_harmonics must be 1..3")

    @property
    def n_anomalous(self) -> int:
        return int(round(self.n_videos * self.anomaly_ratio))


def load_synth_config(path: str | Path, **overrides) -> SynthConfig:
    """Parse a ``key = value`` text file into a :class:`SynthConfig`."""
    types = {f.name: f.type for f in fields(SynthConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in text.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown synth key {key!r}")
        values[key] = float(val) if types[key] in ("float", float) else int(val)
    values.update(overrides)
    return SynthConfig(**values)


def _template(cfg: SynthConfig):
    rng = np.random.default_rng(cfg.template_seed)
    j = np.arange(cfg.J)
    offsets = np.zeros((cfg.C, cfg.J))
    offsets[0] = rng.uniform(-0.35, 0.35, cfg.J)
    offsets[1] = -0.4 * (j - (cfg.J - 1) / 2)
    if cfg.C == 3:
        offsets[2] = rng.uniform(-0.2, 0.2, cfg.J)
    h = np.arange(1, cfg.n_harmonics + 1)
    amps = cfg.motion_amplitude * rng.uniform(0.08, 0.25, (cfg.C, cfg.J, cfg.n_harmonics)) / h
    phases = rng.uniform(0, 2 * np.pi, (cfg.C, cfg.J, cfg.n_harmonics))
    return offsets, amps, phases


def _normal_motion(cfg: SynthConfig, template, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """One person's image-plane trajectory ``[F, C, J]``."""
    offsets, amps, phases = template
    period = cfg.base_period * (1 + rng.uniform(-cfg.period_jitter, cfg.period_jitter))
    a = amps * (1 + cfg.amplitude_jitter * rng.standard_normal(amps.shape))
    phi = phases + cfg.phase_jitter * rng.standard_normal(phases.shape) + rng.uniform(0, 2 * np.pi)
    t = np.arange(n_frames)[:, None, None, None]
    h = np.arange(1, cfg.n_harmonics + 1)
    body = offsets[None] + (a[None] * np.sin(2 * np.pi * h * t / period + phi[None])).sum(-1)
    noise_level = rng.uniform(cfg.noise_min, cfg.noise_max)
    body = body + noise_level * rng.standard_normal(body.shape)

    scale = rng.uniform(40.0, 80.0)
    root = np.zeros(cfg.C)
    root[:2] = rng.uniform([100.0, 100.0], [540.0, 380.0])
    velocity = rng.normal(0.0, 0.4, cfg.C)
    track = root[None, :, None] + velocity[None, :, None] * np.arange(n_frames)[:, None, None] + scale * body
    return track


def shuffle_blocks(track: np.ndarray, block: int, rng: np.random.Generator, segment: int = 1) -> np.ndarray:
    """Reorder ``segment``-frame pieces independently inside consecutive ``block``-frame chunks.

    ``segment = 1`` shuffles single frames. Each chunk with more than one
    piece is guaranteed to change order.
    """
    if block < 1 or segment < 1:
        raise ValueError("block and segment must be positive")
    out = track.copy()
    for s in range(0, track.shape[0], block):
        e = min(s + block, track.shape[0])
        pieces = [np.arange(a, min(a + segment, e)) for a in range(s, e, segment)]
        perm = rng.permutation(len(pieces))
        if len(pieces) > 1 and np.array_equal(perm, np.arange(len(pieces))):
            perm = np.roll(perm, 1)
        out[s:e] = track[np.concatenate([pieces[i] for i in perm])]
    return out


def _add_jitter(cfg: SynthConfig, segment: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    # alternating-sign shake plus white noise: energy sits in the top temporal frequencies
    n = segment.shape[0]
    shake = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)[:, None, None]
    amp = cfg.jitter_amplitude * scale
    sway = rng.uniform(0.5, 1.0, (1, cfg.C, cfg.J))
    return segment + amp * (0.5 * shake * sway + 0.5 * rng.standard_normal(segment.shape))


def synth_tracks(
    config: SynthConfig, seed: int | None = None
) -> tuple[list[Track], dict[str, int], dict[str, np.ndarray]]:
    """Generate full tracks, frame counts and frame labels for a toy corpus.

    Every video has person ``p0`` throughout and sometimes a second person
    ``p1`` for part of it. In anomalous videos ``p0`` misbehaves during one
    span of ``N`` to ``n_frames / 2`` frames, so the number of visible people
    carries no information about the labels.
    """
    if config.n_videos - config.n_anomalous <= 0:
        raise ValueError("synthetic corpus needs at least one normal video")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    template = _template(config)
    F = config.n_frames
    anomalous = set(rng.choice(config.n_videos, size=config.n_anomalous, replace=False).tolist())

    tracks: list[Track] = []
    labels: dict[str, np.ndarray] = {}
    width = max(3, len(str(config.n_videos - 1)))
    for v in range(config.n_videos):
        vid = f"v{v:0{width}d}"
        lab = np.zeros(F, dtype=np.int64)
        main = _normal_motion(config, template, F, rng)
        kind = "normal"
        if v in anomalous:
            length = int(rng.integers(config.N, max(config.N, F // 2) + 1))
            start = int(rng.integers(0, F - length + 1))
            span = slice(start, start + length)
            if rng.random() < 0.5:
                main[span] = shuffle_blocks(main[span], config.N, rng, config.shuffle_segment)
                kind = "shuffled"
            else:
                scale = float(np.abs(main - main.mean(axis=(0, 2), keepdims=True)).max())
                main[span] = _add_jitter(config, main[span], scale, rng)
                kind = "jitter"
            lab[span] = 1
        tracks.append(Track(vid, "p0", 0, main, kind=kind))
        if rng.random() < config.second_person_prob:
            length = int(rng.integers(config.N, F + 1))
            start = int(rng.integers(0, F - length + 1))
            tracks.append(Track(vid, "p1", start, _normal_motion(config, template, length, rng)))
        labels[vid] = lab
    frames = {f"v{v:0{width}d}": F for v in range(config.n_videos)}
    return tracks, frames, labels


def synth_corpus(config: SynthConfig, seed: int | None = None, *, stride: int | None = None) -> TrajectoryCorpus:
    """Windowed toy corpus; reproducible for a given ``(config, seed)``."""
    tracks, frames, labels = synth_tracks(config, seed)
    return window_tracks(tracks, frames, config.N, config.stride if stride is None else stride, labels)


def high_frequency_energy_fraction(window: np.ndarray) -> float:
    """Share of DCT energy outside the top half of coefficients by magnitude."""
    from .frequency import condense, dct2

    y = np.abs(dct2(condense(window))).ravel()
    energy = np.sort(y**2)[::-1]
    total = energy.sum()
    if total == 0:
        return 0.0
    return float(energy[math.ceil(len(energy) / 2) :].sum() / total)
