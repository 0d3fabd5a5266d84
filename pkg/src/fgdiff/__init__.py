"""Skeleton-based video anomaly detection with frequency-guided motion diffusion.

Modules: ``motion_data`` (trajectories, windows, toy corpora), ``frequency``
(DCT and masks), ``diffusion`` (schedule, loss, guided generation),
``perturbation`` (bounded sign perturbations), ``networks`` and ``training``
(predictor, generator and their min-max fit), ``evaluation`` (scores, frame
aggregation, AUC) and ``cli``.
"""

from .diffusion import frequency_guided_generate, make_schedule
from .evaluation import InferenceConfig, auc, evaluate, motion_score
from .frequency import build_masks, dct2, fuse, idct2
from .motion_data import SynthConfig, load_trajectories, synth_corpus
from .networks import build_generator, build_predictor, count_parameters
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "InferenceConfig",
    "SynthConfig",
    "TrainConfig",
    "auc",
    "build_generator",
    "build_masks",
    "build_predictor",
    "count_parameters",
    "dct2",
    "evaluate",
    "frequency_guided_generate",
    "fuse",
    "idct2",
    "load_trajectories",
    "make_schedule",
    "motion_score",
    "synth_corpus",
    "train",
]
