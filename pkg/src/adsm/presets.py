"""Named configurations.

``tiny`` is the desk-scale default used by the smoke and acceptance runs;
``paper`` spells out the published geometry and hyperparameters (it is far
too large for the numpy backend but is useful for shape checks).
"""
from __future__ import annotations

from dataclasses import replace

from .model import NcstConfig
from .scoring import ScoreConfig
from .synthetic import SyntheticDatasetSpec
from .training import TrainConfig

TINY_DATA = SyntheticDatasetSpec(
    scenes=2, videos_per_scene=5, frames=64, size=16, object_radius=(2, 3),
    speed=(0.3, 0.8), anomaly_speed=2.5, segment=16, anomaly_rates=(0.1, 0.1, 0.1), seed=0,
)
TINY_MODEL = NcstConfig(frames=8, size=16, channels=3, patch=4, width=64, heads=4, blocks=4,
                        time_width=64, scene_width=64, scene_classes=2)
TINY_TRAIN = TrainConfig(epochs=100, batch=8, lr=2e-2, model=TINY_MODEL)
TINY_SCORE = ScoreConfig(levels=20, sigma_min=0.001, sigma_max=1.0)

PAPER_MODEL = NcstConfig(frames=8, size=160, channels=3, patch=16, width=768, heads=12, blocks=12,
                         time_width=768, scene_width=768, scene_classes=13)
PAPER_TRAIN = TrainConfig(epochs=100, batch=20, lr=1e-4, model=PAPER_MODEL)
PAPER_SCORE = ScoreConfig(levels=20, sigma_min=0.001, sigma_max=1.0)

PRESETS = {
    "tiny": (TINY_DATA, TINY_TRAIN, TINY_SCORE),
    "paper": (replace(TINY_DATA, size=160, object_radius=(12, 20), speed=(2.0, 5.0), anomaly_speed=15.0),
              PAPER_TRAIN, PAPER_SCORE),
}
