"""Score recovery on isotropic Gaussian data.

For x ~ N(mu, s^2 I) the sigma-perturbed density is N(mu, (s^2 + sigma^2) I),
whose score is -(x_noisy - mu) / (s^2 + sigma^2). A small NCST trained with
plain DSM should point in that direction.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import NCST, NcstConfig
from .tensor import no_grad
from .training import TrainConfig, fit
from .video import patchify_array

GAUSS_MODEL = NcstConfig(frames=2, size=8, channels=1, patch=4, width=32, heads=2, blocks=2,
                         time_width=32, scene_width=8, scene_classes=1, scene_condition=False)


@dataclass
class RecoveryConfig:
    mu: float = 0.5
    s: float = 0.03
    train_windows: int = 2000
    heldout: int = 1000
    epochs: int = 30
    batch: int = 32
    lr: float = 1e-2
    seed: int = 0
    model: NcstConfig = field(default_factory=lambda: GAUSS_MODEL)


def analytic_score(x_noisy: np.ndarray, mu: float, s: float, sigma: float) -> np.ndarray:
    return -(x_noisy - mu) / (s * s + sigma * sigma)


def mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    return float(np.mean((a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))))


def _windows(cfg: RecoveryConfig, count: int, rng) -> np.ndarray:
    m = cfg.model
    return cfg.mu + cfg.s * rng.standard_normal((count, m.frames, m.size, m.size, m.channels))


def train_gaussian(cfg: RecoveryConfig) -> tuple[NCST, dict]:
    rng = np.random.default_rng(cfg.seed)
    x = _windows(cfg, cfg.train_windows, rng).astype(cfg.model.dtype)
    tc = TrainConfig(epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr, model=cfg.model, seed=cfg.seed,
                     scene_condition=False, motion_weights=False)
    model = NCST(cfg.model)
    t0 = time.perf_counter()
    meta = fit(model, x, None, tc)
    meta["train_seconds"] = time.perf_counter() - t0
    return model, meta


def heldout_cosine(model: NCST, cfg: RecoveryConfig, step: int, chunk: int = 250) -> float:
    """Mean cosine between predicted and analytic scores at ladder step ``step`` (1-based)."""
    m = cfg.model
    sigma = float(m.sigma_of(step))
    rng = np.random.default_rng(cfg.seed + 1)
    x = _windows(cfg, cfg.heldout, rng)
    noisy = x + sigma * rng.standard_normal(x.shape)
    tokens = patchify_array(noisy, m.patch)
    with no_grad():
        pred = np.concatenate([
            model.forward(tokens[k:k + chunk].astype(m.dtype), np.full(len(tokens[k:k + chunk]), float(step))).data
            for k in range(0, len(tokens), chunk)])
    return mean_cosine(pred, analytic_score(tokens, cfg.mu, cfg.s, sigma))
