"""Autoregressive denoise-and-compare anomaly scoring.

For one ``n``-frame window ``x`` and an ascending noise ladder::

    x_dot = x
    for each level i:
        x_noisy = x_dot + sigma_i * eps_i
        s       = score(x_noisy, sigma_i)
        x_hat   = x_noisy + sigma_i**2 * s
        raw_i   = |s| / PSNR(x_hat, x)      # always against the original window
        x_dot   = x_hat

Raw scores are max-aggregated over fixed-length clips, min-max normalised per
video and level, and fused across levels into a per-frame indicator.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import NCST
from .tensor import ContractViolation
from .video import (
    NoiseSchedule,
    VideoSequence,
    build_linear_schedule,
    build_noise_schedule,
    patchify_array,
    sigma_to_index,
    stream,
    window_starts,
)

ScoreFn = Callable[[np.ndarray, np.ndarray, np.ndarray, object], np.ndarray]


@dataclass
class ScoreConfig:
    levels: int = 20
    sigma_min: float = 0.001
    sigma_max: float = 1.0
    schedule: str = "geometric"        # or "linear"
    clip_frames: int | None = None     # default 2n
    fusion_weights: list[float] | None = None
    psnr_peak: float = 1.0
    mse_floor: float = 1e-10
    psnr_min: float = 1.0              # dB; keeps the denominator positive
    noise: str = "fresh"               # or "shared": one eps reused on every level
    norm: str = "l2"                   # or "patch_mean"
    autoregressive: bool = True
    appearance: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ContractViolation("need at least one noise level")
        if self.schedule not in ("geometric", "linear"):
            raise ContractViolation(f"unknown schedule {self.schedule!r}")
        if self.noise not in ("fresh", "shared"):
            raise ContractViolation(f"unknown noise mode {self.noise!r}")
        if self.norm not in ("l2", "patch_mean"):
            raise ContractViolation(f"unknown norm {self.norm!r}")

    def ladder(self) -> NoiseSchedule:
        build = build_noise_schedule if self.schedule == "geometric" else build_linear_schedule
        return build(self.sigma_min, self.sigma_max, self.levels)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AnomalyScoreSeries:
    video_id: str
    starts: list[int]
    norms: np.ndarray          # (windows, L) score norms
    psnrs: np.ndarray          # (windows, L)
    raw: np.ndarray            # (windows, L) score_i(t)
    clip_scores: np.ndarray    # (clips, L)
    normalized: np.ndarray     # (L, frames)
    indicator: np.ndarray      # (frames,)
    frame_clip: np.ndarray     # (frames,) clip index of every covered frame
    sigmas: np.ndarray = field(default=None)

    @property
    def frames(self) -> int:
        return len(self.indicator)


# ---------------------------------------------------------------- primitives

def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, mse_floor: float = 1e-10, axis=None):
    """``10 log10(peak**2 / MSE)``; MSE is floored so identical inputs give 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = np.mean((a - b) ** 2, axis=axis)
    return 10.0 * np.log10(peak ** 2 / np.maximum(mse, mse_floor))


def as_score_fn(model) -> ScoreFn:
    """Adapt an :class:`NCST` (or any callable) to ``fn(x_noisy, sigma, i, y)``."""
    if isinstance(model, NCST):
        return lambda x, sigma, i, y: model.score_frames(x, i, y if model.cfg.scene_condition else None)
    return model


def _model_steps(model, sigma: float, batch: int) -> np.ndarray:
    if isinstance(model, NCST):
        c = model.cfg
        lo, hi = c.sigma_min * (1 - 1e-9), c.sigma_max * (1 + 1e-9)
        if not lo <= sigma <= hi:
            raise ContractViolation(f"sigma {sigma} outside the model's range [{c.sigma_min}, {c.sigma_max}]")
        i = float(np.clip(sigma_to_index(sigma, c.sigma_min, c.sigma_max, c.levels), 1.0, c.levels))
    else:
        i = 0.0
    return np.full(batch, i)


def denoise_step(x_noisy: np.ndarray, sigma: float, model, i=None, y=None) -> np.ndarray:
    """``x_noisy + sigma**2 * s(x_noisy, sigma)`` for a window or a batch of windows."""
    if sigma <= 0:
        raise ContractViolation("sigma must be positive")
    x = np.asarray(x_noisy)
    single = x.ndim == 4
    xb = x[None] if single else x
    if i is None:
        i = _model_steps(model, sigma, len(xb))
    s = np.asarray(as_score_fn(model)(xb, np.full(len(xb), sigma), np.broadcast_to(i, (len(xb),)), y))
    out = xb.astype(np.float64) + sigma ** 2 * s.astype(np.float64)
    return out[0] if single else out


def _check_ladder(levels: np.ndarray) -> None:
    if len(levels) == 0:
        raise ContractViolation("need at least one noise level")
    if np.any(np.diff(levels) <= 0):
        raise ContractViolation("noise levels must be strictly ascending")


def autoregressive_score(x_t: np.ndarray, model, schedule, y=None, rng=None, *,
                         autoregressive: bool = True, appearance: bool = True,
                         noise: str = "fresh", norm: str = "l2",
                         psnr_peak: float = 1.0, mse_floor: float = 1e-10, psnr_min: float = 1.0,
                         patch: int | None = None, return_trace: bool = False):
    """Per-level raw scores of one window ``(n, H, W, c)`` or a batch ``(B, n, H, W, c)``.

    ``rng`` is a Generator or, for batches, a list with one Generator per
    window. Returns ``(B, L)`` raw scores (``(L,)`` for a single window); with
    ``return_trace`` also a dict holding norms, PSNRs and the deviation
    ``|x_dot - x_t|`` after every level.
    """
    levels = np.asarray(schedule.levels if isinstance(schedule, NoiseSchedule) else schedule, dtype=np.float64)
    _check_ladder(levels)
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 4
    if single:
        x = x[None]
    B, L = len(x), len(levels)
    if rng is None:
        rng = np.random.default_rng(0)
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * B
    if len(rngs) != B:
        raise ContractViolation("need one RNG per window")
    fn = as_score_fn(model)
    if patch is None and isinstance(model, NCST):
        patch = model.cfg.patch
    shared = np.stack([r.standard_normal(x.shape[1:]) for r in rngs]) if noise == "shared" else None
    dtype = model.dtype if isinstance(model, NCST) else np.float64
    norms, psnrs, devs = np.zeros((B, L)), np.zeros((B, L)), np.zeros((B, L))
    x_dot = x.copy()
    for k, sigma in enumerate(levels):
        eps = shared if shared is not None else np.stack([r.standard_normal(x.shape[1:]) for r in rngs])
        base = x_dot if autoregressive else x
        x_noisy = base + sigma * eps
        i = _model_steps(model, sigma, B) if isinstance(model, NCST) else np.full(B, k + 1.0)
        s = np.asarray(fn(x_noisy.astype(dtype), np.full(B, sigma), i, y), dtype=np.float64)
        x_hat = x_noisy + sigma ** 2 * s
        if norm == "l2":
            norms[:, k] = np.sqrt(np.sum(s.reshape(B, -1) ** 2, axis=1))
        else:
            tok = patchify_array(s, patch or s.shape[-2])
            norms[:, k] = np.sqrt(np.sum(tok ** 2, axis=-1)).mean(axis=-1)
        psnrs[:, k] = psnr(x_hat.reshape(B, -1), x.reshape(B, -1), psnr_peak, mse_floor, axis=1)
        x_dot = x_hat
        devs[:, k] = np.sqrt(np.sum((x_dot - x).reshape(B, -1) ** 2, axis=1))
    raw = norms / np.maximum(psnrs, psnr_min) if appearance else norms.copy()
    if single:
        raw, norms, psnrs, devs = raw[0], norms[0], psnrs[0], devs[0]
    if return_trace:
        return raw, {"norms": norms, "psnrs": psnrs, "deviation": devs, "sigmas": levels}
    return raw


# ---------------------------------------------------------------- aggregation

def clip_max_aggregate(scores: np.ndarray, starts, clip_frames: int, window: int):
    """Max over the windows starting inside each ``clip_frames``-long clip.

    ``scores`` is ``(windows, L)``. Returns ``(clip_scores (clips, L),
    frame_clip (covered frames,))``. Clips without a window start inherit the
    previous clip's score; a leading empty clip gets 0.
    """
    if clip_frames < window:
        raise ContractViolation(f"clip length {clip_frames} shorter than window {window}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    starts = np.asarray(starts, dtype=np.int64)
    if len(starts) == 0:
        return np.zeros((0, scores.shape[1])), np.zeros(0, dtype=np.int64)
    covered = int(starts.max()) + window
    n_clips = (covered + clip_frames - 1) // clip_frames
    clip_of = starts // clip_frames
    out = np.zeros((n_clips, scores.shape[1]))
    have = np.zeros(n_clips, dtype=bool)
    for k in range(n_clips):
        mask = clip_of == k
        if mask.any():
            out[k] = scores[mask].max(axis=0)
            have[k] = True
        elif k > 0:
            out[k] = out[k - 1]
    frame_clip = np.arange(covered) // clip_frames
    return out, frame_clip


def normalize_scores(series: np.ndarray) -> np.ndarray:
    """Min-max normalise along the last axis; constant series map to zeros."""
    s = np.asarray(series, dtype=np.float64)
    if s.shape[-1] == 0:
        raise ContractViolation("cannot normalise an empty series")
    lo = s.min(axis=-1, keepdims=True)
    span = s.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (s - lo) / safe, 0.0)


def fuse_levels(normalized: np.ndarray, weights=None) -> np.ndarray:
    """Weighted average over levels of ``(L, frames)`` normalised scores."""
    S = np.asarray(normalized, dtype=np.float64)
    if S.ndim == 1:
        S = S[None]
    L = S.shape[0]
    w = np.full(L, 1.0 / L) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (L,):
        raise ContractViolation(f"need {L} fusion weights, got {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"fusion weights must be non-negative and sum to 1, got sum {w.sum()}")
    return np.clip(w @ S, 0.0, 1.0)


# ---------------------------------------------------------------- per video

def score_video(video: VideoSequence, model, cfg: ScoreConfig, window: int | None = None) -> AnomalyScoreSeries:
    """Score every non-overlapping window of ``video`` and fuse into per-frame indicators."""
    if isinstance(model, NCST):
        mc = model.cfg
        window = mc.frames
        if video.geometry != (mc.size, mc.size, mc.channels):
            raise ContractViolation(f"video {video.video_id} geometry {video.geometry} does not match model "
                                    f"({mc.size}, {mc.size}, {mc.channels}); model config {mc.fingerprint()[:12]}")
        if mc.scene_condition:
            model.embed_scene(video.scene)  # raises for unseen scene classes
    if window is None:
        raise ContractViolation("window length required for non-NCST scorers")
    if video.n < window:
        raise ContractViolation(f"video too short: {video.video_id} has {video.n} frames, window is {window}")
    T_clip = cfg.clip_frames or 2 * window
    if T_clip < window:
        raise ContractViolation(f"clip length {T_clip} shorter than window {window}")
    ladder = cfg.ladder()
    starts = window_starts(video.n, window)
    batch = np.stack([video.frames[s:s + window] for s in starts])
    rngs = [stream(cfg.seed, video.video_id, s) for s in starts]
    y = np.full(len(starts), video.scene, dtype=np.int64)
    _, trace = autoregressive_score(
        batch, model, ladder, y, rngs, autoregressive=cfg.autoregressive, appearance=cfg.appearance,
        noise=cfg.noise, norm=cfg.norm, psnr_peak=cfg.psnr_peak, mse_floor=cfg.mse_floor,
        psnr_min=cfg.psnr_min, return_trace=True)
    return assemble_series(video.video_id, starts, trace["norms"], trace["psnrs"], cfg, window, ladder.levels)


def raw_from_parts(norms: np.ndarray, psnrs: np.ndarray, appearance: bool, psnr_min: float = 1.0) -> np.ndarray:
    return norms / np.maximum(psnrs, psnr_min) if appearance else np.array(norms, dtype=np.float64)


def assemble_series(video_id: str, starts, norms, psnrs, cfg: ScoreConfig, window: int, sigmas=None) -> AnomalyScoreSeries:
    """Clip-max, normalise and fuse precomputed per-window norms and PSNRs."""
    raw = raw_from_parts(norms, psnrs, cfg.appearance, cfg.psnr_min)
    T_clip = cfg.clip_frames or 2 * window
    clips, frame_clip = clip_max_aggregate(raw, starts, T_clip, window)
    per_frame = clips[frame_clip].T                     # (L, frames)
    normed = normalize_scores(per_frame)
    indicator = fuse_levels(normed, cfg.fusion_weights)
    return AnomalyScoreSeries(video_id, list(starts), np.asarray(norms), np.asarray(psnrs), raw, clips,
                              normed, indicator, frame_clip, None if sigmas is None else np.asarray(sigmas))


# ---------------------------------------------------------------- files

def write_scores(out_dir, series: list[AnomalyScoreSeries]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "scores_raw.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "t", "level", "score"])
        for s in series:
            for k, t in enumerate(s.starts):
                for lev in range(s.raw.shape[1]):
                    w.writerow([s.video_id, t, lev + 1, f"{s.raw[k, lev]:.9g}"])
    with open(out_dir / "scores_final.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "frame_index", "indicator"])
        for s in series:
            for f, v in enumerate(s.indicator):
                w.writerow([s.video_id, f, f"{v:.9g}"])


def read_final_scores(path) -> dict[str, np.ndarray]:
    rows: dict[str, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["video_id"], {})[int(r["frame_index"])] = float(r["indicator"])
    return {vid: np.array([m[k] for k in sorted(m)]) for vid, m in rows.items()}
