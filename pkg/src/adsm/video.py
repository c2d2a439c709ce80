"""Video windows, patch tokens, noise schedules and key-frame motion weights.

Pixels live in [0, 1]. Frame arrays are laid out ``(n, H, W, c)``; tokens are
flattened ``d x d x c`` patches ordered frame-major, then row-major.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractViolation


@dataclass
class VideoSequence:
    frames: np.ndarray
    scene: int = 0
    frame_labels: np.ndarray | None = None
    video_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ContractViolation(f"frames must be (n, H, W, c), got shape {self.frames.shape}")
        if self.frame_labels is not None and len(self.frame_labels) != len(self.frames):
            raise ContractViolation("frame_labels length differs from frame count")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])

    def window(self, start: int, n: int) -> "VideoSequence":
        labels = None if self.frame_labels is None else self.frame_labels[start:start + n]
        return VideoSequence(self.frames[start:start + n], self.scene, labels, self.video_id)


@dataclass
class TokenBatch:
    tokens: np.ndarray      # (N, d*d*c)
    positions: np.ndarray   # (N, 3) -> (frame, row, col) in patch units
    patch: int
    channels: int

    @property
    def count(self) -> int:
        return self.tokens.shape[0]


@dataclass
class NoiseSchedule:
    levels: np.ndarray
    mode: str = "geometric"

    @property
    def sigma_min(self) -> float:
        return float(self.levels[0])

    @property
    def sigma_max(self) -> float:
        return float(self.levels[-1])

    def __len__(self):
        return len(self.levels)


@dataclass
class MotionWeights:
    omega: np.ndarray                 # (N,) over all tokens
    upsilon: np.ndarray               # (S,) raw per spatial patch
    spatial: np.ndarray = field(default=None)  # (S,) shares before temporal replication


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent RNG stream derived from ``seed`` and arbitrary keys."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        digest = hashlib.sha256(str(k).encode()).digest()
        words.append(int.from_bytes(digest[:4], "little"))
    return np.random.default_rng(np.random.SeedSequence(words))


# ---------------------------------------------------------------- schedules

def build_noise_schedule(sigma_min: float, sigma_max: float, levels: int) -> NoiseSchedule:
    """Geometric ladder ``sigma_min * r**(i-1)`` ending exactly at ``sigma_max``."""
    if sigma_min <= 0 or sigma_max <= sigma_min:
        raise ContractViolation(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if levels < 1:
        raise ContractViolation("need at least one noise level")
    if levels == 1:
        return NoiseSchedule(np.array([sigma_max], dtype=np.float64))
    ratio = (sigma_max / sigma_min) ** (1.0 / (levels - 1))
    sig = sigma_min * ratio ** np.arange(levels, dtype=np.float64)
    sig[-1] = sigma_max
    return NoiseSchedule(sig, "geometric")


def build_linear_schedule(sigma_min: float, sigma_max: float, levels: int) -> NoiseSchedule:
    if sigma_min <= 0 or sigma_max <= sigma_min:
        raise ContractViolation(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if levels < 1:
        raise ContractViolation("need at least one noise level")
    if levels == 1:
        return NoiseSchedule(np.array([sigma_max], dtype=np.float64), "linear")
    return NoiseSchedule(np.linspace(sigma_min, sigma_max, levels), "linear")


def sample_sigma_loguniform(sigma_min: float, sigma_max: float, rng: np.random.Generator, size=None):
    if sigma_min <= 0 or sigma_max <= sigma_min:
        raise ContractViolation(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    u = rng.uniform(math.log(sigma_min), math.log(sigma_max), size=size)
    return np.exp(u)


def sigma_to_index(sigma, sigma_min: float, sigma_max: float, levels: int):
    """Continuous diffusion step in [1, L] whose geometric-ladder level is ``sigma``."""
    if levels == 1:
        return np.ones_like(np.asarray(sigma, dtype=np.float64))
    frac = np.log(np.asarray(sigma, dtype=np.float64) / sigma_min) / math.log(sigma_max / sigma_min)
    return 1.0 + (levels - 1) * frac


def perturb(x: np.ndarray, sigma, rng: np.random.Generator):
    """Return ``(x + sigma * eps, eps)`` with standard normal ``eps``.

    ``sigma`` may be a scalar or one value per leading batch element.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ContractViolation("sigma must be non-negative")
    eps = rng.standard_normal(x.shape).astype(x.dtype)
    s = sigma.reshape(sigma.shape + (1,) * (x.ndim - sigma.ndim)).astype(x.dtype)
    return x + s * eps, eps


# ---------------------------------------------------------------- tokens

def _check_geometry(H: int, W: int, d: int) -> None:
    if d <= 0 or H % d or W % d:
        raise ContractViolation(f"frame size {H}x{W} not divisible by patch size {d}")


def patchify_array(frames: np.ndarray, d: int) -> np.ndarray:
    """``(..., n, H, W, c)`` -> ``(..., N, d*d*c)`` in canonical token order."""
    *lead, n, H, W, c = frames.shape
    _check_geometry(H, W, d)
    gh, gw = H // d, W // d
    x = frames.reshape(*lead, n, gh, d, gw, d, c)
    k = len(lead)
    x = x.transpose(*range(k), k, k + 1, k + 3, k + 2, k + 4, k + 5)
    return np.ascontiguousarray(x).reshape(*lead, n * gh * gw, d * d * c)


def unpatchify_array(tokens: np.ndarray, n: int, H: int, W: int, c: int, d: int) -> np.ndarray:
    """Inverse of :func:`patchify_array` for canonically ordered tokens."""
    *lead, N, P = tokens.shape
    _check_geometry(H, W, d)
    gh, gw = H // d, W // d
    if N != n * gh * gw or P != d * d * c:
        raise ContractViolation(f"{N} tokens of width {P} do not tile {n}x{H}x{W}x{c} with patch {d}")
    k = len(lead)
    x = tokens.reshape(*lead, n, gh, gw, d, d, c)
    x = x.transpose(*range(k), k, k + 1, k + 3, k + 2, k + 4, k + 5)
    return np.ascontiguousarray(x).reshape(*lead, n, H, W, c)


def token_positions(n: int, H: int, W: int, d: int) -> np.ndarray:
    gh, gw = H // d, W // d
    f, r, q = np.meshgrid(np.arange(n), np.arange(gh), np.arange(gw), indexing="ij")
    return np.stack([f.ravel(), r.ravel(), q.ravel()], axis=1)


def patchify(x: VideoSequence | np.ndarray, d: int) -> TokenBatch:
    frames = x.frames if isinstance(x, VideoSequence) else x
    n, H, W, c = frames.shape
    return TokenBatch(patchify_array(frames, d), token_positions(n, H, W, d), d, c)


def unpatchify(t: TokenBatch, H: int, W: int) -> np.ndarray:
    """Place every token at its recorded position; tokens may come in any order."""
    d, c = t.patch, t.channels
    _check_geometry(H, W, d)
    gh, gw = H // d, W // d
    pos = np.asarray(t.positions)
    if t.tokens.shape[1] != d * d * c:
        raise ContractViolation(f"token width {t.tokens.shape[1]} != {d}*{d}*{c}")
    if pos.size == 0 or pos.shape != (t.count, 3):
        raise ContractViolation("positions must be (N, 3)")
    if pos[:, 1].min() < 0 or pos[:, 2].min() < 0 or pos[:, 1].max() >= gh or pos[:, 2].max() >= gw or pos[:, 0].min() < 0:
        raise ContractViolation("token position outside the frame grid")
    n = int(pos[:, 0].max()) + 1
    if t.count != n * gh * gw:
        raise ContractViolation(f"expected {n * gh * gw} tokens for {n} frames, got {t.count}")
    flat = (pos[:, 0] * gh + pos[:, 1]) * gw + pos[:, 2]
    if len(np.unique(flat)) != t.count:
        raise ContractViolation("duplicate token positions")
    ordered = np.empty_like(t.tokens)
    ordered[flat] = t.tokens
    return unpatchify_array(ordered, n, H, W, c, d)


# ---------------------------------------------------------------- motion weights

def _spatial_magnitudes(frames: np.ndarray, d: int) -> np.ndarray:
    """Per spatial patch: channel-mean of the per-channel max key-frame difference."""
    *lead, n, H, W, c = frames.shape
    if n < 2:
        raise ContractViolation("motion weights need at least two frames")
    _check_geometry(H, W, d)
    g = np.abs(frames[..., -1, :, :, :].astype(np.float64) - frames[..., 0, :, :, :])
    g = g.reshape(*lead, H // d, d, W // d, d, c)
    k = len(lead)
    peak = g.max(axis=(k + 1, k + 3))            # (..., gh, gw, c)
    return peak.mean(axis=-1).reshape(*lead, -1)  # (..., S)


def motion_weights_array(frames: np.ndarray, d: int) -> np.ndarray:
    """Batched token weights, ``(..., n, H, W, c)`` -> ``(..., N)``."""
    n = frames.shape[-4]
    ups = _spatial_magnitudes(frames, d)
    total = ups.sum(axis=-1, keepdims=True)
    S = ups.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = np.where(total > 0, ups / np.where(total > 0, total, 1.0), 1.0 / S)
    w = np.broadcast_to(shares[..., None, :] / n, shares.shape[:-1] + (n, S))
    return np.ascontiguousarray(w).reshape(*shares.shape[:-1], n * S)


def motion_weights(x: VideoSequence | np.ndarray, d: int) -> MotionWeights:
    frames = x.frames if isinstance(x, VideoSequence) else x
    ups = _spatial_magnitudes(frames, d)
    total = ups.sum()
    shares = ups / total if total > 0 else np.full_like(ups, 1.0 / ups.size)
    return MotionWeights(motion_weights_array(frames, d), ups, shares)


# ---------------------------------------------------------------- windowing

def window_starts(length: int, n: int) -> list[int]:
    """Starts of consecutive non-overlapping ``n``-frame windows; a partial tail is dropped."""
    return list(range(0, length - n + 1, n)) if length >= n else []
