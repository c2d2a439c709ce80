"""Motion-weighted patch-wise denoising score matching and checkpoints.

Per window the loss is ``(sigma**2 / 2) * sum_j w_j * |s(P~_j, sigma) - t_j|**2``
with ``t_j = -(P~_j - P_j) / sigma**2``; one sigma is drawn log-uniformly per
batch element and the batch loss is the mean over elements.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import DataFormatError, load_split, resolve_split
from .model import NCST, NcstConfig
from .optim import AdamaxState, adamax_step, clip_grad_norm, cosine_anneal_lr
from .tensor import ContractViolation, NumericFault, Tensor
from .video import (
    motion_weights_array,
    patchify_array,
    sample_sigma_loguniform,
    sigma_to_index,
    stream,
    window_starts,
)

log = logging.getLogger(__name__)

CKPT_MAGIC = b"ADSMCKPT"
CKPT_VERSION = 1


class TrainingDiverged(NumericFault):
    def __init__(self, epoch: int, batch: int, sigma):
        self.epoch, self.batch, self.sigma = epoch, batch, np.asarray(sigma).tolist()
        ArithmeticError.__init__(self, f"non-finite loss at epoch {epoch}, batch {batch}, sigma {self.sigma}")
        self.op, self.shapes = "loss", []


class CheckpointError(Exception):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 20
    lr: float = 1e-4
    sigma_min: float = 0.001
    sigma_max: float = 1.0
    seed: int = 0
    data: str = ""
    model: NcstConfig = field(default_factory=NcstConfig)
    motion_weights: bool = True
    scene_condition: bool = True
    grad_clip: float = 1.0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = NcstConfig.from_dict(self.model)
        if not 0 < self.sigma_min < self.sigma_max:
            raise ContractViolation(f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})")
        if self.epochs < 1 or self.batch < 1:
            raise ContractViolation("epochs and batch must be positive")
        if self.lr <= 0:
            raise ContractViolation("lr must be positive")

    def resolved_model(self) -> NcstConfig:
        return replace(self.model, scene_condition=self.scene_condition,
                       sigma_min=self.sigma_min, sigma_max=self.sigma_max)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.resolved_model().to_dict()
        return d


@dataclass
class NcstCheckpoint:
    config: NcstConfig
    params: dict[str, np.ndarray]
    optimizer: dict | None = None
    metadata: dict = field(default_factory=dict)

    def model(self) -> NCST:
        return NCST(self.config, self.params)


# ---------------------------------------------------------------- objective

def dsm_target(noisy: np.ndarray, clean: np.ndarray, sigma) -> np.ndarray:
    """``-(noisy - clean) / sigma**2``; ``sigma`` is scalar or one per leading element."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ContractViolation("sigma must be positive")
    if noisy.shape != clean.shape:
        raise ContractViolation(f"patch shapes differ: {noisy.shape} vs {clean.shape}")
    s = sigma.reshape(sigma.shape + (1,) * (noisy.ndim - sigma.ndim))
    return -(np.asarray(noisy, dtype=np.float64) - clean) / (s * s)


def ncst_loss(model: NCST, x: np.ndarray, sigma, rng: np.random.Generator,
              use_motion_weights: bool = True, scenes=None, return_aux: bool = False):
    """Mean over the batch of the motion-weighted patch-wise DSM loss.

    ``x`` is a batch of windows ``(B, n, H, W, c)`` (a single window is
    accepted too) and ``sigma`` one noise level per window.
    """
    cfg = model.cfg
    x = np.asarray(x)
    if x.ndim == 4:
        x = x[None]
    B = x.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B,))
    if np.any(sigma < cfg.sigma_min * (1 - 1e-9)) or np.any(sigma > cfg.sigma_max * (1 + 1e-9)):
        raise ContractViolation(f"sigma {sigma} outside [{cfg.sigma_min}, {cfg.sigma_max}]")
    clean = x.astype(np.float64)
    eps = rng.standard_normal(clean.shape)
    noisy = clean + sigma.reshape(B, 1, 1, 1, 1) * eps
    P, Pn = patchify_array(clean, cfg.patch), patchify_array(noisy, cfg.patch)
    target = dsm_target(Pn, P, sigma)
    if use_motion_weights:
        omega = motion_weights_array(clean, cfg.patch)
    else:
        omega = np.full(P.shape[:2], 1.0 / P.shape[1])
    i = sigma_to_index(sigma, cfg.sigma_min, cfg.sigma_max, cfg.levels)
    i = np.clip(i, 1.0, cfg.levels)
    dt = model.dtype
    score = model.forward(Pn.astype(dt), i, scenes)
    diff = T.sub(score, Tensor(target.astype(dt)))
    per_token = T.sum_(T.mul(diff, diff), axis=-1)                       # (B, N)
    per_window = T.sum_(T.mul(per_token, Tensor(omega.astype(dt))), axis=-1)
    loss = T.mean(T.mul(per_window, Tensor((0.5 * sigma ** 2).astype(dt))))
    if return_aux:
        return loss, {"eps": eps, "omega": omega, "sigma": sigma, "noisy": noisy}
    return loss


# ---------------------------------------------------------------- loop

def windows_from_videos(videos, n: int) -> tuple[np.ndarray, np.ndarray]:
    frames, scenes = [], []
    for v in videos:
        for s in window_starts(v.n, n):
            frames.append(v.frames[s:s + n])
            scenes.append(v.scene)
    if not frames:
        raise DataFormatError(f"no video has at least {n} frames")
    return np.stack(frames).astype(np.float32), np.asarray(scenes, dtype=np.int64)


def fit(model: NCST, windows: np.ndarray, scenes: np.ndarray | None, config: TrainConfig,
        time_budget: float | None = None, progress=None) -> dict:
    """Train ``model`` in place on pre-windowed data. Returns training metadata."""
    params = model.parameters()
    state = AdamaxState.zeros_like(params)
    M = len(windows)
    n_batches = (M + config.batch - 1) // config.batch
    history, batch_history = [], []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        lr = cosine_anneal_lr(epoch, config.epochs, config.lr)
        order = stream(config.seed, "order", epoch).permutation(M)
        losses = []
        for b in range(n_batches):
            idx = order[b * config.batch:(b + 1) * config.batch]
            rng = stream(config.seed, "batch", epoch, b)
            sigma = sample_sigma_loguniform(config.sigma_min, config.sigma_max, rng, size=len(idx))
            y = scenes[idx] if (scenes is not None and model.cfg.scene_condition) else None
            try:
                # overflow surfaces as NumericFault, so numpy's own warning is redundant
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = ncst_loss(model, windows[idx], sigma, rng, config.motion_weights, y)
            except NumericFault as exc:
                raise TrainingDiverged(epoch, b, sigma) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, sigma)
            grads = T.grad(loss, params)
            if config.grad_clip > 0:
                clip_grad_norm(grads, config.grad_clip)
            adamax_step(params, grads, state, lr)
            losses.append(value)
        history.append(float(np.mean(losses)))
        batch_history.extend(losses)
        if progress is not None:
            progress(epoch, history[-1])
        log.info("epoch %d/%d lr %.3g loss %.5f", epoch + 1, config.epochs, lr, history[-1])
        if time_budget is not None and time.perf_counter() - started > time_budget:
            log.warning("time budget exhausted after epoch %d", epoch + 1)
            break
    return {
        "epochs_run": len(history),
        "loss_history": history,
        "batch_losses": batch_history,
        "seed": config.seed,
        "grad_clip": config.grad_clip,
        "optimizer": {"m": state.m, "u": state.u, "step": state.step,
                      "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
    }


def train(config: TrainConfig, videos=None, progress=None) -> NcstCheckpoint:
    """Train on the anomaly-free train split at ``config.data`` (or on ``videos``)."""
    if videos is None:
        if not config.data:
            raise DataFormatError("no dataset path given")
        videos = load_split(resolve_split(Path(config.data), "train"))
    for v in videos:
        if v.frame_labels is not None and np.any(v.frame_labels):
            raise DataFormatError(f"training video {v.video_id} contains anomalous frames")
    mcfg = config.resolved_model()
    geo = {v.frames.shape[1:] for v in videos}
    if geo != {(mcfg.size, mcfg.size, mcfg.channels)}:
        raise DataFormatError(f"dataset frame geometry {sorted(geo)} does not match model "
                              f"({mcfg.size}, {mcfg.size}, {mcfg.channels}); config {mcfg.fingerprint()[:12]}")
    windows, scenes = windows_from_videos(videos, mcfg.frames)
    if mcfg.scene_condition and scenes.max() >= mcfg.scene_classes:
        mcfg = replace(mcfg, scene_classes=int(scenes.max()) + 1)
    model = NCST(mcfg)
    meta = fit(model, windows, scenes, config, progress=progress)
    opt = meta.pop("optimizer")
    meta["train_config"] = config.to_dict()
    meta["windows"] = int(len(windows))
    return NcstCheckpoint(mcfg, model.named_arrays(), opt, meta)


# ---------------------------------------------------------------- persistence

def _tensor_table(arrays: dict[str, np.ndarray]):
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        raw = a.astype(dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_checkpoint(ckpt: NcstCheckpoint, path) -> None:
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    opt_header = None
    if ckpt.optimizer:
        opt = ckpt.optimizer
        names = list(ckpt.params)
        for k, name in enumerate(names):
            arrays[f"adamax.m/{name}"] = opt["m"][k]
            arrays[f"adamax.u/{name}"] = opt["u"][k]
        opt_header = {k: opt[k] for k in ("step", "beta1", "beta2", "eps")}
        opt_header["order"] = names
    entries, payload = _tensor_table(arrays)
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "metadata": _jsonable(ckpt.metadata),
        "optimizer": opt_header,
        "tensors": entries,
    }, sort_keys=True, separators=(",", ":")).encode()
    fingerprint = bytes.fromhex(ckpt.config.fingerprint())
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(fingerprint)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def parameter_payload(ckpt: NcstCheckpoint) -> bytes:
    return _tensor_table({f"param/{k}": v for k, v in ckpt.params.items()})[1]


def load_checkpoint(path, expected: NcstConfig | None = None) -> NcstCheckpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CKPT_VERSION:
        raise IncompatibleCheckpoint(f"{path}: format version {version}, this build reads {CKPT_VERSION}")
    fingerprint = raw[12:44].hex()
    try:
        (hlen,) = struct.unpack_from("<I", raw, 44)
        header = json.loads(raw[48:48 + hlen])
        (plen,) = struct.unpack_from("<Q", raw, 48 + hlen)
    except (struct.error, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    start = 56 + hlen
    payload = raw[start:start + plen]
    checksum = raw[start + plen:start + plen + 32]
    if len(payload) != plen or len(checksum) != 32 or len(raw) != start + plen + 32:
        raise CorruptCheckpoint(f"{path}: truncated payload")
    if hashlib.sha256(payload).digest() != checksum:
        raise CorruptCheckpoint(f"{path}: payload checksum mismatch")
    config = NcstConfig.from_dict(header["config"])
    if config.fingerprint() != fingerprint:
        raise CorruptCheckpoint(f"{path}: stored fingerprint does not match stored config")
    if expected is not None and expected.fingerprint() != fingerprint:
        raise IncompatibleCheckpoint(
            f"checkpoint config {fingerprint[:12]} differs from expected {expected.fingerprint()[:12]}")
    arrays = {}
    for e in header["tensors"]:
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    opt = None
    if header.get("optimizer"):
        oh = header["optimizer"]
        opt = {k: oh[k] for k in ("step", "beta1", "beta2", "eps")}
        opt["m"] = [arrays[f"adamax.m/{n}"] for n in oh["order"]]
        opt["u"] = [arrays[f"adamax.u/{n}"] for n in oh["order"]]
    # keep the model's parameter order
    order = list(NCST(config).params)
    params = {k: params[k] for k in order if k in params}
    return NcstCheckpoint(config, params, opt, header.get("metadata", {}))
