"""Noise-conditioned score transformer (NCST).

Tokens are linearly embedded, summed with fixed sinusoidal (frame, row, col)
encodings and passed through S-AdaLN transformer blocks. Every block gets its
own modulation MLP fed by the shared condition ``z = [e(i), e(y)]``::

    h' = h  + a1 * MHA(g1 * LN(h)  + b1)
    h  = h' + a2 * FFN(g2 * LN(h') + b2)

A final layer norm and a linear head map each token back to a patch-shaped
score. The head output is divided by sigma so that the network only has to
produce unit-scale values across the whole noise range.

The modulation output layers and the head are zero-initialised: a fresh model
has ``g = 1, b = 0, a = 0`` in every block and predicts the zero score field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import ContractViolation, Tensor


class UnseenSceneError(ContractViolation):
    """Scene label outside the classes the model was built for."""


@dataclass(frozen=True)
class NcstConfig:
    frames: int = 8
    size: int = 16
    channels: int = 3
    patch: int = 4
    width: int = 64
    heads: int = 4
    blocks: int = 4
    time_width: int = 64
    scene_width: int = 64
    scene_classes: int = 2
    scene_condition: bool = True
    attention: str = "joint"          # or "factorized"
    sigma_min: float = 0.001
    sigma_max: float = 1.0
    levels: int = 20
    sigma_scaled_output: bool = True
    dtype: str = "float32"
    init_seed: int = 0

    def __post_init__(self):
        if self.width % self.heads:
            raise ContractViolation(f"width {self.width} not divisible by {self.heads} heads")
        if self.size % self.patch:
            raise ContractViolation(f"frame size {self.size} not divisible by patch {self.patch}")
        if self.attention not in ("joint", "factorized"):
            raise ContractViolation(f"unknown attention layout {self.attention!r}")
        if self.time_width % 2:
            raise ContractViolation("time_width must be even")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ContractViolation("need 0 < sigma_min < sigma_max")

    @property
    def spatial_tokens(self) -> int:
        return (self.size // self.patch) ** 2

    @property
    def tokens(self) -> int:
        return self.frames * self.spatial_tokens

    @property
    def token_width(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def cond_width(self) -> int:
        return self.time_width + self.scene_width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NcstConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def sigma_of(self, i):
        """Noise level of (possibly fractional) diffusion step ``i`` on the geometric ladder."""
        i = np.asarray(i, dtype=np.float64)
        if self.levels == 1:
            return np.full_like(i, self.sigma_max)
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** ((i - 1.0) / (self.levels - 1))


def sinusoid(positions: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,))], axis=-1)
    return emb


def position_table(cfg: NcstConfig) -> np.ndarray:
    g = cfg.size // cfg.patch
    chunk = 2 * (cfg.width // 6)
    fw = cfg.width - 2 * chunk
    f, r, c = np.meshgrid(np.arange(cfg.frames), np.arange(g), np.arange(g), indexing="ij")
    return np.concatenate([sinusoid(f.ravel(), fw), sinusoid(r.ravel(), chunk), sinusoid(c.ravel(), chunk)], axis=-1)


def combine_condition(e_i: Tensor, e_y: Tensor, widths: tuple[int, int] | None = None) -> Tensor:
    if widths is not None and (e_i.shape[-1], e_y.shape[-1]) != tuple(widths):
        raise ContractViolation(f"condition widths {(e_i.shape[-1], e_y.shape[-1])} != configured {tuple(widths)}")
    if e_i.shape[:-1] != e_y.shape[:-1]:
        raise ContractViolation(f"condition batch shapes differ: {e_i.shape} vs {e_y.shape}")
    return T.concat([e_i, e_y], axis=-1)


@dataclass
class BlockModulation:
    gamma1: Tensor
    beta1: Tensor
    alpha1: Tensor
    gamma2: Tensor
    beta2: Tensor
    alpha2: Tensor


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


class NCST:
    def __init__(self, cfg: NcstConfig, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.params: dict[str, Tensor] = {}
        self._init(np.random.default_rng(cfg.init_seed))
        if params is not None:
            self.load_arrays(params)
        self._pos = Tensor(position_table(cfg).astype(self.dtype))

    # ---------------------------------------------------------- parameters

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True)

    def _xavier(self, rng, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    def _init(self, rng):
        c = self.cfg
        D, P, Z = c.width, c.token_width, c.cond_width
        self._add("embed.w", self._xavier(rng, P, D))
        self._add("embed.b", np.zeros(D))
        self._add("time.w1", rng.normal(0, 0.02, size=(c.time_width, c.time_width)))
        self._add("time.b1", np.zeros(c.time_width))
        self._add("time.w2", rng.normal(0, 0.02, size=(c.time_width, c.time_width)))
        self._add("time.b2", np.zeros(c.time_width))
        if c.scene_condition:
            self._add("scene.table", rng.normal(0, 0.02, size=(c.scene_classes, c.scene_width)))
        for k in range(c.blocks):
            p = f"block{k}."
            self._add(p + "mod.w", np.zeros((Z, 6 * D)))
            self._add(p + "mod.b", np.zeros(6 * D))
            self._add(p + "qkv.w", self._xavier(rng, D, 3 * D))
            self._add(p + "qkv.b", np.zeros(3 * D))
            self._add(p + "proj.w", self._xavier(rng, D, D))
            self._add(p + "proj.b", np.zeros(D))
            self._add(p + "ffn.w1", self._xavier(rng, D, 4 * D))
            self._add(p + "ffn.b1", np.zeros(4 * D))
            self._add(p + "ffn.w2", self._xavier(rng, 4 * D, D))
            self._add(p + "ffn.b2", np.zeros(D))
        self._add("head.w", np.zeros((D, P)))
        self._add("head.b", np.zeros(P))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ContractViolation(f"parameter names differ; missing {missing}, unexpected {extra}")
        for k, arr in arrays.items():
            if tuple(arr.shape) != self.params[k].shape:
                raise ContractViolation(f"{k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k] = Tensor(np.array(arr, dtype=self.dtype), requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    # ---------------------------------------------------------- conditioning

    def embed_timestep(self, i) -> Tensor:
        """Sinusoidal encoding of step ``i`` (fractional allowed) through a GELU MLP."""
        c = self.cfg
        i = np.atleast_1d(np.asarray(i, dtype=np.float64))
        if np.any(i < 1) or np.any(i > c.levels):
            raise ContractViolation(f"diffusion step outside [1, {c.levels}]: {i}")
        freq = Tensor(sinusoid(i * (1000.0 / c.levels), c.time_width).astype(self.dtype))
        h = T.gelu(_linear(freq, self["time.w1"], self["time.b1"]))
        return _linear(h, self["time.w2"], self["time.b2"])

    def embed_scene(self, y) -> Tensor:
        c = self.cfg
        y = np.atleast_1d(np.asarray(y))
        if not c.scene_condition:
            return Tensor(np.zeros((len(y), c.scene_width), dtype=self.dtype))
        if y.dtype.kind not in "iu" or np.any(y < 0) or np.any(y >= c.scene_classes):
            raise UnseenSceneError(f"unseen scene class {y.tolist()} (model knows {c.scene_classes})")
        onehot = np.zeros((len(y), c.scene_classes), dtype=self.dtype)
        onehot[np.arange(len(y)), y] = 1.0
        return T.matmul(Tensor(onehot), self["scene.table"])

    def condition(self, i, y) -> Tensor:
        e_i = self.embed_timestep(i)
        e_y = self.embed_scene(y if y is not None else np.zeros(e_i.shape[0], dtype=np.int64))
        if e_y.shape[0] != e_i.shape[0]:
            if e_y.shape[0] == 1:
                e_y = T.expand(e_y, (e_i.shape[0], e_y.shape[1]))
            elif e_i.shape[0] == 1:
                e_i = T.expand(e_i, (e_y.shape[0], e_i.shape[1]))
        return combine_condition(e_i, e_y, (self.cfg.time_width, self.cfg.scene_width))

    def block_modulation(self, z: Tensor, k: int) -> BlockModulation:
        D = self.cfg.width
        raw = _linear(T.gelu(z), self[f"block{k}.mod.w"], self[f"block{k}.mod.b"])
        parts = T.split(T.reshape(raw, (z.shape[0], 6, D)), 6, axis=1)
        g1, b1, a1, g2, b2, a2 = parts
        return BlockModulation(T.add(1.0, g1), b1, a1, T.add(1.0, g2), b2, a2)

    # ---------------------------------------------------------- blocks

    def _attention(self, x: Tensor, k: int) -> Tensor:
        """Multi-head self-attention over axis 1 of ``x`` (batch, tokens, width)."""
        B, N, D = x.shape
        H = self.cfg.heads
        dh = D // H
        qkv = _linear(x, self[f"block{k}.qkv.w"], self[f"block{k}.qkv.b"])
        qkv = T.transpose(T.reshape(qkv, (B, N, 3, H, dh)), (2, 0, 3, 1, 4))
        q, kk, v = (T.reshape(t, (B, H, N, dh)) for t in T.split(qkv, 3, axis=0))
        att = T.softmax(T.mul(T.matmul(q, T.transpose(kk, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)), axis=-1)
        o = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (B, N, D))
        return _linear(o, self[f"block{k}.proj.w"], self[f"block{k}.proj.b"])

    def mha(self, x: Tensor, k: int) -> Tensor:
        c = self.cfg
        if c.attention == "joint":
            return self._attention(x, k)
        B, N, D = x.shape
        n, S = c.frames, c.spatial_tokens
        if k % 2 == 0:  # spatial: tokens of the same frame
            y = self._attention(T.reshape(x, (B * n, S, D)), k)
            return T.reshape(y, (B, N, D))
        xt = T.reshape(T.transpose(T.reshape(x, (B, n, S, D)), (0, 2, 1, 3)), (B * S, n, D))
        y = self._attention(xt, k)
        return T.reshape(T.transpose(T.reshape(y, (B, S, n, D)), (0, 2, 1, 3)), (B, N, D))

    def ffn(self, x: Tensor, k: int) -> Tensor:
        h = T.gelu(_linear(x, self[f"block{k}.ffn.w1"], self[f"block{k}.ffn.b1"]))
        return _linear(h, self[f"block{k}.ffn.w2"], self[f"block{k}.ffn.b2"])

    def s_adaln_block(self, h: Tensor, mod: BlockModulation, k: int) -> Tensor:
        B, N, D = h.shape

        def full(v):
            return T.expand(v, (B, N, D)) if v.shape != (B, N, D) else v

        a = T.add(T.mul(full(mod.gamma1), T.layer_norm(h)), full(mod.beta1))
        h1 = T.add(h, T.mul(full(mod.alpha1), self.mha(a, k)))
        b = T.add(T.mul(full(mod.gamma2), T.layer_norm(h1)), full(mod.beta2))
        return T.add(h1, T.mul(full(mod.alpha2), self.ffn(b, k)))

    # ---------------------------------------------------------- forward

    def forward(self, tokens, i, y=None) -> Tensor:
        """Per-patch scores for ``tokens`` of shape (B, N, P) or (N, P).

        ``i`` is the diffusion step (one per batch element, fractional allowed)
        and ``y`` the scene label (ignored when scene conditioning is off).
        """
        c = self.cfg
        x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=self.dtype))
        single = x.ndim == 2
        if single:
            x = T.reshape(x, (1,) + x.shape)
        B, N, P = x.shape
        if N != c.tokens or P != c.token_width:
            raise ContractViolation(f"expected {c.tokens} tokens of width {c.token_width}, got {N} x {P}")
        i = np.broadcast_to(np.atleast_1d(np.asarray(i, dtype=np.float64)), (B,))
        if y is not None:
            y = np.broadcast_to(np.atleast_1d(np.asarray(y)), (B,))
        z = self.condition(i, y)
        h = T.add(_linear(x, self["embed.w"], self["embed.b"]), self._pos)
        for k in range(c.blocks):
            h = self.s_adaln_block(h, self.block_modulation(z, k), k)
        out = _linear(T.layer_norm(h), self["head.w"], self["head.b"])
        if c.sigma_scaled_output:
            inv = (1.0 / c.sigma_of(i)).astype(self.dtype).reshape(B, 1, 1)
            out = T.mul(out, T.expand(Tensor(inv), (B, N, P)))
        return T.reshape(out, (N, P)) if single else out

    __call__ = forward

    def score_frames(self, frames: np.ndarray, i, y=None) -> np.ndarray:
        """Score of whole windows ``(B, n, H, W, c)`` reassembled into frame layout."""
        from .video import patchify_array, unpatchify_array

        c = self.cfg
        tokens = patchify_array(frames, c.patch)
        with T.no_grad():
            out = self.forward(tokens, i, y).data
        return unpatchify_array(out, c.frames, c.size, c.size, c.channels, c.patch)
