"""Small convolutional encoder with a two-layer projection head.

Backbone: conv blocks (conv -> ReLU), then global average pooling; the pooled
vector is the tile embedding.  Head: affine -> ReLU -> affine, used only by
the contrastive loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import _kernels as K
from ..nn import conv_backward, conv_forward, he_normal, relu


@dataclass
class EncoderConfig:
    channels: tuple = (16, 32, 64, 64)
    kernels: tuple = (4, 3, 3, 3)
    strides: tuple = (4, 2, 2, 2)
    paddings: tuple = (0, 1, 1, 1)
    proj_hidden: int = 64
    proj_dim: int = 32
    init: str = "he_normal"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("channels", "kernels", "strides", "paddings"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        n = len(self.channels)
        if not (len(self.kernels) == len(self.strides) == len(self.paddings) == n) or n == 0:
            raise ValueError("conv layer lists must have equal nonzero length")

    @property
    def embedding_dim(self):
        return self.channels[-1]

    @property
    def depth(self):
        return len(self.channels)


@dataclass
class EncoderParams:
    config: EncoderConfig
    arrays: dict = field(default_factory=dict)
    trained: bool = False

    @property
    def embedding_dim(self):
        return self.config.embedding_dim

    def copy(self):
        return EncoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.trained)

    def validate(self):
        c_in = 3
        cfg = self.config
        for i, (c, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            if self.arrays[f"conv{i}.w"].shape != (c_in * k * k, c) or self.arrays[f"conv{i}.b"].shape != (c,):
                raise ValueError(f"conv{i} shape mismatch")
            c_in = c
        if self.arrays["head.w1"].shape != (cfg.embedding_dim, cfg.proj_hidden):
            raise ValueError("head.w1 shape mismatch")
        if self.arrays["head.w2"].shape != (cfg.proj_hidden, cfg.proj_dim):
            raise ValueError("head.w2 shape mismatch")
        if not all(np.isfinite(v).all() for v in self.arrays.values()):
            raise ValueError("non-finite encoder weights")

    def save(self, path):
        meta = {"config": asdict(self.config), "trained": self.trained}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), np.uint8), **self.arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
        p = cls(EncoderConfig(**meta["config"]), arrays, meta["trained"])
        p.validate()
        return p


def init_encoder(config):
    """He-normal weights, zero biases, drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    dt = np.dtype(config.dtype)
    arrays = {}
    c_in = 3
    for i, (c, k) in enumerate(zip(config.channels, config.kernels)):
        fan = c_in * k * k
        arrays[f"conv{i}.w"] = he_normal(rng, fan, (fan, c), dt)
        arrays[f"conv{i}.b"] = np.zeros(c, dt)
        c_in = c
    d = config.embedding_dim
    arrays["head.w1"] = he_normal(rng, d, (d, config.proj_hidden), dt)
    arrays["head.b1"] = np.zeros(config.proj_hidden, dt)
    arrays["head.w2"] = he_normal(rng, config.proj_hidden, (config.proj_hidden, config.proj_dim), dt)
    arrays["head.b2"] = np.zeros(config.proj_dim, dt)
    return EncoderParams(config, arrays)


def frozen_random_embedder(seed, dim, config=None):
    """Untrained encoder with embedding width ``dim``, for the embedder ablation."""
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    base = asdict(config or EncoderConfig())
    base["channels"] = tuple(base["channels"][:-1]) + (int(dim),)
    base["seed"] = int(seed)
    return init_encoder(EncoderConfig(**base))


def to_input(tiles, dtype=np.float32):
    """uint8 (B, H, W, 3) -> float in [0, 1]."""
    return np.asarray(tiles, dtype=dtype) / np.asarray(255.0, dtype=dtype)


def backbone_forward(params, x):
    """Embeddings (B, D) plus the cache needed for backprop."""
    cfg = params.config
    a = params.arrays
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ValueError("expected a (B, H, W, 3) batch")
    h = (x - 0.5).astype(a["conv0.w"].dtype, copy=False)
    layers = []
    for i in range(cfg.depth):
        k, s, p = cfg.kernels[i], cfg.strides[i], cfg.paddings[i]
        z, cols = conv_forward(h, a[f"conv{i}.w"], a[f"conv{i}.b"], k, s, p)
        layers.append((h.shape, cols, z > 0))
        h = relu(z)
    emb = h.mean(axis=(1, 2))
    return emb, {"layers": layers, "pool_shape": h.shape}


def encoder_forward(params, x):
    """Projections (B, proj_dim) and a cache holding embeddings and activations."""
    a = params.arrays
    emb, cache = backbone_forward(params, x)
    z1 = emb @ a["head.w1"] + a["head.b1"]
    h1 = relu(z1)
    proj = h1 @ a["head.w2"] + a["head.b2"]
    cache.update(emb=emb, h1=h1, mask1=z1 > 0)
    return proj, cache


def encoder_backward(params, cache, dproj):
    """Gradients of a scalar loss w.r.t. every encoder array, given dL/dproj."""
    cfg = params.config
    a = params.arrays
    g = {}
    dt = a["head.w2"].dtype
    dproj = dproj.astype(dt, copy=False)
    g["head.w2"] = cache["h1"].T @ dproj
    g["head.b2"] = dproj.sum(axis=0)
    dz1 = (dproj @ a["head.w2"].T) * cache["mask1"]
    g["head.w1"] = cache["emb"].T @ dz1
    g["head.b1"] = dz1.sum(axis=0)
    demb = dz1 @ a["head.w1"].T
    b, ho, wo, c = cache["pool_shape"]
    dh = np.broadcast_to((demb / (ho * wo))[:, None, None, :], (b, ho, wo, c))
    for i in reversed(range(cfg.depth)):
        x_shape, cols, mask = cache["layers"][i]
        dz = dh * mask
        k, s, p = cfg.kernels[i], cfg.strides[i], cfg.paddings[i]
        dh, g[f"conv{i}.w"], g[f"conv{i}.b"] = conv_backward(dz, cols, x_shape, a[f"conv{i}.w"], k, s, p, need_dx=i > 0)
    return g


def embed_batch(params, tiles, batch_size=64):
    """Backbone embeddings for uint8 tiles, computed in fixed-size chunks."""
    tiles = np.asarray(tiles)
    d = params.embedding_dim
    out = np.empty((len(tiles), d), dtype=np.float32)
    dt = np.dtype(params.config.dtype)
    for lo in range(0, len(tiles), batch_size):
        emb, _ = backbone_forward(params, to_input(tiles[lo : lo + batch_size], dt))
        out[lo : lo + batch_size] = emb
    return out


def receptive_ok(config, size):
    n = size
    for k, s, p in zip(config.kernels, config.strides, config.paddings):
        n = K.conv_out_size(n, k, s, p)
        if n < 1:
            return False
    return True
