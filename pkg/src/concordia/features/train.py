"""Contrastive pretraining loop and tile embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..nn import SGD
from .augment import AugmentationConfig, augment_batch
from .encoder import EncoderConfig, embed_batch, encoder_backward, encoder_forward, init_encoder, to_input
from .ntxent import nt_xent_loss
from .store import EmbeddingStore

log = logging.getLogger(__name__)


@dataclass
class ContrastiveConfig:
    tau: float = 0.1
    batch_size: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 10
    seed: int = 0
    val_fraction: float = 0.2
    probe_size: int = 256
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)


@dataclass
class ContrastiveResult:
    params: object
    train_loss: list  # probe-set loss, index 0 is before any update
    val_loss: list
    running_loss: list  # mean minibatch loss seen during each epoch


def _batches(n, size):
    out = [(lo, min(lo + size, n)) for lo in range(0, n, size)]
    return [b for b in out if b[1] - b[0] >= 2]


def _views(tiles, cfg, rng, dtype):
    x = to_input(tiles, dtype)
    return np.concatenate([augment_batch(x, cfg.augmentation, rng), augment_batch(x, cfg.augmentation, rng)])


def contrastive_step(params, tiles, cfg, rng):
    """Loss and gradients for one batch of source tiles."""
    dt = np.dtype(params.config.dtype)
    views = _views(tiles, cfg, rng, dt)
    proj, cache = encoder_forward(params, views)
    loss, dproj = nt_xent_loss(proj, cfg.tau)
    return loss, encoder_backward(params, cache, dproj)


def _fixed_views(tiles, cfg, seed, dtype):
    rng = np.random.default_rng(seed)
    return [_views(tiles[lo:hi], cfg, rng, dtype) for lo, hi in _batches(len(tiles), cfg.batch_size)]


def _eval_loss(params, views, tau):
    if not views:
        return float("nan")
    return float(np.mean([nt_xent_loss(encoder_forward(params, v)[0], tau)[0] for v in views]))


def train_contrastive(tiles, cfg=None):
    """Minibatch SGD (momentum) on NT-Xent; deterministic given ``cfg.seed``.

    ``tiles`` is a uint8 (n, H, W, 3) array.  Tiles are split 80/20 into
    train/val.  Train and val curves are evaluated on fixed augmented views
    so they are comparable across epochs.
    """
    cfg = cfg or ContrastiveConfig()
    tiles = np.asarray(tiles)
    if len(tiles) < 2 * cfg.batch_size:
        raise ValueError(f"insufficient tiles: need >= {2 * cfg.batch_size}, got {len(tiles)}")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(tiles))
    n_val = int(round(cfg.val_fraction * len(tiles)))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    enc_cfg = EncoderConfig(**{**cfg.encoder.__dict__, "seed": cfg.encoder.seed})
    params = init_encoder(enc_cfg)
    dt = np.dtype(enc_cfg.dtype)
    probe = _fixed_views(tiles[train_idx[: cfg.probe_size]], cfg, cfg.seed + 1, dt)
    val = _fixed_views(tiles[val_idx], cfg, cfg.seed + 2, dt)
    opt = SGD(params.arrays, cfg.lr, cfg.momentum)
    train_curve = [_eval_loss(params, probe, cfg.tau)]
    val_curve = [_eval_loss(params, val, cfg.tau)]
    running = []
    log.info("pretrain epoch 0 train %.4f val %.4f", train_curve[0], val_curve[0])
    for epoch in range(1, cfg.epochs + 1):
        perm = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for lo, hi in _batches(len(perm), cfg.batch_size):
            loss, grads = contrastive_step(params, tiles[perm[lo:hi]], cfg, rng)
            opt.step(params.arrays, grads)
            losses.append(loss)
        running.append(float(np.mean(losses)))
        train_curve.append(_eval_loss(params, probe, cfg.tau))
        val_curve.append(_eval_loss(params, val, cfg.tau))
        log.info("pretrain epoch %d train %.4f val %.4f", epoch, train_curve[-1], val_curve[-1])
    params.trained = cfg.lr > 0 and cfg.epochs > 0
    return ContrastiveResult(params, train_curve, val_curve, running)


def embed_tiles(encoder, tiles):
    """Embedding store of backbone (pre-head) vectors, one record per tile."""
    tiles = list(tiles)
    d = encoder.embedding_dim
    if not tiles:
        return EmbeddingStore(d, [])
    vec = embed_batch(encoder, np.stack([t.pixels for t in tiles]))
    ids = [t.specimen_id for t in tiles]
    coords = np.array([(t.grid_x, t.grid_y) for t in tiles], np.uint32)
    return EmbeddingStore(d, ids, coords, vec)
