"""Tissue segmentation, tiling and ink/blur quality control.

Stage order is tissue -> ink -> blur.  Grayscale uses luma weights
(0.299, 0.587, 0.114).  Ink detection is a fixed HSV gamut for blue/black pen
strokes (see ``_kernels.INK_*``), not a learned model.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels as K
from .slidegen import TILE, read_manifest, read_ppm, write_ppm

# calibrated on a held-out synthetic set, see calibrate_thresholds()
DEFAULT_BLUR_THRESHOLD = 60.0
DEFAULT_INK_THRESHOLD = 0.005
DEFAULT_MIN_TISSUE = 0.5


class DegenerateHistogram(ValueError):
    pass


class RejectReason(str, enum.Enum):
    Ink = "Ink"
    Blur = "Blur"
    NonTissue = "NonTissue"


@dataclass
class TissueMask:
    bits: np.ndarray  # (h, w) bool at the downsampled grid
    downsample: int = 1

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]


@dataclass
class Tile:
    specimen_id: str
    slide_index: int
    grid_x: int
    grid_y: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.shape != (TILE, TILE, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("tile must be 128x128x3 uint8")


@dataclass
class QcVerdict:
    specimen_id: str
    slide_index: int
    grid_x: int
    grid_y: int
    accepted: bool
    reject_reason: RejectReason | None
    blur_score: float
    ink_fraction: float


def gray8(rgb):
    return np.clip(np.floor(K.luma_numpy(rgb) + 0.5), 0, 255).astype(np.uint8)


def otsu_threshold(histogram):
    """Threshold t (class 0 is intensities <= t) maximizing between-class variance.

    Ties go to the lowest t.  Near-ties in the float scan are re-decided with
    exact integer arithmetic.
    """
    h = np.asarray(histogram)
    if h.shape != (256,) or (h < 0).any():
        raise ValueError("histogram must be 256 nonnegative counts")
    if h.sum() <= 0:
        raise ValueError("empty histogram")
    if np.count_nonzero(h) < 2:
        raise DegenerateHistogram("degenerate histogram")
    scores = K.otsu_scores(h.astype(np.float64))
    best = scores.max()
    cands = np.flatnonzero(scores >= best * (1 - 1e-9))
    if cands.size == 1 or not np.issubdtype(h.dtype, np.integer):
        return int(cands[0])
    # exact comparison of (N*S0 - S*n0)^2 / (n0*n1)
    counts = [int(v) for v in h]
    n = sum(counts)
    s = sum(i * v for i, v in enumerate(counts))
    n0 = s0 = 0
    prefix = {}
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        prefix[t] = (n0, s0)
    top_t, top_v = None, None
    for t in cands:
        a, b = prefix[int(t)]
        v = Fraction((n * b - s * a) ** 2, a * (n - a))
        if top_v is None or v > top_v:
            top_t, top_v = int(t), v
    return top_t


def segment_tissue(slide, downsample=1):
    """Otsu on the luma histogram; the darker class is tissue."""
    px = slide.pixels if hasattr(slide, "pixels") else slide
    if downsample > 1:
        h, w, _ = px.shape
        px = px[: h - h % downsample, : w - w % downsample]
        px = px.reshape(h // downsample, downsample, w // downsample, downsample, 3).mean(axis=(1, 3))
    g = gray8(px)
    hist = np.bincount(g.ravel(), minlength=256)
    try:
        t = otsu_threshold(hist)
    except DegenerateHistogram:
        return TissueMask(np.full(g.shape, g.mean() < 128), downsample)
    return TissueMask(g <= t, downsample)


def _coverage(mask, gh, gw):
    bits = mask.bits
    return bits[: gh * (bits.shape[0] // gh), : gw * (bits.shape[1] // gw)].reshape(
        gh, bits.shape[0] // gh, gw, bits.shape[1] // gw).mean(axis=(1, 3))


def tile_slide(slide, mask, tile_size=TILE, min_tissue_fraction=DEFAULT_MIN_TISSUE, slide_index=0):
    """Row-major grid tiles whose tissue coverage is >= ``min_tissue_fraction``."""
    if tile_size != TILE:
        raise ValueError(f"tiles are fixed at {TILE} pixels")
    h, w = slide.height, slide.width
    if h % tile_size or w % tile_size:
        raise ValueError("tile_size must divide slide dimensions")
    gh, gw = h // tile_size, w // tile_size
    if mask.height * mask.downsample != h or mask.width * mask.downsample != w:
        raise ValueError("mask does not match slide")
    cover = _coverage(mask, gh, gw)
    tiles = []
    for gy in range(gh):
        for gx in range(gw):
            if cover[gy, gx] >= min_tissue_fraction:
                px = slide.pixels[gy * tile_size : (gy + 1) * tile_size, gx * tile_size : (gx + 1) * tile_size]
                tiles.append(Tile(slide.specimen_id, slide_index, gx, gy, px.copy()))
    return tiles


def _stack(tiles):
    return np.stack([t.pixels if isinstance(t, Tile) else np.asarray(t) for t in tiles])


def laplacian_variance(tile):
    px = tile.pixels if isinstance(tile, Tile) else np.asarray(tile)
    return float(K.laplacian_variance_batch(K.luma_numpy(px)[None])[0])


def ink_fraction(tile):
    px = tile.pixels if isinstance(tile, Tile) else np.asarray(tile, dtype=np.uint8)
    return float(K.ink_fraction_batch(np.ascontiguousarray(px)[None])[0])


def tile_scores(tiles):
    """(blur_scores, ink_fractions) for a list of tiles, batched through the kernels."""
    if not tiles:
        return np.zeros(0), np.zeros(0)
    px = np.ascontiguousarray(_stack(tiles))
    return K.laplacian_variance_batch(K.luma_numpy(px)), K.ink_fraction_batch(px)


def qc_filter(tiles, blur_threshold=DEFAULT_BLUR_THRESHOLD, ink_threshold=DEFAULT_INK_THRESHOLD):
    """Reject ink first (fraction > ink_threshold), then blur (score < blur_threshold)."""
    if blur_threshold < 0 or ink_threshold < 0:
        raise ValueError("thresholds must be >= 0")
    blur, ink = tile_scores(tiles)
    accepted, verdicts = [], []
    for t, b, f in zip(tiles, blur, ink):
        reason = None
        if f > ink_threshold:
            reason = RejectReason.Ink
        elif b < blur_threshold:
            reason = RejectReason.Blur
        if reason is None:
            accepted.append(t)
        verdicts.append(QcVerdict(t.specimen_id, t.slide_index, t.grid_x, t.grid_y,
                                  reason is None, reason, float(b), float(f)))
    return accepted, verdicts


def qc_slide(slide, slide_index=0, blur_threshold=DEFAULT_BLUR_THRESHOLD,
             ink_threshold=DEFAULT_INK_THRESHOLD, min_tissue_fraction=DEFAULT_MIN_TISSUE):
    """Full per-slide QC; verdicts cover every grid cell, NonTissue included."""
    mask = segment_tissue(slide)
    tiles = tile_slide(slide, mask, min_tissue_fraction=min_tissue_fraction, slide_index=slide_index)
    accepted, verdicts = qc_filter(tiles, blur_threshold, ink_threshold)
    kept = {(v.grid_x, v.grid_y) for v in verdicts}
    gh, gw = slide.height // TILE, slide.width // TILE
    for gy in range(gh):
        for gx in range(gw):
            if (gx, gy) not in kept:
                px = slide.pixels[gy * TILE : (gy + 1) * TILE, gx * TILE : (gx + 1) * TILE]
                verdicts.append(QcVerdict(slide.specimen_id, slide_index, gx, gy, False,
                                          RejectReason.NonTissue, laplacian_variance(px), ink_fraction(px)))
    verdicts.sort(key=lambda v: (v.grid_y, v.grid_x))
    return accepted, verdicts


VERDICT_FIELDS = ["specimen_id", "slide", "gx", "gy", "accepted", "reason", "blur_score", "ink_fraction"]


def tile_filename(specimen_id, slide_index, gx, gy):
    return f"{specimen_id}_{slide_index}_{gx}_{gy}.ppm"


def run_qc(manifest_path, out_dir, blur_threshold=DEFAULT_BLUR_THRESHOLD,
           ink_threshold=DEFAULT_INK_THRESHOLD, min_tissue_fraction=DEFAULT_MIN_TISSUE):
    """QC every slide in a manifest; write accepted tiles and ``verdicts.csv``."""
    from .slidegen import SlideRaster

    manifest_path = Path(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in read_manifest(manifest_path):
        for j, name in enumerate(rec.slides):
            slide = SlideRaster(rec.specimen_id, read_ppm(manifest_path.parent / name))
            accepted, verdicts = qc_slide(slide, j, blur_threshold, ink_threshold, min_tissue_fraction)
            for t in accepted:
                write_ppm(out / tile_filename(t.specimen_id, j, t.grid_x, t.grid_y), t.pixels)
            for v in verdicts:
                rows.append([v.specimen_id, v.slide_index, v.grid_x, v.grid_y, int(v.accepted),
                             "" if v.reject_reason is None else v.reject_reason.value,
                             repr(v.blur_score), repr(v.ink_fraction)])
    with open(out / "verdicts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_FIELDS)
        w.writerows(rows)
    return rows


def load_accepted_tiles(tile_dir):
    """Accepted tiles listed in ``verdicts.csv``, in file order."""
    tile_dir = Path(tile_dir)
    tiles = []
    with open(tile_dir / "verdicts.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["accepted"] != "1":
                continue
            sid, j, gx, gy = row["specimen_id"], int(row["slide"]), int(row["gx"]), int(row["gy"])
            tiles.append(Tile(sid, j, gx, gy, read_ppm(tile_dir / tile_filename(sid, j, gx, gy))))
    return tiles


def tile_truth_flags(truth, gx, gy, ink_min=0.01):
    """Generator ground truth for one grid cell: ("ink" | "blur" | "clean" | "ambiguous")."""
    sl = (slice(gy * TILE, (gy + 1) * TILE), slice(gx * TILE, (gx + 1) * TILE))
    ink = truth.ink[sl].mean()
    blur = truth.blur[sl].mean()
    if ink >= ink_min:
        return "ink"
    if blur >= 1.0:
        return "blur"
    if ink == 0 and blur == 0:
        return "clean"
    return "ambiguous"


def calibrate_thresholds(n_slides=40, seed=1234, min_tissue_fraction=DEFAULT_MIN_TISSUE):
    """Score tiles of a synthetic calibration set by generator ground truth.

    Returns per-class score arrays so thresholds can be placed between the
    clean and corrupted distributions.
    """
    from .slidegen import GenConfig, generate_specimen, specimen_seed

    rng = np.random.default_rng(seed)
    cfg = GenConfig(ink_prob=0.6, blur_prob=0.6)
    out = {"clean": ([], []), "ink": ([], []), "blur": ([], [])}
    for i in range(n_slides):
        raster, _, truth = generate_specimen(float(rng.uniform()), cfg, specimen_seed(seed, i), return_truth=True)
        tiles = tile_slide(raster, segment_tissue(raster), min_tissue_fraction=min_tissue_fraction)
        blur, ink = tile_scores(tiles)
        for t, b, f in zip(tiles, blur, ink):
            flag = tile_truth_flags(truth, t.grid_x, t.grid_y)
            if flag in out:
                out[flag][0].append(b)
                out[flag][1].append(f)
    return {k: (np.array(v[0]), np.array(v[1])) for k, v in out.items()}
