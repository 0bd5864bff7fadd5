"""Synthetic specimens with a planted concordance signal, panel labels and the
on-disk dataset layout (PPM rasters plus a JSON-lines manifest).

The planted signal is the HSV saturation of elliptical "lesion" blobs:
``lesion_intensity = g(c) = 0.2 + 0.6 * c``.  Each blob draws its own
saturation offset from N(0, noise), so the area-weighted mean saturation over
the lesion mask decodes ``g(c)`` to within a few ``noise`` units.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage

from .color import hsv_to_rgb, rgb_to_hsv

TILE = 128

# palette, HSV with hue in turns
BACKGROUND_RGB = (242, 240, 244)
TISSUE_HSV = (0.94, 0.35, 0.74)
LESION_HUE = 0.07
LESION_VALUE = 0.62
INK_HSV = (0.64, 0.78, 0.35)

# reference panel-size frequencies (3, 4 and 5 reviewers)
PANEL_WEIGHTS = {3: 687, 4: 216, 5: 509}


def lesion_intensity(c):
    """Documented monotone map from concordance to lesion saturation."""
    return 0.2 + 0.6 * c


def concordance_from_intensity(s):
    return (s - 0.2) / 0.6


class Diagnosis(str, enum.Enum):
    MelanomaInSitu = "MelanomaInSitu"
    InvasiveMelanoma = "InvasiveMelanoma"
    DysplasticNevus = "DysplasticNevus"
    ConventionalNevus = "ConventionalNevus"
    Other = "Other"

    @property
    def is_melanoma(self):
        return self in (Diagnosis.MelanomaInSitu, Diagnosis.InvasiveMelanoma)


MELANOMA = (Diagnosis.MelanomaInSitu, Diagnosis.InvasiveMelanoma)
BENIGN = (Diagnosis.DysplasticNevus, Diagnosis.ConventionalNevus, Diagnosis.Other)


@dataclass(frozen=True)
class PanelReview:
    reviewer_id: str
    diagnosis: Diagnosis


@dataclass(frozen=True)
class ConcordanceLabel:
    melanoma_count: int
    panel_size: int

    def __post_init__(self):
        if self.panel_size < 1:
            raise ValueError("panel_size must be >= 1")
        if not 0 <= self.melanoma_count <= self.panel_size:
            raise ValueError("melanoma_count out of range")

    @property
    def value(self):
        return Fraction(self.melanoma_count, self.panel_size)

    def __float__(self):
        return self.melanoma_count / self.panel_size

    def render(self):
        return f"{float(self):.2f}"


def concordance_rate(reviews):
    """Fraction of the panel diagnosing melanoma in situ or invasive melanoma."""
    reviews = list(reviews)
    if not reviews:
        raise ValueError("empty panel")
    k = sum(1 for r in reviews if Diagnosis(r.diagnosis).is_melanoma)
    return ConcordanceLabel(k, len(reviews))


def nearest_count(c, panel_size):
    """Melanoma count k minimizing |k/panel_size - c|; halves round up."""
    return int(min(panel_size, max(0, math.floor(c * panel_size + 0.5))))


@dataclass
class GenerationMeta:
    true_concordance: float
    lesion_intensity: float
    ink_fraction: float
    blur_fraction: float
    tissue_fraction: float
    seed: int


@dataclass
class SlideRaster:
    specimen_id: str
    pixels: np.ndarray  # (height, width, 3) uint8
    gen_meta: GenerationMeta | None = None

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("pixels must be an (H, W, 3) uint8 array")
        if p.shape[0] < TILE or p.shape[1] < TILE:
            raise ValueError("raster must be at least 128x128")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass
class GenConfig:
    width: int = 512
    height: int = 512
    panel_size: int = 3  # 0 draws 3/4/5 with the reference frequencies
    noise: float = 0.05
    ink_prob: float = 0.3
    blur_prob: float = 0.3
    n_lesions: tuple = (5, 8)  # per 512x512 of slide area
    lesion_radius: tuple = (40.0, 90.0)
    stain_brightness: float = 0.25
    stain_hue: float = 0.15
    blur_sigma: float = 3.0
    slides_per_specimen: int = 1

    def validate(self):
        if self.width % TILE or self.height % TILE or self.width < TILE or self.height < TILE:
            raise ValueError(f"slide dimensions must be positive multiples of {TILE}")
        if self.noise < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 0.0 <= self.stain_brightness < 1.0 or not 0.0 <= self.stain_hue <= 0.5:
            raise ValueError("stain_brightness must lie in [0, 1) and stain_hue in [0, 0.5]")
        if self.panel_size < 0:
            raise ValueError("panel_size must be >= 0")
        for p in (self.ink_prob, self.blur_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class GroundTruth:
    """Generator-side masks, used only by tests and calibration."""

    tissue: np.ndarray
    lesion: np.ndarray
    ink: np.ndarray
    blur: np.ndarray
    blob_saturation: list = field(default_factory=list)


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return f / (f.std() + 1e-12)


def _ellipse(shape, cy, cx, ry, rx, theta):
    out = np.zeros(shape, bool)
    r = math.ceil(max(rx, ry)) + 1
    y0, y1 = max(0, int(cy) - r), min(shape[0], int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(shape[1], int(cx) + r + 1)
    if y0 >= y1 or x0 >= x1:
        return out
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - cy, xx - cx
    ct, st = math.cos(theta), math.sin(theta)
    u = (dx * ct + dy * st) / rx
    v = (-dx * st + dy * ct) / ry
    out[y0:y1, x0:x1] = u * u + v * v <= 1.0
    return out


def _render(c, cfg, rng):
    h, w = cfg.height, cfg.width
    shape = (h, w)

    tissue = np.zeros(shape, bool)
    for _ in range(rng.integers(1, 4)):
        tissue |= _ellipse(shape, h * rng.uniform(0.35, 0.65), w * rng.uniform(0.35, 0.65),
                           h * rng.uniform(0.25, 0.42), w * rng.uniform(0.25, 0.42), rng.uniform(0, math.pi))

    # per-specimen stain/scanner nuisance: value scale and hue offset, which
    # leave HSV saturation (the planted signal) untouched
    brightness = rng.uniform(1.0 - cfg.stain_brightness, 1.0)
    hue_offset = rng.uniform(-cfg.stain_hue, cfg.stain_hue)

    hsv = np.empty(shape + (3,))
    hsv[..., 0] = TISSUE_HSV[0] + 0.01 * _smooth_field(rng, shape, 12)
    hsv[..., 1] = TISSUE_HSV[1] + 0.04 * _smooth_field(rng, shape, 10)
    hsv[..., 2] = TISSUE_HSV[2] + 0.03 * _smooth_field(rng, shape, 6) + 0.05 * rng.standard_normal(shape)

    target = lesion_intensity(c)
    lesion = np.zeros(shape, bool)
    blob_sat = []
    ty, tx = np.nonzero(tissue)
    area = h * w / (512.0 * 512.0)
    lo, hi = (max(1, round(n * area)) for n in cfg.n_lesions)
    for _ in range(rng.integers(lo, hi + 1)):
        i = rng.integers(ty.size)
        blob = _ellipse(shape, ty[i], tx[i], rng.uniform(*cfg.lesion_radius), rng.uniform(*cfg.lesion_radius), rng.uniform(0, math.pi)) & tissue
        s = float(np.clip(target + cfg.noise * rng.standard_normal(), 0.02, 0.98))
        blob_sat.append(s)
        n = int(blob.sum())
        hsv[blob, 0] = LESION_HUE + 0.01 * rng.standard_normal(n)
        hsv[blob, 1] = s + 0.03 * rng.standard_normal(n)
        hsv[blob, 2] = LESION_VALUE + 0.05 * rng.standard_normal(n)
        lesion |= blob

    hsv[..., 0] += hue_offset
    hsv[..., 2] *= brightness
    hsv[..., 1:] = np.clip(hsv[..., 1:], 0.0, 1.0)
    img = np.empty(shape + (3,))
    img[:] = np.asarray(BACKGROUND_RGB, float) / 255.0
    img += (2.0 / 255.0) * rng.standard_normal(shape + (1,))
    img[tissue] = hsv_to_rgb(hsv[tissue])

    # blur: grid-aligned rectangle of whole tiles placed over tissue
    blur = np.zeros(shape, bool)
    if rng.random() < cfg.blur_prob:
        gh, gw = h // TILE, w // TILE
        bh = int(rng.integers(1, min(2, gh) + 1))
        bw = int(rng.integers(1, min(2, gw) + 1))
        cover = tissue.reshape(gh, TILE, gw, TILE).mean(axis=(1, 3))
        cands = [(gy, gx) for gy in range(gh - bh + 1) for gx in range(gw - bw + 1)
                 if cover[gy : gy + bh, gx : gx + bw].min() >= 0.5]
        if not cands:
            cands = [(gy, gx) for gy in range(gh - bh + 1) for gx in range(gw - bw + 1)]
        gy, gx = cands[rng.integers(len(cands))]
        sl = (slice(gy * TILE, (gy + bh) * TILE), slice(gx * TILE, (gx + bw) * TILE))
        m = int(4 * cfg.blur_sigma + 1)
        ya, yb = max(0, sl[0].start - m), min(h, sl[0].stop + m)
        xa, xb = max(0, sl[1].start - m), min(w, sl[1].stop + m)
        blurred = ndimage.gaussian_filter(img[ya:yb, xa:xb], (cfg.blur_sigma, cfg.blur_sigma, 0), mode="reflect")
        img[sl] = blurred[sl[0].start - ya : sl[0].stop - ya, sl[1].start - xa : sl[1].stop - xa]
        blur[sl] = True

    # ink: thick quadratic Bezier strokes in the reserved blue-black hue
    ink = np.zeros(shape, bool)
    if rng.random() < cfg.ink_prob:
        for _ in range(rng.integers(1, 3)):
            pts = np.array([(ty[j], tx[j]) for j in rng.integers(ty.size, size=3)], float)
            t = np.linspace(0.0, 1.0, 400)[:, None]
            curve = (1 - t) ** 2 * pts[0] + 2 * (1 - t) * t * pts[1] + t ** 2 * pts[2]
            seed_mask = np.ones(shape, bool)
            iy = np.clip(np.rint(curve[:, 0]).astype(int), 0, h - 1)
            ix = np.clip(np.rint(curve[:, 1]).astype(int), 0, w - 1)
            seed_mask[iy, ix] = False
            ink |= ndimage.distance_transform_edt(seed_mask) <= rng.uniform(5.0, 8.0)
        n = int(ink.sum())
        ink_hsv = np.empty((n, 3))
        ink_hsv[:, 0] = INK_HSV[0] + 0.01 * rng.standard_normal(n)
        ink_hsv[:, 1] = np.clip(INK_HSV[1] + 0.04 * rng.standard_normal(n), 0, 1)
        ink_hsv[:, 2] = np.clip(INK_HSV[2] + 0.04 * rng.standard_normal(n), 0, 1)
        img[ink] = hsv_to_rgb(ink_hsv)

    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    truth = GroundTruth(tissue=tissue, lesion=lesion, ink=ink, blur=blur, blob_saturation=blob_sat)
    return pixels, truth


def _sample_reviews(k, p, rng):
    dx = [MELANOMA[i] for i in rng.integers(2, size=k)] + [BENIGN[i] for i in rng.integers(3, size=p - k)]
    order = rng.permutation(p)
    return [PanelReview(f"R{i + 1}", dx[j]) for i, j in enumerate(order)]


def generate_specimen(true_concordance, cfg, seed, specimen_id="S0000", return_truth=False):
    """Render one synthetic slide and its panel reviews, deterministically from ``seed``.

    Returns ``(raster, reviews)``, or ``(raster, reviews, truth)`` with
    ``return_truth``.
    """
    cfg.validate()
    if not 0.0 <= true_concordance <= 1.0:
        raise ValueError("true_concordance must lie in [0, 1]")
    rng = np.random.default_rng(np.uint64(seed))
    panel = cfg.panel_size
    if panel == 0:
        sizes = sorted(PANEL_WEIGHTS)
        wts = np.array([PANEL_WEIGHTS[s] for s in sizes], float)
        panel = int(sizes[rng.choice(len(sizes), p=wts / wts.sum())])
    pixels, truth = _render(true_concordance, cfg, rng)
    reviews = _sample_reviews(nearest_count(true_concordance, panel), panel, rng)
    meta = GenerationMeta(
        true_concordance=float(true_concordance),
        lesion_intensity=float(lesion_intensity(true_concordance)),
        ink_fraction=float(truth.ink.mean()),
        blur_fraction=float(truth.blur.mean()),
        tissue_fraction=float(truth.tissue.mean()),
        seed=int(seed),
    )
    raster = SlideRaster(specimen_id, pixels, meta)
    if return_truth:
        return raster, reviews, truth
    return raster, reviews


def decode_lesion_intensity(raster, truth):
    """Oracle decoder: mean HSV saturation over clean lesion pixels."""
    keep = truth.lesion & ~truth.ink & ~truth.blur
    if not keep.any():
        return float("nan")
    hsv = rgb_to_hsv(raster.pixels[keep] / 255.0)
    return float(hsv[:, 1].mean())


# --------------------------------------------------------------------------
# splits and manifest
# --------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


def split_counts(n, fractions):
    """Floor each split's share; the rounding remainder goes to train."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3:
        raise ValueError("need three fractions (train, val, test)")
    if any(f < 0.0 or f > 1.0 for f in fr):
        raise ValueError("fraction out of [0, 1]")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    counts = [math.floor(f * n + 1e-9) for f in fr]
    counts[0] += n - sum(counts)
    return counts


def split_dataset(specimen_ids, fractions=(0.7, 0.15, 0.15), seed=0):
    """Random partition without replacement into train/val/test.

    Ids are sorted before shuffling so the result depends only on the id set
    and the seed.
    """
    ids = sorted(specimen_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate specimen_id")
    counts = split_counts(len(ids), fractions)
    order = np.random.default_rng(seed).permutation(len(ids))
    out = {}
    bounds = np.cumsum([0] + counts)
    for s, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        for j in order[lo:hi]:
            out[ids[j]] = s
    return out


@dataclass
class ManifestRecord:
    specimen_id: str
    slides: list
    reviews: list
    label: ConcordanceLabel
    split: str
    gen_meta: GenerationMeta | None = None
    site: str | None = None

    def to_json(self):
        # field order is part of the file format
        d = {
            "specimen_id": self.specimen_id,
            "site": self.site,
            "split": self.split,
            "slides": list(self.slides),
            "reviews": [{"reviewer_id": r.reviewer_id, "diagnosis": Diagnosis(r.diagnosis).value} for r in self.reviews],
            "melanoma_count": self.label.melanoma_count,
            "panel_size": self.label.panel_size,
            "gen_meta": None if self.gen_meta is None else asdict(self.gen_meta),
        }
        return json.dumps(d, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        reviews = [PanelReview(r["reviewer_id"], Diagnosis(r["diagnosis"])) for r in d["reviews"]]
        label = ConcordanceLabel(int(d["melanoma_count"]), int(d["panel_size"]))
        if reviews and concordance_rate(reviews) != label:
            raise ValueError("label disagrees with reviews")
        meta = d.get("gen_meta")
        return cls(
            specimen_id=d["specimen_id"],
            slides=list(d["slides"]),
            reviews=reviews,
            label=label,
            split=d["split"],
            gen_meta=None if meta is None else GenerationMeta(**meta),
            site=d.get("site"),
        )


def validate_records(records):
    seen = set()
    for r in records:
        if r.specimen_id in seen:
            raise ValueError(f"duplicate specimen_id {r.specimen_id!r}")
        seen.add(r.specimen_id)
        if r.split not in SPLITS:
            raise ValueError(f"bad split {r.split!r} for {r.specimen_id!r}")


def write_manifest(records, path):
    records = list(records)
    validate_records(records)
    text = "".join(r.to_json() + "\n" for r in records)
    Path(path).write_bytes(text.encode("utf-8"))


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: malformed manifest line {lineno}: {exc}") from exc
    validate_records(records)
    return records


# --------------------------------------------------------------------------
# PPM (P6) rasters
# --------------------------------------------------------------------------

def write_ppm(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1 : pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: truncated PPM body")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3).copy()


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------

def specimen_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_dataset(out_dir, n_specimens, cfg=None, seed=0, fractions=(0.7, 0.15, 0.15), n_sites=0):
    """Write ``n_specimens`` rasters plus ``manifest.jsonl`` into ``out_dir``.

    True concordance is drawn from the achievable grid k/panel_size so the
    panel label equals the planted value exactly.
    """
    cfg = cfg or GenConfig()
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = [f"S{i:04d}" for i in range(n_specimens)]
    splits = split_dataset(ids, fractions, seed)
    sizes = sorted(PANEL_WEIGHTS)
    wts = np.array([PANEL_WEIGHTS[s] for s in sizes], float)
    records = []
    for i, sid in enumerate(ids):
        p = cfg.panel_size or int(sizes[rng.choice(len(sizes), p=wts / wts.sum())])
        k = int(rng.integers(0, p + 1))
        site = f"site{int(rng.integers(n_sites))}" if n_sites else None
        spec_cfg = GenConfig(**{**asdict(cfg), "panel_size": p})
        slides = []
        meta = None
        reviews = None
        for j in range(cfg.slides_per_specimen):
            s_seed = specimen_seed(seed, i * 1000 + j)
            raster, revs = generate_specimen(k / p, spec_cfg, s_seed, specimen_id=sid)
            name = f"{sid}_{j}.ppm"
            write_ppm(out / name, raster.pixels)
            slides.append(name)
            if j == 0:
                meta, reviews = raster.gen_meta, revs
        records.append(ManifestRecord(sid, slides, reviews, concordance_rate(reviews), splits[sid], meta, site))
    write_manifest(records, out / "manifest.jsonl")
    return records
