"""Pipeline configuration as one flat ``key = value`` text document.

Keys are dotted paths into the stage configs (``gen.width``,
``pretrain.augmentation.max_color_jitter``, ``train.model.widths`` ...).
``#`` starts a comment.  Tuples are comma-separated; ``none`` is None.
Keys missing from a file keep their defaults, unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, is_dataclass

from .features.train import ContrastiveConfig
from .milreg import TrainConfig
from .qc import DEFAULT_BLUR_THRESHOLD, DEFAULT_INK_THRESHOLD, DEFAULT_MIN_TISSUE
from .slidegen import GenConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_specimens: int = 120
    fractions: tuple = (0.7, 0.15, 0.15)
    n_sites: int = 0
    slide: GenConfig = field(default_factory=lambda: GenConfig(width=1024, height=1024))


@dataclass
class QcConfig:
    blur_threshold: float = DEFAULT_BLUR_THRESHOLD
    ink_threshold: float = DEFAULT_INK_THRESHOLD
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE


@dataclass
class PretrainConfig:
    splits: tuple = ("train",)  # manifest splits whose tiles feed contrastive training
    frozen_random: bool = False  # skip training, embed with an untrained encoder
    contrastive: ContrastiveConfig = field(default_factory=lambda: ContrastiveConfig(lr=0.003))


@dataclass
class EvalConfig:
    gt_threshold: float | None = None  # None: grid search
    resamples: int = 2000
    confidence: float = 0.90


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "run"
    manifest: str | None = None  # existing dataset; skips generation when set
    gen: DataConfig = field(default_factory=DataConfig)
    qc: QcConfig = field(default_factory=QcConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _flatten(obj, prefix=""):
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(v):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text, like):
    t = text.strip()
    if t.lower() == "none":
        return None
    if isinstance(like, bool):
        if t.lower() in ("true", "yes", "1"):
            return True
        if t.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {t!r}")
    if isinstance(like, int):
        return int(t)
    if isinstance(like, float) or like is None:
        try:
            return float(t)
        except ValueError:
            if like is None:
                return t
            raise
    return t


def _parse(text, like):
    if isinstance(like, tuple):
        parts = [p for p in text.split(",") if p.strip()]
        proto = like[0] if like else 0.0
        return tuple(_parse_scalar(p, proto) for p in parts)
    return _parse_scalar(text, like)


def dumps(cfg):
    lines = ["# concordia pipeline configuration", ""]
    section = None
    for key, v in _flatten(cfg):
        top = key.split(".")[0] if "." in key else None
        if top != section:
            lines.append("")
            lines.append(f"# [{top}]" if top else "# global")
            section = top
        lines.append(f"{key} = {_fmt(v)}")
    return "\n".join(lines).lstrip("\n") + "\n"


def _set(obj, path, text):
    head, _, rest = path.partition(".")
    names = {f.name for f in fields(obj)}
    if head not in names:
        raise ConfigError(f"unknown config key {path!r}")
    cur = getattr(obj, head)
    if rest:
        if not is_dataclass(cur):
            raise ConfigError(f"{head!r} has no sub-keys")
        setattr(obj, head, _set(dataclasses.replace(cur), rest, text))
        return obj
    if is_dataclass(cur):
        raise ConfigError(f"{head!r} is a section, not a value")
    try:
        setattr(obj, head, _parse(text, cur))
    except ValueError as exc:
        raise ConfigError(f"bad value for {head!r}: {exc}") from exc
    return obj


def loads(text, base=None):
    cfg = dataclasses.replace(base) if base is not None else PipelineConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            cfg = _set(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return validate(cfg)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def validate(cfg):
    """Re-run each section's own checks; raise :class:`ConfigError`."""
    try:
        cfg.gen.slide.validate()
        cfg.train.__post_init__()
        cfg.train.model.__post_init__()
        cfg.pretrain.contrastive.augmentation.__post_init__()
        cfg.pretrain.contrastive.encoder.__post_init__()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.gen.n_specimens < 3:
        raise ConfigError("gen.n_specimens must be >= 3")
    if len(cfg.gen.fractions) != 3 or abs(sum(cfg.gen.fractions) - 1.0) > 1e-9:
        raise ConfigError("gen.fractions must be three shares summing to 1")
    bad = set(cfg.pretrain.splits) - {"train", "val", "test"}
    if bad or not cfg.pretrain.splits:
        raise ConfigError(f"pretrain.splits must name train/val/test, got {cfg.pretrain.splits}")
    if not 0.0 < cfg.eval.confidence < 1.0 or cfg.eval.resamples < 1:
        raise ConfigError("eval.confidence must lie in (0, 1) and eval.resamples >= 1")
    return cfg


def section_hash(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(_fmt(p).encode() if not is_dataclass(p) else dumps_section(p).encode())
        h.update(b"\0")
    return h.hexdigest()


def dumps_section(obj):
    return "\n".join(f"{k} = {_fmt(v)}" for k, v in _flatten(obj))


def config_hash(cfg):
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()
