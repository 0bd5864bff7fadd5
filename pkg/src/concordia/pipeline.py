"""Stage orchestration: gen -> qc -> pretrain -> embed -> train -> predict -> eval.

Each stage's key is a hash of its own config section, the global seed and
the digests of the files it consumes.  A stage is skipped when ``run.json``
records the same key and its outputs still match their recorded digests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, section_hash
from .features import EmbeddingStore, embed_tiles, frozen_random_embedder, train_contrastive
from .features.augment import augment_batch
from .features.encoder import EncoderParams, backbone_forward, to_input
from .milreg import RegressorParams, bags_from_store, predict, train_regressor
from .qc import load_accepted_tiles, run_qc
from .slidegen import generate_dataset, read_manifest
from .stats.report import evaluate, write_predictions

log = logging.getLogger(__name__)

STAGES = ("gen", "qc", "pretrain", "embed", "train", "predict", "eval")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class StageRecord:
    key: str
    wall_time: float
    digests: dict
    skipped: bool = False


@dataclass
class RunRecord:
    config_hash: str
    version: str = __version__
    stages: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        stages = {k: StageRecord(**v) for k, v in d.get("stages", {}).items()}
        return cls(d["config_hash"], d.get("version", ""), stages)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dir_digest(path, pattern="*"):
    """Digest over (name, content) of every matching file, in name order."""
    h = hashlib.sha256()
    for p in sorted(Path(path).glob(pattern)):
        if p.is_file():
            h.update(p.name.encode() + b"\0" + bytes.fromhex(file_digest(p)))
    return h.hexdigest()


def stage_seed(seed, stage, local=0):
    ss = np.random.SeedSequence([int(seed), STAGES.index(stage), int(local)])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class Paths:
    out: Path
    manifest: Path
    tiles: Path = None
    encoder: Path = None
    embeddings: Path = None
    model: Path = None
    curves: Path = None
    predictions: Path = None
    eval: Path = None

    def __post_init__(self):
        self.out, self.manifest = Path(self.out), Path(self.manifest)
        defaults = {"tiles": "tiles", "encoder": "encoder.npz", "embeddings": "embeddings.emb",
                    "model": "model.npz", "curves": "curves.csv", "predictions": "predictions.csv", "eval": "eval"}
        for name, rel in defaults.items():
            v = getattr(self, name)
            setattr(self, name, self.out / rel if v is None else Path(v))

    @property
    def data(self):
        return self.manifest.parent


def paths_for(cfg):
    out = Path(cfg.out_dir)
    manifest = Path(cfg.manifest) if cfg.manifest else out / "data" / "manifest.jsonl"
    return Paths(out, manifest)


def check_inputs(cfg):
    """Validation that must pass before any stage runs."""
    if cfg.manifest is not None and not Path(cfg.manifest).is_file():
        raise ConfigError(f"manifest not found: {cfg.manifest}")


# --------------------------------------------------------------------------
# stage bodies; each returns {label: digest} of what it wrote
# --------------------------------------------------------------------------

def do_gen(cfg, p):
    generate_dataset(p.data, cfg.gen.n_specimens, cfg.gen.slide, stage_seed(cfg.seed, "gen"),
                     cfg.gen.fractions, cfg.gen.n_sites)
    return gen_digests(p)


def gen_digests(p):
    return {"manifest": file_digest(p.manifest), "slides": dir_digest(p.data, "*.ppm")}


def do_qc(cfg, p):
    run_qc(p.manifest, p.tiles, cfg.qc.blur_threshold, cfg.qc.ink_threshold, cfg.qc.min_tissue_fraction)
    return {"verdicts": file_digest(p.tiles / "verdicts.csv"), "tiles": dir_digest(p.tiles, "*.ppm")}


def _pretrain_tiles(p, splits):
    split_of = {r.specimen_id: r.split for r in read_manifest(p.manifest)}
    tiles = [t for t in load_accepted_tiles(p.tiles) if split_of.get(t.specimen_id) in splits]
    return np.stack([t.pixels for t in tiles]) if tiles else np.zeros((0, 128, 128, 3), np.uint8)


def do_pretrain(cfg, p):
    pc = cfg.pretrain
    seed = stage_seed(cfg.seed, "pretrain", pc.contrastive.seed)
    enc_seed = stage_seed(cfg.seed, "pretrain", 1_000_000 + pc.contrastive.encoder.seed)
    if pc.frozen_random:
        dim = pc.contrastive.encoder.channels[-1]
        params = frozen_random_embedder(enc_seed, dim, pc.contrastive.encoder)
        curve = []
    else:
        ccfg = dataclasses.replace(
            pc.contrastive, seed=seed, encoder=dataclasses.replace(pc.contrastive.encoder, seed=enc_seed))
        res = train_contrastive(_pretrain_tiles(p, pc.splits), ccfg)
        params = res.params
        curve = list(zip(res.train_loss, res.val_loss))
    p.encoder.parent.mkdir(parents=True, exist_ok=True)
    params.save(p.encoder)
    with open(p.encoder.with_suffix(".curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (a, b) in enumerate(curve):
            fh.write(f"{i},{a!r},{b!r}\n")
    return {"encoder": file_digest(p.encoder)}


def do_embed(cfg, p):
    store = embed_tiles(EncoderParams.load(p.encoder), load_accepted_tiles(p.tiles))
    store.write(p.embeddings)
    return {"embeddings": file_digest(p.embeddings)}


def _reembedder(cfg, p):
    """Callable re-embedding a bag from freshly augmented copies of its tiles."""
    enc = EncoderParams.load(p.encoder)
    by_id = {}
    for t in load_accepted_tiles(p.tiles):
        by_id.setdefault(t.specimen_id, []).append(t.pixels)
    aug = cfg.pretrain.contrastive.augmentation
    dt = np.dtype(enc.config.dtype)

    def reembed(bag, rng):
        x = augment_batch(to_input(np.stack(by_id[bag.specimen_id]), dt), aug, rng)
        return backbone_forward(enc, x)[0].astype(np.float64)

    return reembed


def train_config_for(cfg):
    """``cfg.train`` with its seeds derived from the run seed."""
    return dataclasses.replace(
        cfg.train, seed=stage_seed(cfg.seed, "train", cfg.train.seed),
        model=dataclasses.replace(cfg.train.model, seed=stage_seed(cfg.seed, "train", 1_000_000 + cfg.train.model.seed)))


def do_train(cfg, p):
    records = read_manifest(p.manifest)
    bags = bags_from_store(EmbeddingStore.read(p.embeddings), records)
    tcfg = train_config_for(cfg)
    reembed = _reembedder(cfg, p) if tcfg.augment_embeddings and tcfg.augment_mode == "reembed" else None
    res = train_regressor(bags, tcfg, reembed=reembed)
    res.params.save(p.model)
    with open(p.curves, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_rmse,val_rmse\n")
        for i, (a, b) in enumerate(zip(res.train_curve, res.val_curve)):
            fh.write(f"{i},{a!r},{b!r}\n")
    log.info("train best epoch %d val rmse %.4f", res.best_epoch, res.val_curve[res.best_epoch])
    return {"model": file_digest(p.model)}


def predict_rows(model_path, embeddings_path, manifest_path):
    params = RegressorParams.load(model_path)
    records = read_manifest(manifest_path)
    bags = bags_from_store(EmbeddingStore.read(embeddings_path), records)
    order = {r.specimen_id: i for i, r in enumerate(records)}
    bags.sort(key=lambda b: order[b.specimen_id])
    missing = sorted(set(order) - {b.specimen_id for b in bags})
    if missing:
        log.warning("%d specimens have no accepted tiles and no prediction: %s", len(missing), ", ".join(missing[:5]))
    preds = predict(params, bags)
    return [(b.specimen_id, float(y), b.label, b.split) for b, y in zip(bags, preds)]


def do_predict(cfg, p):
    write_predictions(p.predictions, predict_rows(p.model, p.embeddings, p.manifest))
    return {"predictions": file_digest(p.predictions)}


def do_eval(cfg, p):
    ec = cfg.eval
    store = EmbeddingStore.read(p.embeddings)
    rep = evaluate(p.predictions, p.manifest, ec.gt_threshold, p.eval, ec.resamples, ec.confidence,
                   stage_seed(cfg.seed, "eval"), embeddings=store)
    return {name: file_digest(path) for name, path in sorted(rep.files.items())}


BODIES = {"gen": do_gen, "qc": do_qc, "pretrain": do_pretrain, "embed": do_embed,
          "train": do_train, "predict": do_predict, "eval": do_eval}

OUTPUTS = {
    "gen": lambda p: [p.manifest],
    "qc": lambda p: [p.tiles / "verdicts.csv"],
    "pretrain": lambda p: [p.encoder],
    "embed": lambda p: [p.embeddings],
    "train": lambda p: [p.model],
    "predict": lambda p: [p.predictions],
    "eval": lambda p: [p.eval / "metrics.csv"],
}


def _section(cfg, stage):
    return {"gen": cfg.gen, "qc": cfg.qc, "pretrain": cfg.pretrain, "embed": cfg.pretrain,
            "train": (cfg.train, cfg.pretrain.contrastive.augmentation), "predict": "", "eval": cfg.eval}[stage]


def _outputs_intact(stage, p, digests):
    if not all(f.exists() for f in OUTPUTS[stage](p)):
        return False
    try:
        current = _recompute(stage, p, digests)
    except OSError:
        return False
    return current == digests


def _recompute(stage, p, digests):
    if stage == "gen":
        return gen_digests(p)
    if stage == "qc":
        return {"verdicts": file_digest(p.tiles / "verdicts.csv"), "tiles": dir_digest(p.tiles, "*.ppm")}
    if stage == "eval":
        return {k: file_digest(p.eval / ("metrics.csv" if k == "metrics" else f"{k}.svg")) for k in digests}
    path = {"pretrain": p.encoder, "embed": p.embeddings, "train": p.model, "predict": p.predictions}[stage]
    return {next(iter(digests)): file_digest(path)}


def run_pipeline(cfg, stop_after=None):
    """Run (or resume) every stage in order and return the :class:`RunRecord`.

    Raises :class:`ConfigError` before any work when inputs are missing, and
    :class:`StageError` naming the stage that failed.
    """
    check_inputs(cfg)
    p = paths_for(cfg)
    p.out.mkdir(parents=True, exist_ok=True)
    rec_path = p.out / "run.json"
    old = None
    if rec_path.exists():
        try:
            old = RunRecord.from_json(rec_path.read_text(encoding="utf-8"))
        except (ValueError, KeyError, TypeError):
            log.warning("ignoring unreadable %s", rec_path)
    record = RunRecord(config_hash(cfg))
    upstream = {}
    for stage in STAGES:
        if stage == "gen" and cfg.manifest is not None:
            t0 = time.perf_counter()
            digests = gen_digests(p)
            record.stages[stage] = StageRecord("external", time.perf_counter() - t0, digests, True)
            upstream.update({f"gen.{k}": v for k, v in digests.items()})
            continue
        key = section_hash(stage, __version__, cfg.seed, _section(cfg, stage), json.dumps(upstream, sort_keys=True))
        prev = old.stages.get(stage) if old else None
        if prev is not None and prev.key == key and _outputs_intact(stage, p, prev.digests):
            log.info("stage %s: up to date, skipped", stage)
            record.stages[stage] = StageRecord(key, 0.0, prev.digests, True)
        else:
            log.info("stage %s: running", stage)
            t0 = time.perf_counter()
            try:
                digests = BODIES[stage](cfg, p)
            except Exception as exc:
                rec_path.write_text(record.to_json(), encoding="utf-8")
                raise StageError(stage, exc) from exc
            dt = time.perf_counter() - t0
            log.info("stage %s: done in %.1fs", stage, dt)
            record.stages[stage] = StageRecord(key, dt, digests)
        upstream.update({f"{stage}.{k}": v for k, v in record.stages[stage].digests.items()})
        rec_path.write_text(record.to_json(), encoding="utf-8")
        if stage == stop_after:
            break
    return record
