"""``concordia`` command line: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 success, 2 configuration/usage error, 3 stage failure.
"""

import os

_threads = os.environ.get("CONCORDIA_THREADS")
if _threads:
    # must happen before numpy/numba load their thread pools
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from . import __version__  # noqa: E402
from .config import ConfigError, PipelineConfig, dumps, load, validate  # noqa: E402

log = logging.getLogger("concordia")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _base_config(args):
    cfg = load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _override(obj, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(obj, **kw) if kw else obj


def cmd_gen(args, cfg):
    from .pipeline import stage_seed
    from .slidegen import generate_dataset

    g = cfg.gen
    slide = _override(g.slide, width=args.width, height=args.height, panel_size=args.panel_size, noise=args.noise)
    n = args.n_specimens or g.n_specimens
    recs = generate_dataset(args.out, n, slide, stage_seed(cfg.seed, "gen"), g.fractions,
                            g.n_sites if args.sites is None else args.sites)
    log.info("wrote %d specimens to %s", len(recs), args.out)


def cmd_qc(args, cfg):
    from .qc import run_qc

    q = _override(cfg.qc, blur_threshold=args.blur_threshold, ink_threshold=args.ink_threshold,
                  min_tissue_fraction=args.min_tissue)
    rows = run_qc(args.manifest, args.out, q.blur_threshold, q.ink_threshold, q.min_tissue_fraction)
    log.info("qc: %d of %d tiles accepted", sum(r[4] for r in rows), len(rows))


def cmd_pretrain(args, cfg):
    from .pipeline import Paths, do_pretrain

    c = _override(cfg.pretrain.contrastive, tau=args.tau, batch_size=args.batch, lr=args.lr, epochs=args.epochs)
    cfg.pretrain = dataclasses.replace(cfg.pretrain, contrastive=c)
    if args.frozen_random:
        cfg.pretrain.frozen_random = True
    out = Path(args.out)
    manifest = Path(args.manifest)
    tiles = Path(args.tiles) if args.tiles else manifest.parent.parent / "tiles"
    do_pretrain(cfg, Paths(out.parent, manifest, tiles=tiles, encoder=out))


def cmd_embed(args, cfg):
    from .features import EncoderParams, embed_tiles
    from .qc import load_accepted_tiles

    store = embed_tiles(EncoderParams.load(args.encoder), load_accepted_tiles(args.tiles))
    store.write(args.out)
    log.info("embedded %d tiles", len(store))


def cmd_train(args, cfg):
    from .pipeline import Paths, do_train

    cfg.train = _override(cfg.train, loss=args.loss, dropout_prob=args.dropout, lr=args.lr, epochs=args.epochs)
    validate(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    do_train(cfg, Paths(out.parent, args.manifest, embeddings=args.embeddings, model=out,
                        curves=out.with_suffix(".curves.csv")))


def cmd_predict(args, cfg):
    from .pipeline import predict_rows
    from .stats import write_predictions

    rows = predict_rows(args.model, args.embeddings, args.manifest)
    write_predictions(args.out, rows)
    log.info("wrote %d predictions to %s", len(rows), args.out)


def cmd_eval(args, cfg):
    from .features import EmbeddingStore
    from .pipeline import stage_seed
    from .stats import evaluate

    e = cfg.eval
    thr = args.gt_threshold if args.gt_threshold is not None else e.gt_threshold
    store = EmbeddingStore.read(args.embeddings) if args.embeddings else None
    rep = evaluate(args.predictions, args.manifest, thr, args.out_dir,
                   args.resamples or e.resamples, args.confidence or e.confidence,
                   stage_seed(cfg.seed, "eval"), embeddings=store)
    for r in rep.rows:
        if r.site == "all":
            log.info("%s = %.4f", r.metric, r.value)


def cmd_run(args, cfg):
    from .pipeline import run_pipeline

    if args.out:
        cfg.out_dir = args.out
    if args.manifest:
        cfg.manifest = args.manifest
    rec = run_pipeline(cfg, stop_after=args.stop_after)
    ran = [s for s, r in rec.stages.items() if not r.skipped]
    log.info("run complete; stages executed: %s", ", ".join(ran) or "none")


def cmd_config(args, cfg):
    sys.stdout.write(dumps(cfg))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides the config file)")
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="concordia", description=__doc__.splitlines()[0].replace("``", ""))
    ap.add_argument("--version", action="version", version=f"concordia {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out-dir", "--out", dest="out", required=True)
    s.add_argument("--n-specimens", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--panel-size", type=int, help="reviewers per panel; 0 draws 3/4/5")
    s.add_argument("--noise", type=float, help="per-blob saturation sigma")
    s.add_argument("--sites", type=int)
    s.set_defaults(fn=cmd_gen)

    s = sub.add_parser("qc", parents=[common], help="tile slides and reject blur/ink tiles")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", "--out", dest="out", required=True)
    s.add_argument("--blur-threshold", type=float)
    s.add_argument("--ink-threshold", type=float)
    s.add_argument("--min-tissue", type=float)
    s.set_defaults(fn=cmd_qc)

    s = sub.add_parser("pretrain", parents=[common], help="contrastive encoder pretraining")
    s.add_argument("--manifest", required=True)
    s.add_argument("--tiles", help="qc output directory (default: ../tiles next to the dataset)")
    s.add_argument("--tau", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--frozen-random", action="store_true", help="write an untrained encoder instead")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("embed", parents=[common], help="embed accepted tiles")
    s.add_argument("--encoder", required=True)
    s.add_argument("--tiles", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_embed)

    s = sub.add_parser("train", parents=[common], help="train the MIL regressor")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--loss", choices=["rmse", "ce"])
    s.add_argument("--dropout", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="write predictions.csv")
    s.add_argument("--model", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="metrics, confidence intervals and figures")
    s.add_argument("--predictions", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--gt-threshold", type=float, help="default: grid search")
    s.add_argument("--resamples", type=int)
    s.add_argument("--confidence", type=float)
    s.add_argument("--embeddings", help="embedding store for grid.svg")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("run", parents=[common], help="run or resume the whole pipeline")
    s.add_argument("--out", help="output directory (overrides out_dir)")
    s.add_argument("--manifest", help="use an existing dataset instead of generating one")
    s.add_argument("--stop-after", choices=["gen", "qc", "pretrain", "embed", "train", "predict", "eval"])
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(fn=cmd_config)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    if _threads:
        try:
            import numba

            numba.set_num_threads(min(int(_threads), numba.config.NUMBA_NUM_THREADS))
        except (ImportError, ValueError):
            pass
    from .pipeline import StageError

    try:
        cfg = _base_config(args)
        args.fn(args, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_STAGE
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
