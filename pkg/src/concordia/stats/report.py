"""Evaluation battery over a predictions file: metrics.csv plus SVG figures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..slidegen import read_manifest
from . import svg
from .bootstrap import ConfidenceInterval, bootstrap_ci
from .metrics import (
    UndefinedMetric,
    grid_search_gt_threshold,
    pp_points,
    pr_curve,
    precision_at,
    r_squared,
    recall_at,
    rmse,
    roc_auc,
    specificity_at,
    standardized_residuals,
)
from .projection import projection_grid
from .shapiro import shapiro_wilk

PREDICTION_FIELDS = ["specimen_id", "prediction", "label", "split"]
METRIC_FIELDS = ["metric", "value", "ci_low", "ci_high", "site"]
ALL_SITES = "all"
MAX_GRID_POINTS = 1024


@dataclass
class MetricRow:
    metric: str
    value: float
    ci: ConfidenceInterval | None = None
    site: str = ALL_SITES

    def cells(self):
        lo = hi = float("nan")
        if self.ci is not None:
            lo, hi = self.ci.low, self.ci.high
        return [self.metric, _num(self.value), _num(lo) if self.ci else "", _num(hi) if self.ci else "", self.site]


@dataclass
class EvalReport:
    gt_threshold: float
    rows: list
    residuals: np.ndarray
    pp: np.ndarray
    roc: np.ndarray | None
    pr: np.ndarray | None
    files: dict = field(default_factory=dict)

    def value(self, metric, site=ALL_SITES):
        for r in self.rows:
            if r.metric == metric and r.site == site:
                return r.value
        raise KeyError((metric, site))


def _num(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{float(v):.10g}"


def write_predictions(path, rows):
    """``rows`` are (specimen_id, prediction, label, split) tuples.

    Values are written with ``repr`` so they read back bit-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        for sid, p, y, split in rows:
            w.writerow([sid, repr(float(p)), repr(float(y)), split])


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or any(f not in rd.fieldnames for f in PREDICTION_FIELDS):
            raise ValueError(f"{path}: expected columns {','.join(PREDICTION_FIELDS)}")
        out = {}
        for row in rd:
            sid = row["specimen_id"]
            if sid in out:
                raise ValueError(f"{path}: duplicate prediction for {sid!r}")
            out[sid] = float(row["prediction"])
    return out


def _safe(fn, *args):
    try:
        return float(fn(*args))
    except (UndefinedMetric, ValueError, ZeroDivisionError):
        return float("nan")


def _metric_rows(pred, conc, thr, site, n_resamples, confidence, seed):
    """Regression and classification rows for one sample, each with a bootstrap CI."""
    yb = conc > thr
    fns = {
        "rmse": lambda i: rmse(pred[i], conc[i]),
        "r2": lambda i: r_squared(pred[i], conc[i]),
        "auc": lambda i: roc_auc(pred[i], yb[i])[1],
        "average_precision": lambda i: pr_curve(pred[i], yb[i])[1],
        "precision": lambda i: precision_at(pred[i], yb[i], thr),
        "recall": lambda i: recall_at(pred[i], yb[i], thr),
        "specificity": lambda i: specificity_at(pred[i], yb[i], thr),
    }
    n = pred.size
    full = np.arange(n)
    rows = []
    for k, (name, fn) in enumerate(fns.items()):
        v = _safe(fn, full)
        ci = None
        if not math.isnan(v):
            try:
                ci = bootstrap_ci(fn, n, n_resamples, confidence, seed + k)
            except UndefinedMetric:
                ci = ConfidenceInterval(float("nan"), float("nan"), confidence, n_resamples)
        rows.append(MetricRow(name, v, ci, site))
    rows.append(MetricRow("n", float(n), None, site))
    return rows


def evaluate(predictions_csv, manifest, gt_threshold=None, out_dir=None, n_resamples=2000,
             confidence=0.90, seed=0, embeddings=None, split="test"):
    """Score the ``split`` specimens of ``manifest`` against their predictions.

    ``gt_threshold=None`` grid-searches the ground-truth binarization
    threshold on the evaluated sample.  The same value is the operating
    threshold for precision, recall and specificity (prediction >= t is
    positive).  Per-site rows are added when the manifest carries more than
    one site; their intervals resample within the site.  ``embeddings`` is an
    optional :class:`~concordia.features.store.EmbeddingStore` for grid.svg.
    """
    preds = read_predictions(predictions_csv)
    records = [r for r in read_manifest(manifest) if r.split == split]
    if not records:
        raise ValueError(f"manifest has no {split!r} specimens")
    missing = [r.specimen_id for r in records if r.specimen_id not in preds]
    if missing:
        raise ValueError(f"missing predictions for {len(missing)} {split} specimens, e.g. {missing[0]!r}")
    pred = np.array([preds[r.specimen_id] for r in records])
    conc = np.array([float(r.label) for r in records])

    if gt_threshold is None:
        try:
            gt_threshold, _ = grid_search_gt_threshold(conc, pred)
        except ValueError:
            gt_threshold = float("nan")  # one label class only; classification rows come out NaN
    thr = float(gt_threshold)

    rows = [MetricRow("gt_threshold", thr)]
    rows += _metric_rows(pred, conc, thr, ALL_SITES, n_resamples, confidence, seed)

    try:
        e = standardized_residuals(pred, conc)
    except ValueError:  # includes UndefinedMetric: n < 2 or constant residuals
        e = np.zeros(pred.size)
    pp = pp_points(e)
    w = p = float("nan")
    if 3 <= e.size <= 5000 and np.ptp(e) > 0:
        w, p = shapiro_wilk(e)
    rows += [MetricRow("shapiro_w", w), MetricRow("shapiro_p", p)]

    sites = sorted({r.site for r in records if r.site is not None})
    if len(sites) > 1:
        site_of = np.array([r.site if r.site is not None else "" for r in records])
        for s in sites:
            m = site_of == s
            rows += _metric_rows(pred[m], conc[m], thr, s, n_resamples, confidence, seed)

    yb = conc > thr
    roc = pr = None
    if yb.any() and not yb.all():
        roc = roc_auc(pred, yb)[0]
        pr = pr_curve(pred, yb)[0]
    report = EvalReport(thr, rows, e, pp, roc, pr)
    if out_dir is not None:
        write_report(report, out_dir, pred, conc, embeddings, {r.specimen_id: float(r.label) for r in records})
    return report


def write_report(report, out_dir, pred, conc, embeddings=None, labels=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in report.rows:
            w.writerow(r.cells())
    report.files["metrics"] = path

    figs = {}
    pl = svg.Plot("Predicted vs ground-truth concordance", "ground truth", "prediction")
    pl.line([(0, 0), (1, 1)], color="#888888", dash=True)
    pl.points(zip(conc, pred))
    figs["scatter"] = pl
    pl = svg.Plot("P-P plot of standardized residuals", "empirical CDF", "normal CDF")
    pl.line([(0, 0), (1, 1)], color="#888888", dash=True)
    pl.points(report.pp, r=2.5)
    figs["pp"] = pl
    pl = svg.Plot("ROC", "false positive rate", "true positive rate")
    pl.line([(0, 0), (1, 1)], color="#888888", dash=True)
    if report.roc is not None:
        pl.line(report.roc)
        pl.text(0.55, 0.1, f"AUC {report.value('auc'):.3f}")
    figs["roc"] = pl
    pl = svg.Plot("Precision-recall", "recall", "precision")
    if report.pr is not None:
        steps = [(0.0, report.pr[0, 1])]
        for r, p in report.pr:
            steps += [(steps[-1][0], p), (r, p)]
        pl.line(steps)
        pl.text(0.05, 0.1, f"AP {report.value('average_precision'):.3f}")
    figs["pr"] = pl
    for name, fig in figs.items():
        path = out / f"{name}.svg"
        path.write_text(fig.render(), encoding="utf-8")
        report.files[name] = path

    if embeddings is not None and labels:
        keep = [i for i, s in enumerate(embeddings.specimen_ids) if s in labels]
        if len(keep) > MAX_GRID_POINTS:
            keep = [keep[j] for j in np.linspace(0, len(keep) - 1, MAX_GRID_POINTS).astype(int)]
        if keep:
            side = math.ceil(math.sqrt(len(keep)))
            cells = projection_grid(embeddings.vectors[keep], side, side)
            vals = [labels[embeddings.specimen_ids[i]] for i in keep]
            path = out / "grid.svg"
            path.write_text(svg.cell_grid(cells, vals, side, side, "Tile embedding grid (colour = concordance)"),
                            encoding="utf-8")
            report.files["grid"] = path
    return report.files
