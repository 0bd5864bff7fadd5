"""Concordance regression on whole-slide tiles: synthetic slides, tile QC,
contrastive features, attention-MIL regression and evaluation statistics."""

__version__ = "0.1.0"
