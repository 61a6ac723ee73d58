"""Pairwise-comparison training and evaluation of MOS predictors."""

__version__ = "0.1.0"
