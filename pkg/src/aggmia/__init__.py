"""Membership inference risk measurement for aggregate location time-series.

Subpackages:
  core         data model, aggregation, sensitivity, panel file format
  synthgen     synthetic commuter-like and cab-like panels
  game         distinguishability game, adversary priors, dataset builders
  features     per-ROI statistics, recursive elimination, standardization
  classifiers  from-scratch LR / k-NN / random forest / MLP distinguishers
  dp           perturbation mechanisms and their transform primitives
  metrics      ROC/AUC, privacy loss, privacy gain, mean relative error
  runner       experiment specs, orchestration, export, plots, CLI
"""

from . import core, synthgen, game, features, classifiers, dp, metrics, runner

__version__ = "0.1.0"

__all__ = [
    "core",
    "synthgen",
    "game",
    "features",
    "classifiers",
    "dp",
    "metrics",
    "runner",
    "__version__",
]
