"""Desk-scale CT tumor segmentation pipeline.

Submodules: ``phantom`` (synthetic data), ``datastore`` (on-disk formats),
``wavelet`` (2D DWT), ``pipeline`` (instance preparation), ``nn`` (autodiff
compute core), ``models`` (graph builders), ``training`` (train loop),
``evaluation`` (TTA, dice, detection stats), ``cli`` (command-line surface).
"""

__version__ = "0.1.0"

from . import cli, datastore, evaluation, models, nn, phantom, pipeline, training, wavelet

__all__ = [
    "cli",
    "datastore",
    "evaluation",
    "models",
    "nn",
    "phantom",
    "pipeline",
    "training",
    "wavelet",
    "__version__",
]
