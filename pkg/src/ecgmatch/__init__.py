"""Semi-supervised multi-label signal classification toolkit.

Library layout:

    augment      weak/strong signal augmentation pipelines
    nn           dense model, losses, gradients, SGD/EMA, LR schedule
    pseudo       memory banks, K-nearest soft voting, neighbor agreement
    correlation  label co-occurrence matrices and the alignment penalty
    metrics      six multi-label evaluation metrics
    stats        Friedman test and Bonferroni-Dunn critical differences
    data         datasets, file formats, splits, annotation map, synthesis
    trainer      teacher/student training orchestration
    cli          experiment runner command line
"""

__version__ = "0.1.0"

from . import augment, correlation, data, metrics, nn, pseudo, stats, trainer  # noqa: F401
