"""Pairwise losses over aligned positive/negative scores.

Scores follow the higher-is-better convention. Each loss is summed over the
batch; callers divide by the batch size when reporting.
"""

import numpy as np

LOSS_KINDS = ("margin", "softplus")


def softplus(x):
    """ln(1 + e^x), computed as max(x, 0) + ln(1 + e^-|x|)."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def pair_losses(kind, s_pos, s_neg, margin=1.0):
    """Per-pair loss terms, without regularization."""
    s_pos = np.asarray(s_pos, dtype=float)
    s_neg = np.asarray(s_neg, dtype=float)
    if kind == "margin":
        return np.maximum(0.0, margin - s_pos + s_neg)
    if kind == "softplus":
        return softplus(-s_pos) + softplus(s_neg)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss(kind, s_pos, s_neg, margin=1.0, lambda_reg=0.0, touched=()):
    """Summed batch loss.

    ``touched`` is an iterable of parameter row blocks; their squared L2
    norm, weighted by ``lambda_reg``, is added for the softplus loss only.

    >>> float(loss("margin", [0.5], [0.3], margin=1.0))
    0.8
    """
    total = float(np.sum(pair_losses(kind, s_pos, s_neg, margin)))
    if kind == "softplus" and lambda_reg:
        total += lambda_reg * sum(float(np.sum(np.square(rows))) for rows in touched)
    return total


def slopes(kind, s_pos, s_neg, margin=1.0):
    """Derivatives of the summed pair loss with respect to each score."""
    s_pos = np.asarray(s_pos, dtype=float)
    s_neg = np.asarray(s_neg, dtype=float)
    if kind == "margin":
        active = (margin - s_pos + s_neg) > 0
        return -active.astype(float), active.astype(float)
    if kind == "softplus":
        return -sigmoid(-s_pos), sigmoid(s_neg)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
