import numpy as np


class UndefinedAPError(ValueError):
    pass


def average_precision(scores, positives) -> float:
    """Mean of precision@r over the ranks r of the positives.

    Ranking is by descending score; equal scores keep their input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedAPError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.sum() / n_pos)


def per_class_ap(score_matrix, labels, n_classes):
    """AP of column c against ``labels == c`` for every class."""
    score_matrix = np.asarray(score_matrix)
    labels = np.asarray(labels)
    return np.array([average_precision(score_matrix[:, c], labels == c) for c in range(n_classes)])
