"""Partition agreement scores."""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch


def _comb2(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float((x * (x - 1) / 2).sum())


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index; 1.0 for identical partitions up to relabeling."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch("label vectors differ in length")
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table)
    rows, cols = _comb2(table.sum(axis=1)), _comb2(table.sum(axis=0))
    expected = rows * cols / _comb2(np.array([n]))
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def accuracy_after_matching(truth, pred) -> float:
    """Best accuracy over one-to-one label matchings (greedy on the count table)."""
    truth, pred = np.asarray(truth), np.asarray(pred)
    _, ti = np.unique(truth, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    hit = 0
    t = table.copy()
    for _ in range(min(t.shape)):
        i, j = np.unravel_index(np.argmax(t), t.shape)
        hit += t[i, j]
        t[i, :] = -1
        t[:, j] = -1
    return hit / len(truth)
