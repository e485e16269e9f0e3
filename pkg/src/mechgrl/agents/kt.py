"""Krichevsky-Trofimov (add-one-half) estimators."""
from __future__ import annotations

import numpy as np


def kt_predict(zero_count, one_count):
    """Probability that the next bit is 1."""
    return (one_count + 0.5) / (zero_count + one_count + 1.0)


def kt_distribution(counts):
    """Add-one-half estimate over a finite alphabet; ``counts`` may have leading batch axes."""
    counts = np.asarray(counts, dtype=float)
    n = counts.shape[-1]
    return (counts + 0.5) / (counts.sum(axis=-1, keepdims=True) + 0.5 * n)


class KTCounter:
    """Sequential KT estimator over ``size`` symbols."""

    def __init__(self, size=2):
        self.counts = np.zeros(size)

    def predict(self):
        return kt_distribution(self.counts)

    def prob(self, symbol):
        return float(self.predict()[symbol])

    def update(self, symbol):
        self.counts[symbol] += 1
