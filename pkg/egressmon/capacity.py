# Copyright 2024-2025 egressmon authors, MIT license
"""
Residual capacity estimation

Mutual information between embedded symbols X and recovered symbols Y,
estimated from their empirical joint counts, with the Miller-Madow bias
correction. A decoder whose output is constant gets exactly zero.
"""

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.)


@dataclass(frozen=True)
class JointCounts:

    """Joint count table, rows embedded symbol X, columns recovered Y"""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2:
            raise ValueError('joint counts must be a 2d table')
        if np.any(counts < 0):
            raise ValueError('joint counts must be non-negative')
        object.__setattr__(self, 'counts', counts)

    @property
    def N(self):
        return int(self.counts.sum())

    @property
    def shape(self):
        return self.counts.shape

    def transpose(self):
        return JointCounts(self.counts.T)

    def support(self):
        """Number of rows and columns with nonzero marginal count"""
        return (int(np.count_nonzero(self.counts.sum(axis=1))),
                int(np.count_nonzero(self.counts.sum(axis=0))))


def joint_counts(x, y, r=2, c=2):
    """Count table of paired symbols x in range(r) and y in range(c)"""
    x = np.asarray(x, dtype=np.int64).ravel()
    y = np.asarray(y, dtype=np.int64).ravel()
    if x.shape != y.shape:
        raise ValueError('x and y differ in length')
    counts = np.zeros((r, c), dtype=np.int64)
    np.add.at(counts, (x, y), 1)
    return JointCounts(counts)


def _as_counts(counts):
    if not isinstance(counts, JointCounts):
        counts = JointCounts(counts)
    if counts.N == 0:
        raise ValueError('joint counts are empty')
    return counts


def mutual_information(counts):
    """Plug-in mutual information in bits"""
    counts = _as_counts(counts)
    r, c = counts.support()
    if r <= 1 or c <= 1:
        return 0.
    p = counts.counts / counts.N
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = np.sum(p[nz] * np.log((p / (px * py))[nz])) / LN2
    return max(float(mi), 0.)


def miller_madow_mi(counts):
    """Bias-corrected mutual information, clamped at zero

    The correction (r - 1)(c - 1) / (2 N ln 2) counts only rows and
    columns with nonzero marginals.
    """
    counts = _as_counts(counts)
    r, c = counts.support()
    if r <= 1 or c <= 1:
        return 0.
    correction = (r - 1) * (c - 1) / (2 * counts.N * LN2)
    mi = mutual_information(counts) - correction
    return max(mi, 0.)


def capacity_reduction(counts):
    """1 - I(X;Y) per transmitted bit of a binary channel"""
    counts = _as_counts(counts)
    if counts.shape != (2, 2):
        raise ValueError('capacity reduction needs a binary channel')
    return min(max(1. - miller_madow_mi(counts), 0.), 1.)


def binary_entropy(p):
    p = np.clip(np.asarray(p, dtype=float), 0., 1.)
    with np.errstate(divide='ignore', invalid='ignore'):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.nan_to_num(h)


def _miller_madow_2x2(counts):
    """Vectorized Miller-Madow MI over tables of shape (..., 2, 2)"""
    counts = counts.astype(float)
    n = counts.sum(axis=(-2, -1), keepdims=True)
    p = counts / n
    px = p.sum(axis=-1, keepdims=True)
    py = p.sum(axis=-2, keepdims=True)
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = np.where(p > 0, p * np.log(p / (px * py)), 0.)
    mi = terms.sum(axis=(-2, -1)) / LN2
    r = np.count_nonzero(px[..., 0] > 0, axis=-1)
    c = np.count_nonzero(py[..., 0, :] > 0, axis=-1)
    corr = (r - 1) * (c - 1) / (2 * n[..., 0, 0] * LN2)
    return np.where((r > 1) & (c > 1), np.maximum(mi - corr, 0.), 0.)


def accuracy_proxy_experiment(resamples=10000, n=640, seed=0):
    """Compare 1 - H(accuracy) with Miller-Madow MI on independent bits

    :return: dict with mean ``accuracy_proxy`` and mean ``miller_madow``
        (bits), both over ``resamples`` draws of n independent uniform
        (X, Y) pairs
    """
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(resamples, n), dtype=np.uint8)
    y = rng.integers(0, 2, size=(resamples, n), dtype=np.uint8)
    counts = np.empty((resamples, 2, 2), dtype=np.int64)
    for i in range(2):
        for j in range(2):
            counts[:, i, j] = np.sum((x == i) & (y == j), axis=1)
    acc = (counts[:, 0, 0] + counts[:, 1, 1]) / n
    proxy = 1. - binary_entropy(acc)
    mm = _miller_madow_2x2(counts)
    return {'accuracy_proxy': float(proxy.mean()),
            'miller_madow': float(mm.mean()),
            'resamples': resamples, 'n': n}
