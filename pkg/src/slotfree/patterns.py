"""Binary memory patterns: random, hierarchically structured, and partial cues.

Patterns are ``uint8`` vectors of length ``n_v`` with exactly ``k_v`` ones.
Collections of patterns are 2-D arrays with one pattern per row.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidConfigError


def active_count(n_v, s_v):
    """Number of active bits ``k_v = round(s_v * n_v)``.

    Raises InvalidConfigError when the rounding is degenerate (0 or more than
    ``n_v`` ones) or moves the sparsity by more than 1%.
    """
    if n_v < 1:
        raise InvalidConfigError(f"n_v must be positive, got {n_v}")
    if not 0 < s_v <= 1:
        raise InvalidConfigError(f"s_v must lie in (0, 1], got {s_v}")
    exact = s_v * n_v
    k_v = int(round(exact))
    if k_v < 1 or k_v > n_v:
        raise InvalidConfigError(f"s_v={s_v} with n_v={n_v} gives {k_v} active bits")
    if abs(k_v - exact) > 0.01 * exact:
        raise InvalidConfigError(
            f"s_v * n_v = {exact} is not close enough to an integer")
    return k_v


def _random_subsets(rng, rows, n, k):
    """Uniform k-subsets of range(n), one per row, as a (rows, k) index array."""
    if k == n:
        return np.broadcast_to(np.arange(n), (rows, n)).copy()
    keys = rng.random((rows, n))
    return np.argpartition(keys, k - 1, axis=1)[:, :k]


def random_patterns(count, n_v, s_v, rng):
    """``count`` independent uniform patterns with exactly ``k_v`` ones."""
    k_v = active_count(n_v, s_v)
    out = np.zeros((count, n_v), dtype=np.uint8)
    if count:
        idx = _random_subsets(rng, count, n_v, k_v)
        np.put_along_axis(out, idx, 1, axis=1)
    return out


def gen_random_pattern(n_v, s_v, rng):
    """A single uniform pattern of length ``n_v`` and sparsity ``s_v``."""
    return random_patterns(1, n_v, s_v, rng)[0]


def _check_flip_count(b, k_v, n_v):
    if b < 0 or b > k_v or b > n_v - k_v:
        raise InvalidConfigError(
            f"flip count b={b} invalid for k_v={k_v}, n_v={n_v}")


def bit_flipped(p, b, rng):
    """Copy of ``p`` with ``b`` random ones turned off and ``b`` random zeros on.

    ``b = 0`` returns an identical copy.
    """
    p = np.asarray(p)
    ones = np.flatnonzero(p)
    zeros = np.flatnonzero(p == 0)
    _check_flip_count(b, ones.size, p.size)
    out = p.astype(np.uint8, copy=True)
    if b:
        out[rng.choice(ones, size=b, replace=False)] = 0
        out[rng.choice(zeros, size=b, replace=False)] = 1
    return out


def bit_flipped_rows(parents, b, rng):
    """Row-wise ``bit_flipped`` for a (m, n_v) array of equal-sparsity patterns."""
    parents = np.asarray(parents, dtype=np.uint8)
    m, n_v = parents.shape
    if m == 0:
        return parents.copy()
    k_v = int(parents[0].sum())
    _check_flip_count(b, k_v, n_v)
    out = parents.copy()
    if b == 0:
        return out
    # stable sort puts each row's active indices first, in ascending order
    order = np.argsort(-parents.astype(np.int8), axis=1, kind="stable")
    ones = order[:, :k_v]
    zeros = order[:, k_v:]
    off = np.take_along_axis(ones, _random_subsets(rng, m, k_v, b), axis=1)
    on = np.take_along_axis(zeros, _random_subsets(rng, m, n_v - k_v, b), axis=1)
    np.put_along_axis(out, off, 0, axis=1)
    np.put_along_axis(out, on, 1, axis=1)
    return out


def partial_cue(p, c, rng):
    """Keep a uniformly chosen ``round(c * k_v)`` of ``p``'s ones, zero the rest."""
    return partial_cues(np.asarray(p)[None, :], c, rng)[0]


def partial_cues(patterns, c, rng):
    """Row-wise ``partial_cue`` for a (m, n_v) array of equal-sparsity patterns."""
    patterns = np.asarray(patterns, dtype=np.uint8)
    if not 0 < c <= 1:
        raise InvalidConfigError(f"cue fraction must lie in (0, 1], got {c}")
    m = patterns.shape[0]
    if m == 0:
        return patterns.copy()
    k_v = int(patterns[0].sum())
    keep = int(round(c * k_v))
    if keep < 1:
        raise InvalidConfigError(f"cue fraction {c} keeps no bits of k_v={k_v}")
    if keep == k_v:
        return patterns.copy()
    order = np.argsort(-patterns.astype(np.int8), axis=1, kind="stable")
    ones = order[:, :k_v]
    kept = np.take_along_axis(ones, _random_subsets(rng, m, k_v, keep), axis=1)
    out = np.zeros_like(patterns)
    np.put_along_axis(out, kept, 1, axis=1)
    return out


@dataclass
class PatternTree:
    """Tree of patterns; node 0 is the root and parents precede children."""

    patterns: np.ndarray
    parent: np.ndarray
    children: list = field(repr=False)

    @property
    def root(self):
        return 0

    def __len__(self):
        return len(self.parent)

    def leaves(self):
        """Indices of nodes without children, in ascending order."""
        return np.array([i for i, ch in enumerate(self.children) if not ch],
                        dtype=np.int64)

    def leaf_patterns(self):
        return self.patterns[self.leaves()]

    def depth(self):
        d = np.zeros(len(self), dtype=np.int64)
        for i in range(1, len(self)):
            d[i] = d[self.parent[i]] + 1
        return d

    def edges(self):
        """(child, parent) index pairs for every non-root node."""
        return [(i, int(self.parent[i])) for i in range(1, len(self))]


def tgcrp_shape(num_data, rng):
    """Sample the tree shape of the tree-generating Chinese restaurant process.

    Each new node descends from the root. At a node whose subtree holds
    ``S`` nodes, it stops and becomes a new child with probability ``1/S``
    and otherwise moves into child ``l`` with probability ``N_l / S``, where
    ``N_l`` is that child's subtree size. Subtree sizes are kept up to date
    along the descent path instead of being recounted.

    Returns ``(parent, children)``; ``children[i]`` is in insertion order.
    """
    if num_data < 1:
        raise InvalidConfigError(f"num_data must be >= 1, got {num_data}")
    parent = np.full(num_data, -1, dtype=np.int64)
    first_child = np.full(num_data, -1, dtype=np.int64)
    next_sibling = np.full(num_data, -1, dtype=np.int64)
    last_child = np.full(num_data, -1, dtype=np.int64)
    size = np.ones(num_data, dtype=np.int64)
    i = 1
    while i < num_data:
        uniforms = rng.random(16 * (num_data - i) + 64)
        i = _kernels.tgcrp_insert(i, num_data, uniforms, parent, first_child,
                                  next_sibling, last_child, size)
    children = [[] for _ in range(num_data)]
    for node in range(1, num_data):
        children[parent[node]].append(node)
    return parent, children


def tgcrp_generate(num_data, n_v, s_v, b, rng):
    """Generate a TGCRP pattern tree with ``num_data`` nodes.

    The root holds a uniform random pattern; every child holds its parent's
    pattern with ``b`` bit flips in each direction.
    """
    k_v = active_count(n_v, s_v)
    _check_flip_count(b, k_v, n_v)
    parent, children = tgcrp_shape(num_data, rng)
    patterns = np.empty((num_data, n_v), dtype=np.uint8)
    patterns[0] = gen_random_pattern(n_v, s_v, rng)
    i = 1
    while i < num_data:
        uniforms = rng.random(3 * b * (num_data - i) + 64)
        i = _kernels.tgcrp_fill(i, parent, patterns, b, uniforms)
    return PatternTree(patterns=patterns, parent=parent, children=children)


def pairwise_overlaps(patterns):
    """Matrix of raw dot products between every pair of rows."""
    x = np.asarray(patterns, dtype=np.float64)
    return x @ x.T


def mean_pairwise_similarity(patterns, k_v=None):
    """Mean over unordered pairs of ``(p_i . p_j) / k_v``.

    With all patterns at the same sparsity this is also the mean cosine
    similarity, since every pattern has norm ``sqrt(k_v)``.
    """
    patterns = np.asarray(patterns)
    m = patterns.shape[0]
    if m < 2:
        raise ValueError("need at least two patterns")
    if k_v is None:
        k_v = int(patterns[0].sum())
    col = patterns.sum(axis=0, dtype=np.float64)
    # sum over i<j of p_i.p_j from the column sums, without the m x m matrix
    total = (col @ col - patterns.sum(dtype=np.float64)) / 2.0
    return float(total / (m * (m - 1) / 2) / k_v)
