"""The K-winner modern Hopfield network.

Weights follow dense-matrix semantics (``M`` is ``n_h x n_v``, the return
matrix ``M'`` is ``n_v x n_h``), but only entries selected by the fan-in mask
are ever read or written, so they are stored compactly: row ``i`` of
``fan_idx`` lists the visible units wired to hidden unit ``i``, and
``M[i, m]`` / ``M_ret[i, m]`` hold the forward and return weights of the
connection ``(i, fan_idx[i, m])``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidConfigError
from .patterns import active_count

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KWinnerConfig:
    n_v: int = 1000
    n_h: int = 2000
    k_h: int = 50
    f: float = 0.05
    epsilon: float = 0.3
    s_v: float = 0.1

    def __post_init__(self):
        if self.n_h < 1:
            raise InvalidConfigError(f"n_h must be positive, got {self.n_h}")
        if not 1 <= self.k_h <= self.n_h:
            raise InvalidConfigError(f"k_h={self.k_h} outside [1, n_h={self.n_h}]")
        if not 0 < self.f <= 1:
            raise InvalidConfigError(f"fan-in fraction f={self.f} outside (0, 1]")
        if not 0 <= self.epsilon <= 1:
            raise InvalidConfigError(f"learning rate {self.epsilon} outside [0, 1]")
        self.k_v  # validates s_v against n_v
        self.fan_in

    @property
    def k_v(self):
        return active_count(self.n_v, self.s_v)

    @property
    def s_h(self):
        return self.k_h / self.n_h

    @property
    def fan_in(self):
        """Visible units per hidden unit, ``round(f * n_v)``."""
        return active_count(self.n_v, self.f)

    @property
    def n_weights(self):
        """Learnable weights: forward plus return connections."""
        return 2 * self.n_h * self.fan_in


def kwta(v, k):
    """Hard k-winner-take-all with ties broken toward the lowest index."""
    v = np.asarray(v)
    if not 1 <= k <= v.shape[-1]:
        raise ValueError(f"k={k} outside [1, {v.shape[-1]}]")
    return kwta_rows(v[None, :], k)[0]


def kwta_rows(v, k):
    """Row-wise ``kwta`` for a 2-D array; returns a uint8 array of the same shape."""
    v = np.asarray(v)
    n = v.shape[1]
    if k == n:
        return np.ones(v.shape, dtype=np.uint8)
    thresh = np.partition(v, n - k, axis=1)[:, n - k][:, None]
    above = v > thresh
    tied = v == thresh
    need = k - above.sum(axis=1, keepdims=True)
    take = tied & (np.cumsum(tied, axis=1) <= need)
    return (above | take).astype(np.uint8)


def _winners(h, k):
    """Indices of the k largest entries of a 1-D vector, lowest index on ties."""
    if k == 1:
        return np.array([int(np.argmax(h))])
    return np.flatnonzero(kwta_rows(h[None, :], k)[0])


class FrozenNetworkError(RuntimeError):
    pass


class KWinnerMHN:
    """Auto-associative K-winner MHN with local learning and k-WTA retrieval."""

    def __init__(self, config, fan_idx, M, M_ret):
        self.config = config
        self.fan_idx = fan_idx
        self.M = M
        self.M_ret = M_ret
        self.frozen = False
        self.n_learn = 0
        self._dense = None
        self._columns = None

    @classmethod
    def init(cls, config, rng):
        """Uniform (0, 1) weights and a random fan-in mask with fixed row counts."""
        n_h, n_v, fan = config.n_h, config.n_v, config.fan_in
        if fan == n_v:
            fan_idx = np.broadcast_to(np.arange(n_v), (n_h, n_v)).copy()
        else:
            keys = rng.random((n_h, n_v))
            fan_idx = np.sort(np.argpartition(keys, fan - 1, axis=1)[:, :fan], axis=1)
        M = rng.random((n_h, fan))
        M_ret = rng.random((n_h, fan))
        return cls(config, fan_idx, M, M_ret)

    # dense views ---------------------------------------------------------
    def mask(self):
        """The binary fan-in matrix ``F`` (n_h x n_v)."""
        F = np.zeros((self.config.n_h, self.config.n_v), dtype=np.uint8)
        np.put_along_axis(F, self.fan_idx, 1, axis=1)
        return F

    def _scatter(self, values):
        out = np.zeros((self.config.n_h, self.config.n_v))
        np.put_along_axis(out, self.fan_idx, values, axis=1)
        return out

    def effective_weights(self):
        """``(W, W')`` with ``W = M * F`` (n_h x n_v) and ``W' = M' * F^T`` (n_v x n_h)."""
        if self._dense is None:
            self._dense = (self._scatter(self.M), self._scatter(self.M_ret).T.copy())
        return self._dense

    # dynamics ------------------------------------------------------------
    def hidden_input(self, x):
        """Net input ``W x`` to the hidden layer."""
        x = np.asarray(x, dtype=np.float64)
        return np.einsum("ij,ij->i", self.M, x[self.fan_idx])

    def _readout(self, winners):
        back = np.bincount(self.fan_idx[winners].ravel(),
                           weights=self.M_ret[winners].ravel(),
                           minlength=self.config.n_v)
        return kwta_rows(back[None, :], self.config.k_v)[0]

    def retrieve(self, x):
        """One forward-backward pass; returns ``(x_out, z)`` and leaves weights alone."""
        h = self.hidden_input(x)
        if h.max() == h.min():
            log.warning("hidden input is constant; winners fall back to index order")
        winners = _winners(h, self.config.k_h)
        z = np.zeros(self.config.n_h, dtype=np.uint8)
        z[winners] = 1
        return self._readout(winners), z

    def retrieve_batch(self, X):
        """Row-wise ``retrieve`` for a (m, n_v) binary array; returns ``(X_out, Z)``."""
        X = np.ascontiguousarray(X, dtype=np.uint8)
        cfg = self.config
        X_out = np.zeros((X.shape[0], cfg.n_v), dtype=np.uint8)
        Z = np.zeros((X.shape[0], cfg.n_h), dtype=np.uint8)
        flat = _kernels.retrieve_rows(X, self.fan_idx, self.M, self.M_ret,
                                      *self._column_index(), cfg.k_h, cfg.k_v, X_out, Z)
        if flat:
            log.warning("%d probes produced constant hidden input", flat)
        return X_out, Z

    def retrieve_batch_dense(self, X):
        """Dense-matrix version of ``retrieve_batch`` (reference path)."""
        X = np.asarray(X, dtype=np.float64)
        W, W_ret = self.effective_weights()
        H = X @ W.T
        Z = kwta_rows(H, self.config.k_h)
        back = Z.astype(np.float64) @ W_ret.T
        return kwta_rows(back, self.config.k_v), Z

    def _column_index(self):
        if self._columns is None:
            self._columns = _kernels.column_index(self.fan_idx, self.config.n_v)
        return self._columns

    def learn(self, x):
        """Store ``x``: move the winners' in/out weights a fraction epsilon toward x.

        Returns the hidden code ``z`` used for the update.
        """
        if self.frozen:
            raise FrozenNetworkError("learn() called on a frozen network")
        winners = _winners(self.hidden_input(x), self.config.k_h)
        eps = self.config.epsilon
        if eps:
            target = np.asarray(x, dtype=np.float64)[self.fan_idx[winners]]
            self.M[winners] += eps * (target - self.M[winners])
            self.M_ret[winners] += eps * (target - self.M_ret[winners])
        self.n_learn += 1
        self._dense = None
        z = np.zeros(self.config.n_h, dtype=np.uint8)
        z[winners] = 1
        return z

    def learn_sequence(self, patterns):
        """Learn each row of a binary (m, n_v) array once, in order."""
        if self.frozen:
            raise FrozenNetworkError("learn_sequence() called on a frozen network")
        X = np.ascontiguousarray(patterns, dtype=np.uint8)
        _kernels.train_sequence(X, self.fan_idx, self.M, self.M_ret,
                                *self._column_index(), self.config.k_h,
                                float(self.config.epsilon))
        self.n_learn += X.shape[0]
        self._dense = None

    def freeze(self):
        self.frozen = True

    def copy(self):
        net = KWinnerMHN(self.config, self.fan_idx.copy(), self.M.copy(), self.M_ret.copy())
        net.frozen = self.frozen
        net.n_learn = self.n_learn
        net._columns = self._columns
        return net
