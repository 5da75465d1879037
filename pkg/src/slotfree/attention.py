"""Single-head attention on the Case Sequence Task, with and without slots.

Two model families share the slow weights ``W_Q``, ``W_K`` (``N x D``) and
``W_V`` (``2 x D``):

* the baseline: softmax attention over the context keys, output the
  attention-weighted sum of values;
* the slot-free variants: the context is written into per-sequence fast
  weights of a 1-winner Hopfield layer (keys in ``W_HK``, values in
  ``W_VH``, raw items in ``W_IH``). At the query a soft readout of
  ``W_HK q`` reinstates a blend of context items ``x_tilde`` that is pushed
  through ``W_V``.

The variants differ only in how ``W_K`` learns: not at all, by gradient
through the Hopfield readout of ``W_K x_tilde``, or by a delta rule that
pulls ``W_K x_tilde`` toward the query. All gradients are closed forms
summed over the batch; the fast weights never receive gradient updates.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .case_task import gen_batch
from .errors import DivergenceError, InvalidConfigError

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "fixed-wk", "mhn-wk", "qk-align")
DIVERGENCE_LOSS = 1e6


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --- weights -----------------------------------------------------------------

@dataclass
class SlowWeights:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray

    @property
    def N(self):
        return self.W_Q.shape[0]

    @property
    def D(self):
        return self.W_Q.shape[1]

    def copy(self):
        return SlowWeights(self.W_Q.copy(), self.W_K.copy(), self.W_V.copy())

    @classmethod
    def init(cls, N, D, qk_std, rng, v_high=0.1):
        """Gaussian query/key weights with std ``qk_std``; values Uniform[0, v_high)."""
        W_Q = rng.normal(0.0, qk_std, size=(N, D))
        W_K = rng.normal(0.0, qk_std, size=(N, D))
        W_V = rng.uniform(0.0, v_high, size=(2, D))
        return cls(W_Q, W_K, W_V)


@dataclass
class FastWeights:
    """Per-sequence Hopfield memory for a batch: leading axis is the sequence.

    ``W_HK`` is ``(B, n_h, N)``, ``W_VH`` is ``(B, 2, n_h)``, ``W_IH`` is
    ``(B, D, n_h)``; ``W_HI`` (``n_h x D``) is the shared fixed input
    projection or None.
    """

    W_HK: np.ndarray
    W_VH: np.ndarray
    W_IH: np.ndarray
    W_HI: np.ndarray = None
    winners: np.ndarray = field(default=None, repr=False)   # (B, C) slot used at each step

    @property
    def n_h(self):
        return self.W_HK.shape[1]

    @classmethod
    def init(cls, B, n_h, N, D, rng, projection=None, hk_high=0.5):
        """Fresh memories: ``W_VH``, ``W_IH`` Uniform[0, 1); ``W_HK``
        Uniform[0, hk_high) without projection and zero with one."""
        W_VH = rng.random((B, 2, n_h))
        W_IH = rng.random((B, D, n_h))
        if projection is None:
            W_HK = rng.uniform(0.0, hk_high, size=(B, n_h, N))
        else:
            W_HK = np.zeros((B, n_h, N))
        return cls(W_HK, W_VH, W_IH, projection)

    def checksum(self):
        return float(self.W_HK.sum() + self.W_VH.sum() + self.W_IH.sum())


def input_projection(n_h, L):
    """Fixed token-to-hidden weights giving each letter token its own slot.

    With ``n_h >= 2L`` the first ``2L x 2L`` block is the identity. With
    ``L <= n_h < 2L`` both cases of a letter share the slot of its type,
    which still separates context items as long as their types differ.
    """
    D = 3 * L
    W = np.zeros((n_h, D))
    if n_h >= 2 * L:
        W[np.arange(2 * L), np.arange(2 * L)] = 1.0
    elif n_h >= L:
        W[np.arange(L), np.arange(L)] = 1.0
        W[np.arange(L), L + np.arange(L)] = 1.0
    else:
        raise InvalidConfigError(f"input projection needs n_h >= L, got n_h={n_h}, L={L}")
    return W


def fast_store_step(fast, k, v, x):
    """Write one context step into every sequence's memory.

    ``k`` is ``(B, N)``, ``v`` ``(B, 2)``, ``x`` ``(B, D)``. The slot with the
    largest drive ``W_HK k (+ W_HI x)`` wins (lowest index on ties) and its
    key row, value column and item column are replaced outright.
    Returns the winning slot per sequence.
    """
    drive = np.einsum("bhn,bn->bh", fast.W_HK, k)
    if fast.W_HI is not None:
        drive = drive + x @ fast.W_HI.T
    r = np.argmax(drive, axis=1)
    b = np.arange(k.shape[0])
    fast.W_HK[b, r] = k
    fast.W_VH[b, :, r] = v
    fast.W_IH[b, :, r] = x
    return r


def fast_store(slow, fast, X):
    """Store a batch of contexts ``X`` (``(B, C, D)``) step by step."""
    K = X @ slow.W_K.T
    V = X @ slow.W_V.T
    fast.winners = np.stack([fast_store_step(fast, K[:, t], V[:, t], X[:, t])
                             for t in range(X.shape[1])], axis=1)
    return fast


# --- forward passes -----------------------------------------------------------

@dataclass
class BaselineCache:
    q: np.ndarray       # (B, N)
    K: np.ndarray       # (B, C, N)
    V: np.ndarray       # (B, C, 2)
    s: np.ndarray       # (B, C)
    x_tilde: np.ndarray  # (B, D)
    y_hat: np.ndarray   # (B, 2)
    beta: float


def baseline_forward(slow, X, xq, beta=None):
    """Softmax attention of the query over the context; ``beta`` defaults to
    ``1/sqrt(N)``."""
    beta = 1.0 / np.sqrt(slow.N) if beta is None else beta
    q = xq @ slow.W_Q.T
    K = X @ slow.W_K.T
    V = X @ slow.W_V.T
    s = softmax(beta * np.einsum("bcn,bn->bc", K, q))
    y_hat = np.einsum("bc,bco->bo", s, V)
    x_tilde = np.einsum("bc,bcd->bd", s, X)
    return BaselineCache(q, K, V, s, x_tilde, y_hat, beta)


def baseline_grads(slow, X, xq, y, cache=None):
    """Gradients of the summed squared error for all three slow matrices."""
    c = baseline_forward(slow, X, xq) if cache is None else cache
    err = c.y_hat - y                                       # (B, 2)
    dW_V = 2.0 * err.T @ c.x_tilde
    # dL/dlogit_i for each context position
    g = 2.0 * c.beta * c.s * np.einsum("bo,bco->bc", err, c.V - c.y_hat[:, None, :])
    dW_K = np.einsum("bc,bn,bcd->nd", g, c.q, X)
    delta_q = np.einsum("bc,bcn->bn", g, c.K)
    dW_Q = delta_q.T @ xq
    return dW_Q, dW_K, dW_V


@dataclass
class QueryCache:
    q: np.ndarray        # (B, N)
    a_q: np.ndarray      # (B, n_h)
    x_tilde: np.ndarray  # (B, D)
    y_hat: np.ndarray    # (B, 2)  training output W_V x_tilde
    y_val: np.ndarray    # (B, 2)  readout through the stored values


def query_forward(slow, fast, xq):
    q = xq @ slow.W_Q.T
    a_q = softmax(np.einsum("bhn,bn->bh", fast.W_HK, q))
    x_tilde = np.einsum("bdh,bh->bd", fast.W_IH, a_q)
    y_hat = x_tilde @ slow.W_V.T
    y_val = np.einsum("boh,bh->bo", fast.W_VH, a_q)
    return QueryCache(q, a_q, x_tilde, y_hat, y_val)


def mhn_grads_QV(slow, fast, xq, y, cache=None):
    """Gradients of the summed squared error of ``W_V x_tilde`` for ``W_Q``
    and ``W_V``, with the fast weights held fixed."""
    c = query_forward(slow, fast, xq) if cache is None else cache
    err = c.y_hat - y
    dW_V = 2.0 * err.T @ c.x_tilde
    U = np.einsum("od,bdh->bho", slow.W_V, fast.W_IH)       # value of each slot's item
    g = 2.0 * c.a_q * np.einsum("bo,bho->bh", err, U - c.y_hat[:, None, :])
    delta_q = np.einsum("bh,bhn->bn", g, fast.W_HK)
    dW_Q = delta_q.T @ xq
    return dW_Q, dW_V


def key_readout(slow, fast, x_tilde):
    """``(y_K, s_K)``: stored values read out by the reinstated key ``W_K x_tilde``."""
    s_K = softmax(np.einsum("bhn,bn->bh", fast.W_HK, x_tilde @ slow.W_K.T))
    return np.einsum("boh,bh->bo", fast.W_VH, s_K), s_K


def wk_grad_mhn(slow, fast, x_tilde, y):
    """Gradient for ``W_K`` of the summed squared error of the key readout,
    with ``x_tilde`` treated as an input."""
    y_K, s_K = key_readout(slow, fast, x_tilde)
    err = y_K - y
    diff = np.transpose(fast.W_VH, (0, 2, 1)) - y_K[:, None, :]   # (B, n_h, 2)
    g = 2.0 * s_K * np.einsum("bo,bho->bh", err, diff)
    delta_k = np.einsum("bh,bhn->bn", g, fast.W_HK)
    return delta_k.T @ x_tilde


def wk_grad_qk(slow, x_tilde, q):
    """Delta-rule gradient ``2 (W_K x_tilde - q) x_tilde^T`` with ``q`` a fixed target."""
    return 2.0 * (x_tilde @ slow.W_K.T - q).T @ x_tilde


# losses the gradients above differentiate (used by finite-difference checks)

def baseline_loss(slow, X, xq, y, beta=None):
    return float(np.sum((baseline_forward(slow, X, xq, beta).y_hat - y) ** 2))


def mhn_loss(slow, fast, xq, y):
    return float(np.sum((query_forward(slow, fast, xq).y_hat - y) ** 2))


def key_readout_loss(slow, fast, x_tilde, y):
    return float(np.sum((key_readout(slow, fast, x_tilde)[0] - y) ** 2))


def qk_loss(slow, x_tilde, q):
    return float(np.sum((x_tilde @ slow.W_K.T - q) ** 2))


# --- structure probes ---------------------------------------------------------

def _diag_stats(block):
    L = block.shape[0]
    on = np.trace(block) / L
    off = (block.sum() - np.trace(block)) / (L * L - L) if L > 1 else np.nan
    return float(on), float(off)


@dataclass
class StructureReport:
    value_columns: np.ndarray    # (2, 2L) W_V columns of the letter tokens
    key_upper_lower: np.ndarray  # (L, L) uppercase rows vs lowercase columns of W_K^T W_K
    query_lower: np.ndarray      # (L, L) query rows vs lowercase columns of W_Q^T W_K
    query_upper: np.ndarray      # (L, L) query rows vs uppercase columns of W_Q^T W_K

    def stats(self):
        """On- and off-diagonal means of the three blocks, flattened."""
        out = {}
        for name in ("key_upper_lower", "query_lower", "query_upper"):
            on, off = _diag_stats(getattr(self, name))
            out[f"{name}_on"] = on
            out[f"{name}_off"] = off
        return out

    def case_score(self):
        """Negative mean distance of the letter columns of W_V from their
        case one-hots (0 is perfect)."""
        L = self.value_columns.shape[1] // 2
        return -float(np.mean(np.linalg.norm(self.value_columns - case_labels(L), axis=0)))

    def identity_score(self):
        """On- minus off-diagonal mean of the upper-lower key block: how much
        more a letter's two cases share a key than different letters do."""
        on, off = _diag_stats(self.key_upper_lower)
        return on - off


def case_labels(L):
    """(2, 2L): ``[1, 0]`` for the lowercase tokens, ``[0, 1]`` for the uppercase."""
    out = np.zeros((2, 2 * L))
    out[0, :L] = 1.0
    out[1, L:] = 1.0
    return out


def probe_structure(slow, L):
    KK = slow.W_K.T @ slow.W_K
    QK = slow.W_Q.T @ slow.W_K
    lo, up, qr = slice(0, L), slice(L, 2 * L), slice(2 * L, 3 * L)
    return StructureReport(
        value_columns=slow.W_V[:, :2 * L].copy(),
        key_upper_lower=KK[up, lo].copy(),
        query_lower=QK[qr, lo].copy(),
        query_upper=QK[qr, up].copy(),
    )


# --- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    variant: str = "baseline"
    projection: bool = False
    iterations: int = 5000
    batch: int = 64
    L: int = 4
    C: int = 4
    N: int = 10
    n_h: int = 16
    eta_Q: float = 1e-3
    eta_K: float = 1e-3
    eta_V: float = 1e-3
    qk_std: float = None        # default: 1/(4 sqrt N) baseline, 1/sqrt N otherwise
    v_high: float = 0.1
    hk_high: float = 0.5
    beta: float = None          # baseline softmax temperature, default 1/sqrt N
    snapshot_every: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "baseline" and self.projection:
            raise InvalidConfigError("the baseline has no input projection")
        if min(self.eta_Q, self.eta_K, self.eta_V) < 0:
            raise InvalidConfigError("learning rates must be nonnegative")
        if self.iterations < 0 or self.batch < 1 or self.N < 1:
            raise InvalidConfigError("iterations, batch and N must be positive")
        if self.C > self.L:
            raise InvalidConfigError("context length exceeds the number of letters")
        if self.variant != "baseline" and self.n_h < self.C:
            raise InvalidConfigError("n_h must be at least the context length")

    @property
    def init_std(self):
        if self.qk_std is not None:
            return self.qk_std
        if self.variant == "baseline":
            return 1.0 / (4.0 * np.sqrt(self.N))
        return 1.0 / np.sqrt(self.N)


def train_preset(variant, projection=False, **overrides):
    """Training configuration of a named model."""
    base = {
        "baseline": dict(N=10, eta_Q=1e-3, eta_K=1e-3, eta_V=1e-3),
        "fixed-wk": dict(N=50, n_h=10, eta_Q=1e-3, eta_K=0.0, eta_V=1e-3),
        "mhn-wk": dict(N=50, n_h=16, eta_Q=5e-3, eta_K=5e-3, eta_V=5e-3),
        "qk-align": dict(N=50, n_h=16, eta_Q=5e-3, eta_K=1e-4, eta_V=5e-3),
    }
    if variant not in base:
        raise InvalidConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return TrainConfig(variant=variant, projection=projection, **{**base[variant], **overrides})


@dataclass
class TrainTrace:
    acc: np.ndarray
    loss: np.ndarray
    snapshots: list = field(default_factory=list)   # (iteration, StructureReport)
    crossing: dict = None   # first iteration with accuracy > 0.95 and probe scores

    def end_accuracy(self, window=1000):
        return float(self.acc[-window:].mean())

    def first_crossing(self, threshold=0.95):
        hit = np.flatnonzero(self.acc > threshold)
        return int(hit[0]) if hit.size else None


def batch_accuracy(y_out, y):
    """Fraction of sequences whose output argmax matches the target; an
    output with two equal components counts as wrong."""
    tie = y_out[:, 0] == y_out[:, 1]
    if tie.any():
        log.debug("%d tied outputs counted as incorrect", int(tie.sum()))
    right = (np.argmax(y_out, axis=1) == np.argmax(y, axis=1)) & ~tie
    return float(right.mean())


def train_step(slow, cfg, batch, rng, proj):
    """One gradient step on one batch; returns ``(accuracy, loss)`` measured
    before the update."""
    X = batch.context_onehot()
    xq = batch.query_onehot()
    y = batch.target
    if cfg.variant == "baseline":
        c = baseline_forward(slow, X, xq, cfg.beta)
        acc = batch_accuracy(c.y_hat, y)
        loss = float(np.sum((c.y_hat - y) ** 2))
        dQ, dK, dV = baseline_grads(slow, X, xq, y, c)
    else:
        fast = FastWeights.init(len(batch), cfg.n_h, cfg.N, batch.D, rng, proj, cfg.hk_high)
        fast_store(slow, fast, X)
        c = query_forward(slow, fast, xq)
        acc = batch_accuracy(c.y_val, y)
        loss = float(np.sum((c.y_val - y) ** 2))
        dQ, dV = mhn_grads_QV(slow, fast, xq, y, c)
        if cfg.variant == "mhn-wk":
            dK = wk_grad_mhn(slow, fast, c.x_tilde, y)
        elif cfg.variant == "qk-align":
            dK = wk_grad_qk(slow, c.x_tilde, c.q)
        else:
            dK = None
    slow.W_Q -= cfg.eta_Q * dQ
    slow.W_V -= cfg.eta_V * dV
    if dK is not None:
        slow.W_K -= cfg.eta_K * dK
    return acc, loss


def train(cfg, seed=0, slow=None):
    """Train on freshly drawn batches; returns ``(TrainTrace, SlowWeights)``.

    Raises DivergenceError when the loss passes 1e6 or stops being finite.
    """
    rng = make_rng(seed)
    D = 3 * cfg.L
    slow = SlowWeights.init(cfg.N, D, cfg.init_std, rng, cfg.v_high) if slow is None else slow
    proj = input_projection(cfg.n_h, cfg.L) if cfg.projection else None
    acc = np.empty(cfg.iterations)
    loss = np.empty(cfg.iterations)
    trace = TrainTrace(acc, loss)
    start = probe_structure(slow, cfg.L)
    trace.snapshots.append((0, start))
    for it in range(cfg.iterations):
        batch = gen_batch(cfg.L, cfg.C, cfg.batch, rng)
        acc[it], loss[it] = train_step(slow, cfg, batch, rng, proj)
        if not np.isfinite(loss[it]) or loss[it] > DIVERGENCE_LOSS:
            raise DivergenceError(f"loss {loss[it]:.3g} at iteration {it}")
        if trace.crossing is None and acc[it] > 0.95:
            now = probe_structure(slow, cfg.L)
            trace.crossing = {
                "iteration": it,
                "case_gain": now.case_score() - start.case_score(),
                "identity_gain": now.identity_score() - start.identity_score(),
            }
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            trace.snapshots.append((it + 1, probe_structure(slow, cfg.L)))
    return trace, slow


# --- value learning with frozen queries and keys ----------------------------------

@dataclass
class ValueConvergence:
    max_distance: float          # worst letter column, Euclidean distance to its case one-hot
    distances: np.ndarray        # per letter column
    W_V: np.ndarray
    eta: float
    eta_bound: float
    like_case_dots: np.ndarray   # centred column dot products within a case
    cross_case_dots: np.ndarray  # centred column dot products across cases


def value_step_bound(L, C):
    """Largest stable step size ``C^2 / (2 gamma d)``, where ``gamma`` is
    the fraction of sequences containing a given letter token."""
    gamma = (C / L) * 0.5
    return C * C / (2.0 * gamma * 3 * L)


def wv_convergence_check(N=200, iterations=1500, L=4, C=2, batch=512, eta=None,
                         seed=0, average_last=500):
    """Train only ``W_V`` of a baseline with ``W_Q``, ``W_K`` frozen at
    N(0, 1/N) entries and unit softmax temperature, using the mean-halved
    squared error ``1/(2B) sum ||y_hat - y||^2``.

    ``eta`` defaults to half the stability bound. The returned ``W_V`` is the
    average over the last ``average_last`` iterates, which damps batch noise.
    """
    bound = value_step_bound(L, C)
    eta = 0.5 * bound if eta is None else eta
    if eta >= bound:
        raise InvalidConfigError(f"step size {eta} violates the bound {bound:.4g}")
    rng = make_rng(seed)
    D = 3 * L
    slow = SlowWeights.init(N, D, 1.0 / np.sqrt(N), rng)
    avg = np.zeros_like(slow.W_V)
    n_avg = 0
    for it in range(iterations):
        b = gen_batch(L, C, batch, rng)
        c = baseline_forward(slow, b.context_onehot(), b.query_onehot(), beta=1.0)
        slow.W_V -= eta * (c.y_hat - b.target).T @ c.x_tilde / batch
        if it >= iterations - average_last:
            avg += slow.W_V
            n_avg += 1
    W_V = avg / n_avg if n_avg else slow.W_V.copy()
    cols = W_V[:, :2 * L]
    dist = np.linalg.norm(cols - case_labels(L), axis=0)
    centred = cols - cols.mean(axis=1, keepdims=True)
    G = centred.T @ centred
    lower = np.arange(2 * L) < L
    like = np.array([G[i, j] for i in range(2 * L) for j in range(i + 1, 2 * L)
                     if lower[i] == lower[j]])
    cross = np.array([G[i, j] for i in range(2 * L) for j in range(i + 1, 2 * L)
                      if lower[i] != lower[j]])
    return ValueConvergence(float(dist.max()), dist, W_V, eta, bound, like, cross)

