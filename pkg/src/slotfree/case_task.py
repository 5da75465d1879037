"""The Case Sequence Task: recall the case of the context letter a query names.

Tokens are one-hot vectors of size ``D = 3L``. Index ``l`` is lowercase letter
``l``, ``L + l`` its uppercase form, and ``2L + l`` the case-free query for
letter ``l``. Targets are ``[1, 0]`` (lowercase) or ``[0, 1]`` (uppercase).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError

LOWER, UPPER, QUERY = "lower", "upper", "query"
_KINDS = (LOWER, UPPER, QUERY)


@dataclass
class CaseBatch:
    """A batch of sequences as token indices.

    ``context`` is ``(B, C)``, ``query`` is ``(B,)`` and ``target`` is
    ``(B, 2)``.
    """

    L: int
    context: np.ndarray
    query: np.ndarray
    target: np.ndarray

    @property
    def D(self):
        return 3 * self.L

    @property
    def C(self):
        return self.context.shape[1]

    def __len__(self):
        return self.context.shape[0]

    def context_onehot(self):
        """``(B, C, D)`` float array."""
        return one_hot(self.context, self.D)

    def query_onehot(self):
        """``(B, D)`` float array."""
        return one_hot(self.query, self.D)

    def sequence(self, b):
        """Human-readable form of sequence ``b``, e.g. ``('aCbD', 'c?', 'upper')``."""
        ctx = "".join(token_name(t, self.L) for t in self.context[b])
        case = LOWER if self.target[b, 0] == 1 else UPPER
        return ctx, token_name(self.query[b], self.L), case


def one_hot(indices, D):
    indices = np.asarray(indices)
    out = np.zeros(indices.shape + (D,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def encode(letter, kind, L):
    """Token index of ``letter`` (0-based type) in the given form."""
    if not 0 <= letter < L:
        raise ValueError(f"letter type {letter} outside [0, {L})")
    return _KINDS.index(kind) * L + letter


def decode(index, L):
    """``(letter type, kind)`` of a token index."""
    if not 0 <= index < 3 * L:
        raise ValueError(f"token index {index} outside [0, {3 * L})")
    return int(index % L), _KINDS[index // L]


def token_name(index, L):
    letter, kind = decode(index, L)
    ch = chr(ord("a") + letter) if L <= 26 else f"<{letter}>"
    if kind == UPPER:
        return ch.upper()
    if kind == QUERY:
        return ch + "?"
    return ch


def gen_batch(L, C, B, rng, allow_repeats=False):
    """``B`` fresh sequences of ``C`` context tokens and one query.

    Each sequence draws ``C`` distinct letter types in random order (with
    ``allow_repeats`` types are drawn with replacement), gives every type a
    fair-coin case shared by all its occurrences, and queries one of the
    types present.
    """
    if L < 1 or C < 1 or B < 1:
        raise InvalidConfigError(f"L, C and B must be positive, got {L}, {C}, {B}")
    if C > L and not allow_repeats:
        raise InvalidConfigError(f"context length C={C} exceeds the {L} letter types")
    if allow_repeats:
        types = rng.integers(0, L, size=(B, C))
    else:
        # first C entries of a random permutation, row-wise
        types = np.argsort(rng.random((B, L)), axis=1)[:, :C]
    upper = rng.random((B, L)) < 0.5
    is_upper = np.take_along_axis(upper, types, axis=1)
    context = types + L * is_upper
    pick = rng.integers(0, C, size=B)
    q_type = types[np.arange(B), pick]
    query = 2 * L + q_type
    q_upper = upper[np.arange(B), q_type]
    target = np.stack([~q_upper, q_upper], axis=1).astype(np.float64)
    return CaseBatch(L, context.astype(np.int64), query.astype(np.int64), target)


def dump_csv(batch, path):
    """Write ``seq_id, position, token_index, target`` rows; the query is the
    last position of each sequence and target is 0 (lower) or 1 (upper)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "position", "token_index", "target"])
        for b in range(len(batch)):
            case = int(batch.target[b, 1])
            for t, tok in enumerate(batch.context[b]):
                w.writerow([b, t, int(tok), case])
            w.writerow([b, batch.C, int(batch.query[b]), case])


def load_csv(path, L):
    """Inverse of ``dump_csv``."""
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["seq_id"]), []).append(
                (int(r["position"]), int(r["token_index"]), int(r["target"])))
    context, query, target = [], [], []
    for b in sorted(rows):
        seq = sorted(rows[b])
        context.append([tok for _, tok, _ in seq[:-1]])
        query.append(seq[-1][1])
        case = seq[-1][2]
        target.append([1.0 - case, float(case)])
    return CaseBatch(L, np.array(context, dtype=np.int64), np.array(query, dtype=np.int64),
                     np.array(target))
