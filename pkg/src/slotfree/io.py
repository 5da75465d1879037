"""Plain-text formats: pattern lists, tree edges, network checkpoints,
retention-curve CSVs and run manifests."""

import csv
import hashlib
import json
import math

import numpy as np

from .errors import InsufficientDataError, IntegrityError
from .network import KWinnerConfig, KWinnerMHN

CURVE_COLUMNS = ["age", "rho_real_mean", "rho_pseudo_mean", "rd_mean",
                 "dprime_mean", "dprime_se", "sig_flag"]


class SchemaError(IntegrityError):
    """A file that does not follow the expected layout."""


def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


# --- patterns and trees -----------------------------------------------------------

def write_patterns(path, patterns):
    """One pattern per line as its sorted active indices; first line is ``n_v``."""
    patterns = np.asarray(patterns)
    with open(path, "w") as fh:
        fh.write(f"{patterns.shape[1]}\n")
        for row in patterns:
            fh.write(" ".join(map(str, np.flatnonzero(row))) + "\n")


def read_patterns(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty pattern file")
    n_v = int(lines[0])
    out = np.zeros((len(lines) - 1, n_v), dtype=np.uint8)
    for i, line in enumerate(lines[1:]):
        idx = [int(t) for t in line.split()]
        if idx != sorted(set(idx)) or (idx and not 0 <= idx[0] <= idx[-1] < n_v):
            raise SchemaError(f"{path}:{i + 2}: indices must be sorted, unique, in [0, {n_v})")
        out[i, idx] = 1
    return out


def write_tree_edges(path, tree):
    """``child parent`` per line for every non-root node."""
    with open(path, "w") as fh:
        for child, parent in tree.edges():
            fh.write(f"{child} {parent}\n")


def read_tree_edges(path):
    with open(path) as fh:
        return [tuple(int(t) for t in line.split()) for line in fh if line.strip()]


# --- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, net):
    """Header ``n_h n_v f epsilon k_h s_v`` then the forward weights, return
    weights and fan-in index blocks, one hidden unit per line."""
    cfg = net.config
    with open(path, "w") as fh:
        fh.write(f"{cfg.n_h} {cfg.n_v} {_fmt(cfg.f)} {_fmt(cfg.epsilon)} {cfg.k_h} {_fmt(cfg.s_v)}\n")
        for block in (net.M, net.M_ret):
            for row in block:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")
        for row in net.fan_idx:
            fh.write(" ".join(map(str, row)) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 6:
            raise SchemaError(f"{path}: bad checkpoint header")
        n_h, n_v = int(head[0]), int(head[1])
        cfg = KWinnerConfig(n_v=n_v, n_h=n_h, k_h=int(head[4]), f=float(head[2]),
                            epsilon=float(head[3]), s_v=float(head[5]))
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != 3 * n_h:
        raise SchemaError(f"{path}: expected {3 * n_h} weight rows, found {len(rows)}")
    M = np.array(rows[:n_h], dtype=np.float64)
    M_ret = np.array(rows[n_h:2 * n_h], dtype=np.float64)
    fan_idx = np.array(rows[2 * n_h:], dtype=np.int64)
    return KWinnerMHN(cfg, fan_idx, M, M_ret)


# --- curves ----------------------------------------------------------------------

def write_curve(path, curve):
    """Retention curve CSV at full double precision."""
    flags = curve.sig_flags if curve.sig_flags is not None else np.zeros(curve.rd.size, dtype=int)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for i in range(curve.rd.size):
            w.writerow([i + 1, _fmt(curve.rho_real[i]), _fmt(curve.rho_pseudo[i]),
                        _fmt(curve.rd[i]), _fmt(curve.dprime[i]), _fmt(curve.dprime_se[i]),
                        int(flags[i])])


def read_curve(path):
    """Columns of a curve CSV as a dict of arrays; raises SchemaError on a
    header mismatch and InsufficientDataError when there are no rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InsufficientDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header != CURVE_COLUMNS:
            raise SchemaError(f"{path}: columns {header} do not match {CURVE_COLUMNS}")
        rows = [r for r in reader if r]
    if not rows:
        raise InsufficientDataError(f"{path}: no data rows")
    try:
        data = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric entry ({exc})") from None
    if data.shape[1] != len(CURVE_COLUMNS):
        raise SchemaError(f"{path}: ragged rows")
    out = {name: data[:, i] for i, name in enumerate(CURVE_COLUMNS)}
    out["age"] = out["age"].astype(np.int64)
    out["sig_flag"] = out["sig_flag"].astype(np.int64)
    return out


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# --- manifests --------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
