"""Compiled inner loops for training and testing the K-winner MHN.

These mirror ``KWinnerMHN.learn`` / ``KWinnerMHN.retrieve`` one pattern at a
time; the pure-numpy methods remain the reference and the test-suite checks
that both paths agree.
"""

import numpy as np
from numba import njit


def column_index(fan_idx, n_v):
    """Inverse of the fan-in table: for each visible unit, the (row, slot) pairs
    wired to it, in CSR form ``(col_ptr, col_row, col_slot)``."""
    n_h, fan = fan_idx.shape
    flat = fan_idx.ravel()
    order = np.argsort(flat, kind="stable")
    col_ptr = np.zeros(n_v + 1, dtype=np.int64)
    np.cumsum(np.bincount(flat, minlength=n_v), out=col_ptr[1:])
    col_row = (order // fan).astype(np.int64)
    col_slot = (order % fan).astype(np.int64)
    return col_ptr, col_row, col_slot


@njit(cache=True)
def _top_k(v, k, out):
    """Write into ``out`` the indices of the k largest entries of v (ascending
    index order), breaking ties toward lower indices. Returns the count."""
    n = v.shape[0]
    if k == 1:
        best = 0
        for i in range(1, n):
            if v[i] > v[best]:
                best = i
        out[0] = best
        return 1
    thresh = np.partition(v, n - k)[n - k]
    above = 0
    for i in range(n):
        if v[i] > thresh:
            above += 1
    need = k - above
    c = 0
    for i in range(n):
        if v[i] > thresh:
            out[c] = i
            c += 1
        elif v[i] == thresh and need > 0:
            out[c] = i
            c += 1
            need -= 1
    return c


@njit(cache=True)
def _hidden_input(active, n_active, M, col_ptr, col_row, col_slot, h):
    h[:] = 0.0
    for a in range(n_active):
        j = active[a]
        for e in range(col_ptr[j], col_ptr[j + 1]):
            h[col_row[e]] += M[col_row[e], col_slot[e]]


@njit(cache=True)
def train_sequence(X, fan_idx, M, M_ret, col_ptr, col_row, col_slot, k_h, eps):
    """Learn each row of the binary matrix X once, in order, updating M and
    M_ret in place."""
    n_pat, n_v = X.shape
    n_h, fan = M.shape
    h = np.empty(n_h)
    winners = np.empty(k_h, dtype=np.int64)
    active = np.empty(n_v, dtype=np.int64)
    for p in range(n_pat):
        x = X[p]
        n_active = 0
        for j in range(n_v):
            if x[j]:
                active[n_active] = j
                n_active += 1
        _hidden_input(active, n_active, M, col_ptr, col_row, col_slot, h)
        _top_k(h, k_h, winners)
        if eps != 0.0:
            for w in range(k_h):
                i = winners[w]
                for m in range(fan):
                    t = float(x[fan_idx[i, m]])
                    M[i, m] += eps * (t - M[i, m])
                    M_ret[i, m] += eps * (t - M_ret[i, m])


@njit(cache=True)
def retrieve_rows(X, fan_idx, M, M_ret, col_ptr, col_row, col_slot, k_h, k_v,
                  X_out, Z):
    """Retrieve every row of X; writes binary outputs into X_out and hidden
    codes into Z. Returns the number of probes whose hidden input was flat."""
    n_pat, n_v = X.shape
    n_h, fan = M.shape
    h = np.empty(n_h)
    back = np.empty(n_v)
    winners = np.empty(k_h, dtype=np.int64)
    out_idx = np.empty(k_v, dtype=np.int64)
    active = np.empty(n_v, dtype=np.int64)
    flat = 0
    for p in range(n_pat):
        n_active = 0
        for j in range(n_v):
            if X[p, j]:
                active[n_active] = j
                n_active += 1
        _hidden_input(active, n_active, M, col_ptr, col_row, col_slot, h)
        if h.max() == h.min():
            flat += 1
        _top_k(h, k_h, winners)
        back[:] = 0.0
        for w in range(k_h):
            i = winners[w]
            Z[p, i] = 1
            for m in range(fan):
                back[fan_idx[i, m]] += M_ret[i, m]
        _top_k(back, k_v, out_idx)
        for w in range(k_v):
            X_out[p, out_idx[w]] = 1
    return flat


@njit(cache=True)
def tgcrp_insert(start, num_data, uniforms, parent, first_child, next_sibling,
                 last_child, size):
    """Insert nodes ``start, start+1, ...`` into a TGCRP tree until either
    ``num_data`` nodes exist or the uniform buffer runs dry.

    Children are kept as singly linked lists in insertion order. Returns the
    index of the next node to insert; a node whose descent was cut short by
    the buffer is not inserted and is retried from the root with fresh
    uniforms.
    """
    path = np.empty(num_data, dtype=np.int64)
    u_pos = 0
    n_u = uniforms.shape[0]
    i = start
    while i < num_data:
        node = 0
        depth = 0
        path[0] = 0
        placed = False
        while u_pos < n_u:
            u = uniforms[u_pos] * size[node]
            u_pos += 1
            if u < 1.0:
                placed = True
                break
            acc = 1.0
            ch = first_child[node]
            nxt = -1
            while ch != -1:
                acc += size[ch]
                if u < acc:
                    nxt = ch
                    break
                ch = next_sibling[ch]
            if nxt == -1:
                nxt = last_child[node]
            node = nxt
            depth += 1
            path[depth] = node
        if not placed:
            return i
        parent[i] = node
        if first_child[node] == -1:
            first_child[node] = i
        else:
            next_sibling[last_child[node]] = i
        last_child[node] = i
        for d in range(depth + 1):
            size[path[d]] += 1
        i += 1
    return i


@njit(cache=True)
def tgcrp_fill(start, parent, patterns, b, uniforms):
    """Fill ``patterns[i]`` for ``i = start, ...`` as ``b``-bit corruptions of
    ``patterns[parent[i]]``; parents must precede children.

    The ``b`` ones to clear come from a partial Fisher-Yates shuffle of the
    parent's active indices; the ``b`` zeros to set are drawn uniformly by
    rejection among units inactive in both the parent and the child so far.
    Returns the next row to fill (short of the end when uniforms run out; that
    row is left untouched and redone with a fresh buffer).
    """
    n, n_v = patterns.shape
    ones = np.empty(n_v, dtype=np.int64)
    u_pos = 0
    n_u = uniforms.shape[0]
    for i in range(start, n):
        if n_u - u_pos < b:
            return i
        par = patterns[parent[i]]
        k = 0
        for j in range(n_v):
            if par[j]:
                ones[k] = j
                k += 1
        row = patterns[i]
        row[:] = par
        for s in range(b):
            r = s + int(uniforms[u_pos] * (k - s))
            u_pos += 1
            tmp = ones[s]
            ones[s] = ones[r]
            ones[r] = tmp
            row[ones[s]] = 0
        added = 0
        while added < b:
            if u_pos == n_u:
                # undo this row so the caller can retry it
                row[:] = par
                return i
            j = int(uniforms[u_pos] * n_v)
            u_pos += 1
            if par[j] == 0 and row[j] == 0:
                row[j] = 1
                added += 1
    return n
