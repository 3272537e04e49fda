"""Numba kernels for exact-greedy tree growth and batch traversal.

Split search is exact: every midpoint between consecutive distinct values
present in a node is a candidate. Two equivalent scan strategies are used:

* low-cardinality columns are scanned from histograms over "atoms": the
  distinct codes of a key column that the scanned column is a function of
  (or its own distinct values). The sibling histogram is obtained by
  subtraction from the parent;
* high-cardinality columns keep one presorted index list per column that is
  stably partitioned on every split.

Both visit candidates in ascending threshold order, so the tie-break
(lowest column, then lowest threshold) is the same on either path.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _candidate_gain(GL, HL, G, H, lam, gamma, mcw):
    HR = H - HL
    if HL < mcw or HR < mcw:
        return -np.inf
    if HL + lam <= 0.0 or HR + lam <= 0.0:
        return -np.inf
    GR = G - GL
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@njit(cache=True)
def _midpoint(lo, hi):
    t = 0.5 * (lo + hi)
    if t >= hi:
        t = lo
    return t


@njit(cache=True)
def _build_hist(node, start, end, rows, g, h, atom_idx, hist):
    na = hist.shape[1]
    for a in range(na):
        hist[node, a, 0] = 0.0
        hist[node, a, 1] = 0.0
        hist[node, a, 2] = 0.0
    ng = atom_idx.shape[1]
    for k in range(start, end):
        r = rows[k]
        gr = g[r]
        hr = h[r]
        for j in range(ng):
            a = atom_idx[r, j]
            hist[node, a, 0] += gr
            hist[node, a, 1] += hr
            hist[node, a, 2] += 1.0


@njit(cache=True)
def _subtract_hist(parent, small, big, hist):
    for a in range(hist.shape[1]):
        hist[big, a, 0] = hist[parent, a, 0] - hist[small, a, 0]
        hist[big, a, 1] = hist[parent, a, 1] - hist[small, a, 1]
        hist[big, a, 2] = hist[parent, a, 2] - hist[small, a, 2]


@njit(cache=True)
def _find_split(node, start, end, G, H, XT, g, h, feat_kind, feat_slot,
                col_off, col_len, col_perm, col_val, hist, order,
                lam, gamma, mcw):
    """Best (gain, feature, threshold) for one node; feature -1 means none."""
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    d = feat_kind.shape[0]
    for f in range(d):
        slot = feat_slot[f]
        GL = 0.0
        HL = 0.0
        vprev = 0.0
        if feat_kind[f] == 0:
            have_prev = False
            off = col_off[slot]
            for p in range(off, off + col_len[slot]):
                a = col_perm[p]
                if hist[node, a, 2] == 0.0:
                    continue
                v = col_val[p]
                if have_prev and v > vprev:
                    gain = _candidate_gain(GL, HL, G, H, lam, gamma, mcw)
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = f
                        best_thr = _midpoint(vprev, v)
                GL += hist[node, a, 0]
                HL += hist[node, a, 1]
                vprev = v
                have_prev = True
        else:
            for k in range(start, end):
                r = order[slot, k]
                v = XT[f, r]
                if k > start and v > vprev:
                    gain = _candidate_gain(GL, HL, G, H, lam, gamma, mcw)
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = f
                        best_thr = _midpoint(vprev, v)
                GL += g[r]
                HL += h[r]
                vprev = v
    return best_gain, best_feat, best_thr


@njit(cache=True)
def _stable_partition(arr, start, end, go_left, buf):
    li = start
    nr = 0
    # branch-free: the left/right pattern is data-dependent and mispredicts
    for k in range(start, end):
        r = arr[k]
        gl = np.int64(go_left[r])
        arr[li] = r
        buf[nr] = r
        li += gl
        nr += 1 - gl
    for k in range(nr):
        arr[li + k] = buf[k]
    return li - start


@njit(cache=True)
def _segment_sums(rows, start, end, g, h):
    G = 0.0
    H = 0.0
    for k in range(start, end):
        G += g[rows[k]]
        H += h[rows[k]]
    return G, H


@njit(cache=True)
def grow(X, g, h, atom_idx, n_atoms, col_off, col_len, col_perm, col_val, feat_kind,
         feat_slot, XT, order_template, lam, gamma, mcw, max_depth, max_leaves, leafwise):
    """Grow one tree; returns node arrays plus the leaf index of every row."""
    n = X.shape[0]
    if leafwise:
        max_nodes = 2 * max_leaves - 1
    else:
        max_nodes = 2 ** (max_depth + 1) - 1

    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, LEAF, dtype=np.int32)
    right = np.full(max_nodes, LEAF, dtype=np.int32)
    value = np.zeros(max_nodes)
    depth = np.zeros(max_nodes, dtype=np.int32)
    nstart = np.zeros(max_nodes, dtype=np.int64)
    nend = np.zeros(max_nodes, dtype=np.int64)
    nG = np.zeros(max_nodes)
    nH = np.zeros(max_nodes)
    sgain = np.zeros(max_nodes)
    sfeat = np.full(max_nodes, LEAF, dtype=np.int32)
    sthr = np.zeros(max_nodes)
    open_ = np.zeros(max_nodes, dtype=np.bool_)

    hist = np.empty((max_nodes, n_atoms, 3))

    rows = np.arange(n).astype(np.int32)
    order = order_template.copy()
    buf = np.empty(n, dtype=np.int32)
    go_left = np.zeros(n, dtype=np.bool_)

    nstart[0] = 0
    nend[0] = n
    G, H = _segment_sums(rows, 0, n, g, h)
    nG[0] = G
    nH[0] = H
    n_nodes = 1
    n_leaves = 1
    can_split_root = leafwise or max_depth > 0
    if can_split_root:
        if n_atoms > 0:
            _build_hist(0, 0, n, rows, g, h, atom_idx, hist)
        bg, bf, bt = _find_split(0, 0, n, G, H, XT, g, h, feat_kind, feat_slot,
                                 col_off, col_len, col_perm, col_val, hist, order,
                                 lam, gamma, mcw)
        sgain[0] = bg
        sfeat[0] = bf
        sthr[0] = bt
        open_[0] = bf >= 0

    # FIFO cursor for level-wise growth
    cursor = 0
    while True:
        node = -1
        if leafwise:
            if n_leaves >= max_leaves:
                break
            best = 0.0
            for i in range(n_nodes):
                if open_[i] and sgain[i] > best:
                    best = sgain[i]
                    node = i
        else:
            while cursor < n_nodes and not open_[cursor]:
                cursor += 1
            if cursor < n_nodes:
                node = cursor
                cursor += 1
        if node < 0:
            break
        open_[node] = False

        f = sfeat[node]
        t = sthr[node]
        s = nstart[node]
        e = nend[node]
        for k in range(s, e):
            r = rows[k]
            go_left[r] = XT[f, r] <= t
        nl = _stable_partition(rows, s, e, go_left, buf)
        for q in range(order.shape[0]):
            _stable_partition(order[q], s, e, go_left, buf)

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        feature[node] = f
        threshold[node] = t
        left[node] = li
        right[node] = ri
        nstart[li] = s
        nend[li] = s + nl
        nstart[ri] = s + nl
        nend[ri] = e
        depth[li] = depth[node] + 1
        depth[ri] = depth[node] + 1
        for c in (li, ri):
            cG, cH = _segment_sums(rows, nstart[c], nend[c], g, h)
            nG[c] = cG
            nH[c] = cH

        expandable = leafwise or depth[li] < max_depth
        if leafwise and n_leaves >= max_leaves:
            expandable = False
        if expandable:
            if n_atoms > 0:
                if nl <= (e - s) - nl:
                    small, big = li, ri
                else:
                    small, big = ri, li
                _build_hist(small, nstart[small], nend[small], rows, g, h, atom_idx, hist)
                _subtract_hist(node, small, big, hist)
            for c in (li, ri):
                bg, bf, bt = _find_split(c, nstart[c], nend[c], nG[c], nH[c], XT, g, h,
                                         feat_kind, feat_slot, col_off, col_len, col_perm,
                                         col_val, hist, order, lam, gamma, mcw)
                sgain[c] = bg
                sfeat[c] = bf
                sthr[c] = bt
                open_[c] = bf >= 0

    row_leaf = np.empty(n, dtype=np.int32)
    for i in range(n_nodes):
        if feature[i] == LEAF:
            value[i] = -nG[i] / (nH[i] + lam)
            for k in range(nstart[i], nend[i]):
                row_leaf[rows[k]] = i
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), row_leaf)


@njit(cache=True)
def predict_raw(X, base, lr, roots, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = base
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] != LEAF:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += lr * value[node]
        out[i] = s
    return out
