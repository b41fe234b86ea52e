"""Numba-compiled fitting and prediction kernels.

Trees are built into flat parallel arrays indexed by node id; ``feature[i]
== -1`` marks a leaf. The wrappers in trees.py convert to and from the
public nested node structure.

Split gain everywhere is the SSE reduction written as
``S_l^2/n_l + S_r^2/n_r - S^2/n`` (the shared sum-of-squares term cancels).
Scans go feature-ascending and threshold-ascending with strictly-greater
updates, which makes the tie-break (lowest feature index, then smallest
threshold) fall out of the loop order. All kernels are deterministic for
fixed inputs and seeds; the extra-tree kernel seeds numba's thread-local
generator on entry, so results do not depend on which thread runs it.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def split_scan_sorted(vals, ys, s_total, n_total):
    """Best boundary of one feature over a node, given value-sorted rows.

    Returns (gain, threshold); gain 0.0 means no split with positive gain
    exists. Thresholds are midpoints between adjacent distinct values.
    """
    n = vals.shape[0]
    best_gain = 0.0
    best_thr = np.inf
    parent = s_total * s_total / n_total
    s_left = 0.0
    for i in range(n - 1):
        s_left += ys[i]
        if vals[i] == vals[i + 1]:
            continue
        n_left = i + 1
        n_right = n - n_left
        s_right = s_total - s_left
        gain = s_left * s_left / n_left + s_right * s_right / n_right - parent
        if gain > best_gain:
            best_gain = gain
            best_thr = (vals[i] + vals[i + 1]) / 2.0
    return best_gain, best_thr


@njit(cache=True)
def cart_fit(X, y, sorted_idx, max_depth, min_samples_leaf, min_gain):
    """Greedy exact-split regression tree.

    sorted_idx holds, per feature, the row ids sorted by that feature's
    value; the kernel copies it and keeps every node's rows contiguous in
    each feature column via stable partitions, so per-node split search is
    a linear scan without re-sorting.
    """
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    gain_arr = np.zeros(max_nodes, np.float64)
    row_value = np.zeros(n, np.float64)

    pos = sorted_idx.copy()
    tmp = np.empty(n, np.int64)
    goes_left = np.zeros(n, np.bool_)
    vals_buf = np.empty(n, np.float64)
    ys_buf = np.empty(n, np.float64)

    stack_node = np.empty(max_nodes, np.int64)
    stack_start = np.empty(max_nodes, np.int64)
    stack_end = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    max_depth_reached = 0

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start
        if depth > max_depth_reached:
            max_depth_reached = depth

        s = 0.0
        y_min = np.inf
        y_max = -np.inf
        for i in range(start, end):
            yy = y[pos[0, i]]
            s += yy
            if yy < y_min:
                y_min = yy
            if yy > y_max:
                y_max = yy
        mean = s / m
        value[node] = mean

        if depth >= max_depth or m < 2 * min_samples_leaf or y_min == y_max:
            for i in range(start, end):
                row_value[pos[0, i]] = mean
            continue

        best_f = -1
        best_thr = 0.0
        best_gain = min_gain  # accept only strictly larger, hence gain > min_gain
        for f in range(d):
            for i in range(m):
                r = pos[f, start + i]
                vals_buf[i] = X[r, f]
                ys_buf[i] = y[r]
            g, t = split_scan_sorted(vals_buf[:m], ys_buf[:m], s, float(m))
            if g > best_gain:
                best_gain = g
                best_f = f
                best_thr = t

        if best_f == -1:
            for i in range(start, end):
                row_value[pos[0, i]] = mean
            continue

        n_left = 0
        for i in range(start, end):
            r = pos[best_f, i]
            if X[r, best_f] <= best_thr:
                goes_left[r] = True
                n_left += 1
        for f in range(d):
            w = start
            t_count = 0
            for i in range(start, end):
                r = pos[f, i]
                if goes_left[r]:
                    pos[f, w] = r
                    w += 1
                else:
                    tmp[t_count] = r
                    t_count += 1
            for i in range(t_count):
                pos[f, w + i] = tmp[i]
        for i in range(start, start + n_left):
            goes_left[pos[0, i]] = False

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        gain_arr[node] = best_gain
        left[node] = lid
        right[node] = rid

        stack_node[top] = rid
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lid
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        gain_arr[:n_nodes],
        max_depth_reached,
        row_value,
    )


@njit(cache=True)
def ert_fit(X, y, k_features, min_samples_split, seed):
    """Extremely randomized tree: per node, one uniform threshold per sampled feature.

    Constant sampled features are skipped without consuming randomness, so
    the draw sequence depends only on the data and the seed.
    """
    np.random.seed(seed)
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    gain_arr = np.zeros(max_nodes, np.float64)
    row_value = np.zeros(n, np.float64)

    pos = np.arange(n)
    tmp = np.empty(n, np.int64)
    perm = np.empty(d, np.int64)

    stack_node = np.empty(max_nodes, np.int64)
    stack_start = np.empty(max_nodes, np.int64)
    stack_end = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    max_depth_reached = 0
    m_sample = min(k_features, d)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start
        if depth > max_depth_reached:
            max_depth_reached = depth

        s = 0.0
        y_min = np.inf
        y_max = -np.inf
        for i in range(start, end):
            yy = y[pos[i]]
            s += yy
            if yy < y_min:
                y_min = yy
            if yy > y_max:
                y_max = yy
        mean = s / m
        value[node] = mean

        if m < min_samples_split or y_min == y_max:
            for i in range(start, end):
                row_value[pos[i]] = mean
            continue

        for i in range(d):
            perm[i] = i
        best_f = -1
        best_thr = 0.0
        best_gain = 0.0
        for j in range(m_sample):
            pick = j + np.random.randint(0, d - j)
            swap = perm[j]
            perm[j] = perm[pick]
            perm[pick] = swap
            f = perm[j]

            v_min = np.inf
            v_max = -np.inf
            for i in range(start, end):
                v = X[pos[i], f]
                if v < v_min:
                    v_min = v
                if v > v_max:
                    v_max = v
            if v_min == v_max:
                continue
            thr = np.random.uniform(v_min, v_max)
            s_left = 0.0
            n_left = 0
            for i in range(start, end):
                r = pos[i]
                if X[r, f] <= thr:
                    s_left += y[r]
                    n_left += 1
            n_right = m - n_left
            if n_left == 0 or n_right == 0:
                continue
            s_right = s - s_left
            g = s_left * s_left / n_left + s_right * s_right / n_right - s * s / m
            if g > best_gain:
                best_gain = g
                best_f = f
                best_thr = thr

        if best_f == -1:
            for i in range(start, end):
                row_value[pos[i]] = mean
            continue

        w = start
        t_count = 0
        for i in range(start, end):
            r = pos[i]
            if X[r, best_f] <= best_thr:
                pos[w] = r
                w += 1
            else:
                tmp[t_count] = r
                t_count += 1
        for i in range(t_count):
            pos[w + i] = tmp[i]
        n_left = w - start

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        gain_arr[node] = best_gain
        left[node] = lid
        right[node] = rid

        stack_node[top] = rid
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lid
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        gain_arr[:n_nodes],
        max_depth_reached,
        row_value,
    )


@njit(cache=True)
def hist_best_split(codes, n_bins, grad, pos, start, end, g_sum, lam,
                    min_child, hist_g, hist_n):
    """Best binned boundary for one leaf under the regularized gradient gain.

    Gain = G_l^2/(n_l+lam) + G_r^2/(n_r+lam) - G^2/(n+lam). Returns
    (gain, feature, bin); gain 0.0 means no admissible positive-gain split.
    """
    d = codes.shape[1]
    m = end - start
    parent = g_sum * g_sum / (m + lam)
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for f in range(d):
        nb = n_bins[f]
        if nb < 2:
            continue
        for b in range(nb):
            hist_g[f, b] = 0.0
            hist_n[f, b] = 0
        for i in range(start, end):
            r = pos[i]
            c = codes[r, f]
            hist_g[f, c] += grad[r]
            hist_n[f, c] += 1
        g_left = 0.0
        n_left = 0
        for b in range(nb - 1):
            g_left += hist_g[f, b]
            n_left += hist_n[f, b]
            n_right = m - n_left
            if n_left < min_child or n_right < min_child:
                continue
            g_right = g_sum - g_left
            gain = (
                g_left * g_left / (n_left + lam)
                + g_right * g_right / (n_right + lam)
                - parent
            )
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


@njit(cache=True)
def hist_fit_leafwise(codes, n_bins, grad, max_leaves, min_child_samples, lam):
    """Best-first histogram tree on gradients; thresholds returned as bin indices.

    Repeatedly splits the live leaf with the largest admissible gain until
    the leaf budget is hit or no leaf improves. Leaf output is
    -G/(n+lam). Ties in gain go to the earliest-created leaf.
    """
    n, d = codes.shape
    max_nodes = 2 * max_leaves + 1
    feature = np.full(max_nodes, LEAF, np.int64)
    thr_bin = np.full(max_nodes, -1, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    gain_arr = np.zeros(max_nodes, np.float64)
    row_value = np.zeros(n, np.float64)

    node_start = np.zeros(max_nodes, np.int64)
    node_end = np.zeros(max_nodes, np.int64)
    node_gsum = np.zeros(max_nodes, np.float64)
    node_depth = np.zeros(max_nodes, np.int64)
    cand_gain = np.zeros(max_nodes, np.float64)
    cand_f = np.full(max_nodes, -1, np.int64)
    cand_b = np.full(max_nodes, -1, np.int64)
    is_leaf = np.zeros(max_nodes, np.bool_)

    max_bins = 0
    for f in range(d):
        if n_bins[f] > max_bins:
            max_bins = n_bins[f]
    hist_g = np.zeros((d, max(max_bins, 1)), np.float64)
    hist_n = np.zeros((d, max(max_bins, 1)), np.int64)

    pos = np.arange(n)
    tmp = np.empty(n, np.int64)

    g_total = 0.0
    for i in range(n):
        g_total += grad[i]
    node_start[0] = 0
    node_end[0] = n
    node_gsum[0] = g_total
    node_depth[0] = 0
    is_leaf[0] = True
    g, f, b = hist_best_split(
        codes, n_bins, grad, pos, 0, n, g_total, lam, min_child_samples,
        hist_g, hist_n,
    )
    cand_gain[0] = g
    cand_f[0] = f
    cand_b[0] = b
    n_nodes = 1
    n_leaves = 1

    while n_leaves < max_leaves:
        pick = -1
        best = 0.0
        for node in range(n_nodes):
            if is_leaf[node] and cand_gain[node] > best:
                best = cand_gain[node]
                pick = node
        if pick == -1:
            break

        f = cand_f[pick]
        b = cand_b[pick]
        start = node_start[pick]
        end = node_end[pick]
        w = start
        t_count = 0
        for i in range(start, end):
            r = pos[i]
            if codes[r, f] <= b:
                pos[w] = r
                w += 1
            else:
                tmp[t_count] = r
                t_count += 1
        for i in range(t_count):
            pos[w + i] = tmp[i]
        mid = w

        g_left = 0.0
        for i in range(start, mid):
            g_left += grad[pos[i]]
        g_right = 0.0
        for i in range(mid, end):
            g_right += grad[pos[i]]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[pick] = f
        thr_bin[pick] = b
        gain_arr[pick] = cand_gain[pick]
        left[pick] = lid
        right[pick] = rid
        is_leaf[pick] = False

        node_start[lid] = start
        node_end[lid] = mid
        node_gsum[lid] = g_left
        node_depth[lid] = node_depth[pick] + 1
        is_leaf[lid] = True
        g, ff, bb = hist_best_split(
            codes, n_bins, grad, pos, start, mid, g_left, lam,
            min_child_samples, hist_g, hist_n,
        )
        cand_gain[lid] = g
        cand_f[lid] = ff
        cand_b[lid] = bb

        node_start[rid] = mid
        node_end[rid] = end
        node_gsum[rid] = g_right
        node_depth[rid] = node_depth[pick] + 1
        is_leaf[rid] = True
        g, ff, bb = hist_best_split(
            codes, n_bins, grad, pos, mid, end, g_right, lam,
            min_child_samples, hist_g, hist_n,
        )
        cand_gain[rid] = g
        cand_f[rid] = ff
        cand_b[rid] = bb

        n_leaves += 1

    max_depth_reached = 0
    for node in range(n_nodes):
        if is_leaf[node]:
            m = node_end[node] - node_start[node]
            out = -node_gsum[node] / (m + lam)
            value[node] = out
            for i in range(node_start[node], node_end[node]):
                row_value[pos[i]] = out
            if node_depth[node] > max_depth_reached:
                max_depth_reached = node_depth[node]

    return (
        feature[:n_nodes],
        thr_bin[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        gain_arr[:n_nodes],
        max_depth_reached,
        row_value,
    )


@njit(cache=True)
def predict_flat(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def accumulate_predict_flat(feature, threshold, left, right, value, X, out, scale):
    """out += scale * tree(X); avoids one temporary per boosting round."""
    n = X.shape[0]
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += scale * value[node]
