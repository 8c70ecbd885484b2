"""Compiled inner loops shared by the tree and SVM trainers.

Everything here is deterministic: randomness comes from an explicit
splitmix64 stream passed in by the caller, never from global state, so
results do not depend on thread scheduling. All functions release the GIL.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

_SPLITMIX_GAMMA = uint64(0x9E3779B97F4A7C15)
_MIX1 = uint64(0xBF58476D1CE4E5B9)
_MIX2 = uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    state[0] = state[0] + _SPLITMIX_GAMMA
    z = state[0]
    z = (z ^ (z >> uint64(30))) * _MIX1
    z = (z ^ (z >> uint64(27))) * _MIX2
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _rand_below(state, n):
    # unbiased uniform draw in [0, n) via rejection of the top remainder
    nn = uint64(n)
    threshold = (uint64(0) - nn) % nn
    while True:
        r = _next_u64(state)
        if r >= threshold:
            return r % nn


@njit(cache=True, nogil=True)
def bootstrap_draw(state, n, out):
    for k in range(n):
        out[k] = np.int64(_rand_below(state, n))


# ---------------------------------------------------------------------------
# CART split search and tree construction
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def split_scan(vals, lab01, w, wp_tot, wn_tot):
    """Scan all midpoint thresholds of one feature over one node pool.

    Returns (expected_impurity, threshold, found). Probabilities are
    weighted fractions of the pool; candidate thresholds sit halfway
    between consecutive distinct sorted values. Ties on the objective keep
    the lowest threshold (strict improvement required to switch).
    """
    n = vals.shape[0]
    order = np.argsort(vals, kind="mergesort")
    total = wp_tot + wn_tot
    best_e = np.inf
    best_t = 0.0
    found = False
    wp = 0.0
    wn = 0.0
    for k in range(n - 1):
        o = order[k]
        if lab01[o] == 1:
            wp += w[o]
        else:
            wn += w[o]
        v0 = vals[o]
        v1 = vals[order[k + 1]]
        if v1 <= v0:
            continue
        wl = wp + wn
        wr = total - wl
        wpr = wp_tot - wp
        wnr = wn_tot - wn
        gl = 1.0 - (wp / wl) * (wp / wl) - (wn / wl) * (wn / wl)
        gr = 1.0 - (wpr / wr) * (wpr / wr) - (wnr / wr) * (wnr / wr)
        e = (wl / total) * gl + (wr / total) * gr
        if e < best_e:
            best_e = e
            best_t = 0.5 * (v0 + v1)
            found = True
    return best_e, best_t, found


@njit(cache=True, nogil=True)
def build_tree(
    X,
    lab01,
    w,
    sample_idx,
    max_depth,
    min_impurity,
    min_pool,
    mtry,
    rng_state,
    use_sampling,
):
    """Grow one CART tree over `X[sample_idx]` and return it as flat arrays.

    Node layout: `feature[k] < 0` marks a leaf. `pred` holds the weighted
    majority class of every node (the prediction at leaves, the dominant
    class elsewhere); ties go to +1. `child_e` is the expected child
    impurity chosen at a split, used later for importance scores.
    """
    n_total = sample_idx.shape[0]
    d = X.shape[1]
    cap = 2 * n_total + 1
    if max_depth < 30:
        depth_cap = (1 << (max_depth + 1)) - 1
        if depth_cap < cap:
            cap = depth_cap
    if cap < 1:
        cap = 1

    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    pred = np.zeros(cap, np.int64)
    n_node = np.zeros(cap, np.int64)
    np_cnt = np.zeros(cap, np.int64)
    wp_arr = np.zeros(cap, np.float64)
    wn_arr = np.zeros(cap, np.float64)
    impurity = np.zeros(cap, np.float64)
    child_e = np.zeros(cap, np.float64)

    indices = sample_idx.copy()
    scratch = np.empty(n_total, np.int64)
    vals_buf = np.empty(n_total, np.float64)
    feat_ids = np.arange(d)

    # DFS stack of (slot, start, end, depth); left child pushed last so the
    # produced node numbering is stable pre-order.
    stack_slot = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_slot[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_total
    stack_depth[0] = 0
    top = 1
    next_slot = 1

    while top > 0:
        top -= 1
        slot = stack_slot[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        n = hi - lo

        wp = 0.0
        wn = 0.0
        npos = 0
        for k in range(lo, hi):
            s = indices[k]
            if lab01[s] == 1:
                wp += w[s]
                npos += 1
            else:
                wn += w[s]
        total = wp + wn
        g = 1.0 - (wp / total) * (wp / total) - (wn / total) * (wn / total)

        n_node[slot] = n
        np_cnt[slot] = npos
        wp_arr[slot] = wp
        wn_arr[slot] = wn
        impurity[slot] = g
        pred[slot] = 1 if wp >= wn else -1

        if depth >= max_depth or n < min_pool or n < 2 or g <= min_impurity:
            continue

        # candidate features, ascending id for deterministic tie-breaks
        if use_sampling and mtry < d:
            for k in range(mtry):
                r = np.int64(_rand_below(rng_state, d - k)) + k
                tmp = feat_ids[k]
                feat_ids[k] = feat_ids[r]
                feat_ids[r] = tmp
            for a in range(1, mtry):
                key = feat_ids[a]
                b = a - 1
                while b >= 0 and feat_ids[b] > key:
                    feat_ids[b + 1] = feat_ids[b]
                    b -= 1
                feat_ids[b + 1] = key
            n_cand = mtry
        else:
            for k in range(d):
                feat_ids[k] = k
            n_cand = d

        best_e = np.inf
        best_f = -1
        best_t = 0.0
        for c in range(n_cand):
            f = feat_ids[c]
            for k in range(lo, hi):
                vals_buf[k - lo] = X[indices[k], f]
            sub_vals = vals_buf[:n]
            order = np.argsort(sub_vals, kind="mergesort")
            wpl = 0.0
            wnl = 0.0
            for k in range(n - 1):
                s = indices[lo + order[k]]
                if lab01[s] == 1:
                    wpl += w[s]
                else:
                    wnl += w[s]
                v0 = sub_vals[order[k]]
                v1 = sub_vals[order[k + 1]]
                if v1 <= v0:
                    continue
                wl = wpl + wnl
                wr = total - wl
                wpr = wp - wpl
                wnr = wn - wnl
                gl = 1.0 - (wpl / wl) * (wpl / wl) - (wnl / wl) * (wnl / wl)
                gr = 1.0 - (wpr / wr) * (wpr / wr) - (wnr / wr) * (wnr / wr)
                e = (wl / total) * gl + (wr / total) * gr
                if e < best_e:
                    best_e = e
                    best_f = f
                    best_t = 0.5 * (v0 + v1)

        if best_f < 0 or best_e >= g:
            continue

        # stable partition: pool rows with value <= threshold go left
        n_left = 0
        for k in range(lo, hi):
            if X[indices[k], best_f] <= best_t:
                scratch[n_left] = indices[k]
                n_left += 1
        n_right = 0
        for k in range(lo, hi):
            if X[indices[k], best_f] > best_t:
                scratch[n_left + n_right] = indices[k]
                n_right += 1
        for k in range(n):
            indices[lo + k] = scratch[k]

        feature[slot] = best_f
        threshold[slot] = best_t
        child_e[slot] = best_e
        l_slot = next_slot
        r_slot = next_slot + 1
        next_slot += 2
        left[slot] = l_slot
        right[slot] = r_slot

        stack_slot[top] = r_slot
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_slot[top] = l_slot
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:next_slot].copy(),
        threshold[:next_slot].copy(),
        left[:next_slot].copy(),
        right[:next_slot].copy(),
        pred[:next_slot].copy(),
        n_node[:next_slot].copy(),
        np_cnt[:next_slot].copy(),
        wp_arr[:next_slot].copy(),
        wn_arr[:next_slot].copy(),
        impurity[:next_slot].copy(),
        child_e[:next_slot].copy(),
    )


@njit(cache=True, nogil=True)
def build_forest(
    X,
    lab01,
    w,
    n_tree,
    max_depth,
    min_impurity,
    min_pool,
    mtry,
    use_sampling,
    bootstrap,
    seeds,
    retries,
):
    """Grow a whole forest in one call: per-tree bootstrap draws (retried a
    bounded number of times if a draw is single-class) and per-tree build
    streams, all from the caller-provided seed pairs. Returns the member
    trees concatenated with an offsets array; `failed_tree` is -1 on
    success, else the index of the tree whose draws kept collapsing.
    """
    n = X.shape[0]
    cap = 2 * n + 1
    if max_depth < 30:
        depth_cap = (1 << (max_depth + 1)) - 1
        if depth_cap < cap:
            cap = depth_cap
    total_cap = n_tree * cap

    feature = np.empty(total_cap, np.int64)
    threshold = np.empty(total_cap, np.float64)
    left = np.empty(total_cap, np.int64)
    right = np.empty(total_cap, np.int64)
    pred = np.empty(total_cap, np.int64)
    n_node = np.empty(total_cap, np.int64)
    np_cnt = np.empty(total_cap, np.int64)
    wp = np.empty(total_cap, np.float64)
    wn = np.empty(total_cap, np.float64)
    impurity = np.empty(total_cap, np.float64)
    child_e = np.empty(total_cap, np.float64)
    offsets = np.zeros(n_tree + 1, np.int64)

    idx = np.empty(n, np.int64)
    boot_state = np.zeros(1, np.uint64)
    feat_state = np.zeros(1, np.uint64)
    pos = 0
    failed_tree = -1
    for t in range(n_tree):
        if bootstrap:
            boot_state[0] = seeds[2 * t]
            ok = False
            for _ in range(retries):
                bootstrap_draw(boot_state, n, idx)
                has_pos = False
                has_neg = False
                for k in range(n):
                    if lab01[idx[k]] == 1:
                        has_pos = True
                    else:
                        has_neg = True
                if has_pos and has_neg:
                    ok = True
                    break
            if not ok:
                failed_tree = t
                break
        else:
            for k in range(n):
                idx[k] = k
        feat_state[0] = seeds[2 * t + 1]
        out = build_tree(
            X, lab01, w, idx, max_depth, min_impurity, min_pool, mtry, feat_state, use_sampling
        )
        size = out[0].shape[0]
        feature[pos : pos + size] = out[0]
        threshold[pos : pos + size] = out[1]
        left[pos : pos + size] = out[2]
        right[pos : pos + size] = out[3]
        pred[pos : pos + size] = out[4]
        n_node[pos : pos + size] = out[5]
        np_cnt[pos : pos + size] = out[6]
        wp[pos : pos + size] = out[7]
        wn[pos : pos + size] = out[8]
        impurity[pos : pos + size] = out[9]
        child_e[pos : pos + size] = out[10]
        pos += size
        offsets[t + 1] = pos

    return (
        feature[:pos].copy(),
        threshold[:pos].copy(),
        left[:pos].copy(),
        right[:pos].copy(),
        pred[:pos].copy(),
        n_node[:pos].copy(),
        np_cnt[:pos].copy(),
        wp[:pos].copy(),
        wn[:pos].copy(),
        impurity[:pos].copy(),
        child_e[:pos].copy(),
        offsets,
        failed_tree,
    )


@njit(cache=True, nogil=True)
def forest_vote(feature, threshold, left, right, pred, offsets, x):
    """Sum of member-tree votes (each ±1) for one sample. Child slots are
    tree-local, so they are rebased onto the concatenated arrays."""
    vote = 0
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        node = base
        while feature[node] >= 0:
            if x[feature[node]] <= threshold[node]:
                node = base + left[node]
            else:
                node = base + right[node]
        vote += pred[node]
    return vote


@njit(cache=True, nogil=True)
def tree_descend(feature, threshold, left, right, pred, x):
    node = 0
    while feature[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return pred[node]


@njit(cache=True, nogil=True)
def tree_predict_batch(feature, threshold, left, right, pred, X, out):
    for r in range(X.shape[0]):
        out[r] = tree_descend(feature, threshold, left, right, pred, X[r])


# ---------------------------------------------------------------------------
# SMO dual solver
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def smo_solve(K, y, C, tol, max_passes, record_trace):
    """Pairwise coordinate ascent on the box-constrained soft-margin dual.

    Each step picks the maximal violating pair (largest gap between the
    ascent candidates above and below the current bias window), solves the
    two-variable subproblem analytically, and updates the margin cache
    `u[t] = sum_j alpha_j y_j K[j, t]`. Terminates when the violating gap
    drops below `tol` or after `max_passes` pair updates.

    Returns (alpha, u, gap, steps, converged, objective_trace).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    u = np.zeros(n)
    trace = np.empty(max_passes if record_trace else 0, np.float64)
    obj = 0.0
    steps = 0
    gap = 0.0
    converged = False

    while True:
        m_val = -np.inf
        M_val = np.inf
        i = -1
        j = -1
        for t in range(n):
            g = y[t] - u[t]
            up = (y[t] > 0.0 and alpha[t] < C[t]) or (y[t] < 0.0 and alpha[t] > 0.0)
            lo = (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C[t])
            if up and g > m_val:
                m_val = g
                i = t
            if lo and g < M_val:
                M_val = g
                j = t
        if i < 0 or j < 0:
            gap = 0.0
            converged = True
            break
        gap = m_val - M_val
        if gap < tol:
            converged = True
            break
        if steps >= max_passes:
            break

        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < 1e-12:
            eta = 1e-12
        # step along (alpha_i += y_i*lam, alpha_j -= y_j*lam), which keeps
        # sum(alpha*y) constant; initial ascent slope is the violating gap
        lam = gap / eta
        bound_i = (C[i] - alpha[i]) if y[i] > 0.0 else alpha[i]
        bound_j = alpha[j] if y[j] > 0.0 else (C[j] - alpha[j])
        if bound_i < lam:
            lam = bound_i
        if bound_j < lam:
            lam = bound_j
        if lam <= 0.0:
            break
        # a binding variable lands exactly on its bound, so no float dust
        # accretes there to stall later steps
        if lam == bound_i:
            ai_new = C[i] if y[i] > 0.0 else 0.0
        else:
            ai_new = alpha[i] + y[i] * lam
        if lam == bound_j:
            aj_new = 0.0 if y[j] > 0.0 else C[j]
        else:
            aj_new = alpha[j] - y[j] * lam
        d_i = ai_new - alpha[i]
        d_j = aj_new - alpha[j]

        if record_trace:
            d_obj = (
                (d_i + d_j)
                - (d_i * y[i] * u[i] + d_j * y[j] * u[j])
                - 0.5
                * (
                    d_i * d_i * K[i, i]
                    + d_j * d_j * K[j, j]
                    + 2.0 * d_i * d_j * y[i] * y[j] * K[i, j]
                )
            )
            obj += d_obj
            trace[steps] = obj

        alpha[i] = ai_new
        alpha[j] = aj_new
        ci = d_i * y[i]
        cj = d_j * y[j]
        for t in range(n):
            u[t] += ci * K[i, t] + cj * K[j, t]
        steps += 1

    if gap < 0.0:
        gap = 0.0
    return alpha, u, gap, steps, converged, trace[:steps].copy()
