"""Compiled kernels for growing and evaluating regression trees.

Trees are stored as parallel arrays indexed by node id. ``feature[i] == -1``
marks a leaf; internal nodes send ``x[feature] <= threshold`` to ``left``.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def grow_tree(X, y, sample_idx, max_depth, min_samples_leaf, mtry, seed):
    np.random.seed(seed)
    n_total = sample_idx.shape[0]
    n_features = X.shape[1]
    capacity = 2 * n_total + 1

    feature = np.full(capacity, LEAF, dtype=np.int64)
    threshold = np.zeros(capacity, dtype=np.float64)
    left = np.full(capacity, -1, dtype=np.int64)
    right = np.full(capacity, -1, dtype=np.int64)
    value = np.zeros(capacity, dtype=np.float64)

    work = sample_idx.copy()
    xs = np.empty(n_total, dtype=np.float64)
    ys = np.empty(n_total, dtype=np.float64)

    # stack entries: node id, start, end, depth
    stack = np.empty((capacity, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_total
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        n = end - start

        total = 0.0
        y_min = np.inf
        y_max = -np.inf
        for i in range(start, end):
            yi = y[work[i]]
            total += yi
            if yi < y_min:
                y_min = yi
            if yi > y_max:
                y_max = yi
        value[node] = total / n

        if n < 2 * min_samples_leaf or y_min == y_max:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        parent_score = total * total / n
        best_score = parent_score + 1e-12 * abs(parent_score)
        best_feature = -1
        best_threshold = 0.0
        visited = 0
        order_f = np.random.permutation(n_features)
        for fi in range(n_features):
            if visited >= mtry:
                break
            f = order_f[fi]
            for i in range(n):
                xs[i] = X[work[start + i], f]
            order = np.argsort(xs[:n], kind="mergesort")
            if xs[order[0]] == xs[order[n - 1]]:
                continue
            visited += 1
            for i in range(n):
                ys[i] = y[work[start + order[i]]]
            s_left = 0.0
            for i in range(n - 1):
                s_left += ys[i]
                n_left = i + 1
                n_right = n - n_left
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if a == b:
                    continue
                if n_left < min_samples_leaf or n_right < min_samples_leaf:
                    continue
                s_right = total - s_left
                score = s_left * s_left / n_left + s_right * s_right / n_right
                if score > best_score or (
                    best_feature >= 0 and score == best_score and f < best_feature
                ):
                    best_score = score
                    best_feature = f
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    best_threshold = thr

        if best_feature < 0:
            continue

        # partition work[start:end] in place
        i = start
        j = end - 1
        while i <= j:
            if X[work[i], best_feature] <= best_threshold:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_feature
        threshold[node] = best_threshold
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left[node] = left_id
        right[node] = right_id

        stack[top, 0] = right_id
        stack[top, 1] = mid
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = mid
        stack[top, 3] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True)
def predict_tree(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@njit(cache=True)
def predict_packed(offsets, feature, threshold, left, right, value, X):
    """Mean prediction of all trees packed back to back (child ids are local)."""
    n_trees = offsets.shape[0] - 1
    out = np.zeros(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] != LEAF:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[r] = acc / n_trees
    return out
