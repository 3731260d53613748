"""Tree learners shared by the GAM booster, the forest imputer and the spike audit.

* :func:`fit_regression_tree` -- greedy weighted variance-reduction tree.
  Multi-output targets are allowed; with one-hot targets the gain equals the
  Gini decrease, which is how forests classify.
* :func:`fit_binned_tree` -- the same algorithm specialised to one ordinal
  feature whose rows were pre-aggregated into bins (the GAM base learner).
* :func:`fit_random_forest` / :func:`predict_forest`.
* :func:`fit_isolation_forest` / :func:`anomaly_score`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import digamma

from .errors import DataError

LEAF = -1
_EULER = 0.5772156649015329


# ----------------------------------------------------------------------------- regression tree


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree.

    ``feature[i] == -1`` marks a leaf. Numeric splits send ``x <= threshold``
    left; categorical splits send codes in ``category_sets[i]`` left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    category_sets: dict
    max_depth: int | None
    single_output: bool = True

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def height(self) -> int:
        return int(self.depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.category_sets:
            return _apply_kernel(self.feature, self.threshold, self.left, self.right, X)
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            f = self.feature[node]
            if f == LEAF or rows.size == 0:
                out[rows] = node
                continue
            x = X[rows, f]
            if node in self.category_sets:
                go_left = np.isin(x, self.category_sets[node])
            else:
                go_left = x <= self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        vals = self.value[self.apply(X)]
        return vals[:, 0] if self.single_output else vals


@njit(cache=True)
def _apply_kernel(feature, threshold, left, right, X):  # pragma: no cover - compiled
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            node = left[node] if X[i, feature[node]] <= threshold[node] else right[node]
        out[i] = node
    return out


def _prepare(X, targets, weights, counts):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(targets, dtype=np.float64)
    single = Y.ndim == 1
    if single:
        Y = Y[:, None]
    n = X.shape[0]
    if n == 0:
        raise DataError("cannot fit a tree on empty input")
    if X.shape[1] == 0:
        raise DataError("feature matrix has no columns")
    if Y.shape[0] != n:
        raise DataError("X and targets differ in length")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    c = np.ones(n) if counts is None else np.asarray(counts, dtype=np.float64)
    if w.shape != (n,) or c.shape != (n,):
        raise DataError("weights/counts must have one entry per row")
    return X, Y, w, c, single


def _best_numeric_split(x, Y, w, c, min_leaf):
    """Best split of one node along one numeric column.

    Returns ``(gain, threshold)`` with gain -inf when no valid split exists.
    The first maximal position wins, i.e. the lowest threshold.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = w[order]
    cw = np.cumsum(ws)
    cs = np.cumsum(ws[:, None] * Y[order], axis=0)
    cc = np.cumsum(c[order])
    W, S, C = cw[-1], cs[-1], cc[-1]
    wl, sl, cl = cw[:-1], cs[:-1], cc[:-1]
    wr, sr = W - wl, S - sl
    valid = (xs[:-1] < xs[1:]) & (cl >= min_leaf) & (C - cl >= min_leaf) & (wl > 0) & (wr > 0)
    if not valid.any():
        return -math.inf, 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (sl**2).sum(1) / wl + (sr**2).sum(1) / wr - (S**2).sum() / W
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] <= thr < xs[i + 1]:
        thr = xs[i]
    return float(gain[i]), float(thr)


def _best_categorical_split(x, Y, w, c, min_leaf):
    """Order categories by mean target, then split the ordering like a numeric column."""
    cats, inv = np.unique(x, return_inverse=True)
    if cats.size < 2:
        return -math.inf, None
    W = np.bincount(inv, weights=w)
    C = np.bincount(inv, weights=c)
    S = np.stack([np.bincount(inv, weights=w * Y[:, k]) for k in range(Y.shape[1])], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = S / W[:, None]
    # Multi-output: rank by the output with the largest spread across categories.
    k = int(np.argmax(np.nan_to_num(means).var(axis=0))) if Y.shape[1] > 1 else 0
    rank = np.argsort(np.nan_to_num(means[:, k]), kind="stable")
    gain, thr = _best_numeric_split(np.argsort(rank).astype(float)[inv], Y, w, c, min_leaf)
    if gain == -math.inf:
        return gain, None
    left = frozenset(cats[rank[: int(math.floor(thr)) + 1]].tolist())
    return gain, left


def fit_regression_tree(
    X: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    max_depth: int | None = 3,
    min_leaf: int = 2,
    counts: np.ndarray | None = None,
    categorical: Sequence[int] = (),
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> RegressionTree:
    """Grow a greedy variance-reduction tree.

    Leaf values are weighted target means. ``counts`` gives the multiplicity
    of each row (rows may be pre-aggregated) and is what ``min_leaf`` is
    checked against. ``max_depth=None`` grows until leaves are pure or too
    small. With ``max_features`` set, each node examines that many features
    drawn from ``rng`` (random-forest style).

    Ties in gain go to the lowest feature index, then the lowest threshold.
    """
    if max_depth is not None and max_depth < 1:
        raise DataError(f"max_depth must be >= 1, got {max_depth}")
    X, Y, w, c, single = _prepare(X, targets, weights, counts)
    n, p = X.shape
    cat = set(int(j) for j in categorical)
    if max_features is not None and not 1 <= max_features <= p:
        raise DataError(f"max_features must be in [1, {p}]")
    if max_features is not None and max_features < p and rng is None:
        raise DataError("feature subsampling needs an rng")

    feature, threshold, left, right, value, depth = [], [], [], [], [], []
    category_sets: dict[int, frozenset] = {}

    def new_node(rows, d):
        ww = w[rows]
        W = ww.sum()
        v = (ww[:, None] * Y[rows]).sum(0) / W if W > 0 else Y[rows].mean(0)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(v)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(np.arange(n), 0), np.arange(n), 0)]
    while stack:
        node, rows, d = stack.pop()
        if max_depth is not None and d >= max_depth:
            continue
        if c[rows].sum() < 2 * min_leaf or rows.size < 2:
            continue
        ww = w[rows]
        Yr = Y[rows]
        W = ww.sum()
        if W <= 0:
            continue
        S = (ww[:, None] * Yr).sum(0)
        ss = (ww[:, None] * Yr**2).sum()
        sse = ss - (S**2).sum() / W
        if sse <= 1e-12 * ss + 1e-300:
            continue
        feats = np.arange(p) if max_features is None or max_features == p else np.sort(
            rng.choice(p, size=max_features, replace=False)
        )
        best = (-math.inf, -1, 0.0, None)
        for f in feats:
            x = X[rows, f]
            if f in cat:
                gain, cset = _best_categorical_split(x, Yr, ww, c[rows], min_leaf)
                thr = 0.0
            else:
                gain, thr = _best_numeric_split(x, Yr, ww, c[rows], min_leaf)
                cset = None
            if gain > best[0]:
                best = (gain, int(f), thr, cset)
        gain, f, thr, cset = best
        if f < 0 or not gain > 1e-10 * sse:
            continue
        x = X[rows, f]
        go_left = np.isin(x, list(cset)) if cset is not None else x <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = thr
        if cset is not None:
            category_sets[node] = np.array(sorted(cset), dtype=np.float64)
        li = new_node(lrows, d + 1)
        ri = new_node(rrows, d + 1)
        left[node], right[node] = li, ri
        stack.append((ri, rrows, d + 1))
        stack.append((li, lrows, d + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        depth=np.array(depth, dtype=np.int64),
        category_sets=category_sets,
        max_depth=max_depth,
        single_output=single,
    )


def _grow_numeric_tree(X, Y, w, c, max_depth, min_leaf, max_features, seed, single):
    """Compiled equivalent of :func:`fit_regression_tree` for numeric columns.

    With ``max_features`` below the column count the per-node feature draws
    come from a stream seeded by ``seed`` instead of a numpy Generator.
    """
    out = _grow_tree_kernel(X, Y, w, c, -1 if max_depth is None else int(max_depth), float(min_leaf),
                            int(max_features), int(seed))
    feature, threshold, left, right, value, depth = out
    return RegressionTree(feature, threshold, left, right, value, depth, {}, max_depth, single)


@njit(cache=True)
def _grow_tree_kernel(X, Y, w, c, max_depth, min_leaf, mtry, seed):  # pragma: no cover - compiled
    np.random.seed(seed)
    n, p = X.shape
    k = Y.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, k))
    depth = np.zeros(cap, np.int64)
    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    perm = np.arange(p)
    feats = np.empty(mtry, np.int64)
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    sl = np.empty(k)
    S = np.empty(k)

    def set_value(node, lo, hi):
        W = 0.0
        for j in range(k):
            S[j] = 0.0
        for t in range(lo, hi):
            r = idx[t]
            W += w[r]
            for j in range(k):
                S[j] += w[r] * Y[r, j]
        for j in range(k):
            if W > 0:
                value[node, j] = S[j] / W
            else:
                acc = 0.0
                for t in range(lo, hi):
                    acc += Y[idx[t], j]
                value[node, j] = acc / (hi - lo)

    n_nodes = 1
    set_value(0, 0, n)
    top = 1
    st_node[0], st_lo[0], st_hi[0] = 0, 0, n
    while top > 0:
        top -= 1
        node, lo, hi = st_node[top], st_lo[top], st_hi[top]
        d = depth[node]
        if max_depth >= 0 and d >= max_depth:
            continue
        m = hi - lo
        C = 0.0
        W = 0.0
        ss = 0.0
        for j in range(k):
            S[j] = 0.0
        for t in range(lo, hi):
            r = idx[t]
            C += c[r]
            W += w[r]
            for j in range(k):
                S[j] += w[r] * Y[r, j]
                ss += w[r] * Y[r, j] ** 2
        if C < 2 * min_leaf or m < 2 or W <= 0:
            continue
        s2 = 0.0
        for j in range(k):
            s2 += S[j] ** 2
        sse = ss - s2 / W
        if sse <= 1e-12 * ss + 1e-300:
            continue
        if mtry < p:
            for a in range(mtry):
                b = a + np.random.randint(0, p - a)
                perm[a], perm[b] = perm[b], perm[a]
            feats[:] = np.sort(perm[:mtry])
            for a in range(p):
                perm[a] = a
        else:
            for a in range(p):
                feats[a] = a
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        for f in feats:
            xs = np.empty(m)
            for t in range(m):
                xs[t] = X[idx[lo + t], f]
            order = np.argsort(xs, kind="mergesort")
            wl = 0.0
            cl = 0.0
            for j in range(k):
                sl[j] = 0.0
            for t in range(m - 1):
                r = idx[lo + order[t]]
                wl += w[r]
                cl += c[r]
                for j in range(k):
                    sl[j] += w[r] * Y[r, j]
                x0 = xs[order[t]]
                x1 = xs[order[t + 1]]
                wr = W - wl
                if not (x0 < x1 and cl >= min_leaf and C - cl >= min_leaf and wl > 0 and wr > 0):
                    continue
                a2 = 0.0
                b2 = 0.0
                for j in range(k):
                    a2 += sl[j] ** 2
                    b2 += (S[j] - sl[j]) ** 2
                gain = a2 / wl + b2 / wr - s2 / W
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (x0 + x1)
                    if not (x0 <= thr and thr < x1):
                        thr = x0
                    best_thr = thr
        if best_f < 0 or not best_gain > 1e-10 * sse:
            continue
        nl = 0
        for t in range(lo, hi):
            if X[idx[t], best_f] <= best_thr:
                nl += 1
        a = lo
        b = lo + nl
        for t in range(lo, hi):
            r = idx[t]
            if X[r, best_f] <= best_thr:
                buf[a] = r
                a += 1
            else:
                buf[b] = r
                b += 1
        for t in range(lo, hi):
            idx[t] = buf[t]
        feature[node] = best_f
        threshold[node] = best_thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        depth[li] = d + 1
        depth[ri] = d + 1
        set_value(li, lo, lo + nl)
        set_value(ri, lo + nl, hi)
        left[node] = li
        right[node] = ri
        st_node[top], st_lo[top], st_hi[top] = ri, lo + nl, hi
        top += 1
        st_node[top], st_lo[top], st_hi[top] = li, lo, lo + nl
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), depth[:n_nodes].copy())


def fit_binned_tree(
    grad_sums: np.ndarray,
    hess_sums: np.ndarray,
    counts: np.ndarray,
    max_depth: int = 3,
    min_leaf: int = 2,
) -> np.ndarray:
    """Depth-limited tree over bins already sorted along one ordinal axis.

    Bin ``k`` carries target ``grad_sums[k] / hess_sums[k]`` with weight
    ``hess_sums[k]`` and multiplicity ``counts[k]``; the result equals
    :func:`fit_regression_tree` on those aggregated rows (occupied bins only)
    evaluated at every bin position, so empty bins take the value of the leaf
    their position falls into.
    """
    if max_depth < 1:
        raise DataError(f"max_depth must be >= 1, got {max_depth}")
    return _binned_tree_kernel(
        np.ascontiguousarray(grad_sums, dtype=np.float64),
        np.ascontiguousarray(hess_sums, dtype=np.float64),
        np.ascontiguousarray(counts, dtype=np.float64),
        int(max_depth),
        float(min_leaf),
    )


@njit(cache=True)
def _binned_tree_kernel(G, H, C, max_depth, min_leaf):  # pragma: no cover - compiled
    nb = G.shape[0]
    out = np.zeros(nb)
    # explicit stack of [lo, hi) segments with their depth
    stack_lo = np.empty(2 * max_depth + 2, np.int64)
    stack_hi = np.empty(2 * max_depth + 2, np.int64)
    stack_d = np.empty(2 * max_depth + 2, np.int64)
    top = 0
    stack_lo[0], stack_hi[0], stack_d[0] = 0, nb, 0
    top = 1
    occ = np.empty(nb, np.int64)
    while top > 0:
        top -= 1
        lo, hi, d = stack_lo[top], stack_hi[top], stack_d[top]
        Wt = 0.0
        St = 0.0
        Ct = 0.0
        ss = 0.0
        m = 0
        for k in range(lo, hi):
            Wt += H[k]
            St += G[k]
            Ct += C[k]
            if C[k] > 0:
                occ[m] = k
                m += 1
                if H[k] > 0:
                    ss += G[k] * G[k] / H[k]
        leaf = St / Wt if Wt > 0 else 0.0
        split = False
        best_gain = -np.inf
        best_i = -1
        if d < max_depth and Ct >= 2 * min_leaf and m >= 2 and Wt > 0:
            sse = ss - St * St / Wt
            if sse > 1e-12 * ss + 1e-300:
                cw = 0.0
                cs = 0.0
                cc = 0.0
                prev = lo
                for i in range(m - 1):
                    k_end = occ[i]
                    for k in range(prev, k_end + 1):
                        cw += H[k]
                        cs += G[k]
                        cc += C[k]
                    prev = k_end + 1
                    wr = Wt - cw
                    if cc >= min_leaf and Ct - cc >= min_leaf and cw > 0 and wr > 0:
                        sr = St - cs
                        gain = cs * cs / cw + sr * sr / wr - St * St / Wt
                        if gain > best_gain:
                            best_gain = gain
                            best_i = i
                if best_i >= 0 and best_gain > 1e-10 * sse:
                    split = True
        if not split:
            for k in range(lo, hi):
                out[k] = leaf
            continue
        cut = (occ[best_i] + occ[best_i + 1]) // 2 + 1
        stack_lo[top], stack_hi[top], stack_d[top] = cut, hi, d + 1
        top += 1
        stack_lo[top], stack_hi[top], stack_d[top] = lo, cut, d + 1
        top += 1
    return out


@njit(cache=True)
def gradient_histogram(bins, y, score, w, n_bins, logistic):  # pragma: no cover - compiled
    """Per-bin sums of gradient, hessian and weight for one feature.

    Identity link: gradient = residual, hessian = 1. Logistic link:
    gradient = y - p, hessian = p(1 - p), with p clipped to [1e-6, 1 - 1e-6].
    Everything is multiplied by the row weight ``w``.
    """
    G = np.zeros(n_bins)
    H = np.zeros(n_bins)
    C = np.zeros(n_bins)
    for i in range(bins.shape[0]):
        wi = w[i]
        if wi == 0.0:
            continue
        b = bins[i]
        if logistic:
            p = 1.0 / (1.0 + np.exp(-score[i]))
            if p < 1e-6:
                p = 1e-6
            elif p > 1.0 - 1e-6:
                p = 1.0 - 1e-6
            G[b] += wi * (y[i] - p)
            H[b] += wi * p * (1.0 - p)
        else:
            G[b] += wi * (y[i] - score[i])
            H[b] += wi
        C[b] += wi
    return G, H, C


# ----------------------------------------------------------------------------- random forest


@dataclass(frozen=True, eq=False)
class RandomForest:
    trees: tuple[RegressionTree, ...]
    classes: np.ndarray | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def is_classifier(self) -> bool:
        return self.classes is not None


def tree_seed(seed: int, index: int) -> np.random.Generator:
    """Independent stream for ensemble member ``index``."""
    return np.random.default_rng([int(seed), int(index)])


def fit_random_forest(
    X: np.ndarray,
    targets: np.ndarray,
    n_trees: int = 100,
    mtry: int | None = None,
    subsample: float | None = 1.0,
    seed: int = 0,
    max_depth: int | None = None,
    min_leaf: int = 1,
    categorical: Sequence[int] = (),
    classification: bool = False,
) -> RandomForest:
    """Bagged random-feature trees.

    ``subsample`` is the bootstrap size as a fraction of n; ``None`` uses
    every row once (no resampling). ``mtry`` defaults to ``floor(sqrt(p))``.
    Classification one-hot encodes the labels; trees then vote by majority.
    Forests without categorical columns use a compiled tree builder; it
    draws per-node features from its own seeded stream.
    """
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise DataError("random forest needs a 2-D feature matrix with at least one column")
    n, p = X.shape
    mtry = max(1, int(math.sqrt(p))) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise DataError(f"mtry must be in [1, {p}], got {mtry}")
    y = np.asarray(targets)
    classes = None
    if classification:
        classes, codes = np.unique(y, return_inverse=True)
        Y = np.eye(classes.size)[codes]
    else:
        Y = y.astype(np.float64)
    trees = []
    for t in range(n_trees):
        rng = tree_seed(seed, t)
        if subsample is None:
            rows = np.arange(n)
        else:
            m = max(1, int(round(subsample * n)))
            rows = rng.integers(0, n, size=m)
        if categorical:
            tree = fit_regression_tree(
                X[rows], Y[rows], max_depth=max_depth, min_leaf=min_leaf,
                categorical=categorical, max_features=mtry, rng=rng,
            )
        else:
            Yr = Y[rows]
            tree = _grow_numeric_tree(
                np.ascontiguousarray(X[rows]), np.ascontiguousarray(Yr if Yr.ndim == 2 else Yr[:, None]),
                np.ones(rows.size), np.ones(rows.size), max_depth, min_leaf, mtry,
                int(rng.integers(0, 2**31 - 1)), Yr.ndim == 1,
            )
        trees.append(tree)
    return RandomForest(tuple(trees), classes)


def predict_forest_proba(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """Averaged class frequencies (classifier) or averaged predictions."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = None
    for tree in forest.trees:
        pred = tree.predict(X)
        total = pred if total is None else total + pred
    return total / forest.n_trees


def predict_forest(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """Mean of tree predictions, or the majority class vote for classifiers.

    A single 1-D row returns a scalar-shaped array of length 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not forest.is_classifier:
        return predict_forest_proba(forest, X)
    votes = np.zeros((X.shape[0], forest.classes.size))
    rows = np.arange(X.shape[0])
    for tree in forest.trees:
        votes[rows, np.argmax(tree.predict(X), axis=1)] += 1
    return forest.classes[np.argmax(votes, axis=1)]


# ----------------------------------------------------------------------------- isolation forest


def harmonic(n: float) -> float:
    """H(n) = 1 + 1/2 + ... + 1/n, exact at integers via the digamma identity."""
    return float(digamma(n + 1.0) + _EULER)


def average_path_length(n: float) -> float:
    """c(n): mean unsuccessful-search depth of a BST on n keys (0 for n <= 1)."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n


@dataclass(frozen=True, eq=False)
class IsolationTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def height(self) -> int:
        return int(self.depth.max())

    def path_length(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f == LEAF:
                out[rows] = self.depth[node] + average_path_length(self.size[node])
                continue
            go_left = X[rows, f] < self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out


@dataclass(frozen=True, eq=False)
class IsolationForest:
    trees: tuple[IsolationTree, ...]
    n_trees: int
    subsample_size: int
    seed: int
    n_features: int = 1

    @property
    def height_limit(self) -> int:
        return int(math.ceil(math.log2(self.subsample_size))) if self.subsample_size > 1 else 0


def _grow_isolation_tree(X: np.ndarray, limit: int, rng: np.random.Generator) -> IsolationTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(m, d):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        size.append(m)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(X.shape[0], 0), np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, d = stack.pop()
        if d >= limit or rows.size <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        f = int(rng.choice(splittable))
        thr = rng.uniform(lo[f], hi[f])
        if thr <= lo[f]:
            thr = np.nextafter(lo[f], hi[f])
        go_left = sub[:, f] < thr
        feature[node] = f
        threshold[node] = thr
        li = new_node(int(go_left.sum()), d + 1)
        ri = new_node(int((~go_left).sum()), d + 1)
        left[node], right[node] = li, ri
        stack.append((ri, rows[~go_left], d + 1))
        stack.append((li, rows[go_left], d + 1))

    return IsolationTree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right),
        np.array(size, dtype=np.float64), np.array(depth, dtype=np.int64),
    )


def fit_isolation_forest(
    values: np.ndarray, n_trees: int = 100, subsample_size: int = 256, seed: int = 0
) -> IsolationForest:
    """Isolation forest over row vectors (1-D input is treated as one feature).

    ``subsample_size`` larger than the sample count is clamped to it.
    """
    X = np.asarray(values, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise DataError("isolation forest needs at least 2 samples")
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    psi = min(int(subsample_size), n)
    limit = int(math.ceil(math.log2(psi)))
    trees = []
    for t in range(n_trees):
        rng = tree_seed(seed, t)
        rows = np.sort(rng.choice(n, size=psi, replace=False)) if psi < n else np.arange(n)
        trees.append(_grow_isolation_tree(X[rows], limit, rng))
    return IsolationForest(tuple(trees), n_trees, psi, seed, X.shape[1])


def anomaly_score(forest: IsolationForest, v: np.ndarray) -> np.ndarray | float:
    """s(x) = 2^(-E[h(x)] / c(psi)); higher means more anomalous.

    A single vector returns a float; a 2-D array returns one score per row.
    A 1-D array is read as one vector unless the forest was fit on
    one-feature data, in which case it is a batch of scalars.
    """
    X = np.asarray(v, dtype=np.float64)
    scalar = X.ndim == 0 or (X.ndim == 1 and forest.n_features > 1)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[None, :] if scalar else X[:, None]
    h = np.mean([t.path_length(X) for t in forest.trees], axis=0)
    c = average_path_length(forest.subsample_size)
    scores = np.power(2.0, -h / c) if c > 0 else np.ones_like(h)
    return float(scores[0]) if scalar else scores

