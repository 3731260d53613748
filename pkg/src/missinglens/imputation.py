"""Imputers and the mean/median-imputation spike audit.

Imputed tables keep provenance on every column they touch: the column's
``imputed_mask`` marks filled cells and ``meta["imputation"]`` names the
method.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .gam import GamModel, ShapeFunction
from .tabular import CATEGORICAL, CONTINUOUS, Column, Table, column_stats
from .trees import anomaly_score, fit_isolation_forest, fit_random_forest, predict_forest

MEAN, MEDIAN, CONSTANT, KNN, ITERATIVE_FOREST = "mean", "median", "constant", "knn", "iterative_forest"
METHODS = (MEAN, MEDIAN, CONSTANT, KNN, ITERATIVE_FOREST)


@dataclass(frozen=True)
class ImputerConfig:
    method: str = MEAN
    value: float | str | None = None
    k: int = 5
    n_trees: int = 100
    max_iter: int = 10
    mtry: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown imputation method {self.method!r}")
        if self.k < 1:
            raise DataError("K must be >= 1")
        if self.max_iter < 1 or self.n_trees < 1:
            raise DataError("max_iter and n_trees must be >= 1")
        if self.method == CONSTANT and self.value is None:
            raise DataError("constant imputation needs a value")

    def to_dict(self) -> dict:
        return asdict(self)


def _filled(col: Column, values: np.ndarray, method: str, extra: Mapping | None = None) -> Column:
    """Copy of ``col`` with its absent cells replaced and provenance recorded."""
    absent = col.absent_mask()
    prior = col.imputed_mask if col.imputed_mask is not None else np.zeros(absent.size, bool)
    meta = dict(col.meta)
    meta["imputation"] = method
    if extra:
        meta.update(extra)
    return Column(col.name, col.kind, values, np.zeros(absent.size, bool), col.categories, None,
                  prior | absent, meta)


def impute_simple(table: Table, feature: str, method: str = MEAN, value: float | str | None = None) -> Table:
    """Fill the absent cells of one column with its mean, median or a constant."""
    col = table[feature]
    absent = col.absent_mask()
    if method not in (MEAN, MEDIAN, CONSTANT):
        raise DataError(f"unknown simple method {method!r}")
    if not absent.any():
        return table
    if method == CONSTANT:
        if value is None:
            raise DataError("constant imputation needs a value")
        if col.kind == CATEGORICAL:
            cats = list(col.categories)
            if str(value) not in cats:
                cats.append(str(value))
            vals = np.where(absent, cats.index(str(value)), col.values)
            col = Column(col.name, col.kind, vals, col.missing_mask, tuple(cats), col.sentinel,
                         col.imputed_mask, col.meta)
            return table.with_column(_filled(col, vals, CONSTANT, {"fill": str(value)}))
        fill = float(value)
    else:
        if col.kind != CONTINUOUS:
            raise SchemaError(f"{method} imputation needs a continuous column; {feature!r} is {col.kind}")
        st = column_stats(table, feature)
        if not st.defined:
            raise DataError(f"{feature!r} has no observed cells to take the {method} of")
        fill = st.mean if method == MEAN else st.median
    vals = np.where(absent, fill, col.values)
    return table.with_column(_filled(col, vals, method, {"fill": fill}))


def imputation_provenance(table: Table) -> list[dict]:
    """``(row, column, method)`` records of every imputed cell."""
    out = []
    for c in table.columns:
        if c.imputed_mask is None:
            continue
        method = c.meta.get("imputation", "unknown")
        for i in np.flatnonzero(c.imputed_mask):
            out.append({"row": int(i), "column": c.name, "method": method})
    out.sort(key=lambda r: (r["row"], table.index(r["column"])))
    return out


# ----------------------------------------------------------------------------- KNN


def _distance_matrix_inputs(table: Table, names: Sequence[str]):
    """Standardized values (NaN where absent) and a categorical-column flag."""
    Z = np.empty((table.n_rows, len(names)))
    cat = np.zeros(len(names), bool)
    for j, name in enumerate(names):
        c = table[name]
        absent = c.absent_mask()
        if c.kind == CATEGORICAL:
            cat[j] = True
            Z[:, j] = np.where(absent, np.nan, c.values.astype(np.float64))
        else:
            v = np.where(absent, np.nan, c.values)
            obs = v[~absent]
            mu = obs.mean() if obs.size else 0.0
            sd = obs.std() if obs.size > 1 else 0.0
            Z[:, j] = (v - mu) / (sd if sd > 0 else 1.0)
    return Z, cat


def knn_distances(Z: np.ndarray, cat: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Distance from ``row`` to every row of ``Z`` over commonly observed columns.

    Squared differences (categorical mismatch = 1) are summed over the
    columns observed in both rows, divided by that count, and square-rooted.
    Rows sharing no observed column are infinitely far.
    """
    shared = ~np.isnan(Z) & ~np.isnan(row)
    diff = np.where(shared, Z - row, 0.0)
    sq = np.where(cat, (diff != 0).astype(np.float64), diff**2)
    m = shared.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sqrt(sq.sum(axis=1) / m)
    d[m == 0] = np.inf
    return d


def _nearest(d: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` closest candidates (ties by row index)."""
    cand = candidates[np.isfinite(d[candidates])]
    if cand.size == 0:
        return cand
    order = np.lexsort((cand, d[cand]))
    return cand[order[:k]]


def _vote(values: np.ndarray) -> float:
    """Most frequent value, smallest on ties."""
    u, c = np.unique(values, return_counts=True)
    return float(u[np.argmax(c)])


def impute_knn(table: Table, k: int = 5, features: Sequence[str] | None = None,
               exclude_target: bool = True) -> Table:
    """K-nearest-neighbour imputation of every absent cell.

    Distances use the columns listed in ``features`` (default: all columns,
    minus the target when ``exclude_target``), each standardized by its
    observed mean and standard deviation. Donors must have the cell
    observed; their mean (mode for categorical columns) is used. When no
    donor exists the column mean (mode) is used and the row is recorded in
    ``meta["knn_fallback_rows"]``.
    """
    if k < 1:
        raise DataError("K must be >= 1")
    names = list(table.names if features is None else features)
    if exclude_target and table.target in names:
        names.remove(table.target)
    if not names:
        raise DataError("no columns to impute")
    if k > table.n_rows - 1:
        raise DataError(f"K={k} exceeds n_rows - 1 = {table.n_rows - 1}")
    Z, cat = _distance_matrix_inputs(table, names)
    absent = np.isnan(Z)
    if not absent.any():
        return table
    filled = {name: table[name].values.astype(np.float64).copy() for name in names}
    fallback: dict[str, list[int]] = {name: [] for name in names}
    observed_rows = [np.flatnonzero(~absent[:, j]) for j in range(len(names))]
    for i in np.flatnonzero(absent.any(axis=1)):
        d = knn_distances(Z, cat, Z[i])
        d[i] = np.inf
        for j in np.flatnonzero(absent[i]):
            donors = _nearest(d, observed_rows[j], k)
            col = table[names[j]]
            src = col.values.astype(np.float64)
            if donors.size == 0:
                pool = src[observed_rows[j]]
                if pool.size == 0:
                    raise DataError(f"{names[j]!r} has no observed values")
                filled[names[j]][i] = _vote(pool) if cat[j] else pool.mean()
                fallback[names[j]].append(int(i))
            else:
                filled[names[j]][i] = _vote(src[donors]) if cat[j] else src[donors].mean()
    out = table
    for j, name in enumerate(names):
        if not absent[:, j].any():
            continue
        col = table[name]
        vals = filled[name].astype(np.int64) if cat[j] else filled[name]
        extra = {"k": k}
        if fallback[name]:
            extra["knn_fallback_rows"] = fallback[name]
        out = out.with_column(_filled(col, vals, KNN, extra))
    return out


def knn_classify(train_X: np.ndarray, train_y: np.ndarray, test_X: np.ndarray, k: int = 5,
                 categorical: np.ndarray | None = None) -> np.ndarray:
    """Majority vote of the ``k`` nearest training rows (distance as in :func:`impute_knn`).

    Inputs must already be standardized; NaN marks absent cells.
    """
    cat = np.zeros(train_X.shape[1], bool) if categorical is None else np.asarray(categorical, bool)
    out = np.empty(test_X.shape[0])
    idx = np.arange(train_X.shape[0])
    complete = not np.isnan(train_X).any() and not np.isnan(test_X).any() and not cat.any()
    if complete:
        sq_tr = (train_X**2).sum(axis=1)
        p = train_X.shape[1]
        for start in range(0, test_X.shape[0], 256):
            block = test_X[start:start + 256]
            d2 = (block**2).sum(axis=1)[:, None] + sq_tr[None, :] - 2 * block @ train_X.T
            d = np.sqrt(np.maximum(d2, 0.0) / p)
            for r in range(block.shape[0]):
                out[start + r] = _vote(train_y[_nearest(d[r], idx, k)])
        return out
    for r in range(test_X.shape[0]):
        d = knn_distances(train_X, cat, test_X[r])
        nb = _nearest(d, idx, k)
        out[r] = _vote(train_y[nb]) if nb.size else _vote(train_y)
    return out


# ----------------------------------------------------------------------------- iterative forest


def _forest_inputs(table: Table, names: Sequence[str]) -> tuple[np.ndarray, list[int]]:
    X = np.column_stack([table[n].values.astype(np.float64) for n in names])
    cats = [j for j, n in enumerate(names) if table[n].kind == CATEGORICAL]
    return X, cats


def impute_iterative_forest(table: Table, config: ImputerConfig | None = None,
                            features: Sequence[str] | None = None, exclude_target: bool = True) -> Table:
    """Iterative random-forest imputation.

    Starts from mean (mode) fills, then sweeps the incomplete columns in
    ascending order of missing rate, refitting a forest for each on its
    observed rows and re-predicting its absent cells. Stops when the
    normalized change between sweeps grows (returning the previous sweep) or
    after ``max_iter`` sweeps.
    """
    cfg = config or ImputerConfig(method=ITERATIVE_FOREST)
    names = list(table.names if features is None else features)
    if exclude_target and table.target in names:
        names.remove(table.target)
    if len(names) < 2:
        raise DataError("iterative forest imputation needs at least two columns")
    absent = {n: table[n].absent_mask() for n in names}
    todo = [n for n in names if absent[n].any()]
    if not todo:
        return table
    for n in todo:
        if absent[n].all():
            raise DataError(f"{n!r} has no observed cells")
    todo.sort(key=lambda n: (absent[n].mean(), names.index(n)))
    is_cat = {n: table[n].kind == CATEGORICAL for n in names}

    X = np.column_stack([table[n].values.astype(np.float64) for n in names])
    col_of = {n: j for j, n in enumerate(names)}
    for n in todo:
        j = col_of[n]
        obs = X[~absent[n], j]
        X[absent[n], j] = _vote(obs) if is_cat[n] else obs.mean()
    cat_cols = [col_of[n] for n in names if is_cat[n]]

    prev = X.copy()
    prev_num = prev_cat = math.inf
    iterations = 0
    stopped_early = False
    for it in range(cfg.max_iter):
        cur = prev.copy()
        for n in todo:
            j = col_of[n]
            others = [c for c in range(len(names)) if c != j]
            Xo = cur[:, others]
            miss = absent[n]
            forest = fit_random_forest(
                Xo[~miss], cur[~miss, j], n_trees=cfg.n_trees, mtry=cfg.mtry, seed=cfg.seed * 7919 + it * 101 + j,
                min_leaf=cfg.min_leaf, categorical=[others.index(c) for c in cat_cols if c != j],
                classification=is_cat[n],
            )
            cur[miss, j] = predict_forest(forest, Xo[miss])
        iterations = it + 1
        num = [col_of[n] for n in todo if not is_cat[n]]
        cat = [col_of[n] for n in todo if is_cat[n]]
        d_num = d_cat = 0.0
        if num:
            m = np.zeros_like(cur, dtype=bool)
            for n in todo:
                if not is_cat[n]:
                    m[:, col_of[n]] = absent[n]
            den = float(np.sum(cur[m] ** 2))
            d_num = float(np.sum((cur[m] - prev[m]) ** 2)) / den if den > 0 else 0.0
        if cat:
            changed = sum(int(np.sum(cur[absent[n], col_of[n]] != prev[absent[n], col_of[n]]))
                          for n in todo if is_cat[n])
            d_cat = changed / sum(int(absent[n].sum()) for n in todo if is_cat[n])
        grew = (not num or d_num > prev_num) and (not cat or d_cat > prev_cat)
        if it > 0 and grew:
            stopped_early = True
            iterations = it
            break
        prev, prev_num, prev_cat = cur, d_num, d_cat
    out = table
    for n in todo:
        col = table[n]
        vals = prev[:, col_of[n]]
        vals = np.where(absent[n], vals, col.values.astype(np.float64))
        if is_cat[n]:
            vals = vals.astype(np.int64)
        out = out.with_column(_filled(col, vals, ITERATIVE_FOREST,
                                      {"iterations": iterations, "stopped_early": stopped_early}))
    return out


def impute(table: Table, config: ImputerConfig, features: Sequence[str] | None = None) -> Table:
    """Dispatch on ``config.method``; simple methods fill every incomplete numeric column."""
    if config.method in (MEAN, MEDIAN, CONSTANT):
        names = list(table.names if features is None else features)
        if table.target in names and features is None:
            names.remove(table.target)
        out = table
        for n in names:
            c = table[n]
            if not c.absent_mask().any():
                continue
            if config.method != CONSTANT and c.kind != CONTINUOUS:
                raise SchemaError(f"{config.method} imputation needs continuous columns; {n!r} is {c.kind}")
            out = impute_simple(out, n, config.method, config.value)
        return out
    if config.method == KNN:
        return impute_knn(table, config.k, features)
    return impute_iterative_forest(table, config, features)


# ----------------------------------------------------------------------------- spike audit

HARMFUL, HARMLESS, NOT_APPLICABLE = "harmful", "harmless", "not_applicable"


def second_order_diff(shape: ShapeFunction) -> np.ndarray:
    """Width-aware second differences of a shape at its interior value bins.

    For value bins with widths ``h`` and scores ``f``::

        f''_k = [ (f[k+1]-f[k]) / ((h[k+1]+h[k])/2) - (f[k]-f[k-1]) / ((h[k]+h[k-1])/2) ]
                / (h[k] + h[k+1]/2 + h[k-1]/2)

    for k = 1 .. B-2 (the missing bin is not a value bin).
    """
    lay = shape.layout
    if lay.kind == CATEGORICAL:
        raise DataError("second differences need an ordered (numeric) shape")
    f = shape.value_scores
    h = lay.widths()
    return second_order_diff_arrays(f, h)


def second_order_diff_arrays(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if f.size < 3:
        raise DataError(f"second differences need at least 3 bins, got {f.size}")
    if h.shape != f.shape:
        raise DataError("one width per bin is required")
    fk, fl, fr = f[1:-1], f[:-2], f[2:]
    hk, hl, hr = h[1:-1], h[:-2], h[2:]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ((fr - fk) / ((hr + hk) / 2) - (fk - fl) / ((hk + hl) / 2)) / (hk + hr / 2 + hl / 2)
    if not np.all(np.isfinite(out)):
        raise DataError("zero-width bins make second differences undefined")
    return out


@dataclass(frozen=True, eq=False)
class SpikeAudit:
    feature: str
    statistic: str
    bin_diffs: np.ndarray
    anomaly_scores: np.ndarray
    contamination: float
    threshold: float
    flagged_bins: tuple[int, ...]
    mean_bin: int | None
    median_bin: int | None
    verdict: str
    mean_value: float = math.nan
    median_value: float = math.nan
    missing_rate: float = 0.0

    @property
    def audited_bin(self) -> int | None:
        return self.mean_bin if self.statistic == MEAN else self.median_bin

    def to_dict(self) -> dict:
        return {
            "feature": self.feature, "statistic": self.statistic, "verdict": self.verdict,
            "contamination": self.contamination, "threshold": self.threshold,
            "flagged_bins": list(self.flagged_bins), "mean_bin": self.mean_bin, "median_bin": self.median_bin,
            "mean_value": self.mean_value, "median_value": self.median_value,
            "missing_rate": self.missing_rate,
            "bin_diffs": self.bin_diffs.tolist(), "anomaly_scores": self.anomaly_scores.tolist(),
        }


def _observed_cells(col) -> np.ndarray:
    """Present, non-imputed values; all present values if provenance marks every cell imputed."""
    real = ~col.absent_mask()
    if col.imputed_mask is not None:
        real &= ~col.imputed_mask
    obs = col.values[real]
    return obs if obs.size else col.values[~col.absent_mask()]


def audit_imputation(
    model: GamModel,
    table: Table,
    statistic: str = MEAN,
    contamination: float = 0.05,
    n_trees: int = 100,
    subsample_size: int = 256,
    seed: int = 0,
) -> dict[str, SpikeAudit]:
    """Flag features whose mean (median) bin is a curvature outlier.

    Second differences of every continuous shape with at least three value
    bins are pooled, one isolation forest scores them all, and the top
    ``contamination`` share of bins is flagged. A feature is harmful when the
    bin holding its column mean (median) is flagged. Bin indices in the
    report are value-bin indices; the mean and median are computed over the
    non-imputed cells of ``table`` and located with the model's own binning.

    f'' carries units of score per squared feature unit, so before pooling
    each feature's values are multiplied by the variance of its non-imputed
    cells (bin widths measured in standard deviations). ``bin_diffs``
    reports the unscaled values.
    """
    if statistic not in (MEAN, MEDIAN):
        raise DataError(f"statistic must be mean or median, got {statistic!r}")
    if not 0 < contamination < 1:
        raise DataError("contamination must be in (0, 1)")
    eligible = []
    for s in model.shapes:
        if s.layout.kind == CATEGORICAL or s.feature not in table:
            continue
        if table[s.feature].kind != CONTINUOUS:
            continue
        if s.layout.n_value_bins >= 3 and np.all(s.layout.widths()[1:-1] > 0):
            eligible.append(s)
    out: dict[str, SpikeAudit] = {}
    if not eligible:
        for s in model.shapes:
            if s.layout.kind != CATEGORICAL and s.feature in table and table[s.feature].kind == CONTINUOUS:
                out[s.feature] = SpikeAudit(s.feature, statistic, np.empty(0), np.empty(0), contamination,
                                            math.nan, (), None, None, NOT_APPLICABLE)
        return out

    diffs = {s.feature: second_order_diff(s) for s in eligible}
    pooled = np.concatenate([diffs[s.feature] * _observed_cells(table[s.feature]).var() for s in eligible])
    span = float(pooled.max() - pooled.min())
    if pooled.size >= 2 and span > 1e-12 * max(1.0, float(np.abs(pooled).max())):
        forest = fit_isolation_forest(pooled, n_trees=n_trees, subsample_size=subsample_size, seed=seed)
        scores = np.asarray(anomaly_score(forest, pooled), dtype=np.float64)
        threshold = float(np.quantile(scores, 1.0 - contamination))
        flagged_all = scores > threshold
    else:
        scores = np.full(pooled.size, 0.5)
        threshold = math.inf
        flagged_all = np.zeros(pooled.size, bool)

    pos = 0
    for s in eligible:
        m = diffs[s.feature].size
        sc = scores[pos:pos + m]
        flags = flagged_all[pos:pos + m]
        pos += m
        flagged = tuple(int(k) + 1 for k in np.flatnonzero(flags))
        col = table[s.feature]
        obs = _observed_cells(col)
        mean_v = float(obs.mean()) if obs.size else math.nan
        median_v = float(np.median(obs)) if obs.size else math.nan
        mean_bin = s.layout.locate(mean_v) if obs.size else None
        median_bin = s.layout.locate(median_v) if obs.size else None
        target_bin = mean_bin if statistic == MEAN else median_bin
        verdict = HARMFUL if target_bin is not None and target_bin in flagged else HARMLESS
        miss_rate = float(col.imputed_mask.mean()) if col.imputed_mask is not None else 0.0
        out[s.feature] = SpikeAudit(s.feature, statistic, diffs[s.feature], sc, contamination, threshold,
                                    flagged, mean_bin, median_bin, verdict, mean_v, median_v, miss_rate)
    return out
