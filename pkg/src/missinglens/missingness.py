"""Missingness-mechanism diagnostics built on trained additive models.

* :func:`wald_mcar_test` tests whether the missing bin of one feature carries
  signal about the outcome, using the model's bin-indicator form.
* :func:`littles_test` is the classical chi-square baseline.
* :func:`fit_missingness_model` predicts a feature's missingness indicator.
* :func:`separated_shape` fits one shape over observed and imputed values
  with the two groups pushed into disjoint bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import stats

from .errors import DataError, NothingToTest, SchemaError
from .gam import (
    LOGISTIC,
    BinLayout,
    GamConfig,
    GamModel,
    _value_edges,
    build_bins,
    fit_gam,
    predict_proba,
    variable_importance,
)
from .irls import fit_logistic_irls
from .tabular import BINARY, CATEGORICAL, CONTINUOUS, Column, Table, column_stats

# ----------------------------------------------------------------------------- Wald test


@dataclass(frozen=True)
class WaldReport:
    feature: str
    theta_hat: float
    se: float
    z: float
    p_value: float
    alpha: float
    reject_mcar: bool
    theta_refit: float = math.nan
    n_missing: int = 0
    converged: bool = True
    flag: str | None = None
    bonferroni_m: int = 1

    @property
    def reject_bonferroni(self) -> bool:
        return self.p_value < self.alpha / self.bonferroni_m

    def to_dict(self) -> dict:
        return {
            "feature": self.feature, "theta_hat": self.theta_hat, "se": _json_float(self.se),
            "z": self.z, "p_value": self.p_value, "alpha": self.alpha, "reject_mcar": self.reject_mcar,
            "theta_refit": _json_float(self.theta_refit), "n_missing": self.n_missing,
            "converged": self.converged, "flag": self.flag, "bonferroni_m": self.bonferroni_m,
            "reject_bonferroni": self.reject_bonferroni,
        }


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def wald_from_estimate(theta: float, se: float, alpha: float) -> tuple[float, float, bool]:
    """``(z, p, reject)`` for a two-sided normal Wald test."""
    if theta == 0.0 or not math.isfinite(se):
        return 0.0, 1.0, False
    z = theta / se
    p = float(2.0 * stats.norm.sf(abs(z)))
    return z, p, p < alpha


@dataclass(frozen=True)
class IndicatorDesign:
    """Sparse reference-coded bin-indicator design of a model on a table.

    Column 0 is the intercept. Each feature drops its most populated bin
    (the reference); bins with no rows are dropped too.
    """

    X: sp.csr_matrix
    columns: tuple[tuple[str, int], ...]
    references: Mapping[str, int]
    counts: Mapping[str, np.ndarray]

    def column_index(self, feature: str, k: int) -> int | None:
        try:
            return self.columns.index((feature, k)) + 1
        except ValueError:
            return None


def indicator_design(model: GamModel, table: Table) -> IndicatorDesign:
    n = table.n_rows
    rows = [np.arange(n)]
    cols = [np.zeros(n, dtype=np.int64)]
    columns: list[tuple[str, int]] = []
    refs, counts = {}, {}
    for s in model.shapes:
        b = s.layout.assign(table[s.feature])
        c = np.bincount(b, minlength=s.layout.n_bins)
        ref = int(np.argmax(c))
        refs[s.feature], counts[s.feature] = ref, c
        colmap = np.full(s.layout.n_bins, -1, dtype=np.int64)
        for k in range(s.layout.n_bins):
            if k != ref and c[k] > 0:
                columns.append((s.feature, k))
                colmap[k] = len(columns)
        hit = colmap[b]
        keep = hit >= 0
        rows.append(np.flatnonzero(keep))
        cols.append(hit[keep])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    X = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, len(columns) + 1))
    return IndicatorDesign(X, tuple(columns), refs, counts)


def _warm_start(model: GamModel, design: IndicatorDesign) -> np.ndarray:
    beta = np.zeros(len(design.columns) + 1)
    beta[0] = model.intercept
    for s in model.shapes:
        beta[0] += s.scores[design.references[s.feature]]
    for i, (f, k) in enumerate(design.columns, start=1):
        s = model.shape(f)
        beta[i] = s.scores[k] - s.scores[design.references[f]]
    return beta


def wald_mcar_test(
    model: GamModel,
    table: Table,
    feature: str,
    alpha: float = 0.05,
    n_tests: int = 1,
    ridge: float = 1.0,
) -> WaldReport:
    """Wald test of "the missing bin of ``feature`` has zero effect".

    ``theta_hat`` is the model's (centred) missing-bin score. Its standard
    error comes from refitting the frozen indicator design by IRLS, warm
    started at the model, and reading the Fisher information of the centred
    missing-bin contrast. ``table`` must be the table the model was trained
    on. ``n_tests`` only feeds the Bonferroni flag.

    ``ridge`` puts a weak Gaussian penalty on the bin coefficients (not the
    intercept). Sparse bins with no events otherwise drive the maximum
    likelihood estimate to infinity, and because the centred contrast
    involves every bin of the feature, one such bin makes the standard error
    useless. Set it to 0 for the plain maximum likelihood refit.
    """
    if model.link != LOGISTIC:
        raise DataError("the Wald test needs a model with a logistic link")
    if not 0 < alpha <= 1:
        raise DataError(f"alpha must be in (0, 1], got {alpha}")
    shape = model.shape(feature)
    mb = shape.layout.missing_bin
    if mb is None:
        raise NothingToTest(f"feature {feature!r} has no missing bin: nothing to test")
    y = table[model.target].values.astype(np.float64)
    design = indicator_design(model, table)
    counts = design.counts[feature]
    if counts[mb] == 0:
        raise NothingToTest(f"feature {feature!r} has no rows in its missing bin: nothing to test")
    n = float(table.n_rows)

    a = np.zeros(design.X.shape[1])
    for k in range(shape.layout.n_bins):
        i = design.column_index(feature, k)
        if i is not None:
            a[i] = (1.0 if k == mb else 0.0) - counts[k] / n

    theta = float(shape.scores[mb])
    penalty = np.full(design.X.shape[1], float(ridge))
    penalty[0] = 0.0
    fit = fit_logistic_irls(design.X, y, beta0=_warm_start(model, design), ridge=penalty)
    theta_refit = float(a @ fit.coef)
    flag = None
    if fit.separated:
        flag = "separated"
    elif fit.singular:
        flag = "singular"
    elif not fit.converged:
        flag = "non-converged"
    se = math.sqrt(fit.contrast_variance(a)) if flag is None else math.inf
    if flag is None and not (se > 0 and math.isfinite(se)):
        flag, se = "singular", math.inf
    z, p, reject = wald_from_estimate(theta, se, alpha)
    return WaldReport(feature, theta, se, z, p, alpha, reject, theta_refit, int(counts[mb]),
                      flag is None, flag, max(1, int(n_tests)))


# ----------------------------------------------------------------------------- Little's test


@dataclass(frozen=True)
class LittleReport:
    chi2: float
    df: int
    p_value: float
    n_patterns: int
    columns: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    em_iterations: int = 0

    @property
    def nothing_to_test(self) -> bool:
        return "nothing-to-test" in self.flags

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> dict:
        return {"chi2": self.chi2, "df": self.df, "p_value": self.p_value, "n_patterns": self.n_patterns,
                "columns": list(self.columns), "flags": list(self.flags), "em_iterations": self.em_iterations}


def _em_normal(Y: np.ndarray, patterns: list[tuple[np.ndarray, np.ndarray]], max_iter: int, tol: float):
    """EM estimates of mean and covariance for normal data with holes."""
    n, p = Y.shape
    mu = np.nanmean(Y, axis=0)
    S = np.diag(np.nanvar(Y, axis=0))
    it = 0
    for it in range(1, max_iter + 1):
        T1 = np.zeros(p)
        T2 = np.zeros((p, p))
        for obs, rows in patterns:
            Yp = Y[rows]
            m = ~obs
            Yhat = np.where(np.isnan(Yp), 0.0, Yp)
            C = np.zeros((p, p))
            if m.any():
                if obs.any():
                    Soo = S[np.ix_(obs, obs)]
                    B = scipy.linalg.solve(Soo, S[np.ix_(obs, m)], assume_a="pos").T
                    Yhat[:, m] = mu[m] + (Yp[:, obs] - mu[obs]) @ B.T
                    C[np.ix_(m, m)] = S[np.ix_(m, m)] - B @ S[np.ix_(obs, m)]
                else:
                    Yhat[:, m] = mu[m]
                    C[np.ix_(m, m)] = S[np.ix_(m, m)]
            T1 += Yhat.sum(axis=0)
            T2 += Yhat.T @ Yhat + rows.size * C
        mu_new = T1 / n
        S_new = T2 / n - np.outer(mu_new, mu_new)
        done = (np.max(np.abs(mu_new - mu)) < tol and np.max(np.abs(S_new - S)) < tol)
        mu, S = mu_new, S_new
        if done:
            break
    return mu, S, it


def littles_test(table: Table, columns: Sequence[str] | None = None, max_iter: int = 100,
                 tol: float = 1e-6) -> LittleReport:
    """Little's chi-square test of MCAR over the continuous columns."""
    if columns is None:
        columns = [c.name for c in table.columns if c.kind == CONTINUOUS]
    columns = tuple(columns)
    for name in columns:
        if table[name].kind != CONTINUOUS:
            raise SchemaError(f"Little's test needs continuous columns; {name!r} is {table[name].kind}")
    if len(columns) < 2:
        raise DataError("Little's test needs at least two continuous columns")
    Y = np.column_stack([np.where(table[c].absent_mask(), np.nan, table[c].values) for c in columns])
    miss = np.isnan(Y)
    if not miss.any():
        return LittleReport(0.0, 0, 1.0, 1, columns, ("nothing-to-test",))
    keep = ~miss.all(axis=1)
    Y, miss = Y[keep], miss[keep]
    if Y.shape[0] < 2:
        raise DataError("Little's test needs at least two rows with observed values")
    if np.any(miss.all(axis=0)):
        raise DataError("a column has no observed values")
    uniq, inverse = np.unique(miss, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    patterns = [(~uniq[i], np.flatnonzero(inverse == i)) for i in range(uniq.shape[0])]
    mu, S, iters = _em_normal(Y, patterns, max_iter, tol)

    flags = []
    d2 = 0.0
    df = -Y.shape[1]
    for obs, rows in patterns:
        ybar = Y[np.ix_(rows, obs)].mean(axis=0)
        diff = ybar - mu[obs]
        Soo = S[np.ix_(obs, obs)]
        try:
            c = scipy.linalg.cho_factor(Soo)
        except np.linalg.LinAlgError:
            if "ridge" not in flags:
                flags.append("ridge")
            c = scipy.linalg.cho_factor(Soo + 1e-8 * np.eye(Soo.shape[0]))
        d2 += rows.size * float(diff @ scipy.linalg.cho_solve(c, diff))
        df += int(obs.sum())
    if iters >= max_iter:
        flags.append("em-max-iter")
    p = float(stats.chi2.sf(d2, df)) if df > 0 else 1.0
    return LittleReport(float(d2), int(df), p, len(patterns), columns, tuple(flags), iters)


# ----------------------------------------------------------------------------- metrics


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Area under the ROC curve (Mann-Whitney; tied pairs count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = int((labels == 0).sum())
    if n1 + n0 != labels.size:
        raise DataError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise DataError("AUC needs both classes")
    ranks = stats.rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# ----------------------------------------------------------------------------- separated shapes


@dataclass(frozen=True, eq=False)
class ShapeCurve:
    """A step curve over ``edges`` (one score and count per interval)."""

    group: str
    edges: np.ndarray
    scores: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> bool:
        return self.scores.size == 0

    def at(self, x: float) -> float:
        k = int(np.searchsorted(self.edges[1:-1], x, side="left"))
        return float(self.scores[k])

    def to_records(self, feature: str) -> list[dict]:
        return [
            {"feature": feature, "group": self.group, "bin": k, "lo": float(self.edges[k]),
             "hi": float(self.edges[k + 1]), "theta": float(self.scores[k]), "count": float(self.counts[k])}
            for k in range(self.scores.size)
        ]


@dataclass(frozen=True, eq=False)
class SeparatedShapes:
    feature: str
    observed: ShapeCurve
    imputed: ShapeCurve
    offset: float
    model: GamModel | None = None

    def gap(self) -> float:
        """Largest absolute difference between the curves over their shared x-range."""
        if self.imputed.empty:
            return 0.0
        xs = np.unique(np.concatenate([self.observed.edges, self.imputed.edges]))
        lo = max(self.observed.edges[0], self.imputed.edges[0])
        hi = min(self.observed.edges[-1], self.imputed.edges[-1])
        xs = xs[(xs >= lo) & (xs <= hi)]
        if xs.size == 0:
            xs = np.array([self.imputed.edges[0]])
        return float(max(abs(self.imputed.at(x) - self.observed.at(x)) for x in xs))

    def to_records(self) -> list[dict]:
        return self.observed.to_records(self.feature) + self.imputed.to_records(self.feature)


def separation_offset(observed: np.ndarray, imputed: np.ndarray) -> float:
    """Shift that puts every imputed value strictly above every observed value.

    Equals ``max + 1 + range`` whenever the imputed values are non-negative;
    the second term only matters when they can go below zero.
    """
    mx, mn = float(np.max(observed)), float(np.min(observed))
    span = mx - mn
    off = mx + 1.0 + span
    if imputed.size:
        off = max(off, mx - float(np.min(imputed)) + 1.0 + span)
    return off


@dataclass(frozen=True)
class _Separation:
    column: Column
    layout: BinLayout
    obs_edges: np.ndarray
    imp_edges: np.ndarray
    offset: float


def _separate(col: Column, imputed: np.ndarray, max_bins: int) -> _Separation:
    if col.kind == CATEGORICAL:
        raise SchemaError(f"separated shapes need a numeric feature; {col.name!r} is categorical")
    missing = col.absent_mask()
    obs = col.values[~missing]
    if obs.size == 0:
        raise DataError(f"{col.name!r} has no observed values")
    imputed = np.asarray(imputed, dtype=np.float64)
    if imputed.shape == (col.values.size,):
        imputed = imputed[missing]
    if imputed.shape != (int(missing.sum()),):
        raise DataError(f"expected {int(missing.sum())} imputed values for {col.name!r}, got {imputed.size}")
    if not np.all(np.isfinite(imputed)):
        raise DataError("imputed values must be finite")
    obs_edges = _value_edges(obs, max_bins)
    if imputed.size == 0:
        layout = build_bins(Column(col.name, CONTINUOUS, obs, np.zeros(obs.size, bool)), max_bins, obs_edges)
        return _Separation(col, layout, obs_edges, np.empty(0), 0.0)
    off = separation_offset(obs, imputed)
    shifted = imputed + off
    assert shifted.min() > obs.max(), "imputed values overlap observed values after the offset"
    imp_edges = _value_edges(imputed, max_bins)
    values = col.values.copy()
    values[missing] = shifted
    new = Column(col.name, CONTINUOUS, values, np.zeros(values.size, bool))
    edges = np.concatenate([obs_edges, imp_edges[1:] + off])
    if imp_edges.size == 2 and imp_edges[0] == imp_edges[1]:
        edges = np.concatenate([obs_edges, [imp_edges[0] + off]])
    layout = build_bins(new, max_bins, edges)
    return _Separation(new, layout, obs_edges, imp_edges, off)


def _split_curves(sep: _Separation, scores: np.ndarray) -> tuple[ShapeCurve, ShapeCurve]:
    b = sep.obs_edges.size - 1
    counts = sep.layout.counts
    observed = ShapeCurve("observed", sep.obs_edges, scores[:b].copy(), counts[:b].copy())
    if sep.imp_edges.size == 0:
        imputed = ShapeCurve("imputed", np.empty(0), np.empty(0), np.empty(0))
    else:
        nb = max(sep.imp_edges.size - 1, 1)
        imputed = ShapeCurve("imputed", sep.imp_edges, scores[b:b + nb].copy(), counts[b:b + nb].copy())
    return observed, imputed


def separated_shape(
    table: Table,
    feature: str,
    imputed_values: Sequence[float],
    target: str | None = None,
    config: GamConfig | None = None,
) -> SeparatedShapes:
    """Shape of ``feature`` drawn separately for observed and imputed rows.

    Imputed cells are shifted above the observed range so both groups get
    their own bins in one model; the imputed branch is reported on the
    original axis using the unshifted bin edges.
    """
    cfg = config or GamConfig()
    target = target or table.target
    if target is None:
        raise SchemaError("no target given and the table has none")
    sep = _separate(table[feature], np.asarray(imputed_values, dtype=np.float64), cfg.max_bins)
    t = table.with_column(sep.column)
    model = fit_gam(t, target, cfg, layouts={feature: sep.layout})
    observed, imputed = _split_curves(sep, model.shape(feature).scores)
    return SeparatedShapes(feature, observed, imputed, sep.offset, model)


# ----------------------------------------------------------------------------- missingness prediction


@dataclass(frozen=True, eq=False)
class MissingnessReport:
    feature: str
    model: GamModel
    auc: float
    accuracy: float
    top_predictors: tuple[tuple[str, float], ...]
    separated_shapes: Mapping[str, SeparatedShapes] = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0
    missing_rate: float = 0.0

    def to_dict(self, top: int | None = None) -> dict:
        preds = self.top_predictors if top is None else self.top_predictors[:top]
        return {
            "feature": self.feature, "auc": self.auc, "accuracy": self.accuracy,
            "missing_rate": self.missing_rate, "n_train": self.n_train, "n_test": self.n_test,
            "top_predictors": [{"feature": f, "importance": v} for f, v in preds],
        }


def stratified_split(labels: np.ndarray, test_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test indices keeping each label's share in both parts."""
    rng = np.random.default_rng(seed)
    test = []
    for v in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == v))
        test.append(idx[: int(round(test_frac * idx.size))])
    test = np.sort(np.concatenate(test))
    mask = np.zeros(labels.size, bool)
    mask[test] = True
    return np.flatnonzero(~mask), test


def fit_missingness_model(
    table: Table,
    feature: str,
    include_label: bool = True,
    config: GamConfig | None = None,
    imputed: Mapping[str, Sequence[float]] | None = None,
    test_frac: float = 0.2,
    seed: int = 0,
) -> MissingnessReport:
    """Predict the missingness indicator of ``feature`` from the other columns.

    Other numeric predictors with missing cells are separated: their
    ``imputed`` values (mean-imputed when not supplied) are shifted above the
    observed range, and the report carries both curves per such predictor.
    """
    cfg = config or GamConfig()
    if cfg.link not in ("auto", LOGISTIC):
        cfg = GamConfig(**{**cfg.to_dict(), "link": LOGISTIC})
    col = table[feature]
    ind = col.absent_mask().astype(np.float64)
    if ind.min() == ind.max():
        raise DataError(f"missingness indicator of {feature!r} is constant")
    label_name = f"{feature}_missing"
    while label_name in table:
        label_name += "_"
    drop = [feature]
    if not include_label and table.target is not None:
        drop.append(table.target)
    base = table.drop(drop).with_target(None)
    imputed = dict(imputed or {})
    layouts, seps = {}, {}
    for c in list(base.columns):
        if c.kind == CATEGORICAL or not c.absent_mask().any():
            continue
        if c.name in imputed:
            vals = np.asarray(imputed[c.name], dtype=np.float64)
        else:
            st = column_stats(base, c.name)
            vals = np.full(int(c.absent_mask().sum()), st.mean)
        sep = _separate(c, vals, cfg.max_bins)
        base = base.with_column(sep.column)
        layouts[c.name] = sep.layout
        seps[c.name] = sep
    indicator = Column(label_name, BINARY, ind, np.zeros(ind.size, bool))
    full = base.with_column(indicator).with_target(label_name)
    train, test = stratified_split(ind, test_frac, seed)
    model = fit_gam(full.take(train), label_name, cfg, layouts=layouts)
    prob = predict_proba(model, full.take(test))
    y_test = ind[test]
    a = auc(prob, y_test) if 0 < y_test.sum() < y_test.size else math.nan
    acc = float(np.mean((prob >= 0.5) == (y_test == 1)))
    separated = {}
    for name, sep in seps.items():
        obs_c, imp_c = _split_curves(sep, model.shape(name).scores)
        separated[name] = SeparatedShapes(name, obs_c, imp_c, sep.offset)
    return MissingnessReport(feature, model, a, acc, tuple(variable_importance(model)), separated,
                             int(train.size), int(test.size), float(ind.mean()))
