"""Bagged, cyclically boosted additive models with bin-piecewise-constant shapes.

Each feature is cut into bins once (:func:`build_bins`). Boosting then works
purely on per-bin gradient sums: every cycle visits each feature, fits a
shallow tree over that feature's bins and adds ``learning_rate`` times the
leaf values into the bin scores. Bags are averaged, and every shape is
centred on the training population with the removed mass moved into the
intercept, so ``score(x) = intercept + sum_j shape_j(x_j)`` holds exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ModelFormatError, SchemaError
from .tabular import BINARY, CATEGORICAL, CONTINUOUS, Column, Table
from .trees import fit_binned_tree, gradient_histogram

IDENTITY = "identity"
LOGISTIC = "logistic"
SCHEMA_VERSION = 1
MODEL_FORMAT = "missinglens.gam"
PROB_CLIP = 1e-6


# ----------------------------------------------------------------------------- bins


@dataclass(frozen=True, eq=False)
class BinLayout:
    """Bin structure of one feature.

    Continuous layouts hold sorted ``edges``; value bin ``k`` is
    ``(edges[k], edges[k+1]]`` except that the first and last bins extend to
    -inf and +inf (out-of-range values clamp into them). Categorical layouts
    hold one bin per category. The missing bin, when present, is always the
    last index.
    """

    kind: str
    edges: np.ndarray
    categories: tuple[str, ...]
    counts: np.ndarray
    missing_bin: int | None = None
    sentinel: float | str | None = None
    missing_position: str = "low"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.float64)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)
        if self.kind == CATEGORICAL:
            nv = len(self.categories)
        else:
            if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) < 0):
                raise SchemaError("continuous layouts need at least two sorted edges")
            nv = edges.size - 1
        expected = nv + (1 if self.missing_bin is not None else 0)
        if counts.shape != (expected,):
            raise SchemaError(f"layout has {expected} bins but {counts.size} counts")
        if self.missing_bin is not None and self.missing_bin != nv:
            raise SchemaError("the missing bin must be the last bin")

    @property
    def n_value_bins(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else self.edges.size - 1

    @property
    def n_bins(self) -> int:
        return self.n_value_bins + (1 if self.missing_bin is not None else 0)

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    def widths(self) -> np.ndarray:
        if self.kind == CATEGORICAL:
            raise DataError("categorical bins have no width")
        return np.diff(self.edges)

    def interval(self, k: int, clamp: bool = True) -> tuple[float, float]:
        """Interval ``(lo, hi]`` of value bin ``k``; end bins are unbounded when ``clamp``."""
        lo, hi = float(self.edges[k]), float(self.edges[k + 1])
        if clamp and k == 0:
            lo = -math.inf
        if clamp and k == self.n_value_bins - 1:
            hi = math.inf
        return lo, hi

    def locate(self, x: float) -> int:
        """Value bin holding ``x`` (right-closed intervals, clamped at the ends)."""
        return int(np.searchsorted(self.edges[1:-1], x, side="left"))

    def assign_values(self, values: np.ndarray, absent: np.ndarray | None = None) -> np.ndarray:
        """Bin index of each numeric value; ``absent`` cells go to the missing bin."""
        values = np.asarray(values, dtype=np.float64)
        absent = np.zeros(values.shape, bool) if absent is None else np.asarray(absent, bool)
        if self.sentinel is not None and not isinstance(self.sentinel, str):
            absent = absent | (values == self.sentinel)
        idx = np.searchsorted(self.edges[1:-1], np.where(absent, 0.0, values), side="left")
        if absent.any():
            if self.missing_bin is None:
                raise DataError("missing values present but the layout has no missing bin")
            idx = np.where(absent, self.missing_bin, idx)
        return idx.astype(np.int64)

    def assign(self, column: Column) -> np.ndarray:
        """Bin index of every cell of ``column``."""
        if self.kind != CATEGORICAL:
            if column.kind == CATEGORICAL:
                raise SchemaError(f"column {column.name!r} is categorical but the layout is numeric")
            return self.assign_values(column.values, column.absent_mask())
        if column.kind != CATEGORICAL:
            raise SchemaError(f"column {column.name!r} is numeric but the layout is categorical")
        lookup = {c: k for k, c in enumerate(self.categories)}
        code_map = np.empty(len(column.categories) + 1, dtype=np.int64)
        for code, name in enumerate(column.categories):
            if name == self.sentinel:
                code_map[code] = -1
            elif name in lookup:
                code_map[code] = lookup[name]
            else:
                raise DataError(f"category {name!r} of {column.name!r} was not seen in training")
        code_map[-1] = -1
        idx = code_map[column.values]  # -1 codes index the trailing slot
        absent = idx < 0
        if absent.any():
            if self.missing_bin is None:
                raise DataError("missing values present but the layout has no missing bin")
            idx = np.where(absent, self.missing_bin, idx)
        return idx

    def tree_order(self) -> np.ndarray:
        """Bin ids in the ordinal order used when fitting trees.

        The missing bin sits below all value bins unless its sentinel is
        above the observed range.
        """
        order = np.arange(self.n_value_bins)
        if self.missing_bin is None:
            return order
        if self.missing_position == "high":
            return np.append(order, self.missing_bin)
        return np.insert(order, 0, self.missing_bin)

    def with_counts(self, counts: np.ndarray) -> "BinLayout":
        return replace(self, counts=np.asarray(counts, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "edges": self.edges.tolist(),
            "categories": list(self.categories),
            "counts": self.counts.tolist(),
            "missing_bin": self.missing_bin,
            "sentinel": self.sentinel,
            "missing_position": self.missing_position,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BinLayout":
        return cls(
            kind=d["kind"], edges=np.array(d["edges"], dtype=np.float64), categories=tuple(d["categories"]),
            counts=np.array(d["counts"], dtype=np.float64), missing_bin=d["missing_bin"],
            sentinel=d["sentinel"], missing_position=d.get("missing_position", "low"),
        )


def _value_edges(obs: np.ndarray, max_bins: int) -> np.ndarray:
    uniq = np.unique(obs)
    if uniq.size == 1:
        return np.array([uniq[0], uniq[0]])
    if uniq.size <= max_bins:
        mids = 0.5 * (uniq[:-1] + uniq[1:])
        # A midpoint can round onto its upper neighbour; fall back to the lower value.
        mids = np.where(mids < uniq[1:], mids, uniq[:-1])
        return np.concatenate([[uniq[0]], mids, [uniq[-1]]])
    edges = np.unique(np.quantile(obs, np.linspace(0.0, 1.0, max_bins + 1)))
    return edges if edges.size >= 2 else np.array([edges[0], edges[0]])


def build_bins(column: Column, max_bins: int = 256, edges: np.ndarray | None = None) -> BinLayout:
    """Quantile bins over the observed (non-sentinel) values of ``column``.

    Columns with at most ``max_bins`` distinct values get one bin per value.
    Sentinel and masked cells go to a trailing missing bin. Explicit
    ``edges`` bypass the quantile rule.
    """
    if max_bins < 2:
        raise DataError(f"max_bins must be >= 2, got {max_bins}")
    absent = column.absent_mask()
    has_missing = bool(absent.any()) or column.sentinel is not None
    if column.kind == CATEGORICAL:
        cats = tuple(c for c in column.categories if c != column.sentinel)
        if not cats:
            raise DataError(f"column {column.name!r} has no observed categories")
        layout = BinLayout(CATEGORICAL, np.empty(0), cats, np.zeros(len(cats) + has_missing),
                           len(cats) if has_missing else None, column.sentinel)
    else:
        obs = column.values[~absent]
        if obs.size == 0 and edges is None:
            raise DataError(f"column {column.name!r} has no observed values to bin")
        e = _value_edges(obs, max_bins) if edges is None else np.asarray(edges, dtype=np.float64)
        position = "low"
        if column.sentinel is not None and not isinstance(column.sentinel, str) and column.sentinel > e[-1]:
            position = "high"
        nv = e.size - 1
        layout = BinLayout(CONTINUOUS, e, (),
                           np.zeros(nv + has_missing), nv if has_missing else None,
                           column.sentinel, position)
    counts = np.bincount(layout.assign(column), minlength=layout.n_bins).astype(np.float64)
    return layout.with_counts(counts)


# ----------------------------------------------------------------------------- shapes and models


@dataclass(frozen=True, eq=False)
class ShapeFunction:
    """Per-bin scores of one feature over its :class:`BinLayout`.

    ``edit_base``/``edit_shift`` only exist on edited shapes: they let an
    inverse shift restore the original scores bit for bit.
    """

    feature: str
    layout: BinLayout
    scores: np.ndarray
    edit_base: np.ndarray | None = None
    edit_shift: np.ndarray | None = None
    split_edges: tuple[float, ...] = ()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (self.layout.n_bins,):
            raise SchemaError(f"shape {self.feature!r}: {scores.size} scores for {self.layout.n_bins} bins")
        if not np.all(np.isfinite(scores)):
            raise DataError(f"shape {self.feature!r} has non-finite scores")
        object.__setattr__(self, "scores", scores)

    @property
    def missing_score(self) -> float | None:
        mb = self.layout.missing_bin
        return None if mb is None else float(self.scores[mb])

    @property
    def value_scores(self) -> np.ndarray:
        return self.scores[: self.layout.n_value_bins]

    def __call__(self, column: Column) -> np.ndarray:
        return self.scores[self.layout.assign(column)]

    def at(self, values: np.ndarray, absent: np.ndarray | None = None) -> np.ndarray:
        return self.scores[self.layout.assign_values(values, absent)]

    def weighted_mean(self) -> float:
        n = self.layout.n
        return float(np.dot(self.layout.counts, self.scores) / n) if n > 0 else 0.0

    def to_dict(self) -> dict:
        d = {"feature": self.feature, "layout": self.layout.to_dict(), "scores": self.scores.tolist()}
        if self.edit_base is not None:
            d["edit_base"] = self.edit_base.tolist()
            d["edit_shift"] = self.edit_shift.tolist()
        if self.split_edges:
            d["split_edges"] = list(self.split_edges)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ShapeFunction":
        base = d.get("edit_base")
        shift = d.get("edit_shift")
        return cls(
            d["feature"], BinLayout.from_dict(d["layout"]), np.array(d["scores"], dtype=np.float64),
            None if base is None else np.array(base, dtype=np.float64),
            None if shift is None else np.array(shift, dtype=np.float64),
            tuple(d.get("split_edges", ())),
        )


@dataclass(frozen=True)
class GamConfig:
    """Training settings. Defaults follow common EBM practice.

    ``missing="separate"`` gives the missing bin its own leaf in every
    boosting step, so its score never mixes with neighbouring value bins;
    ``"ordinal"`` lets trees treat it as a value just outside the observed
    range.

    ``leaf="gradient"`` sets each leaf to the mean residual (y - p) of its
    rows; ``"newton"`` divides by the summed hessian instead, which converges
    faster but takes huge steps on nearly pure bins.
    """

    max_bins: int = 256
    learning_rate: float = 0.01
    rounds: int = 500
    bags: int = 8
    max_depth: int = 3
    min_leaf: int = 2
    holdout: float = 0.15
    patience: int = 50
    early_stopping: bool = True
    bootstrap: bool = True
    link: str = "auto"
    missing: str = "separate"
    leaf: str = "gradient"
    seed: int = 0

    def __post_init__(self):
        if self.max_bins < 2:
            raise DataError("max_bins must be >= 2")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if self.rounds < 1 or self.bags < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise DataError("rounds, bags, max_depth and min_leaf must be >= 1")
        if self.early_stopping and not 0 < self.holdout < 1:
            raise DataError("holdout must be in (0, 1)")
        if self.link not in ("auto", IDENTITY, LOGISTIC):
            raise DataError(f"unknown link {self.link!r}")
        if self.missing not in ("separate", "ordinal"):
            raise DataError(f"missing must be 'separate' or 'ordinal', got {self.missing!r}")
        if self.leaf not in ("gradient", "newton"):
            raise DataError(f"leaf must be 'gradient' or 'newton', got {self.leaf!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GamConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True, eq=False)
class GamModel:
    intercept: float
    link: str
    shapes: tuple[ShapeFunction, ...]
    target: str
    config: GamConfig = field(default_factory=GamConfig)
    history: tuple[Mapping, ...] = ()
    fit_log: Mapping[str, Any] = field(default_factory=dict)

    @property
    def features(self) -> list[str]:
        return [s.feature for s in self.shapes]

    def shape(self, feature: str) -> ShapeFunction:
        for s in self.shapes:
            if s.feature == feature:
                return s
        raise SchemaError(f"model has no feature {feature!r}")

    def with_shape(self, shape: ShapeFunction) -> "GamModel":
        shapes = tuple(shape if s.feature == shape.feature else s for s in self.shapes)
        if shapes == self.shapes and shape.feature not in self.features:
            raise SchemaError(f"model has no feature {shape.feature!r}")
        return replace(self, shapes=shapes)


@dataclass(frozen=True)
class Prediction:
    score: float
    probability: float | None = None


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def contributions(model: GamModel, table: Table) -> np.ndarray:
    """(n_rows, n_features) matrix of per-feature shape lookups."""
    out = np.empty((table.n_rows, len(model.shapes)))
    for j, s in enumerate(model.shapes):
        if s.feature not in table:
            raise SchemaError(f"table lacks model feature {s.feature!r}")
        out[:, j] = s(table[s.feature])
    return out


def predict_scores(model: GamModel, table: Table) -> np.ndarray:
    """Additive score ``intercept + sum_j shape_j(x_j)``, summed in feature order."""
    score = np.full(table.n_rows, model.intercept)
    for s in model.shapes:
        score = score + s(table[s.feature])
    return score


def predict_proba(model: GamModel, table: Table) -> np.ndarray:
    if model.link != LOGISTIC:
        raise DataError("probabilities need a logistic model")
    return sigmoid(predict_scores(model, table))


def predict(model: GamModel, row: Mapping[str, Any]) -> Prediction:
    """Score one row given as ``{feature: value}``; None or NaN means missing."""
    score = model.intercept
    for s in model.shapes:
        if s.feature not in row:
            raise SchemaError(f"row lacks model feature {s.feature!r}")
        v = row[s.feature]
        missing = v is None or (isinstance(v, float) and math.isnan(v))
        lay = s.layout
        if missing:
            if lay.missing_bin is None:
                raise DataError(f"{s.feature!r} is missing but the model has no missing bin")
            k = lay.missing_bin
        elif lay.kind == CATEGORICAL:
            if v == lay.sentinel:
                k = lay.missing_bin
            elif str(v) in lay.categories:
                k = lay.categories.index(str(v))
            else:
                raise DataError(f"category {v!r} of {s.feature!r} was not seen in training")
        else:
            k = int(lay.assign_values(np.array([float(v)]))[0])
        score = score + s.scores[k]
    prob = float(sigmoid(score)) if model.link == LOGISTIC else None
    return Prediction(float(score), prob)


# ----------------------------------------------------------------------------- training


def _target_vector(table: Table, target: str, link: str) -> tuple[np.ndarray, str]:
    col = table[target]
    if col.missing_mask.any() or col.sentinel is not None:
        raise DataError(f"target {target!r} has missing cells")
    if col.kind == CATEGORICAL:
        if len(col.categories) != 2:
            raise DataError(f"categorical target {target!r} must have exactly two classes")
        y = col.values.astype(np.float64)
        inferred = LOGISTIC
    else:
        y = col.values.astype(np.float64)
        if not np.all(np.isfinite(y)):
            raise DataError(f"target {target!r} has non-finite values")
        inferred = LOGISTIC if col.kind == BINARY or np.all(np.isin(y, (0.0, 1.0))) else IDENTITY
    link = inferred if link == "auto" else link
    if link == LOGISTIC:
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError(f"logistic target {target!r} must be 0/1")
        if np.unique(y).size < 2:
            raise DataError(f"target {target!r} has a single class")
    return y, link


def _loss(score: np.ndarray, y: np.ndarray, w: np.ndarray, link: str) -> float:
    W = w.sum()
    if W <= 0:
        return math.nan
    if link == IDENTITY:
        return float(np.dot(w, (y - score) ** 2) / W)
    p = np.clip(sigmoid(score), PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.dot(w, y * np.log(p) + (1 - y) * np.log1p(-p)) / W)


def _holdout_split(y: np.ndarray, frac: float, link: str, rng: np.random.Generator):
    """Random (stratified for 0/1 targets) train/validation row split."""
    n = y.shape[0]
    groups = [np.flatnonzero(y == v) for v in (0.0, 1.0)] if link == LOGISTIC else [np.arange(n)]
    val = []
    for g in groups:
        g = rng.permutation(g)
        val.append(g[: int(round(frac * g.size))])
    val = np.sort(np.concatenate(val))
    mask = np.zeros(n, bool)
    mask[val] = True
    return np.flatnonzero(~mask), val


def _boost_bag(bins, layouts, y, link, cfg: GamConfig, bag: int):
    n = y.shape[0]
    rng = np.random.default_rng([cfg.seed, bag])
    if cfg.early_stopping:
        train, val = _holdout_split(y, cfg.holdout, link, rng)
    else:
        train, val = np.arange(n), np.empty(0, dtype=np.int64)
    w = np.zeros(n)
    if cfg.bootstrap:
        w[train] = np.bincount(rng.integers(0, train.size, train.size), minlength=train.size)
    else:
        w[train] = 1.0
    wv = np.zeros(n)
    wv[val] = 1.0

    ybar = float(np.dot(w, y) / w.sum())
    if link == LOGISTIC:
        ybar = min(max(ybar, PROB_CLIP), 1 - PROB_CLIP)
        init = math.log(ybar / (1 - ybar))
    else:
        init = ybar
    logistic = link == LOGISTIC
    newton = cfg.leaf == "newton"
    score = np.full(n, init)
    scores = [np.zeros(lay.n_bins) for lay in layouts]
    separate = cfg.missing == "separate"
    orders = [np.arange(lay.n_value_bins) if separate else lay.tree_order() for lay in layouts]
    cats = [lay.kind == CATEGORICAL for lay in layouts]
    mbins = [lay.missing_bin if separate else None for lay in layouts]

    train_hist, val_hist = [], []
    best = (math.inf, [s.copy() for s in scores], 0)
    for r in range(cfg.rounds):
        for j, lay in enumerate(layouts):
            G, H, C = gradient_histogram(bins[j], y, score, w, lay.n_bins, logistic)
            if not newton:
                H = C
            order = orders[j]
            if cats[j]:
                with np.errstate(divide="ignore", invalid="ignore"):
                    means = np.where(H[order] > 0, G[order] / H[order], np.inf)
                order = order[np.argsort(means, kind="stable")]
            delta = np.empty(lay.n_bins)
            delta[order] = fit_binned_tree(G[order], H[order], C[order], cfg.max_depth, cfg.min_leaf)
            mb = mbins[j]
            if mb is not None:
                delta[mb] = G[mb] / H[mb] if H[mb] > 0 else 0.0
            delta *= cfg.learning_rate
            scores[j] += delta
            score += delta[bins[j]]
        train_hist.append(_loss(score, y, w, link))
        if cfg.early_stopping:
            vl = _loss(score, y, wv, link)
            val_hist.append(vl)
            if best[2] == 0 or vl < best[0] - 1e-12 * abs(best[0]):
                best = (vl, [s.copy() for s in scores], r + 1)
            elif r + 1 - best[2] >= cfg.patience:
                break
    if cfg.early_stopping and best[2] > 0:
        scores, used = best[1], best[2]
    else:
        used = len(train_hist)
    return init, scores, {"rounds_run": len(train_hist), "best_round": used,
                          "train_loss": train_hist, "val_loss": val_hist}


def fit_gam(
    table: Table,
    target: str | None = None,
    config: GamConfig | None = None,
    features: Sequence[str] | None = None,
    layouts: Mapping[str, BinLayout] | None = None,
) -> GamModel:
    """Train an additive model predicting ``target`` from ``features``.

    ``features`` defaults to every other column. ``layouts`` may pin the
    binning of chosen features; their counts are recomputed on ``table``.
    """
    cfg = config or GamConfig()
    target = target or table.target
    if target is None:
        raise SchemaError("no target given and the table has none")
    y, link = _target_vector(table, target, cfg.link)
    features = [n for n in table.names if n != target] if features is None else list(features)
    if not features:
        raise DataError("no features to train on")
    if target in features:
        raise SchemaError("target cannot also be a feature")
    lays = []
    for name in features:
        col = table[name]
        if layouts and name in layouts:
            lay = layouts[name]
            lay = lay.with_counts(np.bincount(lay.assign(col), minlength=lay.n_bins))
        else:
            lay = build_bins(col, cfg.max_bins)
        lays.append(lay)
    bins = [lay.assign(table[name]) for lay, name in zip(lays, features)]

    inits, bag_scores, logs = [], [], []
    for b in range(cfg.bags):
        init, sc, log = _boost_bag(bins, lays, y, link, cfg, b)
        inits.append(init)
        bag_scores.append(sc)
        logs.append(log)

    intercept = float(np.mean(inits))
    shapes = []
    for j, (name, lay) in enumerate(zip(features, lays)):
        theta = np.mean([bs[j] for bs in bag_scores], axis=0)
        mass = float(np.dot(lay.counts, theta) / lay.n)
        theta = theta - mass
        intercept += mass
        shapes.append(ShapeFunction(name, lay, theta))
    return GamModel(intercept, link, tuple(shapes), target, cfg, (), {"bags": logs})


# ----------------------------------------------------------------------------- views


@dataclass(frozen=True)
class IndicatorTerm:
    """One ``theta * 1{lo < x <= hi}`` term (or the missing / category indicator)."""

    bin: int
    lo: float
    hi: float
    theta: float
    count: float
    missing: bool = False
    category: str | None = None


def shape_of(model: GamModel, feature: str) -> ShapeFunction:
    return model.shape(feature)


def to_indicator_form(model: GamModel, feature: str) -> list[IndicatorTerm]:
    """The shape as a list of bin indicators with their coefficients.

    End bins carry infinite bounds because out-of-range values clamp into them.
    """
    s = model.shape(feature)
    lay = s.layout
    terms = []
    for k in range(lay.n_value_bins):
        if lay.kind == CATEGORICAL:
            terms.append(IndicatorTerm(k, math.nan, math.nan, float(s.scores[k]), float(lay.counts[k]),
                                       category=lay.categories[k]))
        else:
            lo, hi = lay.interval(k)
            terms.append(IndicatorTerm(k, lo, hi, float(s.scores[k]), float(lay.counts[k])))
    if lay.missing_bin is not None:
        sent = lay.sentinel if isinstance(lay.sentinel, (int, float)) else math.nan
        terms.append(IndicatorTerm(lay.missing_bin, sent, sent, float(s.scores[lay.missing_bin]),
                                   float(lay.counts[lay.missing_bin]), missing=True,
                                   category=lay.sentinel if isinstance(lay.sentinel, str) else None))
    return terms


def evaluate_indicator_form(terms: Sequence[IndicatorTerm], values: np.ndarray, absent: np.ndarray) -> np.ndarray:
    """Sum of indicator terms for numeric values (missing term fires on ``absent``)."""
    values = np.asarray(values, dtype=np.float64)
    absent = np.asarray(absent, dtype=bool)
    out = np.zeros(values.shape)
    for t in terms:
        if t.missing:
            out = out + np.where(absent, t.theta, 0.0)
        else:
            hit = ~absent & (values > t.lo) & (values <= t.hi)
            out = out + np.where(hit, t.theta, 0.0)
    return out


def variable_importance(model: GamModel) -> list[tuple[str, float]]:
    """Density-weighted mean absolute score per feature, largest first."""
    imp = []
    for s in model.shapes:
        n = s.layout.n
        val = float(np.dot(s.layout.counts, np.abs(s.scores)) / n) if n > 0 else 0.0
        imp.append((s.feature, val))
    order = sorted(range(len(imp)), key=lambda i: -imp[i][1])
    return [imp[i] for i in order]


def shape_records(shape: ShapeFunction, group: str | None = None) -> list[dict]:
    """Shape as JSON-ready ``(bin, lo, hi, theta, count)`` records."""
    lay = shape.layout
    out = []
    for k in range(lay.n_bins):
        rec: dict[str, Any] = {"bin": k, "theta": float(shape.scores[k]), "count": float(lay.counts[k])}
        if k == lay.missing_bin:
            rec.update(missing=True, value=lay.sentinel)
        elif lay.kind == CATEGORICAL:
            rec.update(missing=False, category=lay.categories[k])
        else:
            lo, hi = lay.interval(k, clamp=False)
            rec.update(missing=False, lo=lo, hi=hi)
        if group is not None:
            rec["group"] = group
        out.append(rec)
    return out


# ----------------------------------------------------------------------------- persistence


def model_to_dict(model: GamModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "link": model.link,
        "target": model.target,
        "intercept": model.intercept,
        "config": model.config.to_dict(),
        "shapes": [s.to_dict() for s in model.shapes],
        "history": [dict(h) for h in model.history],
        "fit_log": model.fit_log,
    }


def model_from_dict(d: Mapping) -> GamModel:
    if not isinstance(d, Mapping) or d.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a missinglens model document")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema version {d.get('schema_version')!r} (expected {SCHEMA_VERSION})")
    try:
        return GamModel(
            intercept=float(d["intercept"]), link=d["link"],
            shapes=tuple(ShapeFunction.from_dict(s) for s in d["shapes"]), target=d["target"],
            config=GamConfig.from_dict(d["config"]), history=tuple(d.get("history", ())),
            fit_log=d.get("fit_log", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model document: {exc}") from exc


def dumps_model(model: GamModel) -> str:
    return json.dumps(model_to_dict(model), indent=1)


def save_model(model: GamModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GamModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    return model_from_dict(doc)
