"""Semi-synthetic missingness generation and the benchmark harnesses.

:func:`make_surrogate` builds a complete clinical-looking table (the real
ICU data cannot be shipped). :func:`gen_missing` masks one feature under a
chosen mechanism. The two ``run_*`` functions repeat masking and diagnosis
over seeded replicates and aggregate the results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .gam import GamConfig, fit_gam, predict_proba
from .imputation import knn_classify
from .irls import fit_logistic_irls, predict_logistic
from .missingness import littles_test, stratified_split, wald_mcar_test
from .tabular import BINARY, CATEGORICAL, CONTINUOUS, Column, MissingEncoding, Table, encode_missing
from .trees import fit_random_forest, predict_forest_proba

MCAR, MAR, MNAR = "MCAR", "MAR", "MNAR"
MECHANISMS = (MCAR, MAR, MNAR)
SCORE_MODELS = ("linear", "curvilinear", "quadratic")
LOWEST, HIGHEST = "lowest", "highest"


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for masking ``target_feature``.

    ``protocol`` picks which extreme of the missingness score is masked for
    MAR/MNAR: ``lowest`` or ``highest``.
    """

    mechanism: str = MCAR
    p_m: float = 0.1
    score_model: str = "linear"
    target_feature: str = "age"
    noise_sd: float = 1.0
    seed: int = 0
    protocol: str = LOWEST

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise DataError(f"unknown mechanism {self.mechanism!r}")
        if self.score_model not in SCORE_MODELS:
            raise DataError(f"unknown score model {self.score_model!r}")
        if not 0 < self.p_m < 1:
            raise DataError(f"p_m must be in (0, 1), got {self.p_m}")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be non-negative")
        if self.protocol not in (LOWEST, HIGHEST):
            raise DataError(f"unknown protocol {self.protocol!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------- surrogate table

# name, loading on the shared severity factor, transform of the latent z
_SURROGATE_FEATURES: tuple[tuple[str, float, Callable[[np.ndarray], np.ndarray]], ...] = (
    ("age", 0.95, lambda z: np.clip(62 + 16 * z, 18, 99)),
    ("heart_rate", 0.95, lambda z: 86 + 17 * z),
    ("sys_bp", -0.95, lambda z: 122 + 21 * z),
    ("temperature", 0.70, lambda z: 37.0 + 0.7 * z),
    ("pf_ratio", -0.95, lambda z: np.exp(5.6 + 0.35 * z)),
    ("urea", 0.95, lambda z: np.exp(2.8 + 0.5 * z)),
    ("wbc", 0.90, lambda z: np.exp(2.3 + 0.4 * z)),
    ("potassium", 0.80, lambda z: 4.2 + 0.5 * z),
    ("sodium", -0.60, lambda z: 139 + 4 * z),
    ("bicarbonate", -0.95, lambda z: 24 + 4 * z),
    ("bilirubin", 0.95, lambda z: np.exp(0.1 + 0.8 * z)),
    ("gcs", -0.95, lambda z: np.clip(np.round(13 + 2.5 * z), 3, 15)),
    ("resp_rate", 0.95, lambda z: 20 + 5 * z),
    ("creatinine", 0.95, lambda z: np.exp(0.1 + 0.45 * z)),
)

# The outcome is logistic in the latent age score alone, centred so that
# prevalence is about one half. At prevalence 1/2 a missing-completely-at-
# random age leaves the missing bin's log-odds at zero; elsewhere averaging a
# strong age effect over the missing group shifts it away from zero.
_OUTCOME_WEIGHTS = {"age": 5.0}
_OUTCOME_INTERCEPT = 0.0


def surrogate_feature_names() -> list[str]:
    return [name for name, _, _ in _SURROGATE_FEATURES]


def make_surrogate(n: int = 5000, seed: int = 0, outcome: str = "outcome") -> Table:
    """Complete table of 14 correlated continuous features plus a binary outcome.

    Latent scores share one severity factor; each feature applies its own
    marginal transform (linear, log-normal, clipped or rounded). The outcome
    is logistic in the latent age score.
    """
    if n < 2:
        raise DataError("the surrogate needs at least two rows")
    rng = np.random.default_rng(seed)
    factor = rng.standard_normal(n)
    cols = []
    latent = {}
    for name, loading, transform in _SURROGATE_FEATURES:
        z = loading * factor + math.sqrt(1 - loading**2) * rng.standard_normal(n)
        latent[name] = z
        cols.append(Column(name, CONTINUOUS, np.round(transform(z), 2), np.zeros(n, bool)))
    logit = _OUTCOME_INTERCEPT + sum(w * latent[k] for k, w in _OUTCOME_WEIGHTS.items())
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(np.float64)
    cols.append(Column(outcome, BINARY, y, np.zeros(n, bool)))
    return Table.from_columns(cols, target=outcome)


# ----------------------------------------------------------------------------- masking


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def score_inputs(table: Table, spec: SynthSpec) -> list[str]:
    """Columns feeding the missingness score (numeric, excluding the label)."""
    names = []
    for c in table.columns:
        if c.kind == CATEGORICAL or c.name == table.target:
            continue
        if c.name == spec.target_feature and spec.mechanism != MNAR:
            continue
        names.append(c.name)
    return names


def missingness_score(X: np.ndarray, model: str, rng: np.random.Generator) -> np.ndarray:
    """Noise-free score of standardized inputs with N(0, 1) coefficients."""
    p = X.shape[1]
    w = rng.standard_normal(p)
    if model == "linear":
        return X @ w
    if model == "curvilinear":
        return np.tanh(X) @ w
    v = rng.standard_normal(p)
    return X @ w + (X**2) @ v


def gen_missing(table: Table, spec: SynthSpec) -> tuple[Table, np.ndarray]:
    """Mask ``spec.target_feature`` and return ``(masked table, mask)``."""
    if spec.target_feature not in table:
        raise SchemaError(f"no column {spec.target_feature!r}")
    col = table[spec.target_feature]
    if col.absent_mask().any():
        raise DataError(f"{spec.target_feature!r} must be fully observed before masking")
    n = table.n_rows
    rng = np.random.default_rng(spec.seed)
    if spec.mechanism == MCAR:
        mask = rng.random(n) < spec.p_m
    else:
        k = math.ceil(n * spec.p_m)
        if n * spec.p_m < 1:
            raise DataError(f"n * p_m = {n * spec.p_m:g} < 1: nothing would be masked")
        names = score_inputs(table, spec)
        if not names:
            raise DataError("no numeric inputs for the missingness score")
        X = _standardize(np.column_stack([table[c].values for c in names]))
        s = missingness_score(X, spec.score_model, rng)
        if spec.noise_sd > 0:
            s = s + spec.noise_sd * rng.standard_normal(n)
        order = np.argsort(s, kind="stable")
        rows = order[:k] if spec.protocol == LOWEST else order[n - k:]
        mask = np.zeros(n, bool)
        mask[rows] = True
    masked = Column(col.name, col.kind, col.values, col.missing_mask | mask, col.categories)
    return table.with_column(masked), mask


# ----------------------------------------------------------------------------- benchmarks

# Settings used by the benchmark harnesses (and the CLI ``simulate`` command).
# For the Wald benchmark, stumps fit on all rows (no bootstrap, no holdout)
# keep the missing-bin score close to the maximum likelihood value whose
# spread the Wald standard error describes.
WALD_GAM_CONFIG = GamConfig(max_bins=32, learning_rate=0.3, rounds=300, bags=1, max_depth=1,
                            bootstrap=False, early_stopping=False)
MISSINGNESS_GAM_CONFIG = GamConfig(max_bins=32, learning_rate=0.05, rounds=1000, bags=2, max_depth=2,
                                   bootstrap=False)
CLASSIFIERS = ("GAM", "LR", "RF", "KNN")


def replicate_seed(seed: int, *keys: int) -> int:
    """Seed for one replicate, a pure function of the base seed and its grid position."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def _binomial_se(rate: float, n: int) -> float:
    return math.sqrt(rate * (1 - rate) / n) if n > 0 else math.nan


def _run(fn, jobs: list, workers: int | None) -> list:
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass(frozen=True)
class RejectionRow:
    test: str
    mechanism: str
    p_m: float
    rate: float
    se: float
    n_reps: int
    n_flagged: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class McarBenchmark:
    rows: tuple[RejectionRow, ...]
    alpha: float
    n_reps: int
    seed: int
    target_feature: str

    def rate(self, test: str, mechanism: str, p_m: float) -> float:
        for r in self.rows:
            if r.test == test and r.mechanism == mechanism and math.isclose(r.p_m, p_m):
                return r.rate
        raise KeyError((test, mechanism, p_m))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "n_reps": self.n_reps, "seed": self.seed,
                "target_feature": self.target_feature, "rows": [r.to_dict() for r in self.rows]}

    def to_text(self) -> str:
        """Rejection proportions, one line per test, one column per (mechanism, p_m)."""
        cells = sorted({(r.mechanism, r.p_m) for r in self.rows}, key=lambda c: (MECHANISMS.index(c[0]), c[1]))
        head = ["test"] + [f"{m} {p:g}" for m, p in cells]
        lines = [head]
        for test in dict.fromkeys(r.test for r in self.rows):
            line = [test]
            for m, p in cells:
                line.append(f"{self.rate(test, m, p):.3f}")
            lines.append(line)
        return _align(lines)


def _align(lines: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    out = []
    for row in lines:
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(out) + "\n"


def _mcar_replicate(job) -> tuple[bool, bool, bool, bool]:
    base, spec, alpha, config = job
    masked, _ = gen_missing(base, spec)
    little = littles_test(masked)
    encoded = encode_missing(masked, spec.target_feature, MissingEncoding.below_min())
    model = fit_gam(encoded, base.target, config)
    wald = wald_mcar_test(model, encoded, spec.target_feature, alpha=alpha)
    return wald.reject_mcar, wald.flag is not None, little.p_value < alpha, bool(little.flags)


def run_mcar_benchmark(
    base_table: Table,
    p_ms: Sequence[float] = (0.1, 0.2, 0.3),
    n_reps: int = 200,
    alpha: float = 0.05,
    seed: int = 0,
    mechanisms: Sequence[str] = (MCAR, MAR),
    target_feature: str = "age",
    config: GamConfig | None = None,
    workers: int | None = None,
) -> McarBenchmark:
    """Rejection rates of the Wald and Little tests over masked replicates.

    MAR replicates use the linear score model and the lowest-score protocol.
    The missing target is encoded below its minimum before the GAM is fit.
    """
    if base_table.target is None:
        raise SchemaError("the base table needs a binary target")
    if n_reps < 1:
        raise DataError("n_reps must be >= 1")
    config = config or WALD_GAM_CONFIG
    jobs, keys = [], []
    for mi, mech in enumerate(mechanisms):
        for pi, pm in enumerate(p_ms):
            for r in range(n_reps):
                spec = SynthSpec(mech, float(pm), "linear", target_feature,
                                 seed=replicate_seed(seed, MECHANISMS.index(mech), pi, r))
                jobs.append((base_table, spec, alpha, config))
                keys.append((mech, float(pm)))
    results = _run(_mcar_replicate, jobs, workers)
    rows = []
    for test, col, flag_col in (("wald", 0, 1), ("little", 2, 3)):
        for mech in mechanisms:
            for pm in p_ms:
                hits = [res for k, res in zip(keys, results) if k == (mech, float(pm))]
                rate = sum(h[col] for h in hits) / len(hits)
                rows.append(RejectionRow(test, mech, float(pm), rate, _binomial_se(rate, len(hits)), len(hits),
                                         sum(h[flag_col] for h in hits)))
    return McarBenchmark(tuple(rows), alpha, n_reps, seed, target_feature)


@dataclass(frozen=True)
class AccuracyCell:
    classifier: str
    mechanism: str
    score_model: str
    p_m: float
    mean: float
    std: float
    accuracies: tuple[float, ...]

    def to_dict(self) -> dict:
        return {**asdict(self), "accuracies": list(self.accuracies)}


@dataclass(frozen=True)
class MissingnessBenchmark:
    cells: tuple[AccuracyCell, ...]
    n_reps: int
    seed: int
    target_feature: str

    def cell(self, classifier: str, mechanism: str, score_model: str, p_m: float) -> AccuracyCell:
        for c in self.cells:
            if (c.classifier, c.mechanism, c.score_model) == (classifier, mechanism, score_model) \
                    and math.isclose(c.p_m, p_m):
                return c
        raise KeyError((classifier, mechanism, score_model, p_m))

    def to_dict(self) -> dict:
        return {"n_reps": self.n_reps, "seed": self.seed, "target_feature": self.target_feature,
                "cells": [c.to_dict() for c in self.cells]}

    def to_text(self) -> str:
        """Mean ± std accuracy; rows are classifiers, columns (score model, p_m)."""
        grid = list(dict.fromkeys((c.mechanism, c.score_model, c.p_m) for c in self.cells))
        lines = [["classifier"] + [f"{m}-{s} {p:g}" for m, s, p in grid]]
        for clf in dict.fromkeys(c.classifier for c in self.cells):
            line = [clf]
            for m, s, p in grid:
                c = self.cell(clf, m, s, p)
                line.append(f"{c.mean:.3f}±{c.std:.3f}")
            lines.append(line)
        return _align(lines)


def _standardize_split(X: np.ndarray, train: np.ndarray) -> np.ndarray:
    mu = X[train].mean(axis=0)
    sd = X[train].std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def _missingness_replicate(job) -> dict[str, float]:
    base, spec, classifiers, config, include_label, test_frac, n_trees = job
    _, mask = gen_missing(base, spec)
    y = mask.astype(np.float64)
    names = [c.name for c in base.columns if c.name != spec.target_feature and c.kind != CATEGORICAL
             and (include_label or c.name != base.target)]
    train, test = stratified_split(y, test_frac, spec.seed)
    X = np.column_stack([base[c].values.astype(np.float64) for c in names])
    out = {}
    for clf in classifiers:
        if clf == "GAM":
            cols = [base[c] for c in names] + [Column("__missing__", BINARY, y, np.zeros(y.size, bool))]
            tab = Table.from_columns(cols, target="__missing__")
            model = fit_gam(tab.take(train), "__missing__", config)
            pred = predict_proba(model, tab.take(test)) >= 0.5
        elif clf == "LR":
            Z = _standardize_split(X, train)
            D = np.column_stack([np.ones(y.size), Z])
            fit = fit_logistic_irls(D[train], y[train], ridge=np.r_[0.0, np.full(Z.shape[1], 1e-6)])
            pred = predict_logistic(fit.coef, D[test]) >= 0.5
        elif clf == "RF":
            forest = fit_random_forest(X[train], y[train], n_trees=n_trees, seed=spec.seed, classification=True)
            proba = predict_forest_proba(forest, X[test])
            pred = proba[:, list(forest.classes).index(1.0)] >= 0.5 if 1.0 in forest.classes \
                else np.zeros(test.size, bool)
        elif clf == "KNN":
            Z = _standardize_split(X, train)
            pred = knn_classify(Z[train], y[train], Z[test], k=5) >= 0.5
        else:
            raise DataError(f"unknown classifier {clf!r}")
        out[clf] = float(np.mean(pred == (y[test] == 1.0)))
    return out


def run_missingness_benchmark(
    base_table: Table,
    mechanisms: Sequence[str] = (MAR,),
    score_models: Sequence[str] = SCORE_MODELS,
    p_ms: Sequence[float] = (0.1, 0.2, 0.3),
    n_reps: int = 20,
    seed: int = 0,
    classifiers: Sequence[str] = CLASSIFIERS,
    target_feature: str = "age",
    config: GamConfig | None = None,
    include_label: bool = False,
    test_frac: float = 0.2,
    n_trees: int = 100,
    workers: int | None = None,
) -> MissingnessBenchmark:
    """Held-out accuracy of each classifier at predicting the generated mask."""
    if n_reps < 1:
        raise DataError("n_reps must be >= 1")
    for clf in classifiers:
        if clf not in CLASSIFIERS:
            raise DataError(f"unknown classifier {clf!r}")
    config = config or MISSINGNESS_GAM_CONFIG
    jobs, keys = [], []
    for mech in mechanisms:
        for si, sm in enumerate(score_models):
            for pi, pm in enumerate(p_ms):
                for r in range(n_reps):
                    spec = SynthSpec(mech, float(pm), sm, target_feature,
                                     seed=replicate_seed(seed, MECHANISMS.index(mech), SCORE_MODELS.index(sm),
                                                         pi, r))
                    jobs.append((base_table, spec, tuple(classifiers), config, include_label, test_frac, n_trees))
                    keys.append((mech, sm, float(pm)))
    results = _run(_missingness_replicate, jobs, workers)
    cells = []
    for key in dict.fromkeys(keys):
        hits = [res for k, res in zip(keys, results) if k == key]
        for clf in classifiers:
            acc = np.array([h[clf] for h in hits])
            cells.append(AccuracyCell(clf, key[0], key[1], key[2], float(acc.mean()), float(acc.std()),
                                      tuple(acc.tolist())))
    return MissingnessBenchmark(tuple(cells), n_reps, seed, target_feature)


# ----------------------------------------------------------------------------- scenario tables


def _col(name: str, values: np.ndarray, missing: np.ndarray | None = None, kind: str = CONTINUOUS) -> Column:
    n = values.shape[0]
    return Column(name, kind, values, np.zeros(n, bool) if missing is None else missing)


ADDITIVE_TRUTH: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: 1.5 * x,
    "sine": lambda x: np.sin(2.0 * x),
    "step": lambda x: np.where(x > 0.25, 1.0, 0.0),
    "constant": lambda x: np.zeros_like(x),
}


def make_additive_truth(n: int = 5000, noise_sd: float = 0.1, seed: int = 0, outcome: str = "y") -> Table:
    """Regression table ``y = 0.5 + sum_j f_j(x_j) + noise`` with the four :data:`ADDITIVE_TRUTH` effects.

    Every input is uniform on [-2, 2].
    """
    rng = np.random.default_rng(seed)
    cols, y = [], np.full(n, 0.5)
    for name, f in ADDITIVE_TRUTH.items():
        x = rng.uniform(-2.0, 2.0, n)
        y = y + f(x)
        cols.append(_col(name, x))
    y = y + noise_sd * rng.standard_normal(n)
    cols.append(_col(outcome, y))
    return Table.from_columns(cols, target=outcome)


def _bernoulli(rng: np.random.Generator, logit: np.ndarray) -> np.ndarray:
    return (rng.random(logit.shape[0]) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)


def make_spike_surrogate(
    n: int = 5000,
    seed: int = 0,
    missing_rate: float = 0.4,
    offset: float = 1.0,
    n_clean: int = 3,
    feature: str = "pf_ratio",
    outcome: str = "outcome",
) -> Table:
    """Binary-outcome table where ``feature`` is missing for a group with shifted risk.

    The missing rows (a ``missing_rate`` share, chosen at random) get ``offset``
    added to their outcome log-odds, so mean-imputing ``feature`` parks a
    group with different risk in the bin holding the mean. ``n_clean``
    further fully observed features carry smooth effects.
    """
    if not 0 < missing_rate < 1:
        raise DataError("missing_rate must be in (0, 1)")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    pf = np.round(np.exp(5.6 + 0.35 * z), 1)
    logit = -0.5 - 0.8 * z
    cols = []
    missing = rng.random(n) < missing_rate
    logit = logit + offset * missing
    for j in range(n_clean):
        x = np.round(rng.standard_normal(n), 3)
        logit = logit + 0.6 * np.tanh((j % 3 + 1) * 0.5 * x) * (1 if j % 2 == 0 else -1)
        cols.append(_col(f"clean_{j + 1}", x))
    y = _bernoulli(rng, logit)
    cols.insert(0, _col(feature, np.where(missing, np.nan, pf), missing))
    cols.append(_col(outcome, y, kind=BINARY))
    return Table.from_columns(cols, target=outcome)


def make_clean_surrogate(n: int = 5000, seed: int = 0, n_features: int = 10, outcome: str = "outcome") -> Table:
    """Fully observed features with smooth (linear, tanh or quadratic) effects on a binary outcome."""
    rng = np.random.default_rng(seed)
    logit = np.zeros(n)
    cols = []
    for j in range(n_features):
        x = np.round(rng.standard_normal(n), 3)
        kind = j % 3
        if kind == 0:
            eff = 0.4 * x
        elif kind == 1:
            eff = 0.8 * np.tanh(x)
        else:
            eff = 0.25 * (x**2 - 1)
        logit = logit + (eff if j % 2 == 0 else -eff)
        cols.append(_col(f"x{j + 1}", x))
    cols.append(_col(outcome, _bernoulli(rng, logit), kind=BINARY))
    return Table.from_columns(cols, target=outcome)


@dataclass(frozen=True)
class AssumedNormalScenario:
    """Table with ``feature`` missing mostly for healthy rows, plus the hidden truth."""

    table: Table
    feature: str
    true_values: np.ndarray
    mask: np.ndarray

    @property
    def missing_group_mean(self) -> float:
        return float(self.true_values[self.mask].mean())


def make_assumed_normal_surrogate(
    n: int = 5000,
    seed: int = 0,
    missing_rate: float = 0.3,
    feature: str = "pf_ratio",
    outcome: str = "outcome",
) -> AssumedNormalScenario:
    """Values skipped because they were presumed normal.

    ``feature`` (higher = healthier) is masked preferentially at its healthy
    end; the other features are only weakly correlated with it, so an imputer
    cannot tell that the missing rows are healthy. The outcome risk falls as
    ``feature`` rises.
    """
    rng = np.random.default_rng(seed)
    severity = rng.standard_normal(n)
    z = 0.3 * severity + math.sqrt(1 - 0.09) * rng.standard_normal(n)
    pf = np.round(np.exp(5.6 + 0.35 * z), 1)
    cols = []
    for name, loc, scale in (("heart_rate", 86, 17), ("resp_rate", 20, 5), ("urea", 2.8, 0.5), ("age", 62, 16)):
        x = 0.3 * severity + math.sqrt(1 - 0.09) * rng.standard_normal(n)
        vals = np.exp(loc + scale * x) if name == "urea" else loc + scale * x
        cols.append(_col(name, np.round(vals, 2)))
    logit = -0.8 - 1.2 * z + 0.3 * severity
    y = _bernoulli(rng, logit)
    k = math.ceil(n * missing_rate)
    order = np.argsort(-(z + 0.5 * rng.standard_normal(n)), kind="stable")
    mask = np.zeros(n, bool)
    mask[order[:k]] = True
    cols.insert(0, _col(feature, np.where(mask, np.nan, pf), mask))
    cols.append(_col(outcome, y, kind=BINARY))
    return AssumedNormalScenario(Table.from_columns(cols, target=outcome), feature, pf, mask)


def make_chained_surrogate(
    n: int = 5000,
    seed: int = 0,
    rate_a: float = 0.3,
    rate_b_extra: float = 0.02,
    outcome: str = "outcome",
) -> Table:
    """``sodium`` is always missing when ``bilirubin`` is, and otherwise missing at a constant low rate.

    Missing bilirubin also marks a higher-risk group, and observed bilirubin
    has no effect on sodium's missingness.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 4))
    bili = np.round(np.exp(0.1 + 0.8 * z[:, 0]), 2)
    sodium = np.round(139 + 4 * z[:, 1], 1)
    urea = np.round(np.exp(2.8 + 0.5 * z[:, 2]), 2)
    age = np.round(np.clip(62 + 16 * z[:, 3], 18, 99), 0)
    miss_a = rng.random(n) < rate_a
    miss_b = miss_a | (rng.random(n) < rate_b_extra)
    logit = -1.0 + 0.5 * z[:, 2] + 0.4 * z[:, 3] + 1.0 * miss_a
    y = _bernoulli(rng, logit)
    cols = [
        _col("bilirubin", np.where(miss_a, np.nan, bili), miss_a),
        _col("sodium", np.where(miss_b, np.nan, sodium), miss_b),
        _col("urea", urea),
        _col("age", age),
        _col(outcome, y, kind=BINARY),
    ]
    return Table.from_columns(cols, target=outcome)
