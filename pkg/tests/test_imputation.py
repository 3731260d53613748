from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missinglens.errors import DataError, SchemaError
from missinglens.gam import BinLayout, GamModel, ShapeFunction, fit_gam
from missinglens.imputation import (
    HARMFUL,
    HARMLESS,
    NOT_APPLICABLE,
    ImputerConfig,
    audit_imputation,
    impute,
    impute_iterative_forest,
    impute_knn,
    impute_simple,
    imputation_provenance,
    second_order_diff,
    second_order_diff_arrays,
)
from missinglens.synthgen import make_assumed_normal_surrogate, make_spike_surrogate
from missinglens.tabular import BINARY, CONTINUOUS, Column, Table, column_stats, make_column


def _num(name, vals, kind=CONTINUOUS):
    vals = np.asarray(vals, dtype=float)
    return Column(name, kind, vals, np.isnan(vals))


def _t(*cols, target=None):
    return Table.from_columns(list(cols), target=target)


def _shape(name, edges, scores, counts=None):
    nv = len(edges) - 1
    counts = np.ones(nv) if counts is None else np.asarray(counts, float)
    return ShapeFunction(name, BinLayout(CONTINUOUS, np.array(edges, float), (), counts), np.array(scores, float))


# ---------------------------------------------------------------- simple imputation


def test_mean_fill():
    t = impute_simple(_t(_num("x", [1, np.nan, 3])), "x", "mean")
    assert t["x"].values.tolist() == [1, 2, 3]
    assert not t["x"].missing_mask.any()
    assert t["x"].imputed_mask.tolist() == [False, True, False]


def test_median_fill():
    t = impute_simple(_t(_num("x", [1, np.nan, 3, 100])), "x", "median")
    assert t["x"].values[1] == 3


def test_mean_is_a_fixed_point():
    rng = np.random.default_rng(0)
    x = rng.exponential(size=500)
    x[rng.random(500) < 0.4] = np.nan
    t = _t(_num("x", x))
    after = impute_simple(t, "x", "mean")
    assert after["x"].values.mean() == pytest.approx(column_stats(t, "x").mean, abs=1e-12)


def test_provenance_records_every_filled_cell():
    t = impute_simple(_t(_num("x", [np.nan, 1, np.nan]), _num("y", [1, 2, 3])), "x", "constant", -1)
    assert imputation_provenance(t) == [{"row": 0, "column": "x", "method": "constant"},
                                        {"row": 2, "column": "x", "method": "constant"}]


def test_simple_fill_errors():
    with pytest.raises(DataError):
        impute_simple(_t(_num("x", [np.nan, np.nan])), "x", "mean")
    with pytest.raises(SchemaError):
        impute_simple(_t(make_column("c", ["a", None])), "c", "mean")
    with pytest.raises(DataError):
        ImputerConfig(method="knn", k=0)
    with pytest.raises(DataError):
        ImputerConfig(method="iterative_forest", max_iter=0)


def test_dispatch_skips_target_and_complete_columns():
    t = _t(_num("x", [1, np.nan, 3]), _num("y", [0, 1, np.nan], BINARY), target="y")
    out = impute(t, ImputerConfig(method="mean"))
    assert out["x"].values[1] == 2
    assert out["y"].missing_mask.tolist() == [False, False, True]


# ---------------------------------------------------------------- KNN


def test_knn_with_all_neighbours_is_leave_one_out_mean():
    rng = np.random.default_rng(1)
    x = rng.normal(size=12)
    z = rng.normal(size=12)
    x[3] = np.nan
    t = _t(_num("x", x), _num("z", z))
    out = impute_knn(t, k=11)
    assert out["x"].values[3] == pytest.approx(np.nanmean(x))


def test_knn_duplicate_row_donates_its_value():
    t = _t(_num("x", [5.0, np.nan, 1.0, 9.0]), _num("z", [0.3, 0.3, 2.0, -2.0]))
    assert impute_knn(t, k=1)["x"].values[1] == 5.0


def test_knn_stays_inside_the_right_cluster():
    rng = np.random.default_rng(2)
    a = np.concatenate([rng.normal(0, 0.3, (50, 3)), rng.normal(10, 0.3, (50, 3))])
    x = a[:, 0].copy()
    x[7] = np.nan
    t = _t(_num("x", x), _num("b", a[:, 1]), _num("c", a[:, 2]))
    assert -1 <= impute_knn(t, k=3)["x"].values[7] <= 1


def test_knn_k_bound_and_fallback():
    t = _t(_num("x", [1.0, np.nan, 3.0]), _num("z", [np.nan, 1.0, np.nan]))
    with pytest.raises(DataError):
        impute_knn(t, k=3)
    out = impute_knn(t, k=1)
    # row 1 shares no observed feature with any donor
    assert out["x"].values[1] == 2.0
    assert out["x"].meta["knn_fallback_rows"] == [1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_imputers_never_touch_observed_cells(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    X[:, 1] += X[:, 0]
    holes = rng.random(X.shape) < 0.2
    holes[0] = False  # keep at least one complete row
    M = np.where(holes, np.nan, X)
    t = _t(*[_num(f"v{j}", M[:, j]) for j in range(3)])
    cfg = ImputerConfig(method="iterative_forest", n_trees=10, max_iter=3, seed=seed)
    for out in (impute_knn(t, k=3), impute_iterative_forest(t, cfg)):
        for j in range(3):
            col = out[f"v{j}"]
            assert np.array_equal(col.values[~holes[:, j]], X[~holes[:, j], j])
            assert not col.missing_mask.any()


# ---------------------------------------------------------------- iterative forest


def test_forest_on_complete_table_is_identity():
    t = _t(_num("x", [1.0, 2.0, 3.0]), _num("z", [3.0, 1.0, 2.0]))
    assert impute_iterative_forest(t) is t


def test_forest_beats_mean_on_a_linear_pair():
    rng = np.random.default_rng(3)
    x = rng.normal(size=2000)
    y = 2 * x
    hole = rng.random(2000) < 0.2
    t = _t(_num("x", x), _num("y", np.where(hole, np.nan, y)))
    out = impute_iterative_forest(t, ImputerConfig(method="iterative_forest", n_trees=30, seed=0))
    rmse_rf = np.sqrt(np.mean((out["y"].values[hole] - y[hole]) ** 2))
    rmse_mean = np.sqrt(np.mean((np.mean(y[~hole]) - y[hole]) ** 2))
    assert rmse_rf < 0.5 * rmse_mean


def test_forest_is_deterministic_given_seed():
    sc = make_assumed_normal_surrogate(n=600, seed=4)
    cfg = ImputerConfig(method="iterative_forest", n_trees=20, seed=9)
    a = impute_iterative_forest(sc.table, cfg)[sc.feature].values
    b = impute_iterative_forest(sc.table, cfg)[sc.feature].values
    assert np.array_equal(a, b)


def test_assumed_normal_rows_imputed_too_low():
    sc = make_assumed_normal_surrogate(n=1500, seed=5)
    knn = impute_knn(sc.table, k=5)[sc.feature].values[sc.mask]
    rf = impute_iterative_forest(sc.table, ImputerConfig(method="iterative_forest", n_trees=30))
    assert knn.mean() < sc.missing_group_mean
    assert rf[sc.feature].values[sc.mask].mean() < sc.missing_group_mean


# ---------------------------------------------------------------- second differences


def test_affine_scores_have_zero_curvature():
    assert np.allclose(second_order_diff(_shape("a", [0, 1, 2, 3, 4], [0, 1, 2, 3])), 0.0)


def test_single_peak_by_hand():
    assert second_order_diff(_shape("a", [0, 1, 2, 3], [0, 1, 0])).tolist() == [-1.0]


def test_zero_function_with_uneven_widths():
    assert second_order_diff(_shape("a", [0, 1, 3, 4], [0, 0, 0])).tolist() == [0.0]


def test_three_bin_value_matches_exact_arithmetic():
    f = [Fraction(3, 10), Fraction(-1, 5), Fraction(1, 2)]
    h = [Fraction(1), Fraction(2), Fraction(1, 2)]
    exact = ((f[2] - f[1]) / ((h[2] + h[1]) / 2) - (f[1] - f[0]) / ((h[1] + h[0]) / 2)) / (h[1] + h[2] / 2 + h[0] / 2)
    got = second_order_diff(_shape("a", [0, 1, 3, 3.5], [0.3, -0.2, 0.5]))
    assert got.size == 1
    assert abs(got[0] - float(exact)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 20), min_size=3, max_size=12), st.floats(-5, 5), st.floats(-5, 5))
def test_linear_in_bin_centres_has_zero_curvature(widths, a, b):
    h = np.array(widths)
    centres = np.cumsum(h) - h / 2
    out = second_order_diff_arrays(a + b * centres, h)
    assert out.size == h.size - 2
    assert np.allclose(out, 0.0, atol=1e-9 * (1 + abs(b)))


def test_second_difference_errors():
    with pytest.raises(DataError):
        second_order_diff_arrays([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(DataError):
        second_order_diff_arrays([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])


# ---------------------------------------------------------------- audit


def _hand_audit_table(n_features, n=400, seed=0):
    rng = np.random.default_rng(seed)
    cols = [_num(f"x{j}", rng.uniform(0, 10, n)) for j in range(n_features)]
    return _t(*cols, _num("y", rng.integers(0, 2, n), BINARY), target="y")


def _grid_shape(name, scores):
    edges = np.linspace(0, 10, len(scores) + 1)
    return _shape(name, edges, scores, np.full(len(scores), 40.0))


def test_linear_shapes_flag_nothing():
    t = _hand_audit_table(3)
    shapes = tuple(_grid_shape(f"x{j}", np.linspace(-1, 1, 10) * (j + 1)) for j in range(3))
    audits = audit_imputation(GamModel(0.0, "logistic", shapes, "y"), t)
    for a in audits.values():
        assert a.verdict == HARMLESS and a.flagged_bins == ()
        assert a.bin_diffs.size == 8


def test_spike_at_the_mean_is_harmful():
    t = _hand_audit_table(6, seed=1)
    rng = np.random.default_rng(1)
    shapes = []
    for j in range(6):
        s = 0.3 * np.sin(np.linspace(0, 3, 20) + j) + 0.01 * rng.normal(size=20)
        shapes.append(_grid_shape(f"x{j}", s))
    k = shapes[0].layout.locate(float(t["x0"].values.mean()))
    bumped = shapes[0].scores.copy()
    bumped[k] += 1.5
    shapes[0] = ShapeFunction("x0", shapes[0].layout, bumped)
    audits = audit_imputation(GamModel(0.0, "logistic", tuple(shapes), "y"), t)
    a = audits["x0"]
    assert a.mean_bin == k and k in a.flagged_bins
    assert a.verdict == HARMFUL
    assert all((x.mean_bin in x.flagged_bins) == (x.verdict == HARMFUL) for x in audits.values())


def test_not_applicable_without_three_bins():
    t = _hand_audit_table(1)
    m = GamModel(0.0, "logistic", (_grid_shape("x0", [0.1, -0.1]),), "y")
    assert audit_imputation(m, t)["x0"].verdict == NOT_APPLICABLE


def test_audit_argument_errors():
    t = _hand_audit_table(1)
    m = GamModel(0.0, "logistic", (_grid_shape("x0", [0.1, 0.0, -0.1]),), "y")
    with pytest.raises(DataError):
        audit_imputation(m, t, statistic="mode")
    with pytest.raises(DataError):
        audit_imputation(m, t, contamination=1.0)


@pytest.fixture(scope="module")
def spike_case():
    t = impute_simple(make_spike_surrogate(seed=0), "pf_ratio", "mean")
    return t, fit_gam(t, "outcome")


def test_mean_imputed_spike_is_flagged(spike_case):
    t, m = spike_case
    a = audit_imputation(m, t)["pf_ratio"]
    assert a.verdict == HARMFUL
    assert a.mean_value == pytest.approx(column_stats(t, "pf_ratio").mean)
    assert a.mean_bin == m.shape("pf_ratio").layout.locate(a.mean_value)
    assert 0.2 <= a.missing_rate <= 0.6


@pytest.mark.xfail(strict=True, reason="seed 0 flags clean_3: the fixed 5% outlier budget lands on "
                                        "central-bin noise; see notes/decisions.md")
def test_complete_features_harmless_in_spike_table(spike_case):
    t, m = spike_case
    audits = audit_imputation(m, t)
    assert all(audits[f].verdict == HARMLESS for f in ("clean_1", "clean_2", "clean_3"))


def test_audit_deterministic_and_threshold_monotone(spike_case):
    t, m = spike_case
    a = audit_imputation(m, t, seed=3)
    b = audit_imputation(m, t, seed=3)
    assert {k: v.to_dict() for k, v in a.items()} == {k: v.to_dict() for k, v in b.items()}
    prev = None
    for c in (0.01, 0.03, 0.05, 0.1, 0.2):
        flagged = {(f, k) for f, x in audit_imputation(m, t, contamination=c, seed=3).items() for k in x.flagged_bins}
        if prev is not None:
            assert prev <= flagged
        prev = flagged


def test_median_statistic_uses_median_bin(spike_case):
    t, m = spike_case
    a = audit_imputation(m, t, statistic="median")["pf_ratio"]
    assert a.median_bin == m.shape("pf_ratio").layout.locate(a.median_value)
    assert (a.verdict == HARMFUL) == (a.median_bin in a.flagged_bins)
