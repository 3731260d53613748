import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missinglens.errors import DataError, ParseError, SchemaError
from missinglens.tabular import (
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    Column,
    MissingEncoding,
    Table,
    column_stats,
    decode_missing,
    encode_missing,
    load_csv,
    make_column,
    missingness_indicator,
    write_csv,
)


def _csv(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _num(name, vals):
    vals = np.asarray(vals, dtype=float)
    return Column(name, CONTINUOUS, vals, np.isnan(vals))


# ---------------------------------------------------------------- load_csv


def test_missing_tokens_mark_cells(tmp_path):
    t = load_csv(_csv(tmp_path, "a,b\n1,x\n,y\n3,\n"))
    assert t.n_rows == 3
    assert t["a"].missing_mask.tolist() == [False, True, False]
    assert t["b"].missing_mask.tolist() == [False, False, True]
    assert t["a"].kind == CONTINUOUS
    assert t["b"].kind == CATEGORICAL


def test_header_only_gives_empty_table(tmp_path):
    t = load_csv(_csv(tmp_path, "a,b\n"))
    assert t.n_rows == 0
    assert t.names == ["a", "b"]


def test_non_numeric_cell_makes_column_categorical(tmp_path):
    t = load_csv(_csv(tmp_path, "v\n1\n2\noops\n"))
    col = t["v"]
    assert col.kind == CATEGORICAL
    assert col.categories == ("1", "2", "oops")  # first-appearance order


def test_ragged_row_reports_line_number(tmp_path):
    with pytest.raises(ParseError) as err:
        load_csv(_csv(tmp_path, "a,b\n1,2\n3\n"))
    assert err.value.row == 3


def test_duplicate_header_rejected(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(_csv(tmp_path, "a,a\n1,2\n"))


def test_tokens_are_trimmed_and_configurable(tmp_path):
    p = _csv(tmp_path, "a\n 1 \n NA \n?\n")
    assert load_csv(p, schema={"a": "categorical"})["a"].missing_mask.tolist() == [False, True, False]
    t = load_csv(p, missing_tokens={"?", "NA"})
    assert t["a"].kind == CONTINUOUS
    assert t["a"].missing_mask.tolist() == [False, True, True]


def test_schema_override_and_bad_numeric_cell(tmp_path):
    p = _csv(tmp_path, "a,y\n1,0\n2,1\n")
    t = load_csv(p, schema={"y": "binary"}, target="y")
    assert t["y"].kind == BINARY and t.target == "y"
    with pytest.raises(ParseError):
        load_csv(_csv(tmp_path, "a\nx\n", "bad.csv"), schema={"a": "continuous"})
    with pytest.raises(SchemaError):
        load_csv(p, schema={"nope": "continuous"})


def test_csv_round_trip_preserves_values(tmp_path):
    src = _csv(tmp_path, "a,b,c\n0.1,x,1e-300\n,y,2\n-3.25,,\n")
    t = load_csv(src)
    out = tmp_path / "out.csv"
    write_csv(t, out)
    back = load_csv(out)
    for name in t.names:
        a, b = t[name], back[name]
        assert a.missing_mask.tolist() == b.missing_mask.tolist()
        assert np.array_equal(a.values, b.values, equal_nan=a.kind != CATEGORICAL)
    assert out.read_text().splitlines()[2].endswith(",y,2")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), finite), min_size=1, max_size=20))
def test_round_trip_property(tmp_path_factory, cells):
    vals = np.array([np.nan if c is None else c for c in cells])
    t = Table((_num("v", vals),))
    p = tmp_path_factory.mktemp("rt") / "v.csv"
    write_csv(t, p)
    back = load_csv(p, schema={"v": "continuous"})["v"]
    assert back.missing_mask.tolist() == [c is None for c in cells]
    obs = ~back.missing_mask
    assert np.array_equal(back.values[obs], vals[obs])  # bit-for-bit


# ---------------------------------------------------------------- table invariants


def test_table_invariants():
    a = _num("a", [1, 2])
    with pytest.raises(SchemaError):
        Table((a, _num("a", [3, 4])))
    with pytest.raises(SchemaError):
        Table((a, _num("b", [1, 2, 3])))
    with pytest.raises(SchemaError):
        Table((a,), target_index=2)
    with pytest.raises(DataError):
        Column("x", CONTINUOUS, np.array([np.inf]), np.array([False]))


def test_make_column_infers_kind():
    assert make_column("c", ["a", None, "b"]).kind == CATEGORICAL
    c = make_column("n", [1.0, None, 3.0])
    assert c.kind == CONTINUOUS and c.missing_mask.tolist() == [False, True, False]


# ---------------------------------------------------------------- encode_missing


def _t(vals):
    return Table((_num("x", vals),))


def test_fixed_sentinel():
    t = encode_missing(_t([2, np.nan, 5]), "x", MissingEncoding.fixed(-5))
    col = t["x"]
    assert col.values.tolist() == [2, -5, 5]
    assert col.sentinel == -5
    assert not col.missing_mask.any()


def test_below_min_sentinel():
    col = encode_missing(_t([2, np.nan, 5]), "x", MissingEncoding.below_min())["x"]
    assert col.sentinel == pytest.approx(1.85, abs=1e-12)
    assert col.values[1] == col.sentinel


def test_no_missing_cells_is_identity():
    col = encode_missing(_t([1, 2, 3]), "x", MissingEncoding.below_min())["x"]
    assert col.values.tolist() == [1, 2, 3]
    assert col.sentinel is None
    assert col.meta["note"] == "no sentinel used"


def test_fixed_sentinel_inside_range_rejected():
    with pytest.raises(DataError):
        encode_missing(_t([2, np.nan, 5]), "x", MissingEncoding.fixed(3))


def test_categorical_separate_category():
    c = make_column("c", ["a", None, "b"])
    t = encode_missing(Table((c,)), "c", MissingEncoding.category())
    col = t["c"]
    assert col.categories[-1] == col.sentinel
    assert col.sentinel_mask().tolist() == [False, True, False]
    assert decode_missing(t, "c")["c"].missing_mask.tolist() == [False, True, False]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=2, max_size=30))
def test_encode_decode_recovers_mask(cells):
    vals = np.array([np.nan if c is None else c for c in cells])
    t = _t(vals)
    back = decode_missing(encode_missing(t, "x", MissingEncoding.below_min()), "x")["x"]
    assert back.missing_mask.tolist() == t["x"].missing_mask.tolist()
    obs = ~back.missing_mask
    assert np.array_equal(back.values[obs], vals[obs])


# ---------------------------------------------------------------- indicator and stats


@pytest.mark.parametrize(
    "vals, expected",
    [([1, np.nan, 3], [0, 1, 0]), ([1, 2, 3], [0, 0, 0]), ([np.nan, np.nan], [1, 1])],
)
def test_missingness_indicator(vals, expected):
    ind = missingness_indicator(_t(vals), "x")
    assert ind.kind == BINARY
    assert ind.values.tolist() == expected


def test_indicator_counts_sentinel_cells():
    t = encode_missing(_t([1, np.nan, 3]), "x", MissingEncoding.fixed(-1))
    assert missingness_indicator(t, "x").values.tolist() == [0, 1, 0]


def test_column_stats_examples():
    s = column_stats(_t([1, 2, 3, np.nan]), "x")
    assert s.mean == 2 and s.missing_rate == 0.25
    s = column_stats(_t([5, 5, 5]), "x")
    assert s.min == s.max == s.mean == s.median == 5
    s = column_stats(_t([np.nan, np.nan]), "x")
    assert not s.defined and math.isnan(s.mean) and s.missing_rate == 1


def test_observed_mean_reported_at_high_missing_rate():
    vals = np.full(10, np.nan)
    vals[:4] = [300.0, 320.0, 330.4, 344.0]
    s = column_stats(_t(vals), "x")
    assert s.missing_rate == pytest.approx(0.6)
    assert s.mean == pytest.approx(323.6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.integers(0, 10))
def test_masked_rows_never_change_stats(obs, extra):
    base = column_stats(_t(obs), "x")
    more = column_stats(_t(list(obs) + [np.nan] * extra), "x")
    assert (base.mean, base.median, base.min, base.max) == (more.mean, more.median, more.min, more.max)
