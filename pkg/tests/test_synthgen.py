import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missinglens.errors import DataError, SchemaError
from missinglens.synthgen import (
    ADDITIVE_TRUTH,
    MAR,
    MCAR,
    MNAR,
    SynthSpec,
    gen_missing,
    make_additive_truth,
    make_assumed_normal_surrogate,
    make_chained_surrogate,
    make_clean_surrogate,
    make_spike_surrogate,
    make_surrogate,
    replicate_seed,
    run_mcar_benchmark,
    run_missingness_benchmark,
    score_inputs,
    surrogate_feature_names,
)
from missinglens.tabular import BINARY, CONTINUOUS, Column, Table


def _num(name, vals, kind=CONTINUOUS):
    vals = np.asarray(vals, dtype=float)
    return Column(name, kind, vals, np.isnan(vals))


@pytest.fixture(scope="module")
def base():
    return make_surrogate(n=1000, seed=0)


def test_surrogate_layout():
    t = make_surrogate(n=200, seed=1)
    assert t.names[:-1] == surrogate_feature_names()
    assert len(surrogate_feature_names()) == 14
    assert t.target == "outcome" and t["outcome"].kind == BINARY
    assert not any(c.absent_mask().any() for c in t.columns)


def test_mcar_fraction_within_three_sigma():
    t = make_surrogate(n=10_000, seed=2)
    _, mask = gen_missing(t, SynthSpec(MCAR, 0.2, seed=3))
    assert abs(mask.mean() - 0.2) <= 0.012


def test_mar_linear_masks_lowest_scores(base):
    spec = SynthSpec(MAR, 0.1, "linear", seed=4, noise_sd=0.0)
    masked, mask = gen_missing(base, spec)
    assert mask.sum() == 100
    assert masked["age"].missing_mask.sum() == 100
    # replay the score draw: same seed, same inputs
    from missinglens.synthgen import _standardize, missingness_score

    X = _standardize(np.column_stack([base[c].values for c in score_inputs(base, spec)]))
    s = missingness_score(X, "linear", np.random.default_rng(4))
    assert s[mask].mean() < s[~mask].mean()
    assert s[mask].max() <= s[~mask].min()


def test_mnar_with_only_the_target_masks_an_extreme():
    x = np.random.default_rng(5).normal(size=300)
    t = Table.from_columns([_num("x", x), _num("y", np.zeros(300), BINARY)], target="y")
    spec = SynthSpec(MNAR, 0.1, target_feature="x", noise_sd=0.0, seed=6)
    assert score_inputs(t, spec) == ["x"]
    _, mask = gen_missing(t, spec)
    order = np.argsort(x)
    low, high = set(order[:30].tolist()), set(order[-30:].tolist())
    assert set(np.flatnonzero(mask).tolist()) in (low, high)


def test_mar_mask_ignores_the_target_values(base):
    spec = SynthSpec(MAR, 0.2, "quadratic", seed=7, noise_sd=0.0)
    _, mask = gen_missing(base, spec)
    shuffled = base.with_column(_num("age", np.random.default_rng(0).permutation(base["age"].values)))
    assert np.array_equal(gen_missing(shuffled, spec)[1], mask)
    assert "age" not in score_inputs(base, spec) and "outcome" not in score_inputs(base, spec)
    assert "age" in score_inputs(base, SynthSpec(MNAR))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.9), st.sampled_from(["linear", "curvilinear", "quadratic"]),
       st.sampled_from([MAR, MNAR]), st.integers(0, 1000))
def test_quota_is_exact(base, p_m, model, mech, seed):
    _, mask = gen_missing(base, SynthSpec(mech, p_m, model, seed=seed))
    assert mask.sum() == math.ceil(base.n_rows * p_m)


def test_same_spec_same_mask(base):
    spec = SynthSpec(MAR, 0.3, "curvilinear", seed=11)
    assert np.array_equal(gen_missing(base, spec)[1], gen_missing(base, spec)[1])
    assert replicate_seed(0, 1, 2) == replicate_seed(0, 1, 2) != replicate_seed(0, 2, 1)


def test_spec_and_masking_errors(base):
    with pytest.raises(DataError):
        SynthSpec(MAR, 1.0)
    with pytest.raises(DataError):
        SynthSpec("MAYBE")
    with pytest.raises(DataError):
        gen_missing(base.take(np.arange(5)), SynthSpec(MAR, 0.1))
    with pytest.raises(SchemaError):
        gen_missing(base, SynthSpec(MAR, 0.1, target_feature="nope"))
    masked, _ = gen_missing(base, SynthSpec(MCAR, 0.1))
    with pytest.raises(DataError):
        gen_missing(masked, SynthSpec(MCAR, 0.1))


def test_alpha_one_rejects_everything():
    t = make_surrogate(n=400, seed=3)
    b = run_mcar_benchmark(t, p_ms=(0.2,), n_reps=2, alpha=1.0)
    assert all(r.rate == 1.0 for r in b.rows)
    assert b.to_dict()["rows"][0]["n_reps"] == 2
    assert "wald" in b.to_text() and "little" in b.to_text()


def test_mcar_control_gives_majority_accuracy():
    t = make_surrogate(n=800, seed=4)
    b = run_missingness_benchmark(t, mechanisms=(MCAR,), score_models=("linear",), p_ms=(0.2,), n_reps=2,
                                  classifiers=("GAM", "LR", "KNN"))
    for c in b.cells:
        assert c.mean == pytest.approx(0.8, abs=0.06)
        assert len(c.accuracies) == 2


def test_missingness_benchmark_rejects_unknown_classifier(base):
    with pytest.raises(DataError):
        run_missingness_benchmark(base, classifiers=("SVM",), n_reps=1)
    with pytest.raises(DataError):
        run_missingness_benchmark(base, n_reps=0)


# ---------------------------------------------------------------- scenario tables


def test_additive_truth_components():
    t = make_additive_truth(n=2000, noise_sd=0.0, seed=1)
    x = {name: t[name].values for name in ADDITIVE_TRUTH}
    expected = 0.5 + sum(f(x[name]) for name, f in ADDITIVE_TRUTH.items())
    assert np.allclose(t["y"].values, expected)
    assert set(ADDITIVE_TRUTH) == {"linear", "sine", "step", "constant"}


def test_spike_surrogate_rate_and_offset():
    t = make_spike_surrogate(n=5000, seed=2, missing_rate=0.4)
    miss = t["pf_ratio"].missing_mask
    assert miss.mean() == pytest.approx(0.4, abs=0.03)
    assert all(not t[f"clean_{j}"].missing_mask.any() for j in (1, 2, 3))


def test_clean_surrogate_is_complete():
    t = make_clean_surrogate(n=300, seed=0)
    assert t.names == [f"x{j}" for j in range(1, 11)] + ["outcome"]
    assert not any(c.missing_mask.any() for c in t.columns)


def test_assumed_normal_missing_group_is_healthier():
    sc = make_assumed_normal_surrogate(n=3000, seed=0)
    assert sc.mask.sum() == 900
    assert sc.missing_group_mean > sc.true_values[~sc.mask].mean()
    assert np.array_equal(sc.table[sc.feature].missing_mask, sc.mask)


def test_chained_missingness_is_nested():
    t = make_chained_surrogate(n=3000, seed=0)
    a, b = t["bilirubin"].missing_mask, t["sodium"].missing_mask
    assert np.all(b[a])
    assert 0.0 < (b & ~a).mean() < 0.05
