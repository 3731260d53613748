import json
from pathlib import Path

import numpy as np
import pytest

from missinglens.cli import EXIT_DATA, EXIT_HARMFUL, EXIT_NOTHING, EXIT_OK, EXIT_USAGE, SEED_ENV, main
from missinglens.editing import Edit, EditScript
from missinglens.gam import load_model, predict_scores
from missinglens.synthgen import make_spike_surrogate
from missinglens.tabular import load_csv, write_csv

FAST = ["--rounds", "40", "--bags", "1", "--max-bins", "16"]


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".json", ".svg", ".csv")}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("surrogate-gen", "--n", 400, "--mask", "age", "--pm", 0.2, "--seed", 3, "--out", d / "data.csv") == 0
    assert run("surrogate-gen", "--n", 400, "--seed", 3, "--out", d / "complete.csv") == 0
    assert run("train", d / "data.csv", "--target", "outcome", "--out", d / "model", *FAST) == 0
    return d


def test_surrogate_gen_writes_masked_csv(work):
    t = load_csv(work / "data.csv", target="outcome")
    assert 0.1 < t["age"].missing_mask.mean() < 0.3
    assert not any(t[c].missing_mask.any() for c in t.names if c != "age")
    assert json.loads((work / "run_config.json").read_text())["seed"] == 3


def test_train_outputs(work):
    out = work / "model"
    model = load_model(out / "model.json")
    assert {f"{f}.svg" for f in model.features} <= {p.name for p in out.iterdir()}
    cfg = json.loads((out / "run_config.json").read_text())
    assert cfg["gam_config"]["rounds"] == 40 and cfg["version"]


def test_shape_records_reproduce_predictions(work):
    model = load_model(work / "model" / "model.json")
    shapes = json.loads((work / "model" / "shapes.json").read_text())
    t = load_csv(work / "data.csv", target="outcome")
    total = np.full(t.n_rows, model.intercept)
    for f, recs in shapes.items():
        theta = np.array([r["theta"] for r in recs])
        total += theta[model.shape(f).layout.assign(t[f])]
    assert np.allclose(total, predict_scores(model, t), atol=1e-12)
    age = shapes["age"]
    assert age[-1]["missing"] and sum(r["count"] for r in age) == 400


def test_diagnose_mcar(work):
    out = work / "diag"
    assert run("diagnose", work / "data.csv", "--model", work / "model" / "model.json", "--mcar", "age",
               "--out", out) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"][0]["feature"] == "age" and 0 <= rep["results"][0]["p_value"] <= 1


def test_diagnose_mcar_without_missing_bin_is_nothing_to_test(work):
    assert run("diagnose", work / "data.csv", "--model", work / "model" / "model.json", "--mcar", "urea",
               "--out", work / "diag_urea") == EXIT_NOTHING
    rep = json.loads((work / "diag_urea" / "report.json").read_text())
    assert rep["results"] == [] and rep["nothing_to_test"][0]["feature"] == "urea"


def test_little_on_complete_data(work):
    assert run("diagnose", work / "complete.csv", "--little", "--out", work / "little") == EXIT_OK
    rep = json.loads((work / "little" / "report.json").read_text())
    assert rep["p_value"] == 1.0 and rep["reject_mcar"] is False


def test_diagnose_needs_exactly_one_mode(work):
    assert run("diagnose", work / "data.csv", "--out", work / "x") == EXIT_USAGE
    assert run("diagnose", work / "data.csv", "--little", "--mcar", "age", "--out", work / "x") == EXIT_USAGE


def test_predict_missingness(work):
    out = work / "pm"
    assert run("diagnose", work / "data.csv", "--predict-missingness", "age", "--target", "outcome",
               "--exclude-label", "--out", out, *FAST) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert 0 <= rep["auc"] <= 1


def test_impute_knn_is_deterministic_and_records_provenance(work):
    a, b = work / "imp_a" / "t.csv", work / "imp_b" / "t.csv"
    for p in (a, b):
        assert run("impute", work / "data.csv", "--method", "knn", "--k", 3, "--out", p) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    prov = json.loads(a.with_suffix(".provenance.json").read_text())
    n_missing = load_csv(work / "data.csv")["age"].missing_mask.sum()
    assert len(prov) == n_missing and {r["column"] for r in prov} == {"age"}
    assert not load_csv(a)["age"].missing_mask.any()


def test_audit_flags_spike_and_writes_svg(tmp_path):
    t = make_spike_surrogate(n=3000, seed=0)
    write_csv(t, tmp_path / "spike.csv")
    assert run("impute", tmp_path / "spike.csv", "--method", "mean", "--out", tmp_path / "imp.csv") == 0
    assert run("train", tmp_path / "imp.csv", "--target", "outcome", "--out", tmp_path / "m") == 0
    code = run("audit", tmp_path / "imp.csv", "--model", tmp_path / "m" / "model.json",
               "--provenance", tmp_path / "imp.provenance.json", "--out", tmp_path / "audit")
    rep = json.loads((tmp_path / "audit" / "audit.json").read_text())
    assert rep["features"]["pf_ratio"]["verdict"] == "harmful"
    assert code == EXIT_HARMFUL and rep["overall"] == "harmful"
    assert (tmp_path / "audit" / "pf_ratio.svg").exists()


def test_audit_without_continuous_bins_is_not_applicable(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["flag,y"] + [f"{int(a)},{int(b)}" for a, b in zip(rng.random(200) < 0.5, rng.random(200) < 0.5)]
    (tmp_path / "b.csv").write_text("\n".join(rows) + "\n")
    assert run("train", tmp_path / "b.csv", "--target", "y", "--out", tmp_path / "m", *FAST) == 0
    assert run("audit", tmp_path / "b.csv", "--model", tmp_path / "m" / "model.json", "--out",
               tmp_path / "a") == EXIT_OK
    assert json.loads((tmp_path / "a" / "audit.json").read_text())["overall"] == "not_applicable"


def test_edit_then_diff(work):
    script = EditScript((Edit("age", 40, 60, "flatten_to", 0.0),))
    (work / "script.json").write_text(json.dumps(script.to_dict()))
    out = work / "edited" / "model.json"
    assert run("edit", work / "model" / "model.json", work / "script.json", "--out", out) == EXIT_OK
    diff = json.loads(out.with_suffix(".diff.json").read_text())
    assert diff["changes"] and all(c["feature"] == "age" and c["after"] == 0.0 for c in diff["changes"])
    assert load_model(out).history[-1]["script"] == script.to_dict()


def test_simulate_usage_errors(tmp_path):
    assert run("simulate", "--table1", "--reps", 0, "--out", tmp_path) == EXIT_USAGE
    assert run("simulate", "--reps", 1, "--out", tmp_path) == EXIT_USAGE
    assert run("simulate", "--table1", "--table3", "--reps", 1, "--out", tmp_path) == EXIT_USAGE


def test_simulate_table1_small(tmp_path):
    assert run("simulate", "--table1", "--reps", 2, "--n", 300, "--pm", 0.2, "--out", tmp_path) == EXIT_OK
    bench = json.loads((tmp_path / "benchmark.json").read_text())
    assert len(bench["rows"]) == 4  # two mechanisms, two tests
    assert "wald" in (tmp_path / "benchmark.txt").read_text()


def test_errors_map_to_exit_codes(tmp_path, monkeypatch, capsys):
    assert run("train", tmp_path / "nope.csv", "--target", "y", "--out", tmp_path / "m") == EXIT_DATA
    assert run() == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
    monkeypatch.setenv(SEED_ENV, "abc")
    assert run("surrogate-gen", "--out", tmp_path / "s.csv") == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "7")
    assert run("surrogate-gen", "--n", 50, "--out", tmp_path / "s.csv") == 0
    assert json.loads((tmp_path / "run_config.json").read_text())["seed"] == 7


@pytest.mark.parametrize("argv", [
    ["surrogate-gen", "--n", 300, "--mask", "age", "--mechanism", "MAR", "--pm", 0.2, "--out", "{d}/s.csv"],
    ["train", "{data}", "--target", "outcome", "--out", "{d}", *FAST],
    ["diagnose", "{data}", "--model", "{model}", "--mcar", "all", "--out", "{d}"],
    ["diagnose", "{data}", "--little", "--out", "{d}"],
    ["diagnose", "{data}", "--predict-missingness", "age", "--target", "outcome", "--out", "{d}", *FAST],
    ["impute", "{data}", "--method", "iterative_forest", "--n-trees", 10, "--max-iter", 2, "--out", "{d}/i.csv"],
    ["audit", "{data}", "--model", "{model}", "--out", "{d}"],
    ["edit", "{model}", "{script}", "--csv", "{data}", "--out", "{d}/e.json"],
    ["simulate", "--table3", "--reps", 1, "--n", 300, "--pm", 0.2, "--score-model", "linear", "--out", "{d}"],
], ids=["surrogate-gen", "train", "diagnose-mcar", "diagnose-little", "diagnose-predict", "impute", "audit",
        "edit", "simulate"])
def test_subcommand_outputs_are_byte_identical(work, argv):
    script = work / "det_script.json"
    script.write_text(json.dumps(EditScript((Edit("age", 50, 70, "shift_by", 0.1),), recenter=True).to_dict()))
    d = work / ("det_" + argv[0] + str(abs(hash(tuple(map(str, argv)))) % 10_000))
    d.mkdir(exist_ok=True)
    fill = dict(d=d, data=work / "data.csv", model=work / "model" / "model.json", script=script)
    args = [str(a).format(**fill) for a in argv]
    runs = []
    for _ in range(2):
        assert main(args) in (EXIT_OK, EXIT_HARMFUL)
        runs.append(snapshot(d))
    assert runs[0] and runs[0] == runs[1]
    assert any(name.endswith(".json") for name in runs[0])
