"""``missinglens`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 harmful audit verdict,
5 nothing to test.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .editing import EditScript, apply_edit, diff_models
from .errors import MissingLensError, NothingToTest
from .gam import GamConfig, fit_gam, load_model, save_model, shape_records
from .imputation import (CONSTANT, HARMFUL, ITERATIVE_FOREST, KNN, MEAN, MEDIAN, ImputerConfig,
                         audit_imputation, impute, imputation_provenance)
from .missingness import fit_missingness_model, littles_test, wald_mcar_test
from .svg import shape_svg, write_svg
from .synthgen import (MECHANISMS, SCORE_MODELS, SynthSpec, gen_missing, make_surrogate, run_mcar_benchmark,
                       run_missingness_benchmark)
from .tabular import Table, load_csv, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_HARMFUL, EXIT_NOTHING = 0, 2, 3, 4, 5
SEED_ENV = "MISSINGLENS_SEED"


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------- output helpers


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "nan", "inf", "-inf"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_run_config(directory: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    dump_json(directory / "run_config.json", cfg)


def _safe_name(name: str) -> str:
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
    return keep or "feature"


def _load_table(args: argparse.Namespace, target: str | None = None) -> Table:
    tokens = None if args.missing_token is None else set(args.missing_token)
    return load_csv(args.csv, missing_tokens=tokens, delimiter=args.delimiter, target=target)


def _gam_config(args: argparse.Namespace) -> GamConfig:
    return GamConfig(max_bins=args.max_bins, learning_rate=args.learning_rate, rounds=args.rounds, bags=args.bags,
                     max_depth=args.max_depth, min_leaf=args.min_leaf, early_stopping=not args.no_early_stopping,
                     bootstrap=not args.no_bootstrap, seed=args.seed)


# ----------------------------------------------------------------------------- subcommands


def cmd_train(args: argparse.Namespace) -> int:
    table = _load_table(args, target=args.target)
    if args.target not in table:
        raise UsageError(f"no column {args.target!r} in {args.csv}")
    config = _gam_config(args)
    model = fit_gam(table, args.target, config)
    out = _out_dir(args.out)
    save_model(model, out / "model.json")
    dump_json(out / "shapes.json", {s.feature: shape_records(s) for s in model.shapes})
    for s in model.shapes:
        write_svg(out / f"{_safe_name(s.feature)}.svg", shape_svg(s))
    _write_run_config(out, args, {"gam_config": config.to_dict()})
    print(f"trained {len(model.shapes)} shapes on {table.n_rows} rows; intercept {model.intercept:.6g}")
    print(f"wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    modes = [m for m in (args.mcar is not None, args.predict_missingness is not None, args.little) if m]
    if len(modes) != 1:
        raise UsageError("choose exactly one of --mcar, --predict-missingness, --little")
    out = _out_dir(args.out)
    lines = []
    if args.mcar is not None:
        if args.model is None:
            raise UsageError("--mcar needs --model")
        model = load_model(args.model)
        table = _load_table(args, target=model.target)
        features = model.features if args.mcar == "all" else [args.mcar]
        reports, nothing = [], []
        for f in features:
            try:
                reports.append(wald_mcar_test(model, table, f, alpha=args.alpha, n_tests=len(features)))
            except NothingToTest as exc:
                nothing.append({"feature": f, "reason": str(exc)})
        report = {"test": "wald_mcar", "alpha": args.alpha, "results": [r.to_dict() for r in reports],
                  "nothing_to_test": nothing}
        for r in reports:
            verdict = "reject MCAR" if r.reject_mcar else "no evidence against MCAR"
            lines.append(f"{r.feature:<24} theta {r.theta_hat:+.4f}  se {r.se:.4f}  p {r.p_value:.4g}  {verdict}"
                         + (f"  [{r.flag}]" if r.flag else ""))
        for n in nothing:
            lines.append(f"{n['feature']:<24} nothing to test (no missing bin)")
        code = EXIT_NOTHING if not reports else EXIT_OK
    elif args.little:
        table = _load_table(args)
        rep = littles_test(table)
        report = {"test": "little", "alpha": args.alpha, **rep.to_dict(), "reject_mcar": rep.reject(args.alpha)}
        if rep.nothing_to_test:
            lines.append("no missing cells: nothing to test (p = 1)")
        else:
            lines.append(f"Little's test chi2 {rep.chi2:.4f}  df {rep.df}  p {rep.p_value:.4g}  patterns {rep.n_patterns}")
        code = EXIT_OK
    else:
        table = _load_table(args, target=args.target)
        rep = fit_missingness_model(table, args.predict_missingness, include_label=not args.exclude_label,
                                    config=_gam_config(args), seed=args.seed)
        report = {"test": "predict_missingness", **rep.to_dict(top=args.top)}
        lines.append(f"missingness of {rep.feature}: test AUC {rep.auc:.4f}  accuracy {rep.accuracy:.4f}  "
                     f"missing rate {rep.missing_rate:.3f}")
        for name, imp in rep.top_predictors[: args.top]:
            lines.append(f"  {name:<24} importance {imp:.4f}")
        code = EXIT_OK
    dump_json(out / "report.json", report)
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_config(out, args)
    print("\n".join(lines))
    return code


def cmd_impute(args: argparse.Namespace) -> int:
    table = _load_table(args)
    config = ImputerConfig(method=args.method, value=args.value, k=args.k, n_trees=args.n_trees,
                           max_iter=args.max_iter, seed=args.seed)
    features = args.feature or None
    result = impute(table, config, features)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(result, out)
    prov = imputation_provenance(result)
    dump_json(out.with_suffix(".provenance.json"), prov)
    run_dir = out.parent
    _write_run_config(run_dir, args, {"imputer_config": config.to_dict()})
    print(f"imputed {len(prov)} cells with {args.method}; wrote {out}")
    return EXIT_OK


def _apply_provenance(table: Table, records: Sequence[dict]) -> Table:
    masks: dict[str, np.ndarray] = {}
    methods: dict[str, str] = {}
    for r in records:
        name = r["column"]
        if name not in table:
            continue
        masks.setdefault(name, np.zeros(table.n_rows, bool))[int(r["row"])] = True
        methods[name] = r.get("method", "unknown")
    for name, m in masks.items():
        col = table[name]
        table = table.with_column(replace(col, imputed_mask=m, meta={**col.meta, "imputation": methods[name]}))
    return table


def cmd_audit(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    table = _load_table(args, target=model.target)
    if args.provenance:
        records = json.loads(Path(args.provenance).read_text(encoding="utf-8"))
        table = _apply_provenance(table, records)
    audits = audit_imputation(model, table, statistic=args.statistic, contamination=args.contamination,
                              n_trees=args.n_trees, seed=args.seed)
    out = _out_dir(args.out)
    lines = []
    for name, a in audits.items():
        lines.append(f"{name:<24} {a.verdict:<15} {args.statistic} bin {a.audited_bin}  flagged {list(a.flagged_bins)}")
        if a.verdict != "not_applicable":
            svg = shape_svg(model.shape(name), title=f"{name} ({a.verdict})",
                            mean_value=a.mean_value if args.statistic == MEAN else a.median_value,
                            flagged_bins=a.flagged_bins)
            write_svg(out / f"{_safe_name(name)}.svg", svg)
    if not audits:
        lines.append("no continuous features to audit")
    verdicts = [a.verdict for a in audits.values()]
    overall = HARMFUL if HARMFUL in verdicts else ("not_applicable" if all(v == "not_applicable" for v in verdicts)
                                                  else "harmless")
    dump_json(out / "audit.json", {"statistic": args.statistic, "contamination": args.contamination,
                                   "overall": overall, "features": {k: a.to_dict() for k, a in audits.items()}})
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_config(out, args)
    print("\n".join(lines))
    return EXIT_HARMFUL if overall == HARMFUL else EXIT_OK


def cmd_edit(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    script = EditScript.load(args.script)
    table = _load_table(args, target=model.target) if args.csv else None
    edited = apply_edit(model, script, table=table)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(edited, out)
    diff = diff_models(model, edited)
    dump_json(out.with_suffix(".diff.json"), diff.to_dict())
    _write_run_config(out.parent, args)
    print(f"applied {len(script.edits)} edit(s); {len(diff.changes)} bin(s) changed; "
          f"intercept change {diff.intercept_delta:+.6g}")
    for c in diff.changes:
        where = "missing" if c.missing else f"({c.lo:g}, {c.hi:g}]"
        print(f"  {c.feature:<20} {where:<28} {c.before:+.4f} -> {c.after:+.4f}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.table1 == args.table3:
        raise UsageError("choose exactly one of --table1, --table3")
    if args.input:
        base = load_csv(args.input, target=args.target)
    else:
        base = make_surrogate(args.n, seed=args.seed)
    pms = args.pm or [0.1, 0.2, 0.3]
    out = _out_dir(args.out)
    if args.table1:
        mechs = args.mechanism or ["MCAR", "MAR"]
        bench = run_mcar_benchmark(base, pms, args.reps, args.alpha, args.seed, mechs, args.feature,
                                   workers=args.workers)
    else:
        mechs = args.mechanism or ["MAR"]
        bench = run_missingness_benchmark(base, mechs, args.score_model or list(SCORE_MODELS), pms, args.reps,
                                          args.seed, target_feature=args.feature, workers=args.workers)
    text = bench.to_text()
    dump_json(out / "benchmark.json", bench.to_dict())
    (out / "benchmark.txt").write_text(text, encoding="utf-8")
    _write_run_config(out, args)
    print(text, end="")
    return EXIT_OK


def cmd_surrogate_gen(args: argparse.Namespace) -> int:
    table = make_surrogate(args.n, seed=args.seed)
    extra = {}
    if args.mask:
        spec = SynthSpec(args.mechanism, args.pm, args.score_model, args.mask, seed=args.seed)
        table, mask = gen_missing(table, spec)
        extra["mask_count"] = int(mask.sum())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, out)
    _write_run_config(out.parent, args, extra)
    print(f"wrote {table.n_rows} rows x {len(table.names)} columns to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------- parser


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage errors through our exit code
        raise UsageError(message)


def _add_csv_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delimiter", default=",")
    p.add_argument("--missing-token", action="append", default=None,
                   help="cell text meaning missing (repeatable; default '', NA, NaN)")


def _add_gam_flags(p: argparse.ArgumentParser) -> None:
    d = GamConfig()
    p.add_argument("--max-bins", type=int, default=d.max_bins)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--rounds", type=int, default=d.rounds)
    p.add_argument("--bags", type=int, default=d.bags)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--min-leaf", type=int, default=d.min_leaf)
    p.add_argument("--no-early-stopping", action="store_true")
    p.add_argument("--no-bootstrap", action="store_true")


def build_parser(seed_default: int) -> argparse.ArgumentParser:
    parser = _Parser(prog="missinglens", description="Missing-value diagnostics with additive models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=seed_default)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train an additive model and render its shapes")
    p.add_argument("csv")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_csv_flags(p)
    _add_gam_flags(p)

    p = add("diagnose", cmd_diagnose, "test or model the missingness of features")
    p.add_argument("csv")
    p.add_argument("--model")
    p.add_argument("--mcar", metavar="FEATURE", help="Wald test of one feature's missing bin, or 'all'")
    p.add_argument("--predict-missingness", metavar="FEATURE")
    p.add_argument("--little", action="store_true")
    p.add_argument("--target", help="label column (for --predict-missingness)")
    p.add_argument("--exclude-label", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", required=True)
    _add_csv_flags(p)
    _add_gam_flags(p)

    p = add("impute", cmd_impute, "fill missing cells")
    p.add_argument("csv")
    p.add_argument("--method", choices=(MEAN, MEDIAN, CONSTANT, KNN, ITERATIVE_FOREST), required=True)
    p.add_argument("--feature", action="append", help="restrict to this column (repeatable)")
    p.add_argument("--value", help="fill value for --method constant")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-iter", type=int, default=10)
    p.add_argument("--out", required=True, help="output CSV")
    _add_csv_flags(p)

    p = add("audit", cmd_audit, "look for spikes at the imputed mean or median")
    p.add_argument("csv")
    p.add_argument("--model", required=True)
    p.add_argument("--statistic", choices=(MEAN, MEDIAN), default=MEAN)
    p.add_argument("--contamination", type=float, default=0.05)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--provenance", help="provenance JSON written by 'impute'")
    p.add_argument("--out", required=True)
    _add_csv_flags(p)

    p = add("edit", cmd_edit, "apply an edit script to a model")
    p.add_argument("model")
    p.add_argument("script")
    p.add_argument("--out", required=True, help="edited model file")
    p.add_argument("--csv", help="training table, for exact counts of split bins")
    _add_csv_flags(p)

    p = add("simulate", cmd_simulate, "run the masking benchmarks")
    p.add_argument("--table1", action="store_true", help="MCAR test rejection rates")
    p.add_argument("--table3", action="store_true", help="missingness prediction accuracy")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--pm", type=float, action="append")
    p.add_argument("--mechanism", choices=MECHANISMS, action="append")
    p.add_argument("--score-model", choices=SCORE_MODELS, action="append")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--feature", default="age")
    p.add_argument("--input", help="complete base table CSV (default: generated surrogate)")
    p.add_argument("--target", default="outcome")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("surrogate-gen", cmd_surrogate_gen, "write the surrogate table")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--mask", metavar="FEATURE")
    p.add_argument("--mechanism", choices=MECHANISMS, default="MCAR")
    p.add_argument("--pm", type=float, default=0.1)
    p.add_argument("--score-model", choices=SCORE_MODELS, default="linear")
    p.add_argument("--out", required=True, help="output CSV")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser(_default_seed())
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        return int(args.func(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NothingToTest as exc:
        print(f"nothing to test: {exc}", file=sys.stderr)
        return EXIT_NOTHING
    except (MissingLensError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
