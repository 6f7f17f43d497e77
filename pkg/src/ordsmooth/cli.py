"""Command-line pipeline: fit, predict, residuals, transitions,
quantile-day and simulate.

Every command is deterministic given its flags; the stochastic ones
(simulate, residuals, transitions, simulation bands) require --seed.
Exit codes: 0 success, 2 usage, 3 data problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .archive import file_sha256, load_model, save_model
from .data import ColumnSchema, Dataset, derive_day_offset, load_dataset, write_dataset
from .diagnostics import qq_logistic, residual_plot_data, surrogate_residuals
from .errors import (ArchiveError, CodingError, DesignError, FitError,
                     FormulaError, OrdsmoothError, ParseError, PredictionError,
                     SchemaError)
from .fitting import fit_model, format_summary, summarize
from .formula import FactorSmooth, parse_formula
from .inference import (crossing_days, posterior_draws, predict_category,
                        predict_cumulative, predict_linear, quantile_day,
                        transition_density)
from .simulate import load_truth, simulate_dataset

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 2, 3, 4


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows, preamble: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise PredictionError(f"--grid must be from:to:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise PredictionError(f"--grid must increase, got {text!r}")
    return np.arange(lo, hi + step * 1e-9, step)


def _parse_at(pairs) -> dict:
    out = {}
    for item in pairs or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise PredictionError(f"--at expects name=value, got {item!r}")
        out[name] = value
    return out


def _delimiter(args) -> str:
    return "\t" if getattr(args, "tab", False) else ","


def _schema_from_formula(args) -> ColumnSchema:
    spec = parse_formula(args.formula)
    factors = {t.factor for t in spec.terms if isinstance(t, FactorSmooth)}
    covariates = {v for v in spec.variables if v not in factors}
    if args.dffs:
        group, sep, day = args.dffs.partition(":")
        if not sep:
            raise SchemaError(f"--dffs expects group:day, got {args.dffs!r}")
        factors.add(group)
        covariates.add(day)
        covariates.discard("dffs")
    labels = args.stages.split(",") if args.stages else [str(k) for k in range(1, args.K + 1)]
    if len(labels) != args.K:
        raise SchemaError(f"--stages lists {len(labels)} labels but --K is {args.K}")
    return ColumnSchema(
        stage=spec.response, stage_labels=labels,
        covariates=sorted(covariates), factors=sorted(factors),
        count=args.count, delimiter=_delimiter(args),
    )


def _load_newdata(path, fr, delimiter) -> dict:
    """Read only the model's variables from a delimited file."""
    factor_names = set(fr.mm.factor_levels)
    numeric = [v for v in fr.spec.variables if v not in factor_names]
    factors = [v for v in fr.spec.variables if v in factor_names]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for col in numeric + factors:
            if col not in header:
                raise SchemaError(f"column {col!r} missing from {Path(path).name}")
        cols: dict[str, list] = {c: [] for c in numeric + factors}
        for rownum, row in enumerate(reader, start=1):
            for c in numeric:
                try:
                    cols[c].append(float(row[c]))
                except (TypeError, ValueError):
                    raise ParseError(
                        f"row {rownum}: non-numeric value {row[c]!r} in column {c!r}"
                    ) from None
            for c in factors:
                cols[c].append(row[c])
    out: dict = {c: np.asarray(cols[c], dtype=float) for c in numeric}
    out.update({c: np.asarray(cols[c], dtype=object) for c in factors})
    return out


def cmd_fit(args) -> int:
    schema = _schema_from_formula(args)
    d = load_dataset(args.data, schema)
    if args.dffs:
        group, _, day = args.dffs.partition(":")
        d = derive_day_offset(d, group, day)
    fr = fit_model(d, parse_formula(args.formula).with_stage_count(args.K))
    out = Path(args.out)
    save_model(fr, out, data_path=args.data)
    report = summarize(fr)
    _write_json(out.with_suffix(out.suffix + ".summary.json"), report)
    print(format_summary(report))
    print(f"\nmodel archive: {out}")
    return 0


def cmd_predict(args) -> int:
    fr = load_model(args.model)
    newdata = _load_newdata(args.newdata, fr, _delimiter(args))
    labels = fr.mm.stage_labels
    base = Path(args.out)
    n = len(next(iter(newdata.values())))
    if args.type == "response":
        pred = predict_category(fr, newdata)
        header = ["row"] + [f"p_{s}" for s in labels] + [f"se_{s}" for s in labels]
        rows = [[i] + [_fmt(v) for v in pred.probs[i]] + [_fmt(v) for v in pred.se[i]]
                for i in range(n)]
        records = [{"row": i,
                    "probs": dict(zip(labels, map(float, pred.probs[i]))),
                    "se": dict(zip(labels, map(float, pred.se[i])))}
                   for i in range(n)]
    elif args.type in ("cumulative-leq", "cumulative-geq"):
        direction = args.type.split("-")[1]
        cum = predict_cumulative(fr, newdata, direction)
        tag = "P_leq" if direction == "leq" else "P_geq"
        header = ["row"] + [f"{tag}_{s}" for s in labels]
        rows = [[i] + [_fmt(v) for v in cum[i]] for i in range(n)]
        records = [{"row": i, tag: dict(zip(labels, map(float, cum[i])))}
                   for i in range(n)]
    elif args.type == "link":
        if args.band == "simulation" and args.seed is None:
            raise PredictionError("--band simulation requires --seed")
        lp = predict_linear(fr, newdata, level=args.level, band=args.band,
                            draws=args.draws, seed=args.seed)
        header = ["row", "eta", "se", "lower", "upper"]
        rows = [[i, _fmt(lp.eta[i]), _fmt(lp.se[i]), _fmt(lp.lower[i]), _fmt(lp.upper[i])]
                for i in range(n)]
        records = [{"row": i, "eta": float(lp.eta[i]), "se": float(lp.se[i]),
                    "lower": float(lp.lower[i]), "upper": float(lp.upper[i])}
                   for i in range(n)]
    else:
        raise PredictionError(f"unknown --type {args.type!r}")
    _write_csv(base.with_suffix(".csv"), header, rows)
    _write_json(base.with_suffix(".json"), records)
    print(f"wrote {base.with_suffix('.csv')} and {base.with_suffix('.json')}")
    return 0


def cmd_residuals(args) -> int:
    fr = load_model(args.model)
    schema = ColumnSchema(
        stage=args.stage_column, stage_labels=list(fr.mm.stage_labels),
        covariates=[v for v in fr.spec.variables if v not in fr.mm.factor_levels],
        factors=[v for v in fr.spec.variables if v in fr.mm.factor_levels],
        delimiter=_delimiter(args),
    )
    d = load_dataset(args.data, schema)
    sr = surrogate_residuals(fr, d, seed=args.seed, replicates=args.replicates)
    base = Path(args.out)
    meta = f"seed={sr.seed} replicates={sr.replicates}"
    rows = []
    for rep in range(sr.replicates):
        for i in range(sr.n):
            rows.append([rep, i, int(sr.stage[i]), _fmt(sr.eta[i]), _fmt(sr.r[rep, i])])
    _write_csv(base.with_suffix(".csv"),
               ["replicate", "row", "stage", "eta", "residual"], rows, preamble=meta)
    theo, sample = qq_logistic(sr)
    _write_csv(base.parent / (base.stem + "_qq.csv"),
               ["theoretical", "sample"],
               [[_fmt(a), _fmt(b)] for a, b in zip(theo, sample)], preamble=meta)
    if args.against:
        xs, rs, smooth = residual_plot_data(sr, args.against)
        _write_csv(base.parent / (base.stem + f"_vs_{args.against}.csv"),
                   [args.against, "residual", "running_mean"],
                   [[_fmt(a), _fmt(b), _fmt(c)] for a, b, c in zip(xs, rs, smooth)],
                   preamble=meta)
    print(f"wrote surrogate residuals under {base.parent / base.stem}*")
    return 0


def cmd_transitions(args) -> int:
    fr = load_model(args.model)
    grid = _parse_grid(args.grid)
    draws = posterior_draws(fr, args.draws, args.seed)
    ts = crossing_days(fr, draws, grid, var=args.var, at=_parse_at(args.at),
                       sample_thresholds=not args.fixed_thresholds)
    base = Path(args.out)
    labels = fr.mm.stage_labels
    sample_rows = []
    for k in sorted(ts.days):
        for day in ts.days[k]:
            sample_rows.append([k, labels[k - 1], labels[k], _fmt(day)])
    meta = (f"seed={draws.seed} draws={draws.n_draws} "
            f"thresholds={'sampled' if ts.sampled_thresholds else 'fixed'}")
    _write_csv(base.parent / (base.stem + "_samples.csv"),
               ["threshold", "from_stage", "to_stage", "day"], sample_rows, preamble=meta)
    dens = transition_density(ts, bandwidth=args.bandwidth)
    dens_rows = []
    for td in dens:
        for x, v in zip(td.days, td.density):
            dens_rows.append([td.threshold, _fmt(x), _fmt(v)])
    _write_csv(base.parent / (base.stem + "_density.csv"),
               ["threshold", "day", "density"], dens_rows, preamble=meta)
    summary = [{
        "threshold": td.threshold,
        "transition": f"{labels[td.threshold - 1]} -> {labels[td.threshold]}",
        "n_samples": td.n_samples, "mean": td.mean, "sd": td.sd,
        "percentiles": td.percentiles, "bandwidth": td.bandwidth,
    } for td in dens]
    _write_json(base.parent / (base.stem + "_summary.json"), {
        "seed": draws.seed, "draws": draws.n_draws,
        "sampled_thresholds": ts.sampled_thresholds, "thresholds": summary,
    })
    print(f"wrote transition samples/density/summary under {base.parent / base.stem}*")
    return 0


def cmd_quantile_day(args) -> int:
    fr = load_model(args.model)
    grid = _parse_grid(args.grid)
    qd = quantile_day(fr, args.stage_k, args.p, grid, var=args.var, at=_parse_at(args.at))
    result = {"day": qd.day, "achieved": qd.achieved, "stage": qd.stage, "p": qd.p}
    print(json.dumps(result))
    if args.out:
        _write_json(args.out, result)
    return 0


def cmd_simulate(args) -> int:
    ts = load_truth(args.spec)
    if args.seed is not None:
        from dataclasses import replace
        ts = replace(ts, seed=args.seed)
    d, eta = simulate_dataset(ts)
    write_dataset(d, args.out, stage_column="stage", delimiter=_delimiter(args),
                  extra={"eta_true": eta})
    print(f"wrote {d.n} simulated observations to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ordsmooth",
        description="Ordered-categorical regression with penalized-spline predictors.",
    )
    p.add_argument("--version", action="version", version=f"ordsmooth {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--tab", action="store_true", help="tab-delimited input/output")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker hint; outputs never depend on it")

    f = sub.add_parser("fit", help="fit a model and write a JSON archive")
    f.add_argument("--data", required=True)
    f.add_argument("--formula", required=True)
    f.add_argument("--K", type=int, required=True, help="number of ordered stages")
    f.add_argument("--stages", help="comma-separated stage labels, lowest first")
    f.add_argument("--count", help="expand rows by this count column")
    f.add_argument("--dffs", help="group:day -- add day-from-first-sample covariate")
    f.add_argument("--out", default="model.json")
    add_common(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict from a model archive")
    pr.add_argument("--model", required=True)
    pr.add_argument("--newdata", required=True)
    pr.add_argument("--type", default="response",
                    choices=["response", "cumulative-leq", "cumulative-geq", "link"])
    pr.add_argument("--level", type=float, default=0.95)
    pr.add_argument("--band", default="covariance", choices=["covariance", "simulation"])
    pr.add_argument("--draws", type=int, default=2000)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out", default="predictions")
    add_common(pr)
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("residuals", help="surrogate residuals and plot data")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--stage-column", default="stage")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--replicates", type=int, default=1)
    r.add_argument("--against", help="covariate name or 'linear_predictor'")
    r.add_argument("--out", default="residuals")
    add_common(r)
    r.set_defaults(func=cmd_residuals)

    t = sub.add_parser("transitions", help="posterior stage-transition days")
    t.add_argument("--model", required=True)
    t.add_argument("--draws", type=int, default=1000)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--grid", required=True, help="from:to:step day grid")
    t.add_argument("--var", help="grid variable (defaults to the single smooth)")
    t.add_argument("--at", action="append", help="name=value for other model variables")
    t.add_argument("--fixed-thresholds", action="store_true",
                   help="attribute all uncertainty to covariate effects")
    t.add_argument("--bandwidth", type=float)
    t.add_argument("--out", default="transitions")
    add_common(t)
    t.set_defaults(func=cmd_transitions)

    q = sub.add_parser("quantile-day", help="day where P(Z >= k) is closest to p")
    q.add_argument("--model", required=True)
    q.add_argument("--p", type=float, required=True)
    q.add_argument("--stage-k", type=int, required=True)
    q.add_argument("--grid", required=True)
    q.add_argument("--var")
    q.add_argument("--at", action="append")
    q.add_argument("--out")
    add_common(q)
    q.set_defaults(func=cmd_quantile_day)

    s = sub.add_parser("simulate", help="generate data from a truth specification")
    s.add_argument("--spec", required=True, help="truth JSON file")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default="simulated.csv")
    add_common(s)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormulaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (SchemaError, CodingError, ParseError, DesignError,
            PredictionError, ArchiveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except OrdsmoothError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
