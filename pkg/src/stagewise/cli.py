"""Command-line interface: fit, predict, simulate and bench subcommands.

Every artifact embeds the resolved configuration and seed so any output can
be reproduced from its own header. Exit codes: 0 ok, 2 input error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import baseline, engine, simlab
from .data import build_dataset, intercept_adjustment, load_csv, make_batches, zero_positive_strata
from .exceptions import InputError, NumericError
from .families import get_family

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

PAPER_DESK_GRID = [
    dict(family="NO", nobs=1000, nnoise=30, rho_corr=0.7, replications=20,
         methods=["bs+cf", "gb"]),
    dict(family="ZANBI", nobs=5000, nnoise=30, rho_corr=0.7, replications=10,
         methods=["bs+cf"]),
]


def default_jobs():
    env = os.environ.get("STAGEWISE_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args):
    cfg = _load_json(args.config) if args.config else {}
    family_name = args.family or cfg.get("family")
    if not family_name:
        raise InputError("family required (--family or config)")
    family = get_family(family_name)
    method = args.method or cfg.get("method", "bs+cf")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    response = cfg.get("response", "y")

    header, data = load_csv(args.data)
    if response not in header:
        raise InputError(f"response column {response!r} not found in {args.data}")
    ridx = header.index(response)
    y = data[:, ridx]
    cov_names = [h for h in header if h != response]
    cov = data[:, [i for i in range(len(header)) if i != ridx]]

    param_columns = None
    if "columns" in cfg:
        by_name = cfg["columns"]
        param_columns = []
        for pname in family.param_names:
            if pname not in by_name:
                raise InputError(f"config 'columns' missing parameter {pname!r}")
            param_columns.append(list(by_name[pname]))
    dataset = build_dataset(y, cov, cov_names, param_columns=param_columns,
                            n_params=family.n_params)

    fit_opts = dict(cfg.get("fit", {}))
    fit_opts["seed"] = seed
    strata_cfg = cfg.get("strata")
    strata_info = None
    batches = None

    if method in simlab.SBDR_METHODS or method == "thresdesc":
        if method == "thresdesc":
            fit_opts.setdefault("update_mode", "best_subset")
            fit_opts.setdefault("cf_enabled", True)
        else:
            mode, cf, bw = simlab.SBDR_METHODS[method]
            fit_opts.setdefault("update_mode", mode)
            fit_opts.setdefault("cf_enabled", cf)
            if bw and "bs" not in fit_opts:
                fit_opts["bs"] = min(dataset.n, simlab.DEFAULT_BATCH_SIZE)
        config = engine.FitConfig(**fit_opts)
        if strata_cfg:
            zc = int(strata_cfg["zero_count"])
            pc = int(strata_cfg["positive_count"])
            strata = zero_positive_strata(y, zc, pc)
            bs = zc + pc
            config = engine.FitConfig(**{**config.to_dict(), "bs": bs})
            length = config.T
            if method == "thresdesc":
                td = cfg.get("thresdesc", {})
                levels = int(np.ceil(td.get("kappa_start", 0.19) / td.get("kappa_step", 0.02))) + 1
                length = levels * td.get("iters_per_level", 200) + 1
            batches = make_batches(dataset.n, bs, length, seed, strata=strata)
            tau0 = float(np.mean(y == 0))
            strata_info = {"tau0": tau0, "t0": zc / bs,
                           "zero_count": zc, "positive_count": pc}
        if method == "thresdesc":
            td = cfg.get("thresdesc", {})
            result = engine.threshold_descent(
                family, dataset, config,
                kappa_start=td.get("kappa_start", 0.19),
                kappa_step=td.get("kappa_step", 0.02),
                iters_per_level=td.get("iters_per_level", 200),
                batches=batches)
        else:
            result = engine.fit_and_refit(family, dataset, config,
                                          batches=batches, method_tag=method)
    elif method in ("gb", "vardes"):
        gb_opts = dict(cfg.get("gb", {}))
        gb_opts["seed"] = seed
        config = baseline.GBConfig(**gb_opts)
        coef, seconds, result = simlab.run_method(method, family_name, dataset, seed,
                                                  gb_overrides=gb_opts)
    else:
        raise InputError(f"unknown method {method!r}; choose from "
                         f"{sorted(simlab.METHOD_NAMES)}")

    os.makedirs(args.out, exist_ok=True)
    model = {
        "result": result.to_dict(),
        "response": response,
        "standardization": [
            {"columns": dataset.columns[k],
             "mean": [float(v) for v in dataset.stats[k].mean],
             "sd": [float(v) for v in dataset.stats[k].sd]}
            for k in range(family.n_params)
        ],
        "strata": strata_info,
        "seed": seed,
    }
    _write_json(os.path.join(args.out, "result.json"), model)

    path_rows = [(t, family.param_names[k],
                  "(intercept)" if j == 0 else dataset.columns[k][j - 1], repr(v))
                 for t, k, j, v in result.path]
    _write_csv(os.path.join(args.out, "path.csv"),
               ["iteration", "parameter", "column", "value"], path_rows)

    lines = [f"family: {family.name}", f"method: {result.method}",
             f"mstop: {result.mstop}", ""]
    for k, pname in enumerate(family.param_names):
        names = [dataset.columns[k][j] for j in result.selected[k]]
        lines.append(f"{pname}: {len(names)} selected")
        for nm in names:
            lines.append(f"  {nm}")
    with open(os.path.join(args.out, "selected.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.out}/result.json, path.csv, selected.txt")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args):
    model = _load_json(args.model)
    result = model["result"]
    family = get_family(result["family"])
    coef = result.get("refit_coef") or result["coef"]
    coef = [np.asarray(b, dtype=float) for b in coef]

    header, data = load_csv(args.data)
    etas = []
    for k in range(family.n_params):
        st = model["standardization"][k]
        missing = [c for c in st["columns"] if c not in header]
        if missing:
            raise InputError(f"prediction data is missing column(s): {missing}")
        idx = [header.index(c) for c in st["columns"]]
        Z = (data[:, idx] - np.asarray(st["mean"])) / np.asarray(st["sd"])
        etas.append(coef[k][0] + Z @ coef[k][1:])

    if args.adjusted:
        strata = model.get("strata")
        if args.tau0 is not None and args.t0 is not None:
            tau0, t0 = args.tau0, args.t0
        elif strata:
            tau0, t0 = strata["tau0"], strata["t0"]
        else:
            raise InputError("--adjusted needs --tau0/--t0 or a model fitted "
                             "on stratified batches")
        logit_k = [k for k, link in enumerate(family.links) if link.name == "logit"]
        if not logit_k:
            raise InputError(f"family {family.name} has no logit-link parameter to adjust")
        k = logit_k[0]
        etas[k] = etas[k] + (intercept_adjustment(0.0, tau0, t0))

    theta = family.theta_from_eta(etas)
    cols = [f"{p}_hat" for p in family.param_names]
    out_cols = [np.asarray(t, dtype=float) for t in theta]
    for c in args.threshold or []:
        if not family.discrete:
            raise InputError(f"--threshold applies only to count families, not {family.name}")
        p_ge = 1.0 - family.cdf(c - 1.0, theta) if c > 0 else np.ones(data.shape[0])
        cols.append(f"p_ge_{c:g}")
        out_cols.append(np.asarray(p_ge, dtype=float))

    rows = [[repr(float(col[i])) for col in out_cols] for i in range(data.shape[0])]
    _write_csv(args.out, cols, rows)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / bench
# ---------------------------------------------------------------------------

def _spec_from_dict(d, seed_override=None):
    d = dict(d)
    if seed_override is not None:
        d["seed"] = seed_override
    d.setdefault("seed", 0)
    known = {"family", "nobs", "nnoise", "rho_corr", "replications", "methods",
             "seed", "validation_n", "fit_overrides", "gb_overrides"}
    unknown = set(d) - known
    if unknown:
        raise InputError(f"unknown scenario fields: {sorted(unknown)}")
    return simlab.ScenarioSpec(**d)


def _metrics_rows(spec, rows):
    out = []
    for r in rows:
        out.append([spec.family, spec.nobs, spec.nnoise, spec.rho_corr,
                    r.method, r.replication, int(r.failed),
                    "" if np.isnan(r.crps) else repr(r.crps),
                    repr(r.rmse.get("mu", np.nan)) if r.rmse else "",
                    repr(r.rmse.get("sigma", np.nan)) if r.rmse else "",
                    repr(r.rmse.get("nu", np.nan)) if "nu" in r.rmse else "",
                    r.tp, r.fp, repr(r.seconds), r.error])
    return out


METRICS_HEADER = ["family", "nobs", "nnoise", "rho_corr", "method", "replication",
                  "failed", "crps", "rmse_mu", "rmse_sigma", "rmse_nu", "tp", "fp",
                  "seconds", "error"]


def _run_scenarios(specs, out_dir, jobs, seed):
    os.makedirs(out_dir, exist_ok=True)
    all_rows = []
    summary = {"seed": seed, "scenarios": []}
    for spec in specs:
        rows = simlab.run_scenario(spec, jobs=jobs)
        all_rows.append((spec, rows))
        summary["scenarios"].append({
            "spec": spec.to_dict(),
            "methods": simlab.aggregate(rows),
        })
    _write_csv(os.path.join(out_dir, "metrics.csv"), METRICS_HEADER,
               [row for spec, rows in all_rows for row in _metrics_rows(spec, rows)])
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    _write_plot_data(all_rows, out_dir)
    print(f"wrote {out_dir}/metrics.csv, summary.json, plot_*.csv")
    return EXIT_OK


def _write_plot_data(all_rows, out_dir):
    """Per-metric method x nobs grids of replication means."""
    metrics = {}
    for spec, rows in all_rows:
        agg = simlab.aggregate(rows)
        for method, vals in agg.items():
            if vals.get("n_ok", 0) == 0:
                continue
            cell = {"crps": vals["crps"], "tp": vals["tp"], "fp": vals["fp"],
                    "seconds": vals["seconds"]}
            for pname, v in vals["rmse"].items():
                cell[f"rmse_{pname}"] = v
            for metric, v in cell.items():
                metrics.setdefault(metric, {}).setdefault(method, {})[spec.nobs] = v
    for metric, table in metrics.items():
        nobs_values = sorted({n for per in table.values() for n in per})
        rows = []
        for method in sorted(table):
            rows.append([method] + [repr(table[method][n]) if n in table[method] else ""
                                    for n in nobs_values])
        _write_csv(os.path.join(out_dir, f"plot_{metric}.csv"),
                   ["method"] + [str(n) for n in nobs_values], rows)


def cmd_simulate(args):
    spec_dict = _load_json(args.spec)
    spec = _spec_from_dict(spec_dict, seed_override=args.seed)
    return _run_scenarios([spec], args.out, args.jobs, spec.seed)


def cmd_bench(args):
    if args.seed is None:
        raise InputError("--seed is mandatory in bench mode")
    if args.grid == "paper-desk":
        specs = [_spec_from_dict(d, seed_override=args.seed) for d in PAPER_DESK_GRID]
    elif args.grid:
        payload = _load_json(args.grid)
        specs = [_spec_from_dict(d, seed_override=args.seed)
                 for d in payload["scenarios"]]
    else:
        raise InputError("bench needs --grid (a JSON file or 'paper-desk')")
    return _run_scenarios(specs, args.out, args.jobs, args.seed)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stagewise",
                                description="Stagewise boosting for distributional regression")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV dataset")
    f.add_argument("data", help="CSV file with header row")
    f.add_argument("--family", choices=["NO", "GA", "NBI", "ZANBI"])
    f.add_argument("--method", help="standard|bs|cf|bs+cf|bw|bw+bs|bw+cf|bw+bs+cf|"
                                    "thresdesc|gb|vardes")
    f.add_argument("--config", help="JSON config file")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="fit_out", help="output directory")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict parameters for new data")
    pr.add_argument("data", help="CSV file with the training columns")
    pr.add_argument("--model", required=True, help="result.json from fit")
    pr.add_argument("--out", default="predictions.csv")
    pr.add_argument("--threshold", type=float, action="append",
                    help="emit P(Y >= c) for count families (repeatable)")
    pr.add_argument("--adjusted", action="store_true",
                    help="apply the subsampling intercept adjustment")
    pr.add_argument("--tau0", type=float, help="full-data zero fraction")
    pr.add_argument("--t0", type=float, help="subsampled zero fraction")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="run one simulation scenario")
    s.add_argument("--spec", required=True, help="ScenarioSpec JSON file")
    s.add_argument("--out", default="sim_out")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=default_jobs())
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="run a scenario grid")
    b.add_argument("--grid", help="'paper-desk' or a JSON file with {scenarios: [...]}")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", default="bench_out")
    b.add_argument("--jobs", type=int, default=default_jobs())
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
