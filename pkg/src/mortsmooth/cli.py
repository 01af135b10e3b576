"""Command-line interface: ``mortsmooth <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from . import __version__
from . import products
from .confounding import decorrelate_covariate, standardize_covariate
from .data import (DataError, crude_rates, export_dataset, export_results,
                   ingest_dataset, simulate_dataset)
from .graphs import (GraphError, eigendecompose, icar_structure, load_adjacency, read_label_table,
                     rw_structure, spain_provinces)
from .inference import (DEFAULT_SEED, ConvergenceError, NumericalError, compute_dic, compute_waic,
                        fit_model)
from .model import ModelDataError, SpecError, assemble_model, parse_model_spec
from .oracle import OracleError, mcmc_sample

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# named model configurations used in the analysis: (spec text, sex)
PRESETS = {
    "male_agetime": ("age-time; age=rw1; time=rw1", "M"),
    "female_agetime": ("age-time; age=rw1; time=rw2", "F"),
    "male_agespace": ("age-space; age=rw1; space=icar", "M"),
    "female_agespace": ("age-space; age=rw1; space=icar", "F"),
}
INTERACTION_ORDER = (None, "I", "II", "III", "IV")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared option handling


def _load_data(path) -> "Dataset":  # noqa: F821
    """Read ``counts.csv``, ``population.csv`` and ``covariate_<name>.csv`` from a directory."""
    if not os.path.isdir(path):
        raise DataError(f"data directory {path!r} not found")
    counts = os.path.join(path, "counts.csv")
    pop = os.path.join(path, "population.csv")
    for p in (counts, pop):
        if not os.path.exists(p):
            raise DataError(f"missing {os.path.basename(p)} in {path}")
    covs = {}
    for p in sorted(glob.glob(os.path.join(path, "covariate_*.csv"))):
        covs[os.path.basename(p)[len("covariate_"):-4]] = p
    return ingest_dataset(counts, pop, covs)


def _load_graph(args):
    if not getattr(args, "graph", None):
        return None
    if args.graph == "spain":
        return spain_provinces()
    labels = read_label_table(args.labels) if getattr(args, "labels", None) else None
    if not os.path.exists(args.graph):
        raise DataError(f"graph file {args.graph!r} not found")
    return load_adjacency(args.graph, labels)


def _load_spec(args):
    """Resolve ``--spec`` (preset name, file path or inline text) and the sex to model."""
    text, sex = args.spec, None
    if text in PRESETS:
        text, sex = PRESETS[text]
    elif os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    spec = parse_model_spec(text)
    if getattr(args, "interaction", None):
        inter = args.interaction
        spec = spec.with_interaction(None if inter.lower() in ("none", "additive") else inter.upper())
    return spec, (args.sex or sex)


def _model_from_args(args, spec=None):
    base, sex = _load_spec(args)
    spec = spec or base
    dataset = _load_data(args.data)
    graph = _load_graph(args)
    return assemble_model(spec, dataset, graph, sex), sex


def _add_model_options(p):
    p.add_argument("--data", required=True, help="directory with counts.csv and population.csv")
    p.add_argument("--spec", required=True, help="preset name, spec file or inline spec text")
    p.add_argument("--graph", help="edge-list file, or 'spain' for the bundled province graph")
    p.add_argument("--labels", help="label table (index,label) for the graph")
    p.add_argument("--sex", help="sex to model (defaults to the preset's, or the only one)")
    p.add_argument("--interaction", help="override the spec's interaction (none, I, II, III, IV)")


def _add_fit_options(p):
    p.add_argument("--grid-step", type=float, default=0.75)
    p.add_argument("--grid-range", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1, help="threads for the hyperparameter grid")


def _fit(model, args):
    return fit_model(model, grid_step=args.grid_step, grid_range=args.grid_range, seed=args.seed,
                     n_jobs=args.jobs)


def _latent_table(model, mean, sd, extra=None):
    rows = {"block": [], "label": []}
    for b in model.blocks:
        rows["block"] += [b.name] * b.size
        rows["label"] += [str(lab) for lab in (b.labels or range(b.size))]
    df = pd.DataFrame(rows)
    df["mean"] = mean
    df["sd"] = sd
    for k, v in (extra or {}).items():
        df[k] = v
    return df


def _run_metadata(model, sex, args, **more):
    meta = {
        "version": __version__,
        "numpy": np.__version__,
        "spec": model.spec.to_text(),
        "sex": sex,
        "n_latent": model.n_latent,
        "n_cells": model.n_cells,
        "n_missing": int(model.missing.sum()),
        "hyper_names": list(model.hyper_names),
        "command": args.command,
    }
    meta.update(more)
    return meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_aggregate(args):
    dataset = _load_data(args.data)
    by = [g for g in (args.by or "").split(",") if g]
    table = crude_rates(dataset, by, clamp=not args.no_clamp, rurality=args.rurality)
    _emit_table(table, args.out)
    return EXIT_OK


def _emit_table(table, out):
    if out:
        d = os.path.dirname(os.path.abspath(out))
        if not os.path.isdir(d):
            raise DataError(f"destination directory {d} does not exist")
        table.to_csv(out, index=False, lineterminator="\n")
    else:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")


def cmd_fit(args):
    model, sex = _model_from_args(args)
    fit = _fit(model, args)
    q = fit.quantiles()
    latent = _latent_table(model, fit.mean, fit.sd, {"q025": q[0], "median": q[1], "q975": q[2]})
    hyper = pd.DataFrame(fit.hyper_summary())
    dic, waic = compute_dic(fit), compute_waic(fit)
    crit = pd.DataFrame({"criterion": ["DIC", "WAIC"], "value": [dic.value, waic.value],
                         "penalty": [dic.penalty, waic.penalty]})
    meta = _run_metadata(model, sex, args, fit=fit.metadata())
    export_results({"latent": latent, "hyperparameters": hyper, "criteria": crit}, args.out, meta)
    print(f"fit written to {args.out} ({len(fit.points)} grid points)")
    return EXIT_OK


def compare_table(model_fn, jobs=5, fit_kwargs=None):
    """DIC/WAIC for the additive model and interaction Types I-IV."""
    fit_kwargs = fit_kwargs or {}

    def one(inter):
        fit = fit_model(model_fn(inter), **fit_kwargs)
        dic, waic = compute_dic(fit), compute_waic(fit)
        return {"model": inter or "additive", "DIC": dic.value, "pD": dic.penalty,
                "WAIC": waic.value, "pWAIC": waic.penalty}

    with ThreadPoolExecutor(max(1, jobs)) as ex:
        rows = list(ex.map(one, INTERACTION_ORDER))
    return pd.DataFrame(rows)


def cmd_compare(args):
    base, sex = _load_spec(args)
    dataset = _load_data(args.data)
    graph = _load_graph(args)

    def build(inter):
        return assemble_model(base.with_interaction(inter), dataset, graph, sex)

    table = compare_table(build, args.jobs, {"grid_step": args.grid_step,
                                             "grid_range": args.grid_range, "seed": args.seed})
    _emit_table(table, args.out)
    return EXIT_OK


def cmd_report(args):
    model, sex = _model_from_args(args)
    fit = _fit(model, args)
    X, _ = fit.draws(args.draws, args.seed)
    blocks = [b for b in ("age", "time", "space") if model.has_block(b)]
    patterns = []
    for b in blocks:
        t = products.marginal_pattern_rates(fit, b, X)
        t.insert(0, "block", b)
        patterns.append(t)
    tables = {
        "pattern_rates": pd.concat(patterns, ignore_index=True),
        "cell_rates": products.cell_rate_estimates(fit, X),
        "variance_shares": products.variance_decomposition(fit),
    }
    second = model.spec.second_axis
    exc = products.exceedance_effect(fit, second, X).to_frame()
    exc.insert(0, "block", second)
    if model.spec.kind == "age-space":
        by_age = products.exceedance_vs_age_mean(fit, X, joint=args.joint).to_frame()
        by_age.insert(0, "block", "age-mean")
        exc = pd.concat([exc, by_age], ignore_index=True)
    tables["exceedance"] = exc
    meta = _run_metadata(model, sex, args, fit=fit.metadata(), report_draws=args.draws,
                         report_seed=args.seed)
    export_results(tables, args.out, meta)
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_decorrelate(args):
    tab = pd.read_csv(args.covariate)
    if not {"label", "value"} <= set(tab.columns):
        raise DataError("covariate CSV needs header 'label,value'")
    labels = tab["label"].astype(str).tolist()
    if args.graph:
        graph = _load_graph(args)
        missing = [lab for lab in graph.labels if lab not in set(labels)]
        if missing:
            raise DataError(f"covariate has no value for {missing[0]!r}")
        values = tab.set_index("label")["value"].astype(float).reindex(graph.labels).to_numpy()
        labels = list(graph.labels)
        R, axis = icar_structure(graph), "spatial"
    elif args.axis_length:
        if args.axis_length != len(labels):
            raise DataError(f"covariate has {len(labels)} values, axis length is {args.axis_length}")
        values = tab["value"].astype(float).to_numpy()
        R, axis = rw_structure(args.axis_length, args.order), "temporal"
    else:
        raise UsageError("decorrelate needs --graph or --axis-length")
    std = standardize_covariate(values, axis)
    try:
        dec = decorrelate_covariate(std, eigendecompose(R), args.k, args.removal == "k+1")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = pd.DataFrame({"label": labels, "z": dec.z, "removed": dec.removed})
    _emit_table(out, args.out)
    total = float(std.values @ std.values)
    print(json.dumps({"k": args.k, "removed_vectors": dec.removed_span.shape[1],
                      "removed_energy": dec.removed_energy,
                      "removed_fraction": dec.removed_energy / total}, sort_keys=True),
          file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated numbers") from None


def cmd_simulate(args):
    spec, sex = _load_spec(args)
    graph = _load_graph(args)
    if spec.kind == "age-space":
        if graph is None:
            raise UsageError("age-space simulation needs --graph")
        J = graph.n_areas
    else:
        J = args.levels
    A = args.ages
    N = np.full((A, J), float(args.exposure))
    covs = None
    if spec.covariates:
        rng = np.random.default_rng(args.seed + 1)
        covs = {c.name: rng.standard_normal(J) for c in spec.covariates}
    theta = _floats(args.theta, "theta")
    beta = _floats(args.beta, "beta") if args.beta else []
    try:
        ds, truth = simulate_dataset(spec, theta, beta, N, args.seed, graph, args.alpha, covs,
                                     sex=sex or "M")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = export_dataset(ds, args.out)
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump({"alpha": truth["alpha"], "beta": np.asarray(truth["beta"]).tolist(),
                   "theta": [None if not np.isfinite(t) else float(t) for t in truth["theta"]],
                   "seed": args.seed, "spec": spec.to_text(),
                   "effects": {k: np.asarray(v).tolist() for k, v in sorted(truth["effects"].items())}},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"simulated dataset written to {args.out} ({len(paths)} tables)")
    return EXIT_OK


def cmd_oracle(args):
    model, sex = _model_from_args(args)
    res = mcmc_sample(model, args.iterations, seed=args.seed, chains=args.chains)
    latent = _latent_table(model, res.mean, res.sd, {"mcse": res.mcse, "ess": res.ess,
                                                     "rhat": res.rhat[:model.n_latent]})
    hyper = pd.DataFrame({"name": list(model.hyper_names), "log_precision_mean": res.theta_mean,
                          "log_precision_sd": res.theta_sd, "ess": res.theta_ess})
    meta = _run_metadata(model, sex, args, iterations=args.iterations, chains=args.chains,
                         seed=args.seed, acceptance=res.acceptance)
    export_results({"latent": latent, "hyperparameters": hyper}, args.out, meta)
    print(f"oracle written to {args.out} (acceptance {res.acceptance:.2f})")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="mortsmooth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("aggregate", help="crude rates with 95%% intervals by stratum")
    p.add_argument("--data", required=True)
    p.add_argument("--by", default="", help="comma list of sex, age_band, age_group, year, area, rurality")
    p.add_argument("--rurality", default="rurality", help="covariate holding rurality percentages")
    p.add_argument("--no-clamp", action="store_true", help="keep negative lower bounds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit", help="fit one model and write a fit archive")
    _add_model_options(p)
    _add_fit_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="DIC/WAIC over additive and Types I-IV")
    _add_model_options(p)
    _add_fit_options(p)
    p.set_defaults(jobs=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="pattern rates, cell rates, exceedances, variance shares")
    _add_model_options(p)
    _add_fit_options(p)
    p.add_argument("--draws", type=int, default=products.DEFAULT_DRAWS)
    p.add_argument("--joint", action="store_true",
                   help="age-mean exceedance as Pr(xi + delta > 0) instead of the plug-in rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("decorrelate", help="remove large-scale eigenvectors from a covariate")
    p.add_argument("--covariate", required=True, help="CSV with label,value")
    p.add_argument("--graph")
    p.add_argument("--labels")
    p.add_argument("--axis-length", type=int)
    p.add_argument("--order", type=int, default=1, choices=(1, 2), help="random-walk order (temporal)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--removal", choices=("k", "k+1"), default="k+1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decorrelate)

    p = sub.add_parser("simulate", help="draw a synthetic dataset from the model prior")
    p.add_argument("--spec", required=True)
    p.add_argument("--graph")
    p.add_argument("--labels")
    p.add_argument("--sex")
    p.add_argument("--interaction")
    p.add_argument("--theta", required=True, help="comma-separated log-precisions ('inf' allowed)")
    p.add_argument("--beta", default="")
    p.add_argument("--alpha", type=float, default=-9.0)
    p.add_argument("--ages", type=int, default=8)
    p.add_argument("--levels", type=int, default=13, help="number of years (age-time)")
    p.add_argument("--exposure", type=float, default=1e6)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="adaptive Metropolis reference posterior")
    _add_model_options(p)
    _add_fit_options(p)
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpecError, OracleError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, ModelDataError, FileNotFoundError, pd.errors.ParserError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
