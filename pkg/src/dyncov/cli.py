"""Command-line entry point.

Subcommands: simulate, fit, filter, evaluate, compare, curve, and rerun (replay
the command recorded in a run manifest). Exit codes are
0 on success, 1 on a runtime failure (one ``error: <Category>: message`` line
on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from importlib import metadata

import numpy as np

from . import data, evaluation, mle, models, rapf
from .errors import DyncovError, InvalidParams

log = logging.getLogger("dyncov")


def _version() -> str:
    try:
        return metadata.version("dyncov")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--particles", type=int, default=4000)
    g.add_argument("--shrinkage", type=float, default=0.95)
    g.add_argument("--warmup", type=int, default=50)
    g.add_argument("--innovation", choices=("gaussian", "student-t"), default="gaussian")
    g.add_argument("--no-standardize", action="store_true", help="use returns as given")
    g.add_argument("--output", "-o", default="-", help="output path ('-' for stdout)")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--input-kind", choices=("returns", "prices"), default="returns")
    g.add_argument("--returns", choices=("log", "simple"), default="log", help="return construction for prices")
    g.add_argument("--stale-run", type=int, default=data.DEFAULT_STALE_RUN)
    g.add_argument("--manifest", help="write a run manifest (JSON) to this path")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="dyncov", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a diagonal BEKK path to CSV")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--length", type=int, default=1000)
    s.add_argument("--a", type=_floats, default=[0.9])
    s.add_argument("--b", type=_floats, default=[0.35])
    s.add_argument("--c", type=_floats, help="upper-triangular C (row-major); default gives unit long-run covariance")
    s.add_argument("--nu", type=float, help="Student-t degrees of freedom")
    s.add_argument("--params", help="JSON file with BEKK parameters (e.g. from `fit`)")
    s.add_argument("--switch-at", type=int, help="switch parameters at this step")
    s.add_argument("--a2", type=_floats)
    s.add_argument("--b2", type=_floats)
    s.add_argument("--c2", type=_floats)
    s.add_argument("--sigma-output", help="also write the latent covariance path (upper triangle) here")

    f = sub.add_parser("fit", parents=[common], help="maximum-likelihood BEKK fit, JSON parameters out")
    f.add_argument("input")
    f.add_argument("--variant", choices=("diagonal", "full"), default="diagonal")
    f.add_argument("--restarts", type=int, default=5)
    f.add_argument("--max-iters", type=int, default=2000)

    fl = sub.add_parser("filter", parents=[common], help="run the particle filter over a series")
    fl.add_argument("input")
    fl.add_argument("--snapshot", help="write the final particle cloud here")
    fl.add_argument("--resume", help="continue from a cloud snapshot (input holds only new rows)")
    fl.add_argument("--timing", action="store_true", help="record wall-clock time per step")

    e = sub.add_parser("evaluate", parents=[common], help="rolling one-step-ahead evaluation")
    e.add_argument("inputs", nargs="+")
    e.add_argument("--methods", default=",".join(evaluation.METHODS))
    e.add_argument("--refit", choices=("warm", "cold"), default="warm")
    e.add_argument("--warm-max-iters", type=int, default=200)
    e.add_argument("--restarts", type=int, default=5)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--summary", help="write the JSON summary here")
    e.add_argument("--score-table", help="write the method x dataset score table CSV here")
    e.add_argument("--timing", action="store_true", help="record wall-clock time per step")

    c = sub.add_parser("compare", parents=[common], help="Friedman + Nemenyi over a score table CSV")
    c.add_argument("table")
    c.add_argument("--alpha", type=float, default=0.05)

    cv = sub.add_parser("curve", parents=[common], help="predictive log-density along one coordinate")
    cv.add_argument("input")
    cv.add_argument("--dim-index", type=int, default=0)
    cv.add_argument("--grid-min", type=float, default=-5.0)
    cv.add_argument("--grid-max", type=float, default=5.0)
    cv.add_argument("--grid-points", type=int, default=101)

    r = sub.add_parser("rerun", help="replay the command recorded in a run manifest")
    r.add_argument("manifest_file")
    r.add_argument("--output", "-o", help="override the recorded output path")
    r.add_argument("--summary", help="override the recorded summary path (evaluate)")
    r.add_argument("--score-table", help="override the recorded score-table path (evaluate)")
    return parser


# ---------------------------------------------------------------------------
# helpers


class _Out:
    """Single writer for one output target."""

    def __init__(self, path: str):
        self.path = path

    def __enter__(self):
        self.fh = sys.stdout if self.path == "-" else open(self.path, "w", newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()
        return False


def _innovation(args) -> str:
    return "student_t" if args.innovation == "student-t" else "gaussian"


def load_dataset(path: str, args) -> data.Dataset:
    raw = data.load_csv(path)
    name = os.path.splitext(os.path.basename(path))[0]
    if args.input_kind == "prices":
        series = data.to_returns(raw, args.returns, args.stale_run)
    else:
        series = data.ReturnSeries(raw.values, raw.columns, raw.timestamps, raw.dropped)
    if args.no_standardize:
        return data.Dataset(name, series, path, False)
    return data.standardize(series, name, path)


def _rapf_config(args) -> rapf.RapfConfig:
    return rapf.RapfConfig(
        n_particles=args.particles, shrinkage_a=args.shrinkage, innovation=_innovation(args), seed=args.seed
    )


def _write_manifest(args, argv, dataset, method, config, wall):
    if not args.manifest:
        return
    doc = {
        "command": args.command,
        "argv": list(argv),
        "dataset": dataset,
        "method": method,
        "config": config,
        "seed": args.seed,
        "code_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_seconds": wall,
    }
    with open(args.manifest, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump_json(obj, fh) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
    fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    d = args.dim
    rng = np.random.default_rng(args.seed)

    def params_from(a, b, c):
        a = np.resize(np.asarray(a, dtype=float), d)
        b = np.resize(np.asarray(b, dtype=float), d)
        c = models.c_for_target_cov(a, b, np.eye(d)) if c is None else np.asarray(c, dtype=float)
        return models.BekkParams(a, b, c, "diagonal", args.nu)

    if args.params:
        with open(args.params) as fh:
            doc = json.load(fh)
        p1 = models.BekkParams.from_dict(doc.get("params", doc))
        d = p1.dim
    else:
        p1 = params_from(args.a, args.b, args.c)
    if not models.stationarity_check(p1):
        raise InvalidParams("simulation parameters are not stationary")
    Sigma0 = models.unconditional_cov(p1) if p1.variant == "diagonal" else np.eye(d)
    if args.switch_at:
        p2 = params_from(args.a2 or args.a, args.b2 or args.b, args.c2)
        X1, S1 = models.simulate(p1, args.switch_at, Sigma0, rng)
        X2, S2 = models.simulate(p2, args.length - args.switch_at, S1[-1], rng, x_prev=X1[-1])
        X, S = np.vstack([X1, X2]), np.concatenate([S1, S2])
    else:
        X, S = models.simulate(p1, args.length, Sigma0, rng)
    with _Out(args.output) as fh:
        data.write_series_csv(X, fh)
    if args.sigma_output:
        iu = np.triu_indices(d)
        with open(args.sigma_output, "w") as fh:
            data.write_series_csv(S[:, iu[0], iu[1]], fh, [f"cov_{i}_{j}" for i, j in zip(*iu)])
    return {"params": p1.to_dict()}


def cmd_fit(args):
    ds = load_dataset(args.input, args)
    X = ds.series.values
    cfg = mle.FitConfig(variant=args.variant, innovation=_innovation(args), max_iters=args.max_iters,
                        n_restarts=args.restarts, seed=args.seed)
    Sigma0 = models.initial_sigma(X[: max(args.warmup, X.shape[1] + 1)])
    res = mle.fit_bekk(X, cfg, Sigma0=Sigma0)
    out = {
        "dataset": ds.name,
        "params": res.params.to_dict(),
        "loglik": res.loglik,
        "iterations": res.iterations,
        "converged": res.converged,
        "stationary": models.stationarity_check(res.params),
        "config": asdict(cfg),
    }
    with _Out(args.output) as fh:
        _dump_json(out, fh)
    return out["config"]


def cmd_filter(args):
    ds = load_dataset(args.input, args)
    X = ds.series.values
    cfg = _rapf_config(args)
    cloud = None
    if args.resume:
        with open(args.resume) as fh:
            cloud = rapf.read_cloud(fh)
    res = rapf.run_filter(X, cfg, warmup=args.warmup, cloud=cloud)
    method = "BMDC-T" if cfg.student_t else "BMDC"
    if not args.timing:
        for r in res.records:
            r.elapsed_seconds = float("nan")
    run = evaluation.EvalRun(method, 0, res.records, *evaluation.average_and_cumulative(res.records))
    if args.snapshot:
        with open(args.snapshot, "w") as fh:
            rapf.write_cloud(res.cloud, fh)
    with _Out(args.output) as fh:
        if args.format == "json":
            theta, hypers, sigma = rapf.posterior_mean(res.cloud)
            _dump_json({
                **evaluation.run_summary(run, ds.name, asdict(cfg)),
                "posterior_mean": {"a": theta.a.tolist(), "b": theta.b.tolist(), "c": theta.c.tolist(),
                                   "drift": [hypers.alpha, hypers.beta, hypers.gamma]},
                "final_ess": rapf.effective_sample_size(res.cloud),
            }, fh)
        else:
            evaluation.records_to_csv(run, fh, timing=args.timing)
    return asdict(cfg)


def cmd_evaluate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in evaluation.METHODS:
            raise InvalidParams(f"unknown method {m!r}")
    datasets = {}
    for path in args.inputs:
        ds = load_dataset(path, args)
        datasets[ds.name] = ds.series.values
    cfg = evaluation.EvalConfig(
        rapf=rapf.RapfConfig(n_particles=args.particles, shrinkage_a=args.shrinkage, seed=args.seed),
        fit=mle.FitConfig(n_restarts=args.restarts, seed=args.seed),
        refit=args.refit,
        warm_max_iters=args.warm_max_iters,
    )
    runs = evaluation.evaluate_many(datasets, methods, args.warmup, cfg, jobs=args.jobs)
    names = list(datasets)
    echo = evaluation.config_echo(cfg)
    summaries = [evaluation.run_summary(runs[(n, m)], n, echo) for n in names for m in methods]
    with _Out(args.output) as fh:
        if args.format == "json":
            _dump_json(summaries, fh)
        else:
            first = True
            for n in names:
                for m in methods:
                    buf = _CsvTail(fh, skip_header=not first)
                    evaluation.records_to_csv(runs[(n, m)], buf, timing=args.timing)
                    first = False
    if args.summary:
        with open(args.summary, "w") as fh:
            _dump_json(summaries, fh)
    if args.score_table:
        if len(methods) < 2 or len(names) < 2:
            raise InvalidParams("a score table needs at least two methods and two datasets")
        with open(args.score_table, "w", newline="") as fh:
            evaluation.score_table_to_csv(evaluation.score_table(runs, methods, names), fh)
    return echo


class _CsvTail:
    """File proxy that optionally drops the first (header) line written."""

    def __init__(self, fh, skip_header: bool):
        self.fh = fh
        self.skip = skip_header

    def write(self, s: str):
        if self.skip:
            if "\n" in s:
                s = s.split("\n", 1)[1]
                self.skip = False
            else:
                return 0
        return self.fh.write(s)


def cmd_compare(args):
    with open(args.table, newline="") as fh:
        tbl = evaluation.score_table_from_csv(fh)
    summary = evaluation.comparison_summary(tbl, args.alpha)
    ranks = evaluation.rank_matrix(tbl)
    with _Out(args.output) as fh:
        if args.format == "json":
            summary["ranks"] = {ds: dict(zip(tbl.methods, ranks[:, j].tolist())) for j, ds in enumerate(tbl.datasets)}
            _dump_json(summary, fh)
        else:
            fh.write("dataset," + ",".join(tbl.methods) + "\n")
            for j, ds in enumerate(tbl.datasets):
                fh.write(ds + "," + ",".join(format(v, ".17g") for v in ranks[:, j]) + "\n")
            fh.write("avg_rank," + ",".join(format(v, ".17g") for v in summary["avg_ranks"].values()) + "\n")
            fh.write(f"# friedman_chi_square={summary['statistic']:.17g} reject={summary['reject']} "
                     f"nemenyi_cd={summary['nemenyi_cd']}\n")
    return {"alpha": args.alpha}


def cmd_curve(args):
    ds = load_dataset(args.input, args)
    cfg = _rapf_config(args)
    res = rapf.run_filter(ds.series.values, cfg, warmup=args.warmup)
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    rng = rapf.step_rng(cfg.seed, res.cloud.step + 1)
    rows = rapf.predictive_density_curve(res.cloud, args.dim_index, grid, cfg, rng)
    with _Out(args.output) as fh:
        if args.format == "json":
            _dump_json([{"x": x, "mixture": m, "plugin": p} for x, m, p in rows], fh)
        else:
            fh.write("x,mixture_logpdf,plugin_logpdf\n")
            for x, m, p in rows:
                fh.write(f"{x:.17g},{m:.17g},{p:.17g}\n")
    return asdict(cfg)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "filter": cmd_filter,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "curve": cmd_curve,
}


def _replay_args(parser, rargs):
    """Parsed arguments of a manifest's command with output paths overridden."""
    with open(rargs.manifest_file) as fh:
        doc = json.load(fh)
    if "argv" not in doc:
        raise InvalidParams("manifest has no recorded argv")
    args = parser.parse_args(doc["argv"])
    if args.command == "rerun":
        raise InvalidParams("manifest records another rerun")
    args.manifest = None
    for name in ("output", "summary", "score_table"):
        val = getattr(rargs, name, None)
        if val is not None and hasattr(args, name):
            setattr(args, name, val)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command == "rerun":
        try:
            args = _replay_args(parser, args)
        except SystemExit as exc:
            return int(exc.code) if exc.code is not None else 0
        except (DyncovError, OSError, ValueError) as exc:
            cat = exc.category if isinstance(exc, DyncovError) else type(exc).__name__
            print(f"error: {cat}: {exc}", file=sys.stderr)
            return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        config = COMMANDS[args.command](args)
    except DyncovError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    dataset = getattr(args, "input", None) or getattr(args, "inputs", None) or getattr(args, "table", None)
    method = getattr(args, "methods", None) or args.command
    _write_manifest(args, argv, dataset, method, config, time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
