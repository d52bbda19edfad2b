"""Rolling one-step-ahead evaluation and multi-method rank statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from . import mle, models, rapf
from .errors import (
    DegenerateTable,
    DyncovError,
    EmptyRun,
    InvalidParams,
    RunAborted,
    TooFewObservations,
    UnsupportedAlpha,
    UnsupportedK,
)
from .rapf import PredictionRecord

logger = logging.getLogger(__name__)

METHODS = ("BEKK", "BEKK-T", "BMDC", "BMDC-T")
MAX_FAILURE_FRACTION = 0.10

# Studentized range statistic divided by sqrt(2), k = 2 .. 10
NEMENYI_Q = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}


@dataclass(frozen=True)
class EvalConfig:
    rapf: rapf.RapfConfig = field(default_factory=rapf.RapfConfig)
    fit: mle.FitConfig = field(default_factory=mle.FitConfig)
    refit: str = "warm"  # "warm" or "cold"
    warm_max_iters: int = 200
    warm_tol: float = 1e-6

    def __post_init__(self):
        if self.refit not in ("warm", "cold"):
            raise InvalidParams(f"unknown refit mode {self.refit!r}")


@dataclass
class EvalRun:
    method: str
    warmup: int
    records: list[PredictionRecord]
    avg_loglik: float
    cum_loglik: float
    avg_loglik_plugin: float = float("nan")
    failures: int = 0


@dataclass
class ScoreTable:
    methods: list[str]
    datasets: list[str]
    scores: np.ndarray  # (k methods, n datasets), higher is better

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        k, n = len(self.methods), len(self.datasets)
        if self.scores.shape != (k, n):
            raise InvalidParams(f"scores shape {self.scores.shape} != ({k}, {n})")
        if k < 2 or n < 2:
            raise InvalidParams("need at least two methods and two datasets")
        if np.any(np.isnan(self.scores)):
            raise InvalidParams("score table contains NaN")


def _values(records) -> np.ndarray:
    return np.array([r.pred_logdensity_mixture if isinstance(r, PredictionRecord) else float(r) for r in records])


def average_and_cumulative(records) -> tuple[float, float]:
    v = _values(records)
    if v.size == 0:
        raise EmptyRun("no records")
    return float(np.mean(v)), float(np.sum(v))


def learning_curve(records, window: int) -> list[tuple[int, float]]:
    """Trailing-window means; one point per full window, keyed by its last step."""
    if window < 1:
        raise InvalidParams("window must be >= 1")
    v = _values(records)
    steps = [r.step if isinstance(r, PredictionRecord) else i for i, r in enumerate(records)]
    if v.size < window:
        return []
    csum = np.concatenate([[0.0], np.cumsum(v)])
    means = (csum[window:] - csum[:-window]) / window
    return [(int(steps[i + window - 1]), float(m)) for i, m in enumerate(means)]


def _patch_failures(records: list[PredictionRecord]) -> None:
    """Replace non-finite step densities by the worst finite one in the run."""
    finite = [r.pred_logdensity_mixture for r in records if np.isfinite(r.pred_logdensity_mixture)]
    finite_p = [r.pred_logdensity_plugin for r in records if np.isfinite(r.pred_logdensity_plugin)]
    worst = min(finite) if finite else -1e300
    worst_p = min(finite_p) if finite_p else -1e300
    for r in records:
        if not np.isfinite(r.pred_logdensity_mixture):
            r.pred_logdensity_mixture = worst
        if not np.isfinite(r.pred_logdensity_plugin):
            r.pred_logdensity_plugin = worst_p


def _finish(method, warmup, records, failures) -> EvalRun:
    n = len(records)
    if failures > MAX_FAILURE_FRACTION * n:
        raise RunAborted(f"{method}: {failures} of {n} steps failed")
    _patch_failures(records)
    avg, cum = average_and_cumulative(records)
    plug = float(np.mean([r.pred_logdensity_plugin for r in records]))
    return EvalRun(method, warmup, records, avg, cum, plug, failures)


def _failed_record(step, d) -> PredictionRecord:
    return PredictionRecord(step, -np.inf, -np.inf, np.full((d, d), np.nan), float("nan"), 0.0)


def _rolling_bekk(X, method, warmup, cfg: EvalConfig) -> EvalRun:
    T, d = X.shape
    fit_cfg = replace(cfg.fit, innovation="student_t" if method == "BEKK-T" else "gaussian")
    # from a warm start the optimum is close; the simplex search only burns evaluations
    warm_cfg = replace(fit_cfg, max_iters=cfg.warm_max_iters, tol=cfg.warm_tol, n_restarts=0,
                       search=False, polish=True)
    Sigma0 = models.initial_sigma(X[:warmup])
    params = None
    records, failures = [], 0
    for t in range(warmup, T):
        start = time.perf_counter()
        try:
            if params is None or cfg.refit == "cold":
                params = mle.fit_bekk(X[:t], fit_cfg, Sigma0=Sigma0).params
            else:
                try:
                    params = mle.fit_bekk(X[:t], warm_cfg, Sigma0=Sigma0, init=params).params
                except DyncovError:
                    params = mle.fit_bekk(X[:t], fit_cfg, Sigma0=Sigma0).params
            state = mle.recursion_state(params, X[:t], Sigma0)
            cov, lp = mle.predict_one_step(params, state, X[t])
        except (DyncovError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("%s step %d failed: %s", method, t, exc)
            failures += 1
            records.append(_failed_record(t, d))
            continue
        records.append(PredictionRecord(t, lp, lp, cov, float("nan"), time.perf_counter() - start))
    return _finish(method, warmup, records, failures)


def _rolling_bmdc(X, method, warmup, cfg: EvalConfig) -> EvalRun:
    T, d = X.shape
    rcfg = replace(cfg.rapf, innovation="student_t" if method == "BMDC-T" else "gaussian")
    Sigma0 = models.initial_sigma(X[:warmup])
    cloud = rapf.init_cloud(rcfg, d, Sigma0, rapf.step_rng(rcfg.seed, 0), last_x=X[0])
    records, failures = [], 0
    for t in range(1, T):
        rng = rapf.step_rng(rcfg.seed, t)
        try:
            cloud, rec = rapf.rapf_update(cloud, X[t], rcfg, rng)
        except DyncovError as exc:
            logger.warning("%s step %d failed: %s", method, t, exc)
            _, _, sig = rapf.posterior_mean(cloud)
            sig = models.initial_sigma(X[max(0, t - warmup):t + 1]) if not np.all(np.isfinite(sig)) else sig
            cloud = rapf.init_cloud(rcfg, d, sig, rng, last_x=X[t])
            cloud.step = t
            if t >= warmup:
                failures += 1
                records.append(_failed_record(t, d))
            continue
        rec.step = t
        if t >= warmup:
            records.append(rec)
    return _finish(method, warmup, records, failures)


def rolling_evaluate(series, method: str, warmup: int = 50, cfg: EvalConfig = EvalConfig()) -> EvalRun:
    """Sequential one-step-ahead predictive log-likelihood for one method.

    BEKK methods refit on the growing training prefix before every
    prediction; the particle-filter methods make a single pass. Records cover
    the steps ``warmup .. T-1`` (0-based), i.e. ``T - warmup`` predictions.
    """
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, d = X.shape
    if method not in METHODS:
        raise InvalidParams(f"unknown method {method!r}; expected one of {METHODS}")
    if warmup < d + 2:
        raise TooFewObservations(f"warmup must be >= d + 2 = {d + 2}")
    if T <= warmup:
        raise TooFewObservations("series is not longer than the warmup")
    if method.startswith("BEKK"):
        return _rolling_bekk(X, method, warmup, cfg)
    return _rolling_bmdc(X, method, warmup, cfg)


def _evaluate_job(job):
    name, X, method, warmup, cfg = job
    return name, method, rolling_evaluate(X, method, warmup, cfg)


def evaluate_many(datasets: dict, methods: Sequence[str], warmup: int, cfg: EvalConfig, jobs: int = 1):
    """Run every (dataset, method) pair; returns ``{(name, method): EvalRun}``.

    Pairs are independent; with ``jobs > 1`` they run in worker processes.
    Results do not depend on scheduling.
    """
    work = [(name, np.asarray(X, dtype=float), m, warmup, cfg) for name, X in datasets.items() for m in methods]
    if jobs <= 1:
        results = [_evaluate_job(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_job, work))
    return {(name, m): run for name, m, run in results}


def score_table(runs: dict, methods: Sequence[str], datasets: Sequence[str]) -> ScoreTable:
    scores = np.array([[runs[(ds, m)].avg_loglik for ds in datasets] for m in methods])
    return ScoreTable(list(methods), list(datasets), scores)


# ---------------------------------------------------------------------------
# rank statistics


def rank_matrix(tbl: ScoreTable) -> np.ndarray:
    """Per-dataset ranks, shape (k, n); 1 is best, ties get the average rank."""
    return np.apply_along_axis(lambda col: stats.rankdata(-col, method="average"), 0, tbl.scores)


def friedman_test(tbl: ScoreTable, alpha: float = 0.05):
    """Friedman rank-sum test, chi-square form (no tie correction).

    Returns ``(statistic, reject, avg_ranks)``.
    """
    k, n = tbl.scores.shape
    if k == 2 and np.any(np.ptp(tbl.scores, axis=0) == 0):
        raise DegenerateTable("a dataset row is constant across both methods")
    R = rank_matrix(tbl).mean(axis=1)
    stat = 12.0 * n / (k * (k + 1)) * (np.sum(R**2) - k * (k + 1) ** 2 / 4.0)
    stat = max(float(stat), 0.0)
    crit = stats.chi2.ppf(1.0 - alpha, k - 1)
    return stat, bool(stat > crit), R


def nemenyi_critical_distance(k: int, n: int, alpha: float = 0.05) -> float:
    if not 2 <= k <= 10:
        raise UnsupportedK(f"k={k} outside the tabulated range 2..10")
    key = next((a for a in NEMENYI_Q if math.isclose(a, alpha)), None)
    if key is None:
        raise UnsupportedAlpha(f"alpha={alpha} not tabulated; use 0.05 or 0.10")
    q = NEMENYI_Q[key][k - 2]
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def pairwise_significance(avg_ranks, cd: float) -> np.ndarray:
    R = np.asarray(avg_ranks, dtype=float)
    return np.abs(R[:, None] - R[None, :]) > cd


# ---------------------------------------------------------------------------
# serialization


def _fmt(v) -> str:
    return format(float(v), ".17g")


def records_to_csv(run: EvalRun, fh, timing: bool = True) -> None:
    """Write one CSV line per record.

    With ``timing=False`` the elapsed-time column is written as ``nan`` so the
    file depends only on the inputs.
    """
    d = run.records[0].predicted_cov_mean.shape[0] if run.records else 0
    iu = np.triu_indices(d)
    cov_cols = [f"cov_{i}_{j}" for i, j in zip(*iu)]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "method", "pred_loglik_mixture", "pred_loglik_plugin", "ess", "elapsed_seconds", *cov_cols])
    for r in run.records:
        w.writerow([
            r.step, run.method, _fmt(r.pred_logdensity_mixture), _fmt(r.pred_logdensity_plugin),
            _fmt(r.ess), _fmt(r.elapsed_seconds if timing else float("nan")),
            *(_fmt(v) for v in r.predicted_cov_mean[iu]),
        ])


def records_from_csv(fh) -> list[PredictionRecord]:
    reader = csv.reader(fh)
    header = next(reader)
    cov_cols = header[6:]
    d = models.dim_from_tri(len(cov_cols)) if cov_cols else 0
    iu = np.triu_indices(d)
    out = []
    for row in reader:
        cov = np.zeros((d, d))
        vals = np.array([float(v) for v in row[6:]])
        cov[iu] = vals
        cov[(iu[1], iu[0])] = vals
        out.append(PredictionRecord(int(row[0]), float(row[2]), float(row[3]), cov, float(row[4]), float(row[5])))
    return out


def score_table_to_csv(tbl: ScoreTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["dataset", *tbl.methods])
    for j, ds in enumerate(tbl.datasets):
        w.writerow([ds, *(_fmt(v) for v in tbl.scores[:, j])])


def score_table_from_csv(fh) -> ScoreTable:
    rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidParams("score table CSV needs a header and at least one row")
    methods = rows[0][1:]
    datasets = [r[0] for r in rows[1:]]
    scores = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).T
    return ScoreTable(methods, datasets, scores)


def run_summary(run: EvalRun, dataset: str, config: dict | None = None) -> dict:
    return {
        "method": run.method,
        "dataset": dataset,
        "warmup": run.warmup,
        "n_records": len(run.records),
        "avg_loglik": run.avg_loglik,
        "cum_loglik": run.cum_loglik,
        "avg_loglik_plugin": run.avg_loglik_plugin,
        "failures": run.failures,
        "config": config or {},
    }


def comparison_summary(tbl: ScoreTable, alpha: float = 0.05) -> dict:
    stat, reject, R = friedman_test(tbl, alpha)
    k, n = tbl.scores.shape
    out = {
        "test": "friedman_chi_square",
        "alpha": alpha,
        "k": k,
        "n": n,
        "statistic": stat,
        "reject": reject,
        "avg_ranks": dict(zip(tbl.methods, R.tolist())),
    }
    try:
        cd = nemenyi_critical_distance(k, n, alpha)
    except (UnsupportedK, UnsupportedAlpha):
        cd = None
    out["nemenyi_cd"] = cd
    if cd is not None:
        sig = pairwise_significance(R, cd)
        out["significant_pairs"] = [
            [tbl.methods[i], tbl.methods[j]] for i in range(k) for j in range(i + 1, k) if sig[i, j]
        ]
    return out


def config_echo(cfg: EvalConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))
