"""Regularized auxiliary particle filter for the drifting-parameter BEKK model.

The cloud is stored as stacked arrays (one row per particle) so every step is
a handful of vectorized ``O(N d^3)`` kernels. Each particle carries

* dynamic parameters ``a``, ``b``, ``c`` (diagonal BEKK, random-walk drift),
* a static block ``(alpha, beta, gamma[, log(nu - 2)])`` moved by the
  Liu-West shrinkage kernel,
* its own covariance ``Sigma_{t-1}``.

Step order of :func:`rapf_update`: shrink static block -> look-ahead at the
zero-noise propagation -> auxiliary resampling -> regularized proposal of the
static block -> parameter diffusion and covariance update -> reweighting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from . import models, mvstat
from .errors import DegenerateWeights, DimensionMismatch, EmptyCloud, InvalidParams
from .models import DriftHypers, ParamState

MAX_REDRAWS = 100
CLAMP_MARGIN = 1e-6
V_RIDGE = 1e-12


@dataclass(frozen=True)
class RapfConfig:
    n_particles: int = 4000
    shrinkage_a: float = 0.95
    kappa: float = 0.0
    tau: float = models.DEFAULT_TAU
    sigma_nu: float = 1.0
    innovation: str = "gaussian"
    seed: int = 0
    shrink_dynamic: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise InvalidParams("n_particles must be >= 1")
        if not 0.0 < self.shrinkage_a <= 1.0:
            raise InvalidParams("shrinkage_a must lie in (0, 1]")
        if not self.tau > 0 or not self.sigma_nu > 0:
            raise InvalidParams("tau and sigma_nu must be positive")
        if self.innovation not in ("gaussian", "student_t"):
            raise InvalidParams(f"unknown innovation {self.innovation!r}")

    @property
    def student_t(self) -> bool:
        return self.innovation == "student_t"


@dataclass
class Particle:
    theta: ParamState
    hypers: DriftHypers
    log_nu_minus_2: float | None
    sigma: np.ndarray
    log_weight: float


@dataclass
class PredictionRecord:
    step: int
    pred_logdensity_mixture: float
    pred_logdensity_plugin: float
    predicted_cov_mean: np.ndarray
    ess: float
    elapsed_seconds: float


@dataclass
class ParticleCloud:
    a: np.ndarray  # (N, d)
    b: np.ndarray  # (N, d)
    c: np.ndarray  # (N, d(d+1)/2)
    hypers: np.ndarray  # (N, 3) signed alpha, beta, gamma
    log_nu_minus_2: np.ndarray | None  # (N,) for Student-t innovations
    sigma: np.ndarray  # (N, d, d)
    log_weight: np.ndarray  # (N,)
    last_x: np.ndarray  # (d,)
    step: int = 0

    @property
    def n(self) -> int:
        return self.log_weight.shape[0]

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weight)

    @property
    def normalized(self) -> bool:
        return bool(abs(np.sum(self.weights) - 1.0) <= 1e-10)

    @property
    def nu(self) -> np.ndarray | None:
        if self.log_nu_minus_2 is None:
            return None
        return 2.0 + np.exp(self.log_nu_minus_2)

    def static_block(self) -> np.ndarray:
        if self.log_nu_minus_2 is None:
            return self.hypers
        return np.column_stack([self.hypers, self.log_nu_minus_2])

    def particle(self, i: int) -> Particle:
        h = self.hypers[i]
        return Particle(
            ParamState(self.a[i], self.b[i], self.c[i]),
            DriftHypers(float(h[0]), float(h[1]), float(h[2])),
            None if self.log_nu_minus_2 is None else float(self.log_nu_minus_2[i]),
            self.sigma[i].copy(),
            float(self.log_weight[i]),
        )

    @classmethod
    def from_particles(cls, particles: list[Particle], last_x, step: int = 0) -> "ParticleCloud":
        if not particles:
            raise EmptyCloud("no particles")
        student = particles[0].log_nu_minus_2 is not None
        return cls(
            a=np.array([p.theta.a for p in particles]),
            b=np.array([p.theta.b for p in particles]),
            c=np.array([p.theta.c for p in particles]),
            hypers=np.array([[p.hypers.alpha, p.hypers.beta, p.hypers.gamma] for p in particles]),
            log_nu_minus_2=np.array([p.log_nu_minus_2 for p in particles]) if student else None,
            sigma=np.array([p.sigma for p in particles]),
            log_weight=np.array([p.log_weight for p in particles], dtype=float),
            last_x=np.atleast_1d(np.asarray(last_x, dtype=float)),
            step=step,
        )


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Random stream for one filter step, fixed by ``(seed, step)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))


def init_cloud(cfg: RapfConfig, d: int, Sigma0, rng: np.random.Generator, last_x=None) -> ParticleCloud:
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    if Sigma0.shape != (d, d):
        raise DimensionMismatch("Sigma0 has the wrong shape")
    mvstat.cholesky(Sigma0)
    N = cfg.n_particles
    a, b, c = models.sample_initial_batch(N, d, rng)
    hypers = cfg.kappa + np.sqrt(cfg.tau) * rng.standard_normal((N, 3))
    lnu = cfg.sigma_nu * rng.standard_normal(N) if cfg.student_t else None
    return ParticleCloud(
        a=a, b=b, c=c, hypers=hypers, log_nu_minus_2=lnu,
        sigma=np.broadcast_to(Sigma0, (N, d, d)).copy(),
        log_weight=np.full(N, -np.log(N)),
        last_x=np.zeros(d) if last_x is None else np.atleast_1d(np.asarray(last_x, dtype=float)),
        step=0,
    )


def _logpdf(x, sigma, nu) -> np.ndarray:
    if nu is None:
        return mvstat.mvn_logpdf_batch(x, sigma)
    return mvstat.mvt_logpdf_batch(x, nu, sigma)


def effective_sample_size(cloud: ParticleCloud) -> float:
    w = cloud.weights
    return float(1.0 / np.sum(w * w))


def _diffuse_batch(a, b, c, hypers, rng):
    s = np.abs(hypers)
    a = a + s[:, 0:1] * rng.standard_normal(a.shape)
    b = b + s[:, 1:2] * rng.standard_normal(b.shape)
    c = c + s[:, 2:3] * rng.standard_normal(c.shape)
    return a, b, c


def _diffuse_feasible(a0, b0, c0, hypers, rng):
    """Diffuse, redrawing non-stationary particles, then clamp the stragglers."""
    a, b, c = _diffuse_batch(a0, b0, c0, hypers, rng)
    bad = np.flatnonzero(~models.stationary_mask(a, b))
    for _ in range(MAX_REDRAWS):
        if bad.size == 0:
            break
        na, nb, nc = _diffuse_batch(a0[bad], b0[bad], c0[bad], hypers[bad], rng)
        a[bad], b[bad], c[bad] = na, nb, nc
        bad = bad[~models.stationary_mask(na, nb)]
    if bad.size:
        a[bad], b[bad] = models.clamp_stationary(a[bad], b[bad], CLAMP_MARGIN)
    return a, b, c


def _kernel_factor(V: np.ndarray, a: float) -> np.ndarray | None:
    """Cholesky factor of ``(1 - a^2) V``; ``None`` when there is no spread."""
    if a >= 1.0:
        return None
    k = V.shape[0]
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(V + V_RIDGE * np.eye(k))
    return np.sqrt(1.0 - a * a) * L


def shrink(points: np.ndarray, weights: np.ndarray, a: float):
    """Shrunk locations ``a * p_i + (1 - a) * mean`` plus the weighted mean and covariance."""
    mean, V = mvstat.weighted_mean_and_cov(points, weights)
    return a * points + (1.0 - a) * mean, mean, V


def regularize(shrunk: np.ndarray, V: np.ndarray, ancestors: np.ndarray, a: float, rng) -> np.ndarray:
    """Kernel proposal ``N(m_j, (1 - a^2) V)`` around the resampled shrunk locations."""
    out = shrunk[ancestors].copy()
    L = _kernel_factor(V, a)
    if L is not None:
        out += rng.standard_normal(out.shape) @ L.T
    return out


def shrinkage_proposal(points, weights, a: float, rng: np.random.Generator) -> np.ndarray:
    """One draw of the shrinkage kernel with resampling on ``weights``.

    The proposals keep the weighted mean and covariance of ``points`` in
    expectation; this is the static-parameter move of the filter, isolated.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    m, _, V = shrink(points, weights, a)
    idx = mvstat.systematic_resample(weights, rng)
    return regularize(m, V, idx, a, rng)


def _propagate_fresh(cloud: ParticleCloud, rng) -> np.ndarray:
    a, b, c = _diffuse_batch(cloud.a, cloud.b, cloud.c, cloud.hypers, rng)
    return models.bmdc_step_batch(cloud.sigma, cloud.last_x, a, b, c)


def _mixture_from(cloud: ParticleCloud, sig_plus: np.ndarray, x) -> float:
    lp = _logpdf(np.asarray(x, dtype=float), sig_plus, cloud.nu)
    terms = cloud.log_weight + lp
    m = np.max(terms)
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.sum(np.exp(terms - m))))


def predictive_logpdf_mixture(cloud: ParticleCloud, x, cfg: RapfConfig, rng: np.random.Generator) -> float:
    """Log of the particle-mixture one-step predictive density at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (cloud.dim,):
        raise DimensionMismatch("x has the wrong dimension")
    return _mixture_from(cloud, _propagate_fresh(cloud, rng), x)


def posterior_mean(cloud: ParticleCloud):
    """Weighted means of the dynamic parameters, drift magnitudes and Sigma.

    Drift hypers are averaged in absolute value since only their magnitude
    enters the diffusion.
    """
    if cloud.n == 0:
        raise EmptyCloud("empty cloud")
    w = cloud.weights
    theta = ParamState(w @ cloud.a, w @ cloud.b, w @ cloud.c)
    h = w @ np.abs(cloud.hypers)
    hypers = DriftHypers(float(h[0]), float(h[1]), float(h[2]))
    sigma = np.tensordot(w, cloud.sigma, axes=1)
    return theta, hypers, sigma


def _plugin_cov_and_nu(cloud: ParticleCloud):
    theta, _, sigma = posterior_mean(cloud)
    cov = models.bmdc_step(models.CovRecursionState(sigma, cloud.last_x), theta)
    nu = None
    if cloud.log_nu_minus_2 is not None:
        nu = float(2.0 + np.exp(cloud.weights @ cloud.log_nu_minus_2))
    return cov, nu


def _plugin_logpdf(cov, nu, x) -> float:
    if nu is None:
        return mvstat.mvn_logpdf(x, cov)
    return mvstat.mvt_logpdf(x, nu, mvstat.scale_from_cov(nu, cov))


def predictive_logpdf_plugin(cloud: ParticleCloud, x) -> float:
    """Predictive log density at the posterior-mean parameters and covariance."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cov, nu = _plugin_cov_and_nu(cloud)
    return _plugin_logpdf(cov, nu, x)


def predictive_density_curve(cloud: ParticleCloud, dim_index: int, grid: Iterable[float],
                             cfg: RapfConfig, rng: np.random.Generator):
    """Mixture and plug-in predictive log densities along one coordinate.

    The other coordinates are held at zero. One set of propagated
    covariances is drawn and shared by every grid point.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise InvalidParams("grid is empty")
    if not 0 <= dim_index < cloud.dim:
        raise DimensionMismatch("dim_index out of range")
    sig_plus = _propagate_fresh(cloud, rng)
    cov, nu = _plugin_cov_and_nu(cloud)
    out = []
    for g in grid:
        x = np.zeros(cloud.dim)
        x[dim_index] = g
        out.append((float(g), _mixture_from(cloud, sig_plus, x), _plugin_logpdf(cov, nu, x)))
    return out


def rapf_update(cloud: ParticleCloud, x_t, cfg: RapfConfig, rng: np.random.Generator):
    """Assimilate one observation; returns the new cloud and the prediction record.

    The record's densities are one-step-ahead: they are evaluated from the
    incoming cloud before ``x_t`` is used.
    """
    start = time.perf_counter()
    x = np.atleast_1d(np.asarray(x_t, dtype=float))
    if x.shape != (cloud.dim,):
        raise DimensionMismatch(f"observation has dim {x.size}, cloud has dim {cloud.dim}")
    if not cloud.normalized:
        raise DegenerateWeights("cloud weights are not normalized")
    a_shr = cfg.shrinkage_a
    w = cloud.weights
    nu_prev = cloud.nu

    # predictive quantities from the time t-1 cloud
    sig_plus = _propagate_fresh(cloud, rng)
    mix = _mixture_from(cloud, sig_plus, x)
    pred_cov = np.tensordot(w, sig_plus, axes=1)
    plug = predictive_logpdf_plugin(cloud, x)

    # (1) shrink the static block
    static = cloud.static_block()
    m_static, _, V_static = shrink(static, w, a_shr)
    if cfg.shrink_dynamic:
        dyn = np.column_stack([cloud.a, cloud.b, cloud.c])
        m_dyn, _, V_dyn = shrink(dyn, w, a_shr)

    # (2) look-ahead at the zero-noise propagation
    mu = models.bmdc_step_batch(cloud.sigma, cloud.last_x, cloud.a, cloud.b, cloud.c)
    lp_mu = _logpdf(x, mu, nu_prev)
    g = cloud.log_weight + lp_mu
    g_norm, _ = mvstat.logsumexp_normalize(g)

    # (3) auxiliary resampling
    idx = mvstat.systematic_resample(np.exp(g_norm), rng)

    # (4) regularized static block
    new_static = regularize(m_static, V_static, idx, a_shr, rng)
    hypers = new_static[:, :3]
    lnu = new_static[:, 3] if cloud.log_nu_minus_2 is not None else None

    # (5) diffuse the dynamic parameters and advance Sigma
    if cfg.shrink_dynamic:
        dyn_new = regularize(m_dyn, V_dyn, idx, a_shr, rng)
        d, m = cloud.dim, cloud.c.shape[1]
        a0, b0, c0 = dyn_new[:, :d], dyn_new[:, d:2 * d], dyn_new[:, 2 * d:2 * d + m]
    else:
        a0, b0, c0 = cloud.a[idx], cloud.b[idx], cloud.c[idx]
    a, b, c = _diffuse_feasible(a0, b0, c0, hypers, rng)
    sigma = models.bmdc_step_batch(cloud.sigma[idx], cloud.last_x, a, b, c)

    # (6) reweight by the ratio to the look-ahead likelihood
    nu_new = None if lnu is None else 2.0 + np.exp(lnu)
    lw = _logpdf(x, sigma, nu_new) - lp_mu[idx]
    lw, _ = mvstat.logsumexp_normalize(lw)

    new = ParticleCloud(a, b, c, hypers, lnu, sigma, lw, x.copy(), cloud.step + 1)
    record = PredictionRecord(
        step=new.step,
        pred_logdensity_mixture=mix,
        pred_logdensity_plugin=plug,
        predicted_cov_mean=pred_cov,
        ess=effective_sample_size(new),
        elapsed_seconds=time.perf_counter() - start,
    )
    return new, record


@dataclass
class FilterResult:
    records: list[PredictionRecord]
    cloud: ParticleCloud
    theta_means: np.ndarray = field(repr=False)  # (T-1, 2d + m) posterior means after each update
    failures: int = 0


def run_filter(series, cfg: RapfConfig, Sigma0=None, warmup: int | None = None,
               cloud: ParticleCloud | None = None, on_step=None) -> FilterResult:
    """Run the filter over a whole series.

    The first observation is absorbed at initialization (its covariance is
    ``Sigma0`` for every particle); records are produced for t = 1 .. T-1.
    ``Sigma0`` defaults to the population covariance of the first ``warmup``
    rows (the whole series when ``warmup`` is None). Passing ``cloud`` resumes
    from a snapshot, in which case ``series`` holds only the new observations.
    """
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if cloud is None:
        if Sigma0 is None:
            Sigma0 = models.initial_sigma(X if warmup is None else X[:warmup])
        cloud = init_cloud(cfg, X.shape[1], Sigma0, step_rng(cfg.seed, 0), last_x=X[0])
        rows = X[1:]
    else:
        rows = X
    records, means = [], []
    for x in rows:
        cloud, rec = rapf_update(cloud, x, cfg, step_rng(cfg.seed, cloud.step + 1))
        records.append(rec)
        w = cloud.weights
        means.append(np.concatenate([w @ cloud.a, w @ cloud.b, w @ cloud.c]))
        if on_step is not None:
            on_step(cloud, rec)
    theta_means = np.array(means) if means else np.empty((0, 0))
    return FilterResult(records, cloud, theta_means)


# ---------------------------------------------------------------------------
# text snapshots

_MAGIC = "# dyncov-cloud v1"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_cloud(cloud: ParticleCloud, fh: IO[str]) -> None:
    """Write a cloud as text: a short header, then one particle per line.

    Line layout: ``log_weight a[0..d) b[0..d) c[0..m) alpha beta gamma
    [log_nu_minus_2] sigma_upper[0..m)``, whitespace separated.
    """
    d = cloud.dim
    fh.write(_MAGIC + "\n")
    fh.write(f"# d={d} n={cloud.n} step={cloud.step} "
             f"innovation={'student_t' if cloud.log_nu_minus_2 is not None else 'gaussian'}\n")
    fh.write("# last_x " + " ".join(_fmt(v) for v in cloud.last_x) + "\n")
    iu = np.triu_indices(d)
    for i in range(cloud.n):
        row = [cloud.log_weight[i], *cloud.a[i], *cloud.b[i], *cloud.c[i], *cloud.hypers[i]]
        if cloud.log_nu_minus_2 is not None:
            row.append(cloud.log_nu_minus_2[i])
        row.extend(cloud.sigma[i][iu])
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_cloud(fh: IO[str]) -> ParticleCloud:
    lines = fh.read().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise InvalidParams("not a cloud snapshot")
    meta = dict(tok.split("=") for tok in lines[1][1:].split())
    d, n, step = int(meta["d"]), int(meta["n"]), int(meta["step"])
    student = meta["innovation"] == "student_t"
    last_x = np.array([float(v) for v in lines[2].split()[2:]])
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[3:] if ln.strip()])
    m = models.n_tri(d)
    width = 1 + 2 * d + m + 3 + int(student) + m
    if rows.shape != (n, width):
        raise DimensionMismatch("snapshot rows do not match the header")
    k = 0

    def take(w):
        nonlocal k
        # contiguous copies: strided views change reduction order in the last bit
        out = np.ascontiguousarray(rows[:, k:k + w])
        k += w
        return out

    lw = take(1).ravel()
    a, b, c = take(d), take(d), take(m)
    hypers = take(3)
    lnu = take(1).ravel() if student else None
    upper = take(m)
    sigma = np.zeros((n, d, d))
    iu = np.triu_indices(d)
    sigma[:, iu[0], iu[1]] = upper
    sigma[:, iu[1], iu[0]] = upper
    return ParticleCloud(a, b, c, hypers, lnu, sigma, lw, last_x, step)
