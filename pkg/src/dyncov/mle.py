"""Maximum-likelihood BEKK / BEKK-T fitting and one-step prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from . import models, mvstat
from .errors import DimensionMismatch, InvalidParams, NoFeasibleStart, NonFinite
from .models import BekkParams, CovRecursionState

logger = logging.getLogger(__name__)

# a, b are kept strictly inside the unit disc so the logit maps stay finite
_EDGE = 1e-9
_C_FLOOR = 1e-12
# nu = 2 + exp(z); beyond this the t density is Gaussian to machine precision
_LOG_NU_CAP = 50.0


@dataclass(frozen=True)
class FitConfig:
    variant: str = "diagonal"
    innovation: str = "gaussian"
    max_iters: int = 2000
    n_restarts: int = 5
    tol: float = 1e-8
    search: bool = True
    polish: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParams("max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidParams("tol must be > 0")
        if self.variant not in ("diagonal", "full"):
            raise InvalidParams(f"unknown variant {self.variant!r}")
        if self.innovation not in ("gaussian", "student_t"):
            raise InvalidParams(f"unknown innovation {self.innovation!r}")
        if not (self.search or self.polish):
            raise InvalidParams("at least one of search / polish must be enabled")


@dataclass
class FitResult:
    params: BekkParams
    loglik: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# likelihood


def sigma_path(params: BekkParams, series, Sigma0) -> np.ndarray:
    """Covariances ``(T, d, d)`` implied by the recursion seeded at ``Sigma0``."""
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    d = params.dim
    if X.shape[1] != d or Sigma0.shape != (d, d):
        raise DimensionMismatch("series, Sigma0 and params dimensions disagree")
    if params.variant == "diagonal":
        return models.diagonal_bekk_path(params.a, params.b, params.c, X, Sigma0)
    out = np.empty((X.shape[0], d, d))
    out[0] = Sigma0
    A, B, C = params.A(), params.B(), params.C()
    for t in range(1, X.shape[0]):
        out[t] = models._step(out[t - 1], X[t - 1], A, B, C)
    return out


def step_logpdfs(params: BekkParams, X: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    if params.nu is None:
        return mvstat.mvn_logpdf_batch(X, sigmas)
    return mvstat.mvt_logpdf_batch(X, params.nu, sigmas)


def bekk_loglik(params: BekkParams, series, Sigma0) -> float:
    """Total log-likelihood; ``-inf`` when the recursion leaves the SPD cone."""
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sigmas = sigma_path(params, X, Sigma0)
    if not np.all(np.isfinite(sigmas)):
        return -np.inf
    lp = step_logpdfs(params, X, sigmas)
    total = float(np.sum(lp))
    return total if np.isfinite(total) else -np.inf


def recursion_state(params: BekkParams, series, Sigma0) -> CovRecursionState:
    """State ``(Sigma_{T-1}, x_{T-1})`` after running the recursion over ``series``."""
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sigmas = sigma_path(params, X, Sigma0)
    return CovRecursionState(sigmas[-1], X[-1])


def predict_one_step(params: BekkParams, state: CovRecursionState, x_next) -> tuple[np.ndarray, float]:
    sigma = models.bekk_step(state, params)
    x_next = np.atleast_1d(np.asarray(x_next, dtype=float))
    if params.nu is None:
        return sigma, mvstat.mvn_logpdf(x_next, sigma)
    return sigma, mvstat.mvt_logpdf(x_next, params.nu, mvstat.scale_from_cov(params.nu, sigma))


# ---------------------------------------------------------------------------
# unconstrained parameterization


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def n_free(d: int, variant: str, student_t: bool) -> int:
    k = 2 * d if variant == "diagonal" else 2 * d * d
    return k + models.n_tri(d) + int(student_t)


def to_unconstrained(p: BekkParams) -> np.ndarray:
    d = p.dim
    dpos = models.diag_positions(d)
    zc = p.c.copy()
    if np.any(zc[dpos] < 0):
        raise InvalidParams("diagonal of C must be positive")
    # softplus can underflow to exactly zero at the optimizer's edge
    zc[dpos] = _softplus_inv(np.maximum(zc[dpos], _C_FLOOR))
    if p.variant == "diagonal":
        a = np.clip(p.a, _EDGE, 1 - _EDGE)
        za = logit(a)
        ratio = np.clip(p.b / np.sqrt(1.0 - a * a), _EDGE, 1 - _EDGE)
        zb = logit(ratio)
        parts = [za, zb, zc]
    else:
        parts = [p.a.ravel(), p.b.ravel(), zc]
    if p.nu is not None:
        parts.append([np.log(p.nu - 2.0)])
    return np.concatenate(parts)


def from_unconstrained(z, d: int, variant: str = "diagonal", student_t: bool = False) -> BekkParams:
    z = np.asarray(z, dtype=float)
    if z.size != n_free(d, variant, student_t):
        raise DimensionMismatch("wrong number of free parameters")
    m = models.n_tri(d)
    if variant == "diagonal":
        a = expit(z[:d])
        b = np.sqrt(1.0 - a * a) * expit(z[d:2 * d])
        k = 2 * d
    else:
        a = z[: d * d].reshape(d, d)
        b = z[d * d: 2 * d * d].reshape(d, d)
        k = 2 * d * d
    c = z[k: k + m].copy()
    dpos = models.diag_positions(d)
    c[dpos] = _softplus(c[dpos])
    nu = float(2.0 + np.exp(min(z[k + m], _LOG_NU_CAP))) if student_t else None
    return BekkParams(a, b, c, variant, nu)


# ---------------------------------------------------------------------------
# fitting


def _random_start(d: int, cfg: FitConfig, target: np.ndarray, rng: np.random.Generator, first: bool) -> BekkParams:
    if first:
        a = np.full(d, 0.9)
        b = np.full(d, 0.3)
    else:
        a = rng.uniform(0.3, 0.97, size=d)
        b = np.sqrt(1.0 - a * a) * rng.uniform(0.1, 0.9, size=d)
    try:
        c = models.c_for_target_cov(a, b, target)
    except Exception:
        c = models.c_for_target_cov(a, b, np.diag(np.diag(target)))
    if cfg.variant == "full":
        a, b = np.diag(a), np.diag(b)
    nu = (8.0 if first else float(rng.uniform(4.0, 20.0))) if cfg.innovation == "student_t" else None
    dpos = models.diag_positions(d)
    c[dpos] = np.maximum(c[dpos], 1e-4)
    return BekkParams(a, b, c, cfg.variant, nu)


def _objective_factory(X, Sigma0, d, cfg):
    T = X.shape[0]
    student = cfg.innovation == "student_t"
    history = []
    best = [np.inf]

    def f(z):
        try:
            p = from_unconstrained(z, d, cfg.variant, student)
        except (InvalidParams, FloatingPointError):
            return 1e10
        if cfg.variant == "full" and not models.stationarity_check(p):
            return 1e10
        ll = bekk_loglik(p, X, Sigma0)
        val = -ll / T if np.isfinite(ll) else 1e10
        if val < best[0]:
            best[0] = val
        history.append(best[0])
        return val

    return f, history


def fit_bekk(series, cfg: FitConfig = FitConfig(), Sigma0=None, init: BekkParams | None = None) -> FitResult:
    """Fit a BEKK(1,1) by maximizing the likelihood over a smooth reparameterization.

    Every start runs a Nelder-Mead search followed by an L-BFGS-B polish
    with finite-difference gradients; either stage can be switched off in
    ``cfg``. ``init`` is used as an additional, first start (warm start);
    ``cfg.n_restarts`` random stationary starts are added on top.
    """
    X = np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, d = X.shape
    student = cfg.innovation == "student_t"
    if T < 2:
        raise InvalidParams("need at least two observations")
    if Sigma0 is None:
        Sigma0 = models.initial_sigma(X)
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    target = models.initial_sigma(X)
    rng = np.random.default_rng(cfg.seed)

    starts: list[BekkParams] = []
    if init is not None:
        if init.variant != cfg.variant or (init.nu is not None) != student:
            raise InvalidParams("warm start does not match the fit configuration")
        starts.append(init)
    for r in range(cfg.n_restarts):
        starts.append(_random_start(d, cfg, target, rng, first=(r == 0)))
    if not starts:
        starts.append(_random_start(d, cfg, target, rng, first=True))

    f, history = _objective_factory(X, Sigma0, d, cfg)
    best_z, best_val, total_iters, converged = None, np.inf, 0, False
    for p0 in starts:
        try:
            z0 = to_unconstrained(p0)
        except InvalidParams:
            continue
        v0 = f(z0)
        if v0 >= 1e10:
            continue
        if v0 < best_val:
            best_z, best_val = z0, v0
        z, val, ok = z0, v0, False
        if cfg.search:
            res = minimize(
                f, z0, method="Nelder-Mead",
                options={"maxiter": cfg.max_iters, "maxfev": 2 * cfg.max_iters, "xatol": 1e-6,
                         "fatol": cfg.tol, "adaptive": z0.size > 6},
            )
            z, val, ok = res.x, res.fun, bool(res.success)
            total_iters += int(res.nit)
        if cfg.polish:
            pol = minimize(f, z, method="L-BFGS-B",
                           options={"maxiter": cfg.max_iters, "ftol": cfg.tol * 1e-2})
            total_iters += int(pol.nit)
            if not cfg.search:
                ok = bool(pol.success)
            if pol.fun < val:
                z, val = pol.x, pol.fun
        if val < best_val:
            best_z, best_val, converged = z, val, ok
    if best_z is None:
        raise NoFeasibleStart("no start produced a finite likelihood")
    params = from_unconstrained(best_z, d, cfg.variant, student)
    loglik = bekk_loglik(params, X, Sigma0)
    if not np.isfinite(loglik):
        raise NonFinite("log-likelihood is not finite at the optimum")
    logger.debug("fit_bekk: T=%d d=%d loglik=%.6f iters=%d", T, d, loglik, total_iters)
    return FitResult(params, loglik, total_iters, converged, history)
