"""SPD linear algebra, Gaussian / Student-t log densities and sampling kernels.

Scalar routines operate on one ``(d, d)`` matrix. The ``*_batch`` variants take
stacks of shape ``(n, d, d)`` and are what the particle filter and the
likelihood use in their inner loops.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateWeights, DimensionMismatch, EmptyCloud, InvalidDof, NotPositiveDefinite

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER_SCALE = 1e-10


def _check_symmetric(S: np.ndarray) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {S.shape}")
    scale = max(float(np.max(np.abs(S))), 1.0)
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * scale):
        raise NotPositiveDefinite("matrix is not symmetric")


def cholesky(S) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    On failure a jitter of ``1e-10 * trace(S) / d`` is added to the diagonal once
    and the factorization retried; a second failure raises
    :class:`NotPositiveDefinite`.
    """
    S = np.asarray(S, dtype=float)
    _check_symmetric(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    d = S.shape[0]
    jitter = JITTER_SCALE * float(np.trace(S)) / d
    if not jitter > 0.0:
        raise NotPositiveDefinite("matrix has nonpositive trace")
    try:
        return np.linalg.cholesky(S + jitter * np.eye(d))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("Cholesky failed after jitter") from None


def log_det_spd(S) -> float:
    L = cholesky(S)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def _quad_and_logdet(x: np.ndarray, S: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float).reshape(-1)
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape != (x.size, x.size):
        raise DimensionMismatch(f"x has dim {x.size}, S has shape {S.shape}")
    L = cholesky(S)
    y = np.linalg.solve(L, x)
    return float(y @ y), float(2.0 * np.sum(np.log(np.diag(L))))


def mvn_logpdf(x, S) -> float:
    """Log density of N(0, S) at ``x``."""
    q, logdet = _quad_and_logdet(x, S)
    d = np.size(x)
    return -0.5 * (d * LOG_2PI + logdet + q)


def _log_gamma_ratio(a, h: float):
    """log Gamma(a + h) - log Gamma(a), stable for very large ``a``.

    The direct difference of two ``gammaln`` values cancels badly once ``a``
    is around 1e6 or more; there the two-term asymptotic expansion is exact to
    double precision.
    """
    a = np.asarray(a, dtype=float)
    big = a > 1e6
    safe = np.where(big, 1.0, a)
    direct = gammaln(safe + h) - gammaln(safe)
    asym = h * np.log(a) + h * (h - 1.0) / (2.0 * a)
    return np.where(big, asym, direct)


def _check_dof(nu) -> None:
    if not np.all(np.asarray(nu) > 2.0):
        raise InvalidDof(f"degrees of freedom must exceed 2, got {nu}")


def mvt_logpdf(x, nu: float, S) -> float:
    """Log density of the zero-mean multivariate t with scale matrix ``S``."""
    _check_dof(nu)
    q, logdet = _quad_and_logdet(x, S)
    d = np.size(x)
    return float(
        _log_gamma_ratio(0.5 * nu, 0.5 * d)
        - 0.5 * d * np.log(nu * np.pi)
        - 0.5 * logdet
        - 0.5 * (nu + d) * np.log1p(q / nu)
    )


def scale_from_cov(nu: float, Sigma) -> np.ndarray:
    """Scale matrix giving a t distribution with covariance ``Sigma``."""
    _check_dof(nu)
    return (nu - 2.0) / nu * np.asarray(Sigma, dtype=float)


def sample_mvn(mean, cov, rng: np.random.Generator) -> np.ndarray:
    """One draw from N(mean, cov).

    Diagonal covariances may have zero entries; those coordinates come back
    equal to ``mean`` exactly.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise DimensionMismatch(f"mean has dim {mean.size}, cov has shape {cov.shape}")
    z = rng.standard_normal(mean.size)
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        diag = np.diag(cov)
        if np.any(diag < 0.0):
            raise NotPositiveDefinite("negative variance on the diagonal")
        return mean + np.sqrt(diag) * z
    return mean + cholesky(cov) @ z


def sample_mvt(nu: float, scale, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Zero-mean multivariate t draws: Gaussian scaled by sqrt(nu / chi2_nu)."""
    _check_dof(nu)
    L = cholesky(scale)
    d = L.shape[0]
    n = 1 if size is None else size
    z = rng.standard_normal((n, d)) @ L.T
    w = np.sqrt(nu / rng.chisquare(nu, size=n))
    out = z * w[:, None]
    return out[0] if size is None else out


def weighted_mean_and_cov(points, weights) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and (population) covariance of a point set.

    Parameters
    ----------
    points : (n, k) array
    weights : (n,) array of nonnegative weights summing to one
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    weights = np.asarray(weights, dtype=float)
    if points.shape[0] == 0:
        raise EmptyCloud("no points")
    if weights.shape != (points.shape[0],):
        raise DimensionMismatch("weights and points disagree in length")
    mean = weights @ points
    centred = points - mean
    cov = (centred * weights[:, None]).T @ centred
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def systematic_resample(weights, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Ancestor indices by systematic resampling with a single uniform offset."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0 or np.any(~np.isfinite(w)):
        raise DegenerateWeights("weights are zero or non-finite")
    n = w.size if n is None else n
    cdf = np.cumsum(w / total)
    cdf[-1] = 1.0
    u = (np.arange(n) + rng.uniform()) / n
    return np.searchsorted(cdf, u, side="right").astype(np.intp)


def logsumexp_normalize(log_w) -> tuple[np.ndarray, float]:
    """Normalized log weights and the log of the original normalizer."""
    log_w = np.asarray(log_w, dtype=float)
    m = np.max(log_w)
    if not np.isfinite(m):
        raise DegenerateWeights("all log weights are -inf or non-finite")
    lse = m + np.log(np.sum(np.exp(log_w - m)))
    return log_w - lse, float(lse)


# ---------------------------------------------------------------------------
# batched kernels


def cholesky_batch(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factors of a stack of SPD matrices.

    Returns ``(L, ok)``. Entries that fail even after one jitter retry have
    ``ok`` false and an identity placeholder factor.
    """
    try:
        return np.linalg.cholesky(S), np.ones(S.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    n, d, _ = S.shape
    L = np.empty_like(S)
    ok = np.ones(n, dtype=bool)
    for i in range(n):
        try:
            L[i] = cholesky(S[i])
        except (NotPositiveDefinite, np.linalg.LinAlgError):
            L[i] = np.eye(d)
            ok[i] = False
    return L, ok


def forward_substitute(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Solve ``L_i y_i = x_i`` for a stack of lower-triangular factors."""
    n, d, _ = L.shape
    y = np.empty((n, d))
    for i in range(d):
        acc = x[:, i] - np.sum(L[:, i, :i] * y[:, :i], axis=1) if i else x[:, i]
        y[:, i] = acc / L[:, i, i]
    return y


def _quad_logdet_batch(x: np.ndarray, S: np.ndarray):
    """Quadratic forms x_i' S_i^{-1} x_i and log-determinants for a stack.

    ``x`` may be shape ``(d,)`` (shared) or ``(n, d)``.
    """
    L, ok = cholesky_batch(S)
    n, d, _ = S.shape
    xb = np.broadcast_to(x, (n, d))
    y = forward_substitute(L, xb)
    q = np.sum(y * y, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return q, logdet, ok


def mvn_logpdf_batch(x: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Gaussian log densities for a stack of covariances; failed factors give -inf."""
    q, logdet, ok = _quad_logdet_batch(x, S)
    d = S.shape[-1]
    out = -0.5 * (d * LOG_2PI + logdet + q)
    return np.where(ok, out, -np.inf)


def mvt_logpdf_batch(x: np.ndarray, nu: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Student-t log densities parameterized by covariance ``Sigma`` (not scale).

    ``nu`` is broadcast against the stack; the scale is ``(nu - 2) / nu * Sigma``.
    """
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (Sigma.shape[0],))
    _check_dof(nu)
    d = Sigma.shape[-1]
    q, logdet, ok = _quad_logdet_batch(x, Sigma)
    ratio = (nu - 2.0) / nu
    # scale S = ratio * Sigma
    q = q / ratio
    logdet = logdet + d * np.log1p(-2.0 / nu)
    out = (
        _log_gamma_ratio(0.5 * nu, 0.5 * d)
        - 0.5 * d * np.log(nu * np.pi)
        - 0.5 * logdet
        - 0.5 * (nu + d) * np.log1p(q / nu)
    )
    return np.where(ok, out, -np.inf)
