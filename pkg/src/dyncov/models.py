"""Covariance recursions, parameter diffusion and generative simulation.

Time convention used throughout the package: the first observation ``x_0`` is
distributed with covariance ``Sigma0``; afterwards
``Sigma_t = step(Sigma_{t-1}, x_{t-1})``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from . import mvstat
from .errors import (
    DimensionMismatch,
    InvalidParams,
    NotPositiveDefinite,
    RejectionBudgetExceeded,
    TooFewObservations,
)

DEFAULT_TAU = 0.005**2
MAX_INIT_REJECTIONS = 100_000


def n_tri(d: int) -> int:
    return d * (d + 1) // 2


def dim_from_tri(m: int) -> int:
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n_tri(d) != m:
        raise DimensionMismatch(f"{m} is not a triangular number")
    return d


def upper_from_vec(c, d: int | None = None) -> np.ndarray:
    """Upper-triangular C from its row-major vector of d(d+1)/2 entries."""
    c = np.asarray(c, dtype=float)
    d = dim_from_tri(c.shape[-1]) if d is None else d
    C = np.zeros(c.shape[:-1] + (d, d))
    iu = np.triu_indices(d)
    C[..., iu[0], iu[1]] = c
    return C


def vec_from_upper(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    d = C.shape[-1]
    iu = np.triu_indices(d)
    return C[..., iu[0], iu[1]].copy()


def diag_positions(d: int) -> np.ndarray:
    """Indices of C's diagonal inside the row-major upper-triangular vector."""
    iu = np.triu_indices(d)
    return np.flatnonzero(iu[0] == iu[1])


@dataclass(frozen=True)
class GarchParams:
    alpha0: float
    alpha1: float
    beta1: float

    def validate(self) -> None:
        vals = (self.alpha0, self.alpha1, self.beta1)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidParams("GARCH parameters must be finite")
        if self.alpha0 <= 0 or self.alpha1 < 0 or self.beta1 < 0:
            raise InvalidParams("need alpha0 > 0, alpha1 >= 0, beta1 >= 0")
        if self.alpha1 + self.beta1 >= 1:
            raise InvalidParams("alpha1 + beta1 must be < 1")


@dataclass(frozen=True)
class BekkParams:
    """BEKK(1,1) parameters.

    ``a``/``b`` are the diagonals of A/B for the diagonal variant and dense
    ``(d, d)`` matrices for the full one. ``c`` is C's upper triangle, row-major.
    ``nu`` set means Student-t innovations.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    variant: str = "diagonal"
    nu: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.atleast_1d(np.asarray(self.c, dtype=float)))
        if self.variant not in ("diagonal", "full"):
            raise InvalidParams(f"unknown variant {self.variant!r}")
        if self.nu is not None and not self.nu > 2:
            raise InvalidParams("nu must exceed 2")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def A(self) -> np.ndarray:
        return np.diag(self.a) if self.variant == "diagonal" else self.a

    def B(self) -> np.ndarray:
        return np.diag(self.b) if self.variant == "diagonal" else self.b

    def C(self) -> np.ndarray:
        return upper_from_vec(self.c, self.dim)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "nu": self.nu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BekkParams":
        return cls(a=d["a"], b=d["b"], c=d["c"], variant=d.get("variant", "diagonal"), nu=d.get("nu"))


@dataclass(frozen=True)
class ParamState:
    """Time-varying diagonal BEKK parameters of the drifting model."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def as_bekk(self, nu: float | None = None) -> BekkParams:
        return BekkParams(self.a, self.b, self.c, "diagonal", nu)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c])


@dataclass(frozen=True)
class DriftHypers:
    """Random-walk standard deviations for a, b and c (signs are ignored)."""

    alpha: float
    beta: float
    gamma: float
    kappa: float = 0.0
    tau: float = DEFAULT_TAU


@dataclass
class CovRecursionState:
    sigma: np.ndarray
    last_x: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        d = self.sigma.shape[0]
        self.last_x = np.zeros(d) if self.last_x is None else np.atleast_1d(np.asarray(self.last_x, dtype=float))
        if self.sigma.shape != (d, d) or self.last_x.shape != (d,):
            raise DimensionMismatch("sigma and last_x dimensions disagree")


def garch_step(sigma2: float, last_x: float, p: GarchParams) -> float:
    p.validate()
    if not sigma2 > 0:
        raise InvalidParams("sigma2 must be positive")
    return p.alpha0 + p.alpha1 * last_x * last_x + p.beta1 * sigma2


def _step(sigma, x, A, B, C):
    Bx = B.T @ x
    out = C.T @ C + np.outer(Bx, Bx) + A.T @ sigma @ A
    return 0.5 * (out + out.T)


def bekk_step(state: CovRecursionState, p: BekkParams) -> np.ndarray:
    """Next covariance ``C'C + B'x x'B + A' Sigma A``.

    For the diagonal variant this is the familiar ``C'C + B x x' B + A Sigma A``.
    """
    d = p.dim
    if state.sigma.shape != (d, d):
        raise DimensionMismatch(f"state has dim {state.sigma.shape[0]}, params have dim {d}")
    if p.variant == "diagonal":
        a, b = p.a, p.b
        C = p.C()
        bx = b * state.last_x
        out = C.T @ C + np.outer(bx, bx) + np.outer(a, a) * state.sigma
        return 0.5 * (out + out.T)
    return _step(state.sigma, state.last_x, p.A(), p.B(), p.C())


def bmdc_step(state: CovRecursionState, theta: ParamState) -> np.ndarray:
    return bekk_step(state, theta.as_bekk())


def bmdc_step_batch(sigma: np.ndarray, x: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Vectorized drifting-BEKK step over a stack of particles.

    sigma: (n, d, d); x: (d,); a, b: (n, d); c: (n, m).
    """
    d = sigma.shape[-1]
    C = upper_from_vec(c, d)
    bx = b * x
    out = bx[:, :, None] * bx[:, None, :]
    out += (a[:, :, None] * a[:, None, :]) * sigma
    # C'C as a sum of row outer products; batched matmul is slow for tiny d
    for k in range(d):
        row = C[:, k, :]
        out += row[:, :, None] * row[:, None, :]
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def diagonal_bekk_path(a, b, c, X: np.ndarray, Sigma0: np.ndarray) -> np.ndarray:
    """Covariance path ``(T, d, d)`` of a diagonal BEKK driven by ``X``.

    Each entry (i, j) follows a scalar linear filter with coefficient a_i a_j,
    so the whole path is computed with one ``lfilter`` per upper-triangular
    entry instead of a Python loop over time.
    """
    X = np.asarray(X, dtype=float)
    T, d = X.shape
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = upper_from_vec(c, d)
    K = C.T @ C
    out = np.empty((T, d, d))
    out[0] = Sigma0
    if T == 1:
        return out
    Xp = X[:-1]
    for i in range(d):
        for j in range(i, d):
            h = a[i] * a[j]
            u = K[i, j] + b[i] * b[j] * Xp[:, i] * Xp[:, j]
            y, _ = lfilter([1.0], [1.0, -h], u, zi=[h * Sigma0[i, j]])
            out[1:, i, j] = y
            if i != j:
                out[1:, j, i] = y
    return out


def diffuse_params(theta: ParamState, h: DriftHypers, rng: np.random.Generator) -> ParamState:
    """Gaussian random-walk step on (a, b, c) with std devs |alpha|, |beta|, |gamma|."""
    return ParamState(
        theta.a + abs(h.alpha) * rng.standard_normal(theta.a.shape),
        theta.b + abs(h.beta) * rng.standard_normal(theta.b.shape),
        theta.c + abs(h.gamma) * rng.standard_normal(theta.c.shape),
    )


def stationary_mask(a: np.ndarray, b: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """Vectorized stationarity check for diagonal parameters of shape (n, d)."""
    a2 = a * a
    b2 = b * b
    elementwise = np.all(a2 + b2 <= 1.0 - slack, axis=-1)
    dets = np.prod(a2, axis=-1) + np.prod(b2, axis=-1) <= 1.0 - slack
    return elementwise & dets


def stationarity_check(p: BekkParams | ParamState) -> bool:
    """Covariance stationarity.

    Requires det(AA) + det(BB) <= 1 and, for diagonal parameters,
    a_i^2 + b_i^2 <= 1 for every i. Full BEKK instead bounds the spectral
    radius of A(x)A + B(x)B by one, which coincides with the elementwise
    rule when A and B are diagonal.
    """
    if isinstance(p, BekkParams) and p.variant == "full":
        A, B = p.a, p.b
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            return False
        dets = np.linalg.det(A @ A) + np.linalg.det(B @ B)
        rho = np.max(np.abs(np.linalg.eigvals(np.kron(A, A) + np.kron(B, B))))
        return bool(dets <= 1.0 and rho <= 1.0)
    a, b = np.asarray(p.a), np.asarray(p.b)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return False
    return bool(stationary_mask(a, b))


def sample_initial_batch(n: int, d: int, rng: np.random.Generator):
    """``n`` draws from the vague initial prior, returned as arrays (a, b, c).

    a, b ~ U[0,1)^d restricted to the stationary region by rejection,
    diag(C) ~ U[0.05, 0.5), off-diagonal C entries ~ N(0, 0.05^2).
    """
    if d < 1:
        raise InvalidParams("dimension must be >= 1")
    a = np.empty((n, d))
    b = np.empty((n, d))
    pending = np.arange(n)
    rejections = 0
    while pending.size:
        ca = rng.uniform(size=(pending.size, d))
        cb = rng.uniform(size=(pending.size, d))
        ok = stationary_mask(ca, cb)
        a[pending[ok]] = ca[ok]
        b[pending[ok]] = cb[ok]
        rejections += int(np.count_nonzero(~ok))
        if rejections > MAX_INIT_REJECTIONS * max(1, n):
            raise RejectionBudgetExceeded("could not draw stationary initial parameters")
        pending = pending[~ok]
    m = n_tri(d)
    c = 0.05 * rng.standard_normal((n, m))
    dpos = diag_positions(d)
    c[:, dpos] = rng.uniform(0.05, 0.5, size=(n, d))
    return a, b, c


def sample_initial_params(d: int, rng: np.random.Generator) -> ParamState:
    rejections = 0
    while True:
        a = rng.uniform(size=d)
        b = rng.uniform(size=d)
        if stationary_mask(a, b):
            break
        rejections += 1
        if rejections >= MAX_INIT_REJECTIONS:
            raise RejectionBudgetExceeded("could not draw stationary initial parameters")
    c = 0.05 * rng.standard_normal(n_tri(d))
    c[diag_positions(d)] = rng.uniform(0.05, 0.5, size=d)
    return ParamState(a, b, c)


def unconditional_cov(p: BekkParams) -> np.ndarray:
    """Long-run covariance of a stationary diagonal BEKK."""
    if p.variant != "diagonal":
        raise InvalidParams("closed form only for the diagonal variant")
    C = p.C()
    return (C.T @ C) / (1.0 - np.outer(p.a, p.a) - np.outer(p.b, p.b))


def c_for_target_cov(a, b, target) -> np.ndarray:
    """C vector making the diagonal BEKK's long-run covariance equal ``target``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    K = np.asarray(target, dtype=float) * (1.0 - np.outer(a, a) - np.outer(b, b))
    # K = C'C with C upper triangular: C' is the lower Cholesky factor of K
    return vec_from_upper(mvstat.cholesky(K).T)


def simulate(model, T: int, Sigma0, rng: np.random.Generator, x_prev=None):
    """Draw a return path from a BEKK or drifting-BEKK model.

    Parameters
    ----------
    model : BekkParams or (ParamState, DriftHypers)
        Static parameters, or an initial state plus diffusion hypers. A
        ``(ParamState, DriftHypers, nu)`` triple gives Student-t innovations
        to the drifting model.
    T : int
        Number of observations.
    Sigma0 : (d, d) array
        Covariance of the first draw, or the previous covariance when
        ``x_prev`` is given.
    x_prev : (d,) array, optional
        Previous observation; when set the first covariance is one recursion
        step past ``Sigma0`` (used to continue a path under new parameters).

    Returns
    -------
    X : (T, d) array
    sigmas : (T, d, d) array
    thetas : list of ParamState, only for the drifting model
    """
    if T < 1:
        raise InvalidParams("T must be >= 1")
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    mvstat.cholesky(Sigma0)
    d = Sigma0.shape[0]
    drifting = not isinstance(model, BekkParams)
    if drifting:
        theta, hypers = model[0], model[1]
        nu = model[2] if len(model) > 2 else None
    else:
        nu = model.nu
        if model.dim != d:
            raise DimensionMismatch("Sigma0 and params dims disagree")
    X = np.empty((T, d))
    sigmas = np.empty((T, d, d))
    thetas = []
    sigma = Sigma0
    for t in range(T):
        if t > 0 or x_prev is not None:
            last = X[t - 1] if t > 0 else np.asarray(x_prev, dtype=float)
            state = CovRecursionState(sigma, last)
            if drifting:
                theta = diffuse_params(theta, hypers, rng)
                sigma = bmdc_step(state, theta)
            else:
                sigma = bekk_step(state, model)
        if drifting:
            thetas.append(theta)
        sigmas[t] = sigma
        if nu is None:
            X[t] = mvstat.cholesky(sigma) @ rng.standard_normal(d)
        else:
            X[t] = mvstat.sample_mvt(nu, mvstat.scale_from_cov(nu, sigma), rng)
    if drifting:
        return X, sigmas, thetas
    return X, sigmas


def initial_sigma(prefix) -> np.ndarray:
    """Population covariance of a prefix, jitter-repaired if singular."""
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 1:
        prefix = prefix[:, None]
    n, d = prefix.shape
    if n < d + 1:
        raise TooFewObservations(f"need at least {d + 1} rows, got {n}")
    centred = prefix - prefix.mean(axis=0)
    S = centred.T @ centred / n
    S = 0.5 * (S + S.T)
    try:
        np.linalg.cholesky(S)
        return S
    except np.linalg.LinAlgError:
        pass
    tr = float(np.trace(S))
    jitter = mvstat.JITTER_SCALE * (tr / d if tr > 0 else 1.0)
    # a zero-variance column needs more than roundoff repair
    floor = np.where(np.diag(S) > 0, 0.0, max(jitter, 1e-8 * (tr / d if tr > 0 else 1.0)))
    S = S + np.diag(floor) + jitter * np.eye(d)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("initial covariance could not be repaired") from None
    return S


def clamp_stationary(a: np.ndarray, b: np.ndarray, margin: float = 1e-6):
    """Scale (a_i, b_i) pairs back inside a_i^2 + b_i^2 <= 1 - margin."""
    r2 = a * a + b * b
    s = np.where(r2 > 1.0 - margin, np.sqrt((1.0 - margin) / np.maximum(r2, 1e-300)), 1.0)
    return a * s, b * s


def with_nu(p: BekkParams, nu: float | None) -> BekkParams:
    return replace(p, nu=nu)
