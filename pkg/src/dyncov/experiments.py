"""Synthetic experiments shared by the scripts and the acceptance suite.

Two data designs are provided: a static diagonal BEKK used for parameter
recovery and filter tracking, and a regime-shift series whose BEKK
parameters and long-run covariance change half-way through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mle, models, rapf
from .models import BekkParams


@dataclass(frozen=True)
class RecoveryConfig:
    d: int = 2
    T: int = 2000
    a: float = 0.9
    b: float = 0.35
    warmup: int = 50


def recovery_params(cfg: RecoveryConfig = RecoveryConfig()) -> BekkParams:
    """Diagonal BEKK with equal a, b per coordinate and identity long-run covariance."""
    a = np.full(cfg.d, cfg.a)
    b = np.full(cfg.d, cfg.b)
    return BekkParams(a, b, models.c_for_target_cov(a, b, np.eye(cfg.d)))


def recovery_data(seed: int, cfg: RecoveryConfig = RecoveryConfig()) -> np.ndarray:
    X, _ = models.simulate(recovery_params(cfg), cfg.T, np.eye(cfg.d), np.random.default_rng(seed))
    return X


@dataclass
class TrackingResult:
    seed: int
    theta_means: np.ndarray  # (T-1, 2d + m)
    final_a: np.ndarray  # mean of posterior-mean a over the final window
    final_b: np.ndarray


def track(X: np.ndarray, cfg: rapf.RapfConfig, warmup: int = 50, window: int = 200, seed: int = 0) -> TrackingResult:
    """Filter a series and average the posterior means of a, b over the last ``window`` steps."""
    d = X.shape[1]
    res = rapf.run_filter(X, cfg, Sigma0=models.initial_sigma(X[:warmup]))
    tail = res.theta_means[-window:]
    return TrackingResult(seed, res.theta_means, tail[:, :d].mean(axis=0), tail[:, d:2 * d].mean(axis=0))


# ---------------------------------------------------------------------------
# regime shift


@dataclass(frozen=True)
class RegimeShiftConfig:
    d: int = 3
    T: int = 1000
    warmup: int = 50
    n_particles: int = 4000


def _pre_cov(d: int) -> np.ndarray:
    S = np.full((d, d), 0.3)
    np.fill_diagonal(S, 1.0)
    return S


def _post_cov(d: int) -> np.ndarray:
    # different scales and sign-flipped correlations
    scales = np.sqrt(np.linspace(2.5, 0.5, d))
    R = np.full((d, d), -0.3)
    idx = np.arange(d)
    R[(idx[:, None] + idx[None, :]) % 2 == 0] = 0.2
    np.fill_diagonal(R, 1.0)
    if d > 1:
        # keep R positive definite for any d
        lam = np.linalg.eigvalsh(R)[0]
        if lam < 0.05:
            R = (R + (0.05 - lam) * np.eye(d)) / (1.0 + 0.05 - lam)
            np.fill_diagonal(R, 1.0)
    return R * np.outer(scales, scales)


def regime_shift_params(d: int = 3) -> tuple[BekkParams, BekkParams]:
    a1 = np.linspace(0.95, 0.85, d)
    b1 = np.linspace(0.25, 0.35, d)
    a2 = np.linspace(0.70, 0.80, d)
    b2 = np.linspace(0.50, 0.40, d)
    p1 = BekkParams(a1, b1, models.c_for_target_cov(a1, b1, _pre_cov(d)))
    p2 = BekkParams(a2, b2, models.c_for_target_cov(a2, b2, _post_cov(d)))
    return p1, p2


def regime_shift_data(seed: int, cfg: RegimeShiftConfig = RegimeShiftConfig()):
    """Series whose BEKK parameters switch at ``T // 2``; returns ``(X, sigmas)``."""
    p1, p2 = regime_shift_params(cfg.d)
    h = cfg.T // 2
    rng = np.random.default_rng(seed)
    X1, s1 = models.simulate(p1, h, _pre_cov(cfg.d), rng)
    X2, s2 = models.simulate(p2, cfg.T - h, s1[-1], rng, x_prev=X1[-1])
    return np.vstack([X1, X2]), np.concatenate([s1, s2])


@dataclass
class RegimeShiftResult:
    seed: int
    bekk_post: float  # once-fit BEKK, mean log density over the post-switch half
    bmdc_post: float  # filter mixture density, same steps
    bmdc_post_plugin: float
    bekk_params: BekkParams
    cloud: rapf.ParticleCloud = field(repr=False)
    records: list = field(repr=False)

    @property
    def margin(self) -> float:
        return self.bmdc_post - self.bekk_post


def run_regime_shift(seed: int, cfg: RegimeShiftConfig = RegimeShiftConfig(),
                     fit_cfg: mle.FitConfig = mle.FitConfig()) -> RegimeShiftResult:
    """Compare a BEKK fitted once on the pre-switch half with a single filter pass.

    Both start from the warmup covariance. BEKK predictions for the second
    half run its recursion with the pre-switch estimate and never refit.
    """
    X, _ = regime_shift_data(seed, cfg)
    h = cfg.T // 2
    S0 = models.initial_sigma(X[:cfg.warmup])
    fit = mle.fit_bekk(X[:h], fit_cfg, Sigma0=S0)
    sig = mle.sigma_path(fit.params, X, S0)
    bekk_post = float(np.mean(mle.step_logpdfs(fit.params, X[h:], sig[h:])))
    rcfg = rapf.RapfConfig(n_particles=cfg.n_particles, seed=seed)
    res = rapf.run_filter(X, rcfg, Sigma0=S0)
    post = [r for r in res.records if r.step >= h]
    return RegimeShiftResult(
        seed=seed,
        bekk_post=bekk_post,
        bmdc_post=float(np.mean([r.pred_logdensity_mixture for r in post])),
        bmdc_post_plugin=float(np.mean([r.pred_logdensity_plugin for r in post])),
        bekk_params=fit.params,
        cloud=res.cloud,
        records=res.records,
    )
