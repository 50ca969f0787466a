"""Binary logit fitted by IRLS, cluster-robust sandwich covariance, delta
method and Brier score."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit as _expit, logit as _logit

from .errors import (
    ConvergenceError,
    DataError,
    EstimationError,
    RankDeficiencyError,
    SeparationError,
)

logger = logging.getLogger(__name__)

SCORE_TOL = 1e-8
LOGLIK_RTOL = 1e-10
MAX_ITER = 100
RANK_TOL = 1e-10
# beyond this |eta| the fitted probability is 0 or 1 to double precision
SEPARATION_ETA = 30.0
# fitted probabilities beyond expit(+-12) ~ 6e-6 suggest quasi-separation
QUASI_SEPARATION_ETA = 12.0


def expit(x):
    """Logistic function, stable over the whole float range."""
    return _expit(x)


def logit(p):
    return _logit(p)


@dataclass
class DesignMatrix:
    values: np.ndarray
    column_names: list[str]
    cluster_ids: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("design matrix must be two-dimensional")
        self.column_names = list(self.column_names)
        self.cluster_ids = np.asarray(self.cluster_ids)
        if len(self.column_names) != self.values.shape[1]:
            raise DataError("column_names length does not match the number of columns")
        if len(set(self.column_names)) != len(self.column_names):
            raise DataError("column names must be unique")
        if len(self.cluster_ids) != self.values.shape[0] or len(self.cluster_ids) == 0:
            raise DataError("need one cluster id per row")
        if not np.isfinite(self.values).all():
            raise DataError("design matrix contains non-finite entries")

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_array(cls, X, column_names=None, cluster_ids=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = column_names or [f"x{j}" for j in range(X.shape[1])]
        clusters = np.arange(X.shape[0]) if cluster_ids is None else cluster_ids
        return cls(X, names, clusters)


@dataclass
class FitResult:
    beta: np.ndarray
    vcov_cluster: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    n_clusters: int
    column_names: list[str] = field(default_factory=list)
    df_correction: bool = False

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.vcov_cluster), 0, None))

    def coef(self, name):
        return float(self.beta[self.column_names.index(name)])


@dataclass(frozen=True)
class DeltaResult:
    value: float
    se: float


def _as_design(X) -> DesignMatrix:
    return X if isinstance(X, DesignMatrix) else DesignMatrix.from_array(X)


def check_rank(X: DesignMatrix, tol: float = RANK_TOL) -> None:
    """Raise :class:`RankDeficiencyError` naming columns that are linear
    combinations of earlier ones (pivoted QR)."""
    A = X.values
    if A.shape[0] < A.shape[1]:
        raise RankDeficiencyError(
            f"{A.shape[0]} rows cannot identify {A.shape[1]} coefficients", X.column_names
        )
    R, piv = scipy.linalg.qr(A, mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    scale = np.linalg.norm(A, 2)
    rank = int((d > tol * scale).sum()) if scale > 0 else 0
    if rank < A.shape[1]:
        bad = [X.column_names[j] for j in sorted(piv[rank:])]
        raise RankDeficiencyError(f"design is rank deficient; dependent columns: {bad}", bad)


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logit(X, y, *, max_iter: int = MAX_ITER, df_correction: bool = False,
              check: bool = True) -> FitResult:
    """Maximum-likelihood logit by Newton/IRLS with step halving.

    Converges when the largest absolute score falls below 1e-8, or when a
    full Newton step changes the log-likelihood by less than 1e-10 in
    relative terms. The returned covariance is the cluster-robust sandwich
    over ``X.cluster_ids`` (one cluster per row for a bare array).
    """
    X = _as_design(X)
    A = X.values
    y = np.asarray(y, dtype=float)
    n, p = A.shape
    if y.shape != (n,):
        raise DataError(f"y has shape {y.shape}, expected ({n},)")
    if check:
        if not np.isin(y, (0.0, 1.0)).all():
            raise DataError("logit response must be binary 0/1")
        if y.min() == y.max():
            raise SeparationError(
                f"response is constant ({int(y[0])}); no finite MLE - widen the bandwidth"
            )
        check_rank(X)

    beta = np.zeros(p)
    eta = A @ beta
    ll = _loglik(eta, y)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = _expit(eta)
        score = A.T @ (y - mu)
        trace.append((it - 1, ll, float(np.max(np.abs(score)))))
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            it -= 1
            break
        w = mu * (1.0 - mu)
        info = (A * w[:, None]).T @ A
        try:
            step = scipy.linalg.solve(info, score, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = A @ cand
            ll_c = _loglik(eta_c, y)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        full = t == 1.0
        change = abs(ll_c - ll)
        beta, eta, ll = cand, eta_c, ll_c
        if full and change <= LOGLIK_RTOL * max(abs(ll), 1e-300):
            converged = True
            break
    if np.max(np.abs(eta)) > SEPARATION_ETA:
        raise SeparationError(
            "fitted probabilities of 0 or 1 (|linear predictor| > "
            f"{SEPARATION_ETA:g}); likely separation - widen the bandwidth"
        )
    if np.max(np.abs(eta)) > QUASI_SEPARATION_ETA:
        logger.debug("fitted probabilities within %.1e of 0 or 1 (quasi-separation)",
                     float(_expit(-QUASI_SEPARATION_ETA)))
    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations; last trace "
            f"(iter, loglik, max|score|): {trace[-5:]}", trace
        )
    fit = FitResult(
        beta=beta, vcov_cluster=np.zeros((p, p)), converged=True, iterations=it,
        loglik=ll, n_clusters=len(np.unique(X.cluster_ids)),
        column_names=list(X.column_names), df_correction=df_correction,
    )
    fit.vcov_cluster = cluster_sandwich(X, y, fit, df_correction=df_correction)
    return fit


def cluster_sandwich(X, y, fit: FitResult, *, df_correction: bool = False) -> np.ndarray:
    """Cluster-robust covariance ``B M B`` of logit coefficients.

    ``B = (X'WX)^-1`` with ``W = diag(mu (1 - mu))``; ``M`` sums the outer
    products of per-cluster score totals. ``df_correction`` multiplies by
    ``G / (G - 1)``.
    """
    X = _as_design(X)
    A = X.values
    y = np.asarray(y, dtype=float)
    mu = _expit(A @ fit.beta)
    w = mu * (1.0 - mu)
    info = (A * w[:, None]).T @ A
    try:
        bread = scipy.linalg.inv(info)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EstimationError(f"singular information matrix: {exc}") from None
    if not np.isfinite(bread).all():
        raise EstimationError("singular information matrix")
    _, groups = np.unique(X.cluster_ids, return_inverse=True)
    G = int(groups.max()) + 1
    scores = np.zeros((G, A.shape[1]))
    np.add.at(scores, groups, A * (y - mu)[:, None])
    meat = scores.T @ scores
    V = bread @ meat @ bread
    V = 0.5 * (V + V.T)
    if df_correction:
        if G < 2:
            raise EstimationError("small-cluster correction needs at least two clusters")
        V *= G / (G - 1)
    return V


def tau_map(b):
    """Hazard gap ``expit(b0 + b1) - expit(b0)`` for ``b = (b0, b1)``."""
    return float(_expit(b[0] + b[1]) - _expit(b[0]))


def tau_gradient(b):
    h1 = _expit(b[0] + b[1])
    h0 = _expit(b[0])
    return np.array([h1 * (1 - h1) - h0 * (1 - h0), h1 * (1 - h1)])


def numerical_gradient(g: Callable, beta, step: float = 1e-6):
    beta = np.asarray(beta, dtype=float)
    grad = np.empty_like(beta)
    for j in range(len(beta)):
        e = np.zeros_like(beta)
        e[j] = step
        grad[j] = (g(beta + e) - g(beta - e)) / (2 * step)
    return grad


def delta_method(g: Callable, beta, vcov, grad=None, step: float = 1e-6) -> DeltaResult:
    """First-order standard error of ``g(beta)``.

    ``grad`` may be an array, a callable returning the gradient, or ``None``
    for central finite differences.
    """
    beta = np.asarray(beta, dtype=float)
    vcov = np.asarray(vcov, dtype=float)
    if callable(grad):
        grad = grad(beta)
    elif grad is None:
        grad = numerical_gradient(g, beta, step)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(grad).all():
        raise EstimationError("gradient is not finite")
    var = float(grad @ vcov @ grad)
    if var < 0:
        if var > -1e-14 * max(1.0, float(np.abs(vcov).max())):
            var = 0.0
        else:
            raise EstimationError(f"negative variance {var:g}; covariance is not PSD")
    return DeltaResult(float(g(beta)), float(np.sqrt(var)))


def brier_score(predicted, observed) -> float:
    """Mean squared error of probability forecasts against 0/1 outcomes."""
    p = np.asarray(predicted, dtype=float)
    y = np.asarray(observed, dtype=float)
    if p.size == 0:
        raise DataError("brier_score of an empty forecast")
    if p.shape != y.shape:
        raise DataError(f"shape mismatch {p.shape} vs {y.shape}")
    if (p < 0).any() or (p > 1).any():
        raise DataError("forecasts must be probabilities in [0, 1]")
    return float(np.mean((p - y) ** 2))


def batched_logit(A, y, masks, beta0=None, *, max_iter: int = 50):
    """Fit one logit per row of ``masks`` (0/1 row weights) simultaneously.

    Every array operation runs on the full, fixed-shape batch and a fit is
    frozen once converged, so each fit's result depends only on its own
    weighted rows, bit for bit. Fits that do not converge keep their last
    iterate and are flagged.

    Returns
    -------
    beta : (G, p) array
    converged : (G,) bool array
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    M = np.asarray(masks, dtype=float)
    G, p = M.shape[0], A.shape[1]
    if beta0 is None:
        beta = np.zeros((G, p))
    else:
        beta = np.array(np.broadcast_to(beta0, (G, p)), dtype=float)

    def loglik(B):
        eta = B @ A.T
        return np.sum(M * (y * eta - np.logaddexp(0.0, eta)), axis=1)

    ll = loglik(beta)
    active = np.ones(G, dtype=bool)
    eye = np.eye(p)
    outer = (A[:, :, None] * A[:, None, :]).reshape(len(A), p * p)
    for _ in range(max_iter):
        mu = _expit(beta @ A.T)
        score = (M * (y - mu)) @ A
        active &= ~(np.max(np.abs(score), axis=1) < SCORE_TOL)
        if not active.any():
            break
        info = ((M * mu * (1 - mu)) @ outer).reshape(G, p, p)
        # frozen fits get an identity system so the batch stays solvable
        info[~active] = eye
        score[~active] = 0.0
        try:
            step = np.linalg.solve(info, score[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(info[g], score[g], rcond=None)[0] for g in range(G)])
        t = np.where(active, 1.0, 0.0)
        cand = beta + t[:, None] * step
        ll_c = loglik(cand)
        for _ in range(40):
            bad = active & (ll_c < ll - 1e-12 * np.abs(ll))
            if not bad.any():
                break
            t[bad] *= 0.5
            cand = np.where(bad[:, None], beta + t[:, None] * step, cand)
            ll_c = np.where(bad, loglik(cand), ll_c)
        change = np.abs(ll_c - ll)
        beta = np.where(active[:, None], cand, beta)
        ll = np.where(active, ll_c, ll)
        done = active & (t == 1.0) & (change <= LOGLIK_RTOL * np.maximum(np.abs(ll), 1e-300))
        active &= ~done
    mu = _expit(beta @ A.T)
    score = (M * (y - mu)) @ A
    converged = ~active | (np.max(np.abs(score), axis=1) < SCORE_TOL)
    return beta, converged


def ols_robust(X, y, cluster_ids: Sequence | None = None):
    """Least squares with a (cluster-)robust sandwich covariance.

    Returns ``(beta, vcov, residuals)``. With ``cluster_ids=None`` every row
    is its own cluster, i.e. the HC0 estimator.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    try:
        bread = scipy.linalg.inv(X.T @ X)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EstimationError(f"singular cross-product matrix: {exc}") from None
    if cluster_ids is None:
        S = X * resid[:, None]
    else:
        _, groups = np.unique(cluster_ids, return_inverse=True)
        S = np.zeros((groups.max() + 1, X.shape[1]))
        np.add.at(S, groups, X * resid[:, None])
    V = bread @ (S.T @ S) @ bread
    return beta, 0.5 * (V + V.T), resid
