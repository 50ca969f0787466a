"""Identification checks: covariate placebo fits, the single-score
(centering) reduction, smoothed completion curves and a density test."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bandwidth import BandwidthSpec, D1_SCALE, MIN_PROJECTS, cv_quadrant, default_candidate_grid, loo_predictions
from .data import (BINARY_COVARIATES, DAYS_PER_MONTH, QUADRANTS, QUADRANT_SIGNS, CutoffSpec, ProjectTable,
                   quadrant_index)
from .errors import DataError, EstimationError
from .glm import DesignMatrix, delta_method, expit, fit_logit, ols_robust

logger = logging.getLogger(__name__)

CONTROL_SETS = ((1, 0), (0, 0), (0, 1))
CURVE_LABELS = ("A", "B", "C", "D", "E")
# quadrant behind each observed curve
CURVE_QUADRANT = {"A": 1, "B": 2, "C": 3, "D": 4}
# Gaussian-reference rule-of-thumb constant for the triangular kernel
TRIANGULAR_ROT = 2.576
MIN_CURVE_MASS = 20


def _control_quadrant(control_set) -> int:
    key = tuple(int(a) for a in control_set)
    if key not in CONTROL_SETS:
        raise DataError(f"control set must be one of {CONTROL_SETS}, got {control_set!r}")
    return QUADRANTS[key]


# ---------------------------------------------------------------------------
# pseudo-outcomes


@dataclass
class PseudoEffect:
    covariate: str
    control_set: tuple[int, int]
    gamma1: float
    se: float
    p_two_sided: float
    n_treated: int
    n_control: int
    model: str
    intercept: bool
    flag: str | None = None
    limits: dict[int, tuple[float, float]] | None = None

    def to_dict(self) -> dict:
        d = {
            "covariate": self.covariate,
            "control_set": list(self.control_set),
            "gamma1": self.gamma1,
            "se": self.se,
            "p_two_sided": self.p_two_sided,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "model": self.model,
            "intercept": self.intercept,
            "flag": self.flag,
        }
        if self.limits is not None:
            d["limits"] = {str(k): list(v) for k, v in sorted(self.limits.items())}
        return d


def is_binary(values) -> bool:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    return v.size > 0 and bool(np.isin(v, (0.0, 1.0)).all())


def _local_features(projects: ProjectTable, d1_scale: float = D1_SCALE):
    return np.column_stack([np.ones(len(projects)), projects.d1 / d1_scale, projects.d2])


def covariate_cv_score(projects: ProjectTable, covariate: str, binary: bool) -> float:
    """Leave-one-project-out risk of a quadrant-local linear model for a
    covariate: squared error for continuous values, Brier score for binary."""
    y = projects.covariates[covariate]
    A = _local_features(projects)
    groups = np.arange(len(projects))
    if binary:
        if np.all(y == y[0]):
            raise EstimationError("constant binary covariate in window")
        fit_logit(A, y)
        pred = loo_predictions(A, y, groups, "logit")
    else:
        pred = loo_predictions(A, y, groups, "gaussian")
    return float(np.mean((pred - y) ** 2))


def covariate_bandwidth(projects: ProjectTable, covariate: str, quadrants, binary: bool,
                        n_steps: int = 20, min_projects: int = MIN_PROJECTS):
    """Covariate-specific cross-validated limits for the given quadrants."""
    limits, scores = {}, {}
    for k in quadrants:
        cands = default_candidate_grid(projects, k, n_steps)
        sc, chosen = cv_quadrant(projects, k, cands,
                                 lambda sub: covariate_cv_score(sub, covariate, binary),
                                 min_projects=min_projects)
        limits[k] = (chosen.s1_limit, chosen.s2_limit)
        scores[k] = sc
    return limits, scores


def _pseudo_design(sample: ProjectTable, intercept: bool, d1_scale: float = D1_SCALE):
    m = sample.monitored.astype(float)
    d1 = sample.d1 / d1_scale
    d2 = sample.d2
    cols = [m, m * d1, m * d2, (1 - m) * d1, (1 - m) * d2]
    names = ["monitored", "monitored:d1", "monitored:d2", "control:d1", "control:d2"]
    if intercept:
        cols.insert(0, np.ones(len(sample)))
        names.insert(0, "intercept")
    return np.column_stack(cols), names


def pseudo_effect(projects: ProjectTable, covariate: str, control_set, *,
                  bandwidth: BandwidthSpec | str | None = "auto", intercept: bool = True,
                  binary: bool | None = None, n_steps: int = 20,
                  min_projects: int = MIN_PROJECTS) -> PseudoEffect:
    """Placebo discontinuity in a predetermined covariate.

    The treated quadrant is joined with one control quadrant and the
    covariate is regressed on the treatment flag plus separate linear
    distance terms on each side. ``gamma1`` is the jump at the cutoff corner:
    a least-squares coefficient with heteroskedasticity-robust SE for a
    continuous covariate, or a probability gap from a logit (delta-method SE)
    for a binary one.

    Parameters
    ----------
    projects : ProjectTable
        Trimmed projects carrying the covariate.
    control_set : (a1, a2)
        One of ``(1, 0)``, ``(0, 0)``, ``(0, 1)``.
    bandwidth : "auto", BandwidthSpec or None
        ``"auto"`` selects rectangles for the two quadrants by
        covariate-specific cross-validation; ``None`` uses every project.
    intercept : bool
        Include a common intercept. Without it the control-side level at the
        cutoff is forced to zero and ``gamma1`` measures the treated level.
    """
    if covariate not in projects.covariates:
        raise DataError(f"covariate {covariate!r} not present; available: {sorted(projects.covariates)}")
    kc = _control_quadrant(control_set)
    q = projects.quadrant
    values = projects.covariates[covariate]
    keep = np.isin(q, (1, kc)) & ~np.isnan(values)
    if (np.isin(q, (1, kc)) & np.isnan(values)).any():
        logger.warning("%s: dropping %d projects with missing values", covariate,
                       int((np.isin(q, (1, kc)) & np.isnan(values)).sum()))
    pool = projects.subset(keep)
    if binary is None:
        binary = covariate in BINARY_COVARIATES or is_binary(pool.covariates[covariate])
    limits = None
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise DataError(f"unknown bandwidth mode {bandwidth!r}")
        limits, _ = covariate_bandwidth(pool, covariate, (1, kc), binary, n_steps, min_projects)
        bandwidth = BandwidthSpec.from_external(
            projects.cutoffs, {k: limits.get(k, _full_limit(pool, k)) for k in (1, 2, 3, 4)})
    if bandwidth is not None:
        pool = pool.subset(bandwidth.contains(pool))
        limits = {k: v for k, v in bandwidth.external_limits().items() if k in (1, kc)}
    qq = pool.quadrant
    n_t, n_c = int((qq == 1).sum()), int((qq == kc).sum())
    if n_c == 0:
        raise EstimationError(f"control set {tuple(control_set)} is empty within the bandwidth")
    if n_t == 0:
        raise EstimationError("treated set is empty within the bandwidth")
    y = pool.covariates[covariate]
    X, names = _pseudo_design(pool, intercept)
    common = dict(covariate=covariate, control_set=tuple(int(a) for a in control_set),
                  n_treated=n_t, n_control=n_c, intercept=intercept, limits=limits)
    jm = names.index("monitored")

    if np.all(y == y[0]):
        c = float(y[0])
        level = 0.0 if intercept else (c if not binary else c - 0.5)
        return PseudoEffect(gamma1=level, se=0.0, p_two_sided=1.0, model="logit" if binary else "ols",
                            flag="constant covariate: no variation to test", **common)
    if not binary:
        beta, V, _ = ols_robust(X, y)
        g, se = float(beta[jm]), float(math.sqrt(max(V[jm, jm], 0.0)))
        model = "ols"
    else:
        fit = fit_logit(DesignMatrix(X, names, pool.ids), y)
        ix = [0, jm] if intercept else [jm]

        def gap(b):
            if intercept:
                return expit(b[0] + b[1]) - expit(b[0])
            return expit(b[0]) - 0.5

        d = delta_method(gap, fit.beta[ix], fit.vcov_cluster[np.ix_(ix, ix)])
        g, se = float(d.value), float(d.se)
        model = "logit"
    flag = None
    if se > 0:
        p = float(2 * norm.sf(abs(g) / se))
    else:
        p, flag = 1.0, "zero standard error"
    return PseudoEffect(gamma1=g, se=se, p_two_sided=p, model=model, flag=flag, **common)


def _full_limit(projects: ProjectTable, k: int):
    """External limits wide enough to keep every project of quadrant k."""
    c = projects.cutoffs
    a1, a2 = QUADRANT_SIGNS[k]
    s1 = float(projects.s1.max()) if a1 else float(projects.s1.min())
    s2 = float(projects.s2.max()) if a2 else float(projects.s2.min())
    # keep the limit on the correct side even when the quadrant is sparse
    s1 = max(s1, c.c1) if a1 else min(s1, np.nextafter(c.c1, -np.inf))
    s2 = max(s2, c.c2) if a2 else min(s2, np.nextafter(c.c2, -np.inf))
    return s1, s2


def pseudo_effects_table(projects: ProjectTable, covariates=None, control_sets=CONTROL_SETS,
                         **kwargs) -> list[PseudoEffect]:
    """Every covariate against every control set, in table order."""
    if covariates is None:
        covariates = sorted(projects.covariates)
    return [pseudo_effect(projects, c, cs, **kwargs) for c in covariates for cs in control_sets]


# ---------------------------------------------------------------------------
# centering


@dataclass
class CenteredScore:
    """Standardised distances and the signed single score, one entry per project."""

    v1: np.ndarray
    v2: np.ndarray
    z: np.ndarray
    quadrant: np.ndarray
    cutoff: float = 0.0

    def __len__(self):
        return len(self.z)


def center_scores(projects: ProjectTable, cutoffs: CutoffSpec | None = None,
                  standardize: str = "cutoff") -> CenteredScore:
    """Collapse the two scores into one signed distance from the cutoff corner.

    ``standardize="cutoff"`` uses ``(S - c) / c``; ``"sd"`` divides by the
    sample standard deviation of each score instead. The magnitude is the
    Euclidean norm of the two standardised distances; it is positive for
    treated projects and negative for all others.
    """
    c = cutoffs or projects.cutoffs
    if not (c.c1 > 0 and c.c2 > 0):
        raise DataError("cutoffs must be positive to standardise by them")
    if standardize == "cutoff":
        s1, s2 = c.c1, c.c2
    elif standardize == "sd":
        s1, s2 = float(np.std(projects.s1)), float(np.std(projects.s2))
        if not (s1 > 0 and s2 > 0):
            raise DataError("scores have zero spread")
    else:
        raise DataError(f"unknown standardisation {standardize!r}")
    v1 = (projects.s1 - c.c1) / s1
    v2 = (projects.s2 - c.c2) / s2
    a1 = projects.s1 >= c.c1
    a2 = projects.s2 >= c.c2
    r = np.hypot(v1, v2)
    z = np.where(a1 & a2, r, -r)
    return CenteredScore(v1, v2, z, quadrant_index(a1, a2))


# ---------------------------------------------------------------------------
# graphical analysis


def triangular(u):
    u = np.abs(np.asarray(u, dtype=float))
    return np.where(u < 1, 1 - u, 0.0)


def local_linear(x, y, points, bandwidth: float):
    """Triangular-kernel local-linear regression evaluated at ``points``.

    Returns an array with NaN where the kernel window holds fewer than two
    distinct ``x`` values.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(len(points), np.nan)
    for i, p in enumerate(points):
        u = x - p
        w = triangular(u / bandwidth)
        on = w > 0
        if on.sum() < 2 or np.ptp(u[on]) == 0:
            continue
        w, u, yy = w[on], u[on], y[on]
        # weighted least squares on centred x; intercept is the fit at p
        sw = w.sum()
        mu = (w * u).sum() / sw
        uc = u - mu
        slope = (w * uc * yy).sum() / (w * uc * uc).sum()
        out[i] = (w * yy).sum() / sw - slope * mu
    return out


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    return float(0.9 * spread * len(x) ** (-0.2))


def default_curve_bandwidth(scores: CenteredScore, min_mass: int = MIN_CURVE_MASS) -> float:
    """Silverman width on ``z``, widened until every quadrant has at least
    ``min_mass`` projects within it of the corner.

    Few projects lie close to the corner in two dimensions (their count
    grows with the squared distance), so the plain rule often leaves the
    fit at zero to a handful of points.
    """
    h = silverman_bandwidth(scores.z)
    r = np.abs(scores.z)
    for k in CURVE_QUADRANT.values():
        rk = np.sort(r[scores.quadrant == k])
        if len(rk) >= min_mass:
            h = max(h, float(np.nextafter(rk[min_mass - 1], np.inf)))
    return h


@dataclass
class SmoothedCurve:
    label: str
    z: np.ndarray
    value: np.ndarray
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flagged is None:
            v = self.value
            self.flagged = ~np.isnan(v) & ((v < 0) | (v > 1))


@dataclass
class CurveSet:
    """Curves A to E on a common distance grid.

    ``A`` and ``E`` live on ``z >= 0``; ``B``, ``C``, ``D`` are the mirror
    images at ``-r`` of the same distances ``r``.
    """

    curves: dict[str, SmoothedCurve]
    distance: np.ndarray
    bandwidth: float
    discontinuity: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z", "value", "subset_label"])
            for lab in CURVE_LABELS:
                cv = self.curves[lab]
                for z, v in zip(cv.z, cv.value):
                    if not np.isnan(v):
                        w.writerow([repr(float(z)), repr(float(v)), lab])


def completion_outcome(projects: ProjectTable, horizon_months: float | None = None,
                       days_per_month: float = DAYS_PER_MONTH):
    """1 if the project is observed complete (by the horizon, if given)."""
    done = projects.censored == 0
    if horizon_months is not None:
        done &= projects.duration_days <= horizon_months * days_per_month
    return done.astype(float)


def smooth_curves(projects: ProjectTable, scores: CenteredScore | None = None, *,
                  bandwidth: float | None = None, grid=None, outcome=None,
                  horizon_months: float | None = None) -> CurveSet:
    """Local-linear completion curves per quadrant and the net treated curve.

    Each quadrant's outcome is smoothed against its distance ``|z|`` from the
    corner with a triangular kernel. The net curve is
    ``E = A - B - D + 2 C`` at every grid distance, and the reported
    discontinuity is ``E - C`` at distance zero.

    Parameters
    ----------
    bandwidth : float, optional
        Defaults to :func:`default_curve_bandwidth`.
    grid : array, optional
        Non-negative distances; defaults to 41 points from 0 to the 90th
        percentile of ``|z|``.
    outcome : array, optional
        Per-project outcome replacing the completion indicator.
    """
    if scores is None:
        scores = center_scores(projects)
    y = completion_outcome(projects, horizon_months) if outcome is None else np.asarray(outcome, float)
    if len(y) != len(scores):
        raise DataError("outcome length does not match the number of projects")
    r = np.abs(scores.z)
    if bandwidth is None:
        bandwidth = default_curve_bandwidth(scores)
    if not bandwidth > 0:
        raise DataError("bandwidth must be positive")
    grid = np.linspace(0.0, float(np.quantile(r, 0.9)), 41) if grid is None else np.asarray(grid, float)
    if (grid < 0).any():
        raise DataError("grid distances must be non-negative")
    values = {}
    for lab, k in CURVE_QUADRANT.items():
        sel = scores.quadrant == k
        if not sel.any():
            raise EstimationError(f"curve {lab}: quadrant {k} has no projects")
        values[lab] = local_linear(r[sel], y[sel], grid, bandwidth)
        missing = np.isnan(values[lab])
        if missing.any():
            logger.info("curve %s: %d grid points without kernel mass omitted", lab, int(missing.sum()))
    values["E"] = values["A"] - values["B"] - values["D"] + 2 * values["C"]
    curves = {}
    for lab in CURVE_LABELS:
        zz = grid if lab in ("A", "E") else 0.0 - grid + 0.0
        curves[lab] = SmoothedCurve(lab, zz, values[lab])
    if curves["E"].flagged.any():
        logger.info("net curve leaves [0, 1] at %d grid points", int(curves["E"].flagged.sum()))
    at0 = int(np.argmin(grid))
    disc = float(values["E"][at0] - values["C"][at0]) if grid[at0] == 0 else math.nan
    return CurveSet(curves, grid, float(bandwidth), disc)


# ---------------------------------------------------------------------------
# density test


@dataclass
class DensityTestResult:
    control_set: str
    statistic: float
    p_two_sided: float
    f_left: float
    f_right: float
    se_left: float
    se_right: float
    bandwidth_left: float
    bandwidth_right: float
    n_left: int
    n_right: int
    flag: str | None = None

    def to_dict(self) -> dict:
        return {
            "control_set": self.control_set,
            "statistic": self.statistic,
            "p_two_sided": self.p_two_sided,
            "f_left": self.f_left,
            "f_right": self.f_right,
            "se_left": self.se_left,
            "se_right": self.se_right,
            "bandwidth": [self.bandwidth_left, self.bandwidth_right],
            "n_within": [self.n_left, self.n_right],
            "flag": self.flag,
        }


def density_bandwidth(z, min_per_side: int = 0) -> float:
    """Gaussian-reference rule of thumb for a triangular kernel, widened
    if needed so that each side of zero holds ``min_per_side`` points.

    Scores built as distances from a corner in two dimensions are thin
    near zero, so the plain rule can leave one side nearly empty.
    """
    z = np.asarray(z, dtype=float)
    sd = np.std(z, ddof=1)
    iqr = np.subtract(*np.percentile(z, [75, 25])) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    h = float(TRIANGULAR_ROT * spread * len(z) ** (-0.2))
    if min_per_side > 0:
        for side in (-z[z < 0], z[z >= 0]):
            if len(side) >= min_per_side:
                h = max(h, float(np.nextafter(np.sort(side)[min_per_side - 1], np.inf)))
    return h


def _midpoint_ecdf(z):
    """ECDF at each point with ties and the point itself counted half."""
    z = np.asarray(z, dtype=float)
    s = np.sort(z)
    lo = np.searchsorted(s, z, "left")
    hi = np.searchsorted(s, z, "right")
    return (lo + hi) / (2.0 * len(z))


def _side_fit(z, F, sel, h):
    """Local quadratic fit of F on one side; returns (slope, variance, n)."""
    x = z[sel]
    w = triangular(x / h)
    on = w > 0
    x, w, Fi = x[on], w[on], F[sel][on]
    R = np.column_stack([np.ones_like(x), x, x * x])
    G = R.T @ (R * w[:, None])
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        raise EstimationError("singular local polynomial fit") from None
    L = (Ginv @ (R * w[:, None]).T)[1]  # slope weights
    slope = float(L @ Fi)
    # influence of each observation j on the slope through the ECDF
    n = len(z)
    ind = (z[:, None] < x[None, :]) + 0.5 * (z[:, None] == x[None, :])
    psi = (ind - Fi[None, :]) @ L
    var = float(psi @ psi) / n ** 2
    return slope, var, int(on.sum())


def density_test(z, bandwidth: float | str = "auto", *, min_per_side: int = 20,
                 control_set: str = "custom") -> DensityTestResult:
    """Test for a jump in the density of the single score at zero.

    Each side's density at zero is the slope of a triangular-kernel local
    quadratic fit of the pooled midpoint ECDF. The variance is the plug-in
    from the ECDF's influence function; the statistic is the difference of
    the two slopes over the root sum of their variances. Zero belongs to the
    right side.

    Parameters
    ----------
    bandwidth : float, (float, float) or "auto"
        ``"auto"`` applies :func:`density_bandwidth` to the pooled scores
        on both sides, with the ``min_per_side`` floor.
    """
    z = np.asarray(z, dtype=float)
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise DataError(f"unknown bandwidth mode {bandwidth!r}")
        hl = hr = density_bandwidth(z, min_per_side)
    elif np.ndim(bandwidth) == 1:
        hl, hr = (float(b) for b in bandwidth)
    else:
        hl = hr = float(bandwidth)
    if not (hl > 0 and hr > 0):
        raise DataError("density bandwidth must be positive")
    left, right = z < 0, z >= 0
    nl = int((left & (z > -hl)).sum())
    nr = int((right & (z < hr)).sum())
    if nl < min_per_side or nr < min_per_side:
        raise EstimationError(
            f"density test needs {min_per_side} observations per side within the bandwidth; "
            f"have {nl} left and {nr} right"
        )
    F = _midpoint_ecdf(z)
    fl, vl, nl = _side_fit(z, F, left, hl)
    fr, vr, nr = _side_fit(z, F, right, hr)
    stat = (fr - fl) / math.sqrt(vl + vr)
    flag = "negative density estimate" if min(fl, fr) < 0 else None
    return DensityTestResult(control_set, float(stat), float(2 * norm.sf(abs(stat))),
                             fl, fr, math.sqrt(vl), math.sqrt(vr), hl, hr, nl, nr, flag)


DENSITY_SETS = {
    "all": (2, 3, 4),
    "(1,0)": (2,),
    "(0,0)": (3,),
    "(0,1)": (4,),
}


def density_tests(scores: CenteredScore, bandwidth: float | str = "auto",
                  min_per_side: int = 20) -> list[DensityTestResult]:
    """Treated scores against all controls and against each control quadrant."""
    out = []
    for name, ks in DENSITY_SETS.items():
        sel = np.isin(scores.quadrant, (1,) + ks)
        out.append(density_test(scores.z[sel], bandwidth, min_per_side=min_per_side, control_set=name))
    return out
