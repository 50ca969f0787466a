"""Local discrete-time hazard model at the double cutoff and the causal
effect on the completion hazard in each period."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .bandwidth import D1_SCALE, BandwidthSpec
from .data import (
    DAYS_PER_MONTH,
    QUADRANT_SIGNS,
    CutoffSpec,
    PeriodGrid,
    PersonPeriod,
    ProjectTable,
    TrimSpec,
    expand_person_period,
    trim as trim_projects,
)
from .errors import EstimationError, RankDeficiencyError
from .glm import (QUASI_SEPARATION_ETA, DesignMatrix, FitResult, delta_method, expit, fit_logit, tau_gradient,
                  tau_map)

logger = logging.getLogger(__name__)


def column_names(n_periods: int) -> list[str]:
    """Canonical column order: period dummies, treatment x period,
    above-cutoff x period for each score, quadrant x distance."""
    ts = range(1, n_periods + 1)
    names = [f"period[{t}]" for t in ts]
    names += [f"monitored:period[{t}]" for t in ts]
    names += [f"above1:period[{t}]" for t in ts]
    names += [f"above2:period[{t}]" for t in ts]
    names += [f"quadrant[{k}]:d{j}" for k in (1, 2, 3, 4) for j in (1, 2)]
    return names


def baseline_index(t: int) -> int:
    return t - 1


def treatment_index(t: int, n_periods: int) -> int:
    return n_periods + t - 1


# coefficient that loses identification when a quadrant x period cell is empty
_CELL_COEF = {1: "monitored:period[{t}]", 2: "above1:period[{t}]", 3: "period[{t}]", 4: "above2:period[{t}]"}


@dataclass
class HazardDesign:
    design: DesignMatrix
    y: np.ndarray
    n_periods: int
    d1_scale: float
    cell_counts: dict[tuple[int, int], int]

    @property
    def clusters(self):
        return self.design.cluster_ids


def build_design(rows: PersonPeriod, n_periods: int | None = None, d1_scale: float = D1_SCALE,
                 check_cells: bool = True) -> HazardDesign:
    """Stack the pooled hazard regressors for person-period rows.

    The financial-size distance is divided by ``d1_scale`` (millions by
    default) for conditioning; that only rescales the distance slopes.
    """
    T = rows.n_periods if n_periods is None else n_periods
    n = len(rows)
    if n == 0:
        raise EstimationError("no person-period rows to model")
    P = (rows.period[:, None] == np.arange(1, T + 1)[None, :]).astype(float)
    M = rows.monitored.astype(float)[:, None]
    A1 = rows.a1.astype(float)[:, None]
    A2 = rows.a2.astype(float)[:, None]
    q = rows.quadrant
    Q = (q[:, None] == np.arange(1, 5)[None, :]).astype(float)
    D = np.column_stack([rows.d1 / d1_scale, rows.d2])
    QD = (Q[:, :, None] * D[:, None, :]).reshape(n, 8)
    X = np.hstack([P, M * P, A1 * P, A2 * P, QD])
    counts = {(k, t): int(((q == k) & (rows.period == t)).sum()) for k in (1, 2, 3, 4) for t in range(1, T + 1)}
    if check_cells:
        empty = [(k, t) for (k, t), c in counts.items() if c == 0]
        if empty:
            cells = ", ".join(f"quadrant {QUADRANT_SIGNS[k]} period {t}" for k, t in empty)
            coefs = [_CELL_COEF[k].format(t=t) for k, t in empty]
            raise RankDeficiencyError(f"no observations for {cells}; inestimable: {coefs}", coefs)
    design = DesignMatrix(X, column_names(T), rows.project_id)
    return HazardDesign(design, rows.event.astype(float), T, d1_scale, counts)


@dataclass(frozen=True)
class EffectEstimate:
    period: int
    tau: float
    se: float
    ci_low: float
    ci_high: float
    p_one_sided: float
    h0_hazard: float
    h1_hazard: float

    def to_dict(self) -> dict:
        return {
            "period": self.period, "tau": self.tau, "se": self.se,
            "ci90": [self.ci_low, self.ci_high], "p_right": self.p_one_sided,
            "h0": self.h0_hazard, "h1": self.h1_hazard,
        }


def predict_hazards(fit: FitResult, n_periods: int) -> list[tuple[float, float]]:
    """Per-period control and net treated hazards at the cutoff corner.

    Every boundary-shift and distance regressor is set to zero, leaving
    ``expit(b0)`` and ``expit(b0 + b1)``.
    """
    out = []
    for t in range(1, n_periods + 1):
        b0 = fit.beta[baseline_index(t)]
        b1 = fit.beta[treatment_index(t, n_periods)]
        out.append((float(expit(b0)), float(expit(b0 + b1))))
    return out


def _interval(tau, se, alpha):
    z = norm.ppf(1 - alpha / 2)
    if se > 0:
        p = float(norm.sf(tau / se))
    else:
        p = 0.0 if tau > 0 else 1.0
    return tau - z * se, tau + z * se, p


def effect_from_coefficients(period: int, b0: float, b1: float, vcov=None,
                             alpha: float = 0.10, se: float | None = None) -> EffectEstimate:
    """Hazard gap for one period from its baseline and treatment log-odds.

    The standard error comes from the delta method on the 2x2 covariance of
    ``(b0, b1)`` unless ``se`` is supplied (e.g. from a bootstrap).
    """
    h0 = float(expit(b0))
    h1 = float(expit(b0 + b1))
    tau = h1 - h0
    if se is None:
        V = np.zeros((2, 2)) if vcov is None else np.asarray(vcov, dtype=float)
        se = delta_method(tau_map, np.array([b0, b1]), V, grad=tau_gradient).se
    lo, hi, p = _interval(tau, se, alpha)
    return EffectEstimate(period, tau, float(se), lo, hi, p, h0, h1)


def effects_from_fit(fit: FitResult, n_periods: int, alpha: float = 0.10,
                     se_override: Sequence[float] | None = None) -> list[EffectEstimate]:
    out = []
    for t in range(1, n_periods + 1):
        i, j = baseline_index(t), treatment_index(t, n_periods)
        V = fit.vcov_cluster[np.ix_([i, j], [i, j])]
        se = None if se_override is None else se_override[t - 1]
        out.append(effect_from_coefficients(t, fit.beta[i], fit.beta[j], V, alpha, se))
    return out


@dataclass
class EffectsResult:
    effects: list[EffectEstimate]
    fit: FitResult
    design: HazardDesign
    sample: ProjectTable
    person_period: PersonPeriod
    alpha: float = 0.10
    bootstrap_reps: int = 0
    bootstrap_failures: int = 0

    @property
    def extreme_rows(self) -> int:
        """Person-periods with fitted hazard within expit(-12) of 0 or 1,
        the signature of quasi-separation."""
        eta = self.design.design.values @ self.fit.beta
        return int((np.abs(eta) > QUASI_SEPARATION_ETA).sum())

    @property
    def n_projects(self) -> int:
        return len(self.sample)

    @property
    def n_rows(self) -> int:
        return len(self.person_period)

    @property
    def tau(self):
        return np.array([e.tau for e in self.effects])

    @property
    def se(self):
        return np.array([e.se for e in self.effects])

    def coefficients_dict(self) -> dict:
        return {
            "column_names": list(self.fit.column_names),
            "coefficients": [float(b) for b in self.fit.beta],
            "se": [float(s) for s in self.fit.se],
            "vcov": [[float(v) for v in row] for row in self.fit.vcov_cluster],
            "n_projects": self.n_projects,
            "n_rows": self.n_rows,
            "n_clusters": self.fit.n_clusters,
            "converged": bool(self.fit.converged),
            "iterations": int(self.fit.iterations),
            "loglik": float(self.fit.loglik),
            "df_correction": bool(self.fit.df_correction),
            "d1_scale": self.design.d1_scale,
        }

    def effects_dict(self) -> dict:
        inference = "cluster-bootstrap" if self.bootstrap_reps else "delta-method"
        return {
            "effects": [e.to_dict() for e in self.effects],
            "alpha": self.alpha,
            "inference": inference,
            "bootstrap_reps": self.bootstrap_reps,
            "bootstrap_failures": self.bootstrap_failures,
            "n_projects": self.n_projects,
            "n_rows": self.n_rows,
        }


def fit_hazard_model(sample: ProjectTable, grid: PeriodGrid, days_per_month: float = DAYS_PER_MONTH,
                     df_correction: bool = False, d1_scale: float = D1_SCALE):
    pp = expand_person_period(sample, grid, days_per_month)
    design = build_design(pp, grid.n_periods, d1_scale)
    fit = fit_logit(design.design, design.y, df_correction=df_correction)
    return pp, design, fit


def select_sample(projects: ProjectTable, trim: TrimSpec | None, bandwidth: BandwidthSpec | None) -> ProjectTable:
    sample = projects if trim is None else trim_projects(projects, trim)
    if bandwidth is not None:
        if bandwidth.cutoffs != projects.cutoffs:
            raise EstimationError("bandwidth cutoffs differ from the projects' cutoffs")
        sample = sample.subset(bandwidth.contains(sample))
    counts = sample.quadrant_counts()
    if counts[1] == 0:
        raise EstimationError("no treated projects (both scores at or above the cutoffs) in the sample")
    for k, c in counts.items():
        if c == 0:
            raise EstimationError(f"quadrant {QUADRANT_SIGNS[k]} has no projects in the sample")
    return sample


def cluster_bootstrap(sample: ProjectTable, grid: PeriodGrid, reps: int, seed=0,
                      days_per_month: float = DAYS_PER_MONTH, d1_scale: float = D1_SCALE):
    """Resample projects with replacement and re-estimate the hazard gaps.

    Returns ``(taus, failures)`` with ``taus`` of shape ``(successes, T)``.
    """
    rng = np.random.default_rng(seed)
    T = grid.n_periods
    taus, failures = [], 0
    n = len(sample)
    for _ in range(reps):
        idx = rng.integers(0, n, n)
        draw = sample.subset(idx)
        draw.ids = np.array([f"{i}#{j}" for j, i in enumerate(draw.ids)], dtype=object)
        try:
            _, _, fit = fit_hazard_model(draw, grid, days_per_month, d1_scale=d1_scale)
        except EstimationError:
            failures += 1
            continue
        taus.append([h1 - h0 for h0, h1 in predict_hazards(fit, T)])
    return np.array(taus).reshape(-1, T), failures


def estimate_effects(projects: ProjectTable, cutoffs: CutoffSpec | None = None,
                     trim: TrimSpec | None = TrimSpec(), bandwidth: BandwidthSpec | None = None,
                     grid: PeriodGrid = PeriodGrid(), *, alpha: float = 0.10,
                     df_correction: bool = False, bootstrap: int = 0, seed=0,
                     days_per_month: float = DAYS_PER_MONTH, d1_scale: float = D1_SCALE) -> EffectsResult:
    """Estimate the per-period effect of treatment on the completion hazard.

    Projects are trimmed, restricted to the bandwidth rectangles, expanded
    to person-period rows and fitted with the pooled logit hazard model. The
    effect in period ``t`` is ``expit(b0_t + b1_t) - expit(b0_t)`` with a
    delta-method standard error from the project-clustered covariance, or a
    cluster-bootstrap standard error when ``bootstrap > 0``.
    """
    if cutoffs is not None and cutoffs != projects.cutoffs:
        projects = ProjectTable(projects.ids, projects.s1, projects.s2, projects.monitored,
                                projects.duration_days, projects.censored, projects.covariates,
                                cutoffs=cutoffs)
    sample = select_sample(projects, trim, bandwidth)
    pp, design, fit = fit_hazard_model(sample, grid, days_per_month, df_correction, d1_scale)
    se_override, failures = None, 0
    if bootstrap:
        taus, failures = cluster_bootstrap(sample, grid, bootstrap, seed, days_per_month, d1_scale)
        if len(taus) < 2:
            raise EstimationError(f"cluster bootstrap failed in {failures} of {bootstrap} draws")
        se_override = taus.std(axis=0, ddof=1)
    effects = effects_from_fit(fit, grid.n_periods, alpha, se_override)
    return EffectsResult(effects, fit, design, sample, pp, alpha, bootstrap, failures)


@dataclass
class SweepRow:
    scale_pct: int
    n_projects: int
    effects: list[EffectEstimate] | None
    error: str | None = None


@dataclass
class SensitivityResult:
    rows: list[SweepRow] = field(default_factory=list)
    n_periods: int = 3

    def row(self, scale_pct: int) -> SweepRow:
        return next(r for r in self.rows if r.scale_pct == scale_pct)

    def to_csv(self, path) -> None:
        T = self.n_periods
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scale_pct", "n"] + [f"tau_t{t}" for t in range(1, T + 1)]
                       + [f"se_t{t}" for t in range(1, T + 1)])
            for r in self.rows:
                if r.effects is None:
                    w.writerow([r.scale_pct, r.n_projects] + [""] * (2 * T))
                else:
                    w.writerow([r.scale_pct, r.n_projects] + [repr(e.tau) for e in r.effects]
                               + [repr(e.se) for e in r.effects])


def sensitivity_sweep(projects: ProjectTable, cutoffs: CutoffSpec | None, trim: TrimSpec | None,
                      base_bandwidth: BandwidthSpec, grid: PeriodGrid = PeriodGrid(),
                      range_pct: int = 20, step_pct: int = 1, **kwargs) -> SensitivityResult:
    """Re-estimate with every external bandwidth limit moved by
    ``-range_pct..range_pct`` percent of its distance from the cutoff.

    A step whose model cannot be estimated is kept as a row without
    estimates. Remaining keyword arguments go to :func:`estimate_effects`.
    """
    result = SensitivityResult(n_periods=grid.n_periods)
    for pct in range(-range_pct, range_pct + 1, step_pct):
        bw = base_bandwidth.scaled(pct / 100.0, trim)
        base = projects if trim is None else trim_projects(projects, trim)
        n = int(bw.contains(base).sum())
        try:
            res = estimate_effects(projects, cutoffs, trim, bw, grid, **kwargs)
        except EstimationError as exc:
            logger.warning("sweep %+d%%: %s", pct, exc)
            result.rows.append(SweepRow(pct, n, None, str(exc)))
            continue
        result.rows.append(SweepRow(pct, res.n_projects, res.effects))
    return result
