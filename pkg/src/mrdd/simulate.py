"""Synthetic projects with a planted hazard discontinuity at the double
cutoff, and a Monte Carlo harness around the estimation pipeline.

Random streams come from numpy's ``SeedSequence`` feeding the PCG64 bit
generator. Replication ``r`` of a Monte Carlo run draws from
``SeedSequence(seed, spawn_key=(r,))``, so results do not depend on the
order in which replications are executed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .bandwidth import D1_SCALE, BandwidthSpec, select_bandwidth
from .data import (
    DAYS_PER_MONTH,
    CutoffSpec,
    PeriodGrid,
    ProjectTable,
    TrimSpec,
    quadrant_index,
    trim as trim_projects,
)
from .errors import DataError, EstimationError
from .estimator import estimate_effects
from .glm import expit, logit

logger = logging.getLogger(__name__)

RNG_ALGORITHM = f"numpy SeedSequence -> PCG64 (numpy {np.__version__})"


def treatment_shift_for(baseline, tau):
    """Treatment log-odds shifts that produce hazard gaps ``tau`` on top of
    baseline log-odds ``baseline``."""
    b0 = np.asarray(baseline, dtype=float)
    return logit(expit(b0) + np.asarray(tau, dtype=float)) - b0


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process in the estimator's own coordinates.

    Distance slopes are per unit of ``D1 / 1e6`` and of ``D2``. Each kink
    ``(k, j, location, slope)`` adds ``slope * max(0, |D_j| - location)`` to
    the log-odds of quadrant ``k`` (distances in the same units).
    """

    n_projects: int = 2000
    s1_dist: str = "loguniform"
    s1_low: float = 150_000.0
    s1_high: float = 1_000_000.0
    s2_dist: str = "uniform"
    s2_low: float = 0.05
    s2_high: float = 0.95
    c1: float = 500_000.0
    c2: float = 0.5
    period_boundaries: tuple[float, ...] = (6.0, 12.0)
    baseline_logit_hazard: tuple[float, ...] = (-1.0, -0.5, 0.0)
    treatment_logit_shift: tuple[float, ...] = (0.0, 0.0, 0.0)
    boundary_shifts: tuple[tuple[float, ...], ...] = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    distance_slopes: tuple[tuple[float, float], ...] = ((0.0, 0.0),) * 4
    distance_kinks: tuple[tuple[int, int, float, float], ...] = ()
    censor_window_months: float = 24.0
    sorting_intensity: float = 0.0
    sorting_band: float = 0.05
    days_per_month: float = DAYS_PER_MONTH
    expected_duration_range: tuple[float, float] = (3.0, 36.0)
    auction_share: float = 0.5
    lowest_bid_share: float = 0.5
    seed: int = 0

    def __post_init__(self):
        # normalise list inputs (e.g. from JSON) into tuples
        for name in ("period_boundaries", "baseline_logit_hazard", "treatment_logit_shift",
                     "expected_duration_range"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        object.__setattr__(self, "boundary_shifts",
                           tuple(tuple(float(x) for x in r) for r in self.boundary_shifts))
        object.__setattr__(self, "distance_slopes",
                           tuple(tuple(float(x) for x in r) for r in self.distance_slopes))
        object.__setattr__(self, "distance_kinks",
                           tuple((int(k), int(j), float(loc), float(s)) for k, j, loc, s in self.distance_kinks))
        T = len(self.period_boundaries) + 1
        if self.n_projects < 1:
            raise DataError("n_projects must be positive")
        if len(self.baseline_logit_hazard) != T or len(self.treatment_logit_shift) != T:
            raise DataError(f"per-period coefficient vectors need {T} entries")
        if len(self.boundary_shifts) != 2 or any(len(r) != T for r in self.boundary_shifts):
            raise DataError(f"boundary_shifts must be 2 x {T}")
        if len(self.distance_slopes) != 4 or any(len(r) != 2 for r in self.distance_slopes):
            raise DataError("distance_slopes must be 4 x 2")
        coefs = (self.baseline_logit_hazard + self.treatment_logit_shift
                 + sum(self.boundary_shifts, ()) + sum(self.distance_slopes, ()))
        if not all(math.isfinite(v) for v in coefs):
            raise DataError("DGP coefficients must be finite")
        if not self.censor_window_months > self.period_boundaries[-1]:
            raise DataError("censor window must extend past the last period boundary")
        if self.sorting_intensity < 0:
            raise DataError("sorting_intensity must be >= 0")
        if self.s1_dist not in ("loguniform", "uniform") or self.s2_dist != "uniform":
            raise DataError("supported score distributions: s1 loguniform|uniform, s2 uniform")
        if not (0 < self.s1_low < self.s1_high and 0 <= self.s2_low < self.s2_high <= 1):
            raise DataError("invalid score ranges")
        CutoffSpec(self.c1, self.c2)

    @property
    def cutoffs(self) -> CutoffSpec:
        return CutoffSpec(self.c1, self.c2)

    @property
    def grid(self) -> PeriodGrid:
        return PeriodGrid(self.period_boundaries)

    @property
    def n_periods(self) -> int:
        return len(self.period_boundaries) + 1

    def replace(self, **changes) -> "DgpConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DgpConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown DGP keys: {sorted(unknown)}")
        try:
            return cls(**dict(d))
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid DGP configuration: {exc}") from None


def true_effects(config: DgpConfig) -> np.ndarray:
    """Per-period hazard gap implied by the configuration."""
    b0 = np.asarray(config.baseline_logit_hazard)
    b1 = np.asarray(config.treatment_logit_shift)
    return expit(b0 + b1) - expit(b0)


def linear_predictor(config: DgpConfig, s1, s2) -> np.ndarray:
    """(n, T) log-odds of completion in each period."""
    c = config.cutoffs
    a1 = (s1 >= c.c1).astype(float)
    a2 = (s2 >= c.c2).astype(float)
    m = a1 * a2
    d = np.column_stack([(s1 - c.c1) / D1_SCALE, s2 - c.c2])
    k = quadrant_index(a1, a2)
    b2 = np.asarray(config.boundary_shifts)
    b3 = np.asarray(config.distance_slopes)
    lp = (np.asarray(config.baseline_logit_hazard)[None, :]
          + m[:, None] * np.asarray(config.treatment_logit_shift)[None, :]
          + a1[:, None] * b2[0][None, :] + a2[:, None] * b2[1][None, :])
    lp = lp + np.sum(b3[k - 1] * d, axis=1)[:, None]
    for kk, j, loc, slope in config.distance_kinks:
        lp = lp + ((k == kk) * slope * np.maximum(0.0, np.abs(d[:, j - 1]) - loc))[:, None]
    return lp


def simulate_durations(config: DgpConfig, lp, rng):
    """Draw completion periods from per-period hazards and convert to days.

    Returns ``(duration_days, censored)``. Completion times are uniform over
    the days of the completion period; survivors are censored at the window.
    """
    n, T = lp.shape
    h = expit(lp)
    done = rng.random((n, T)) < h
    any_done = done.any(axis=1)
    period = np.where(any_done, done.argmax(axis=1) + 1, 0)
    dpm = config.days_per_month
    edges = (0.0,) + config.period_boundaries + (config.censor_window_months,)
    censor_days = int(math.floor(config.censor_window_months * dpm))
    lo = np.array([max(1, math.ceil(edges[t] * dpm)) for t in range(T)])
    hi = np.array([math.ceil(edges[t + 1] * dpm) - 1 for t in range(T)])
    hi[-1] = censor_days
    u = rng.random(n)
    p = np.maximum(period, 1) - 1
    days = lo[p] + np.floor(u * (hi[p] - lo[p] + 1)).astype(np.int64)
    days = np.where(any_done, days, censor_days)
    return days.astype(np.int64), (~any_done).astype(np.int8)


def _draw_scores(config: DgpConfig, rng):
    n = config.n_projects
    if config.s1_dist == "loguniform":
        s1 = np.exp(rng.uniform(math.log(config.s1_low), math.log(config.s1_high), n))
    else:
        s1 = rng.uniform(config.s1_low, config.s1_high, n)
    s2 = rng.uniform(config.s2_low, config.s2_high, n)
    return s1, s2


def _apply_sorting(config: DgpConfig, s1, s2, rng):
    """Push units lying just below the cutoffs to just above them.

    A non-treated unit is eligible when each of its below-cutoff scores is
    within ``sorting_band`` (relative) of its cutoff; with probability
    ``min(1, sorting_intensity)`` those scores move into the band above.
    """
    c = config.cutoffs
    band = config.sorting_band
    below1 = s1 < c.c1
    below2 = s2 < c.c2
    near1 = ~below1 | (s1 >= c.c1 * (1 - band))
    near2 = ~below2 | (s2 >= c.c2 * (1 - band))
    eligible = (below1 | below2) & near1 & near2
    move = eligible & (rng.random(len(s1)) < min(1.0, config.sorting_intensity))
    u1, u2 = rng.random(len(s1)), rng.random(len(s1))
    s1 = np.where(move & below1, c.c1 * (1 + band * u1), s1)
    s2 = np.where(move & below2, np.minimum(c.c2 * (1 + band * u2), 1.0), s2)
    return s1, s2


def generate(config: DgpConfig, rng=None) -> ProjectTable:
    """Draw a synthetic project table; deterministic given ``config.seed``
    (or the supplied generator)."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    s1, s2 = _draw_scores(config, rng)
    if config.sorting_intensity > 0:
        s1, s2 = _apply_sorting(config, s1, s2, rng)
    n = config.n_projects
    lo, hi = config.expected_duration_range
    cov = {
        "expected_duration_months": rng.uniform(lo, hi, n),
        "auction": (rng.random(n) < config.auction_share).astype(float),
        "lowest_bid": (rng.random(n) < config.lowest_bid_share).astype(float),
    }
    lp = linear_predictor(config, s1, s2)
    days, censored = simulate_durations(config, lp, rng)
    c = config.cutoffs
    monitored = ((s1 >= c.c1) & (s2 >= c.c2)).astype(np.int8)
    ids = np.array([f"P{i:06d}" for i in range(n)], dtype=object)
    return ProjectTable(ids, s1, s2, monitored, days, censored, cov, cutoffs=c)


def replication_rng(seed: int, replication: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


@dataclass
class McSummary:
    replications: int
    failures: int
    truth: np.ndarray
    mean_tau: np.ndarray
    sd_tau: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray
    rejection_rate: np.ndarray
    alpha: float
    test_level: float
    mean_n_projects: float
    tau_hat: np.ndarray = field(repr=False, default=None)
    se_hat: np.ndarray = field(repr=False, default=None)
    p_right: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        periods = []
        for t in range(len(self.truth)):
            periods.append({
                "period": t + 1,
                "true_tau": float(self.truth[t]),
                "mean_tau": float(self.mean_tau[t]),
                "sd_tau": float(self.sd_tau[t]),
                "mean_se": float(self.mean_se[t]),
                "coverage": float(self.coverage[t]),
                "rejection_rate": float(self.rejection_rate[t]),
            })
        return {
            "replications": self.replications,
            "failures": self.failures,
            "ci_level": 1 - self.alpha,
            "test_level": self.test_level,
            "mean_n_projects": self.mean_n_projects,
            "periods": periods,
            "rng": RNG_ALGORITHM,
        }


def run_monte_carlo(config: DgpConfig, replications: int, *, trim: TrimSpec | None = TrimSpec(),
                    bandwidth: BandwidthSpec | str | None = None, alpha: float = 0.10,
                    test_level: float = 0.05, n_steps: int = 10, min_projects: int = 15,
                    max_failure_rate: float = 0.2) -> McSummary:
    """Repeat generate -> trim -> (select or fix bandwidth) -> estimate.

    ``bandwidth=None`` uses the whole trim box, ``"auto"`` runs the
    cross-validated selector in every replication, and a
    :class:`BandwidthSpec` is applied as given.
    """
    if replications < 2:
        raise DataError("need at least two replications")
    T = config.n_periods
    grid = config.grid
    truth = true_effects(config)
    taus = np.full((replications, T), np.nan)
    ses = np.full((replications, T), np.nan)
    ps = np.full((replications, T), np.nan)
    ns = np.full(replications, np.nan)
    errors = []
    for r in range(replications):
        data = generate(config, replication_rng(config.seed, r))
        try:
            bw = bandwidth
            if isinstance(bandwidth, str):
                if bandwidth != "auto":
                    raise DataError(f"unknown bandwidth mode {bandwidth!r}")
                trimmed = data if trim is None else trim_projects(data, trim)
                bw, _ = select_bandwidth(trimmed, grid, n_steps=n_steps, min_projects=min_projects,
                                         days_per_month=config.days_per_month)
            res = estimate_effects(data, None, trim, bw, grid, alpha=alpha,
                                   days_per_month=config.days_per_month)
        except EstimationError as exc:
            errors.append((r, str(exc)))
            continue
        taus[r] = res.tau
        ses[r] = res.se
        ps[r] = [e.p_one_sided for e in res.effects]
        ns[r] = res.n_projects
    failures = len(errors)
    if failures > max_failure_rate * replications:
        raise EstimationError(
            f"{failures} of {replications} replications failed; first errors: {errors[:3]}"
        )
    ok = ~np.isnan(taus[:, 0])
    z = _z(alpha)
    covered = (np.abs(taus[ok] - truth[None, :]) <= z * ses[ok])
    return McSummary(
        replications=replications,
        failures=failures,
        truth=truth,
        mean_tau=taus[ok].mean(axis=0),
        sd_tau=taus[ok].std(axis=0, ddof=1),
        mean_se=ses[ok].mean(axis=0),
        coverage=covered.mean(axis=0),
        rejection_rate=(ps[ok] < test_level).mean(axis=0),
        alpha=alpha,
        test_level=test_level,
        mean_n_projects=float(np.nanmean(ns)),
        tau_hat=taus,
        se_hat=ses,
        p_right=ps,
    )


def _z(alpha):
    return float(norm.ppf(1 - alpha / 2))
