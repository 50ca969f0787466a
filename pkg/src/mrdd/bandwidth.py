"""Per-quadrant rectangular bandwidths chosen by leave-one-project-out
cross-validation of a quadrant-local hazard model, scored by Brier score."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import (
    DAYS_PER_MONTH,
    QUADRANT_SIGNS,
    CutoffSpec,
    PeriodGrid,
    ProjectTable,
    TrimSpec,
    expand_person_period,
)
from .errors import DataError, EstimationError
from .glm import batched_logit, expit, fit_logit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
D1_SCALE = 1e6
MIN_PROJECTS = 15


@dataclass(frozen=True)
class Rectangle:
    s1_lo: float
    s1_hi: float
    s2_lo: float
    s2_hi: float


@dataclass(frozen=True)
class BandwidthSpec:
    """One inclusion rectangle per quadrant, pinned at the cutoffs.

    Quadrants are indexed 1: (above, above), 2: (above, below),
    3: (below, below), 4: (below, above). Membership also requires the
    project to lie in that quadrant, so the cutoff-side edges of control
    rectangles behave as open.
    """

    cutoffs: CutoffSpec
    rectangles: Mapping[int, Rectangle]

    def __post_init__(self):
        if sorted(self.rectangles) != [1, 2, 3, 4]:
            raise DataError("bandwidth needs a rectangle for each of quadrants 1-4")
        c1, c2 = self.cutoffs.c1, self.cutoffs.c2
        for k, r in self.rectangles.items():
            a1, a2 = QUADRANT_SIGNS[k]
            pinned1 = r.s1_lo if a1 else r.s1_hi
            pinned2 = r.s2_lo if a2 else r.s2_hi
            if pinned1 != c1 or pinned2 != c2:
                raise DataError(f"quadrant {k}: rectangle {r} is not pinned at the cutoffs")
            if not (r.s1_lo <= r.s1_hi and r.s2_lo <= r.s2_hi):
                raise DataError(f"quadrant {k}: empty rectangle {r}")

    @classmethod
    def from_external(cls, cutoffs: CutoffSpec, limits: Mapping[int, tuple[float, float]]):
        """Build from each quadrant's external (s1, s2) limits."""
        rects = {}
        for k in (1, 2, 3, 4):
            a1, a2 = QUADRANT_SIGNS[k]
            l1, l2 = limits[k]
            s1 = (cutoffs.c1, l1) if a1 else (l1, cutoffs.c1)
            s2 = (cutoffs.c2, l2) if a2 else (l2, cutoffs.c2)
            rects[k] = Rectangle(s1[0], s1[1], s2[0], s2[1])
        return cls(cutoffs, rects)

    @classmethod
    def from_trim(cls, trim: TrimSpec, cutoffs: CutoffSpec):
        """The widest bandwidth: every quadrant extends to the trim box."""
        lim = {}
        for k in (1, 2, 3, 4):
            a1, a2 = QUADRANT_SIGNS[k]
            lim[k] = (trim.s1_max if a1 else trim.s1_min, trim.s2_max if a2 else trim.s2_min)
        return cls.from_external(cutoffs, lim)

    def external_limits(self) -> dict[int, tuple[float, float]]:
        out = {}
        for k, r in self.rectangles.items():
            a1, a2 = QUADRANT_SIGNS[k]
            out[k] = (r.s1_hi if a1 else r.s1_lo, r.s2_hi if a2 else r.s2_lo)
        return out

    def contains(self, projects: ProjectTable):
        q = projects.quadrant
        keep = np.zeros(len(projects), dtype=bool)
        for k, r in self.rectangles.items():
            keep |= (
                (q == k)
                & (projects.s1 >= r.s1_lo) & (projects.s1 <= r.s1_hi)
                & (projects.s2 >= r.s2_lo) & (projects.s2 <= r.s2_hi)
            )
        return keep

    def within(self, trim: TrimSpec) -> bool:
        return all(
            trim.s1_min <= r.s1_lo and r.s1_hi <= trim.s1_max
            and trim.s2_min <= r.s2_lo and r.s2_hi <= trim.s2_max
            for r in self.rectangles.values()
        )

    def scaled(self, scale: float, trim: TrimSpec | None = None) -> "BandwidthSpec":
        """Move every external limit by ``scale`` times its distance from
        the cutoff (``scale=0.05`` widens by 5%), optionally clipped to the
        trim box. Cutoff-side edges never move."""
        if scale == 0:
            return self
        c1, c2 = self.cutoffs.c1, self.cutoffs.c2
        lim = {}
        for k, (l1, l2) in self.external_limits().items():
            n1 = c1 + (1 + scale) * (l1 - c1)
            n2 = c2 + (1 + scale) * (l2 - c2)
            if trim is not None:
                n1 = min(max(n1, trim.s1_min), trim.s1_max)
                n2 = min(max(n2, trim.s2_min), trim.s2_max)
            lim[k] = (n1, n2)
        return BandwidthSpec.from_external(self.cutoffs, lim)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "cutoffs": {"c1": self.cutoffs.c1, "c2": self.cutoffs.c2},
            "quadrants": {
                str(k): {"a1": QUADRANT_SIGNS[k][0], "a2": QUADRANT_SIGNS[k][1],
                         "s1_lo": r.s1_lo, "s1_hi": r.s1_hi, "s2_lo": r.s2_lo, "s2_hi": r.s2_hi}
                for k, r in sorted(self.rectangles.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BandwidthSpec":
        try:
            cut = CutoffSpec(float(d["cutoffs"]["c1"]), float(d["cutoffs"]["c2"]))
            rects = {
                int(k): Rectangle(float(v["s1_lo"]), float(v["s1_hi"]), float(v["s2_lo"]), float(v["s2_hi"]))
                for k, v in d["quadrants"].items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed bandwidth definition: {exc!r}") from None
        return cls(cut, rects)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BandwidthSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read bandwidth file {path}: {exc}") from None


@dataclass
class CandidateScore:
    s1_limit: float
    s2_limit: float
    n_projects: int
    brier: float = math.nan
    status: str = "ok"

    @property
    def evaluated(self) -> bool:
        return self.status == "ok"


@dataclass
class CvReport:
    candidates: dict[int, list[CandidateScore]] = field(default_factory=dict)
    selected: dict[int, CandidateScore] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quadrant", "s1_hi_or_lo", "s2_hi_or_lo", "n", "brier"])
            for k in sorted(self.candidates):
                for c in self.candidates[k]:
                    w.writerow([k, repr(c.s1_limit), repr(c.s2_limit), c.n_projects,
                                repr(c.brier) if c.evaluated else ""])


# --- candidate grids ---------------------------------------------------------

def default_candidate_grid(projects: ProjectTable, quadrant: int, n_steps: int = 20):
    """Crossed quantile grid of external limits for one quadrant.

    For each score the candidate distances from the cutoff are the empirical
    quantiles ``1/n_steps, ..., 1`` of ``|D|`` over the quadrant's projects
    (inverted-CDF quantiles, so every candidate is an observed distance).
    Returns sorted, deduplicated ``(s1_limit, s2_limit)`` pairs.
    """
    if n_steps < 1:
        raise DataError("n_steps must be at least 1")
    mask = projects.quadrant == quadrant
    if not mask.any():
        raise DataError(f"quadrant {quadrant} has no projects")
    a1, a2 = QUADRANT_SIGNS[quadrant]
    q = np.arange(1, n_steps + 1) / n_steps
    c = projects.cutoffs
    r1 = np.quantile(np.abs(projects.d1[mask]), q, method="inverted_cdf")
    r2 = np.quantile(np.abs(projects.d2[mask]), q, method="inverted_cdf")
    l1 = c.c1 + r1 if a1 else c.c1 - r1
    l2 = c.c2 + r2 if a2 else c.c2 - r2
    pairs = {(float(x), float(y)) for x in l1 for y in l2}
    return sorted(pairs, key=lambda p: (abs(p[0] - c.c1), abs(p[1] - c.c2)))


# --- leave-one-group-out machinery ------------------------------------------

def _holdout_masks(groups):
    """(G, n) 0/1 matrix: row g zeroes the rows belonging to group g."""
    _, inv = np.unique(groups, return_inverse=True)
    G = inv.max() + 1
    M = np.ones((G, len(groups)))
    M[inv, np.arange(len(groups))] = 0.0
    return M, inv


def loo_predictions(A, y, groups, family: str = "logit", method: str = "batched"):
    """Leave-one-group-out predictions for every row.

    Row ``i`` is predicted from a model fitted without any row of its group.
    ``method="refit"`` refits group by group with :func:`fit_logit` and is
    kept as an independent check of the batched path. Raises
    :class:`EstimationError` if some held-out fit is unidentified.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    M, inv = _holdout_masks(groups)
    # a held-out fit is unidentified if it leaves some column with no support
    support = M @ (A != 0)
    if (support == 0).any():
        g, j = np.argwhere(support == 0)[0]
        raise EstimationError(f"holding out group {g} leaves column {j} without support")
    if family == "gaussian":
        AA = (A[:, :, None] * A[:, None, :]).reshape(len(A), -1)
        p = A.shape[1]
        XtX = (M @ AA).reshape(-1, p, p)
        Xty = (M * y) @ A
        try:
            beta = np.linalg.solve(XtX, Xty[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise EstimationError("singular held-out least-squares fit") from None
        return np.einsum("ni,ni->n", A, beta[inv])
    if family != "logit":
        raise ValueError(f"unknown family {family!r}")
    if method == "refit":
        out = np.empty(len(y))
        for g in range(M.shape[0]):
            keep = M[g] == 1
            fit = fit_logit(A[keep], y[keep])
            out[~keep] = expit(A[~keep] @ fit.beta)
        return out
    beta, ok = batched_logit(A, y, M)
    if not ok.all():
        logger.debug("%d of %d held-out fits did not converge", int((~ok).sum()), len(ok))
    return expit(np.einsum("ni,ni->n", A, beta[inv]))


def hazard_features(projects: ProjectTable, grid: PeriodGrid, days_per_month: float = DAYS_PER_MONTH,
                    d1_scale: float = D1_SCALE):
    """Quadrant-local hazard design: period dummies plus linear distances.

    Period columns with no rows are dropped. Returns ``(A, y, groups)``.
    """
    pp = expand_person_period(projects, grid, days_per_month)
    T = grid.n_periods
    P = (pp.period[:, None] == np.arange(1, T + 1)[None, :]).astype(float)
    P = P[:, P.any(axis=0)]
    A = np.column_stack([P, pp.d1 / d1_scale, pp.d2])
    return A, pp.event.astype(float), pp.project_index


def cv_quadrant(projects: ProjectTable, quadrant: int, candidates: Sequence[tuple[float, float]],
                score_fn: Callable[[ProjectTable], float],
                min_projects: int = MIN_PROJECTS) -> tuple[list[CandidateScore], CandidateScore]:
    """Score each candidate rectangle of one quadrant and pick the best.

    ``score_fn`` maps the projects inside a rectangle to a cross-validated
    risk. Ties go to the candidate with more projects, then the wider one.
    """
    c = projects.cutoffs
    inq = projects.quadrant == quadrant
    ad1 = np.abs(projects.d1)
    ad2 = np.abs(projects.d2)
    scores = []
    for l1, l2 in candidates:
        mask = inq & (ad1 <= abs(l1 - c.c1)) & (ad2 <= abs(l2 - c.c2))
        n = int(mask.sum())
        cs = CandidateScore(float(l1), float(l2), n)
        if n < min_projects:
            cs.status = "below size floor"
            logger.debug("quadrant %d candidate (%g, %g): %d projects < %d, skipped",
                         quadrant, l1, l2, n, min_projects)
        else:
            try:
                cs.brier = float(score_fn(projects.subset(mask)))
            except EstimationError as exc:
                cs.status = f"inestimable: {exc}"
                logger.debug("quadrant %d candidate (%g, %g) skipped: %s", quadrant, l1, l2, exc)
            else:
                if not math.isfinite(cs.brier):
                    cs.status = "non-finite score"
        scores.append(cs)
    ok = [s for s in scores if s.evaluated]
    if not ok:
        raise EstimationError(
            f"quadrant {quadrant}: no candidate rectangle could be evaluated "
            f"({len(scores)} candidates, size floor {min_projects})"
        )
    best = min(s.brier for s in ok)
    tied = [s for s in ok if s.brier <= best + 1e-12 * abs(best)]
    chosen = max(tied, key=lambda s: (s.n_projects, abs(s.s1_limit - c.c1), abs(s.s2_limit - c.c2)))
    return scores, chosen


def hazard_brier(projects: ProjectTable, grid: PeriodGrid = PeriodGrid(),
                 days_per_month: float = DAYS_PER_MONTH, method: str = "batched") -> float:
    """Leave-one-project-out Brier score of the quadrant-local hazard model."""
    A, y, groups = hazard_features(projects, grid, days_per_month)
    fit_logit(A, y)  # the full-sample model must exist
    pred = loo_predictions(A, y, groups, "logit", method)
    return float(np.mean((pred - y) ** 2))


def select_bandwidth(projects: ProjectTable, grid: PeriodGrid = PeriodGrid(),
                     candidate_grid: Mapping[int, Sequence[tuple[float, float]]] | None = None,
                     n_steps: int = 20, min_projects: int = MIN_PROJECTS,
                     days_per_month: float = DAYS_PER_MONTH) -> tuple[BandwidthSpec, CvReport]:
    """Choose each quadrant's rectangle by minimising leave-one-project-out
    Brier score of the quadrant-local logit hazard model.

    Parameters
    ----------
    projects : ProjectTable
        Trimmed projects.
    candidate_grid : mapping, optional
        Quadrant -> list of ``(s1_limit, s2_limit)`` external limits. Missing
        quadrants use :func:`default_candidate_grid` with ``n_steps``.
    """
    report = CvReport()
    limits = {}
    for k in (1, 2, 3, 4):
        if candidate_grid is not None and k in candidate_grid:
            cands = list(candidate_grid[k])
        else:
            cands = default_candidate_grid(projects, k, n_steps)
        scores, chosen = cv_quadrant(
            projects, k, cands,
            lambda sub: hazard_brier(sub, grid, days_per_month),
            min_projects=min_projects,
        )
        report.candidates[k] = scores
        report.selected[k] = chosen
        limits[k] = (chosen.s1_limit, chosen.s2_limit)
        logger.info("quadrant %d: selected limits (%g, %g), %d projects, Brier %.5f",
                    k, chosen.s1_limit, chosen.s2_limit, chosen.n_projects, chosen.brier)
    return BandwidthSpec.from_external(projects.cutoffs, limits), report
