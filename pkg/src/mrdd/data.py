"""Domain types, CSV ingestion, quadrant classification, trimming and
person-period expansion.

Projects and person-period records are held column-wise in numpy arrays
(:class:`ProjectTable`, :class:`PersonPeriod`) because the simulation
harness pushes millions of rows through these paths. Row-level views
(:class:`Project`, :class:`PersonPeriodRow`) are available for inspection
and for building small tables by hand.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError, SharpDesignError

logger = logging.getLogger(__name__)

DAYS_PER_MONTH = 30.4375
COVARIATES = ("expected_duration_months", "auction", "lowest_bid")
CORE_COLUMNS = ("id", "s1", "s2", "monitored", "duration_days", "censored")
BINARY_COVARIATES = frozenset({"auction", "lowest_bid"})

# canonical quadrant index k for (a1, a2)
QUADRANTS = {(1, 1): 1, (1, 0): 2, (0, 0): 3, (0, 1): 4}
QUADRANT_SIGNS = {k: a for a, k in QUADRANTS.items()}


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoffs on financial size (currency units) and co-financing share."""

    c1: float = 500_000.0
    c2: float = 0.5

    def __post_init__(self):
        if not self.c1 > 0:
            raise DataError(f"c1 must be positive, got {self.c1}")
        if not 0 < self.c2 < 1:
            raise DataError(f"c2 must lie in (0, 1), got {self.c2}")


@dataclass(frozen=True)
class TrimSpec:
    s1_min: float = 150_000.0
    s1_max: float = 1_000_000.0
    s2_min: float = 0.05
    s2_max: float = 0.95

    def check(self, cutoffs: CutoffSpec) -> None:
        if not self.s1_min < cutoffs.c1 < self.s1_max:
            raise DataError(
                f"trim limits [{self.s1_min}, {self.s1_max}] must straddle c1={cutoffs.c1}"
            )
        if not self.s2_min < cutoffs.c2 < self.s2_max:
            raise DataError(
                f"trim limits [{self.s2_min}, {self.s2_max}] must straddle c2={cutoffs.c2}"
            )


@dataclass(frozen=True)
class PeriodGrid:
    """Month cut points splitting duration into discrete periods.

    The default ``(6, 12)`` gives the half-open intervals [0, 6), [6, 12)
    and [12, inf) months.
    """

    boundaries: tuple[float, ...] = (6.0, 12.0)

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if not b:
            raise DataError("period grid needs at least one boundary")
        if b[0] <= 0 or any(x >= y for x, y in zip(b, b[1:])):
            raise DataError(f"period boundaries must be positive and strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_periods(self) -> int:
        return len(self.boundaries) + 1

    def final_period(self, months):
        """Index (1-based) of the period containing ``months``."""
        return 1 + np.searchsorted(np.asarray(self.boundaries), months, side="right")

    def labels(self) -> list[str]:
        b = [f"{x:g}" for x in self.boundaries]
        out = [f"<{b[0]} months"]
        out += [f"{lo}-{hi} months" for lo, hi in zip(b, b[1:])]
        out.append(f"{b[-1]}+ months")
        return out


@dataclass(frozen=True)
class QuadrantLabel:
    a1: int
    a2: int

    @property
    def k(self) -> int:
        return QUADRANTS[(self.a1, self.a2)]

    @property
    def treated(self) -> bool:
        return self.k == 1

    @classmethod
    def from_k(cls, k: int) -> "QuadrantLabel":
        a1, a2 = QUADRANT_SIGNS[k]
        return cls(a1, a2)


@dataclass(frozen=True)
class Project:
    id: str
    s1: float
    s2: float
    monitored: int
    duration_days: int
    censored: int
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.s1 > 0:
            raise DataError(f"project {self.id}: s1 must be positive, got {self.s1}")
        if not 0 <= self.s2 <= 1:
            raise DataError(f"project {self.id}: s2 must lie in [0, 1], got {self.s2}")
        if self.duration_days < 1:
            raise DataError(f"project {self.id}: duration_days must be >= 1")
        if self.monitored not in (0, 1) or self.censored not in (0, 1):
            raise DataError(f"project {self.id}: monitored/censored must be 0 or 1")


@dataclass(frozen=True)
class PersonPeriodRow:
    project_id: str
    period: int
    event: int
    d1: float
    d2: float
    quadrant: QuadrantLabel
    monitored: int


def classify_quadrant(p: Project, cutoffs: CutoffSpec) -> QuadrantLabel:
    """Place a project relative to both cutoffs; comparisons are inclusive."""
    return QuadrantLabel(int(p.s1 >= cutoffs.c1), int(p.s2 >= cutoffs.c2))


def quadrant_index(a1, a2):
    """Vectorised canonical quadrant index k from the above-cutoff flags."""
    a1 = np.asarray(a1, dtype=bool)
    a2 = np.asarray(a2, dtype=bool)
    return np.where(a1 & a2, 1, np.where(a1, 2, np.where(a2, 4, 3))).astype(np.int8)


class ProjectTable:
    """Column-oriented collection of projects under one set of cutoffs.

    Validates every :class:`Project` invariant on construction, including the
    sharp-design rule ``monitored == (s1 >= c1) & (s2 >= c2)``.
    """

    def __init__(self, ids, s1, s2, monitored, duration_days, censored,
                 covariates=None, cutoffs=CutoffSpec(), validate=True):
        self.ids = np.asarray(ids, dtype=object)
        self.s1 = np.asarray(s1, dtype=float)
        self.s2 = np.asarray(s2, dtype=float)
        self.monitored = np.asarray(monitored, dtype=np.int8)
        self.duration_days = np.asarray(duration_days, dtype=np.int64)
        self.censored = np.asarray(censored, dtype=np.int8)
        self.covariates = {k: np.asarray(v, dtype=float) for k, v in (covariates or {}).items()}
        self.cutoffs = cutoffs
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.ids)
        for name in ("s1", "s2", "monitored", "duration_days", "censored"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        for name, col in self.covariates.items():
            if len(col) != n:
                raise DataError(f"covariate {name} has length {len(col)}, expected {n}")
        if len(set(self.ids.tolist())) != n:
            seen, dup = set(), []
            for i in self.ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise DataError(f"duplicate project ids: {sorted(set(dup))[:20]}")
        checks = [
            (~(self.s1 > 0), "s1 must be positive"),
            (~((self.s2 >= 0) & (self.s2 <= 1)), "s2 must lie in [0, 1]"),
            (self.duration_days < 1, "duration_days must be >= 1"),
            (~np.isin(self.monitored, (0, 1)), "monitored must be 0 or 1"),
            (~np.isin(self.censored, (0, 1)), "censored must be 0 or 1"),
        ]
        for bad, msg in checks:
            if bad.any():
                raise DataError(f"{msg}; offending ids: {self.ids[bad][:20].tolist()}")
        bad = self.monitored != (self.a1 & self.a2)
        if bad.any():
            raise SharpDesignError(self.ids[bad].tolist())

    def __len__(self):
        return len(self.ids)

    def __iter__(self) -> Iterator[Project]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> Project:
        return Project(
            id=str(self.ids[i]), s1=float(self.s1[i]), s2=float(self.s2[i]),
            monitored=int(self.monitored[i]), duration_days=int(self.duration_days[i]),
            censored=int(self.censored[i]),
            covariates={k: float(v[i]) for k, v in self.covariates.items()},
        )

    @classmethod
    def from_projects(cls, projects: Iterable[Project], cutoffs=CutoffSpec(), validate=True):
        projects = list(projects)
        names = sorted({k for p in projects for k in p.covariates})
        return cls(
            ids=[p.id for p in projects],
            s1=[p.s1 for p in projects],
            s2=[p.s2 for p in projects],
            monitored=[p.monitored for p in projects],
            duration_days=[p.duration_days for p in projects],
            censored=[p.censored for p in projects],
            covariates={k: [p.covariates.get(k, math.nan) for p in projects] for k in names},
            cutoffs=cutoffs,
            validate=validate,
        )

    def subset(self, mask) -> "ProjectTable":
        """Rows selected by a boolean mask or an index array (no revalidation)."""
        return ProjectTable(
            self.ids[mask], self.s1[mask], self.s2[mask], self.monitored[mask],
            self.duration_days[mask], self.censored[mask],
            {k: v[mask] for k, v in self.covariates.items()},
            cutoffs=self.cutoffs, validate=False,
        )

    @property
    def a1(self):
        return (self.s1 >= self.cutoffs.c1).astype(np.int8)

    @property
    def a2(self):
        return (self.s2 >= self.cutoffs.c2).astype(np.int8)

    @property
    def quadrant(self):
        return quadrant_index(self.a1, self.a2)

    @property
    def d1(self):
        return self.s1 - self.cutoffs.c1

    @property
    def d2(self):
        return self.s2 - self.cutoffs.c2

    def quadrant_counts(self) -> dict[int, int]:
        q = self.quadrant
        return {k: int((q == k).sum()) for k in (1, 2, 3, 4)}


@dataclass
class PersonPeriod:
    """Person-period expansion: one row per project per period at risk."""

    project_index: np.ndarray
    project_id: np.ndarray
    period: np.ndarray
    event: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    monitored: np.ndarray
    n_periods: int

    def __len__(self):
        return len(self.period)

    @property
    def quadrant(self):
        return quadrant_index(self.a1, self.a2)

    def rows(self) -> Iterator[PersonPeriodRow]:
        for i in range(len(self)):
            yield PersonPeriodRow(
                project_id=str(self.project_id[i]), period=int(self.period[i]),
                event=int(self.event[i]), d1=float(self.d1[i]), d2=float(self.d2[i]),
                quadrant=QuadrantLabel(int(self.a1[i]), int(self.a2[i])),
                monitored=int(self.monitored[i]),
            )

    def to_csv(self, path) -> None:
        q = self.quadrant
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["project_id", "period", "event", "d1", "d2", "a1", "a2", "quadrant", "monitored"])
            for i in range(len(self)):
                w.writerow([
                    self.project_id[i], int(self.period[i]), int(self.event[i]),
                    repr(float(self.d1[i])), repr(float(self.d2[i])),
                    int(self.a1[i]), int(self.a2[i]), int(q[i]), int(self.monitored[i]),
                ])


def discard_counts(projects: ProjectTable, spec: TrimSpec) -> dict[str, int]:
    """Number of projects violating each trimming rule (rules may overlap)."""
    return {
        "s1_below_min": int((projects.s1 < spec.s1_min).sum()),
        "s1_above_max": int((projects.s1 > spec.s1_max).sum()),
        "s2_below_min": int((projects.s2 < spec.s2_min).sum()),
        "s2_above_max": int((projects.s2 > spec.s2_max).sum()),
    }


def trim_mask(projects: ProjectTable, spec: TrimSpec):
    return (
        (projects.s1 >= spec.s1_min) & (projects.s1 <= spec.s1_max)
        & (projects.s2 >= spec.s2_min) & (projects.s2 <= spec.s2_max)
    )


def trim(projects: ProjectTable, spec: TrimSpec = TrimSpec()) -> ProjectTable:
    """Keep projects whose scores both lie inside the closed trimming box."""
    spec.check(projects.cutoffs)
    keep = trim_mask(projects, spec)
    out = projects.subset(keep)
    logger.info("trim: %d -> %d projects; discards by rule %s",
                len(projects), len(out), discard_counts(projects, spec))
    if len(out) == 0:
        warnings.warn("trimming removed every project", RuntimeWarning, stacklevel=2)
    return out


def expand_person_period(projects: ProjectTable, grid: PeriodGrid = PeriodGrid(),
                         days_per_month: float = DAYS_PER_MONTH) -> PersonPeriod:
    """Replicate each project once per period it was at risk.

    A project whose duration falls in period ``tau`` contributes rows
    ``1..tau``; the last row carries the completion event unless the project
    is censored.
    """
    months = projects.duration_days / days_per_month
    last = grid.final_period(months).astype(np.int64)
    idx = np.repeat(np.arange(len(projects)), last)
    starts = np.cumsum(last) - last
    period = np.arange(len(idx)) - np.repeat(starts, last) + 1
    is_last = period == last[idx]
    event = (is_last & (projects.censored[idx] == 0)).astype(np.int8)
    a1, a2 = projects.a1, projects.a2
    return PersonPeriod(
        project_index=idx,
        project_id=projects.ids[idx],
        period=period.astype(np.int64),
        event=event,
        d1=projects.d1[idx],
        d2=projects.d2[idx],
        a1=a1[idx],
        a2=a2[idx],
        monitored=projects.monitored[idx],
        n_periods=grid.n_periods,
    )


# --- CSV ingestion -----------------------------------------------------------

_INT_FIELDS = {"monitored", "duration_days", "censored"}


def _parse_int(text):
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def load_projects(path, schema: Mapping[str, str] | None = None,
                  cutoffs: CutoffSpec = CutoffSpec(),
                  covariates: Sequence[str] = COVARIATES) -> ProjectTable:
    """Read a projects CSV into a validated :class:`ProjectTable`.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row.
    schema : mapping, optional
        Canonical column name -> column name used in the file. Columns not
        mentioned keep their canonical names.
    cutoffs : CutoffSpec
        Cutoffs under which the monitored flag is checked.
    covariates : sequence of str
        Covariate columns that must be present.

    Raises
    ------
    SchemaError
        A required column is missing.
    DataError
        A cell cannot be parsed (the message carries the line number) or a
        row violates a project invariant.
    SharpDesignError
        The monitored flag disagrees with the cutoff rule.
    """
    schema = dict(schema or {})
    path = Path(path)
    wanted = list(CORE_COLUMNS) + list(covariates)
    cols = {name: [] for name in wanted}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in wanted:
            if schema.get(name, name) not in header:
                raise SchemaError(schema.get(name, name), path)
        for line, rec in enumerate(reader, start=2):
            for name in wanted:
                raw = (rec[schema.get(name, name)] or "").strip()
                try:
                    if name == "id":
                        if not raw:
                            raise ValueError("empty id")
                        val = raw
                    elif name in _INT_FIELDS:
                        val = _parse_int(raw)
                    else:
                        val = float(raw)
                        if not math.isfinite(val):
                            raise ValueError("non-finite value")
                except ValueError as exc:
                    raise DataError(
                        f"{path}: line {line}, column {schema.get(name, name)!r}: "
                        f"cannot parse {raw!r} ({exc})"
                    ) from None
                cols[name].append(val)
    table = ProjectTable(
        cols["id"], cols["s1"], cols["s2"], cols["monitored"],
        cols["duration_days"], cols["censored"],
        {k: cols[k] for k in covariates}, cutoffs=cutoffs,
    )
    logger.info("loaded %d projects from %s", len(table), path)
    return table


def write_projects(projects: ProjectTable, path) -> None:
    """Write projects in the ingestion CSV schema (floats round-trip exactly)."""
    names = list(projects.covariates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CORE_COLUMNS) + names)
        for i in range(len(projects)):
            row = [
                projects.ids[i], repr(float(projects.s1[i])), repr(float(projects.s2[i])),
                int(projects.monitored[i]), int(projects.duration_days[i]), int(projects.censored[i]),
            ]
            for k in names:
                v = float(projects.covariates[k][i])
                row.append(int(v) if k in BINARY_COVARIATES else repr(v))
            w.writerow(row)
