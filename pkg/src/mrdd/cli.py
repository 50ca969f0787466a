"""Command-line front end: ``mrdd estimate | select-bandwidth | diagnose |
sensitivity | simulate``.

Settings come from built-in defaults, then an optional JSON config file,
then command-line flags (flags win). Exit codes: 0 success, 2 input or
configuration error, 3 estimation failure, 4 invalid flag combination.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import norm

from . import __version__
from .bandwidth import MIN_PROJECTS, BandwidthSpec, select_bandwidth
from .data import COVARIATES, DAYS_PER_MONTH, CutoffSpec, PeriodGrid, TrimSpec, load_projects, trim, write_projects
from .diagnostics import CONTROL_SETS, center_scores, density_tests, pseudo_effect, smooth_curves
from .errors import DataError, EstimationError
from .estimator import estimate_effects, sensitivity_sweep
from .simulate import DgpConfig, generate, run_monte_carlo

logger = logging.getLogger("mrdd")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_DATA, EXIT_ESTIMATION, EXIT_USAGE = 0, 2, 3, 4
COMMANDS = ("estimate", "select-bandwidth", "diagnose", "sensitivity", "simulate")


class UsageError(Exception):
    """Flags that cannot be combined."""


@dataclass
class RunConfig:
    input: str | None = None
    columns: dict[str, str] = field(default_factory=dict)
    cutoffs: dict[str, float] = field(default_factory=lambda: {"c1": 500_000.0, "c2": 0.5})
    trim: dict[str, float] = field(default_factory=lambda: dataclasses.asdict(TrimSpec()))
    bandwidth: str | None = None
    periods: list[float] = field(default_factory=lambda: [6.0, 12.0])
    days_per_month: float = DAYS_PER_MONTH
    alpha: float = 0.10
    df_correction: bool = False
    bootstrap: int = 0
    seed: int | None = None
    out: str = "mrdd_out"
    # bandwidth selection
    n_steps: int = 20
    min_projects: int = MIN_PROJECTS
    # diagnostics
    covariates: list[str] = field(default_factory=lambda: list(COVARIATES))
    intercept: bool = True
    standardize: str = "cutoff"
    curve_bandwidth: float | None = None
    density_bandwidth: float | str = "auto"
    horizon_months: float | None = None
    # sensitivity
    range_pct: int = 20
    step_pct: int = 1
    # simulation
    dgp: dict[str, Any] = field(default_factory=dict)
    replications: int | None = None
    mc_bandwidth: str = "fixed"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
        return cls(**d)

    @property
    def cutoff_spec(self) -> CutoffSpec:
        try:
            return CutoffSpec(float(self.cutoffs["c1"]), float(self.cutoffs["c2"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed cutoffs {self.cutoffs!r}: {exc}") from None

    @property
    def trim_spec(self) -> TrimSpec:
        try:
            spec = TrimSpec(**{k: float(v) for k, v in self.trim.items()})
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed trim {self.trim!r}: {exc}") from None
        spec.check(self.cutoff_spec)
        return spec

    @property
    def grid(self) -> PeriodGrid:
        return PeriodGrid(tuple(float(x) for x in self.periods))

    def validate(self) -> None:
        if not 0 < self.alpha < 0.5:
            raise DataError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.bootstrap < 0:
            raise DataError("bootstrap must be >= 0")
        if self.bootstrap == 1:
            raise DataError("bootstrap needs at least 2 draws")


def _parse_periods(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"periods must be comma-separated months, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--input", metavar="PATH", help="projects CSV")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--alpha", type=float, help="1 - confidence level (default 0.10)")
    common.add_argument("--bandwidth", metavar="PATH|auto", help="bandwidth.json or 'auto'")
    common.add_argument("--periods", type=_parse_periods, metavar='"6,12"', help="period boundaries in months")
    common.add_argument("--bootstrap", type=int, metavar="N", help="cluster-bootstrap draws for SEs")
    common.add_argument("--replications", type=int, metavar="N", help="Monte Carlo replications (simulate)")
    common.add_argument("--df-correction", action="store_true", default=None,
                        help="apply the G/(G-1) small-sample factor")
    p = argparse.ArgumentParser(prog="mrdd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mrdd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "estimate": "fit the hazard model and report per-period effects",
        "select-bandwidth": "cross-validate per-quadrant bandwidth rectangles",
        "diagnose": "placebo covariates, density tests and smoothed curves",
        "sensitivity": "re-estimate over scaled bandwidths",
        "simulate": "generate a synthetic dataset or run a Monte Carlo study",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


# flags that make no sense for a command
_FORBIDDEN = {
    "estimate": ("replications",),
    "select-bandwidth": ("replications", "bootstrap", "bandwidth"),
    "diagnose": ("replications", "bootstrap"),
    "sensitivity": ("replications",),
    "simulate": ("input", "bootstrap", "bandwidth", "df_correction", "periods"),
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    bad = [f"--{k.replace('_', '-')}" for k in _FORBIDDEN[args.command] if getattr(args, k) is not None]
    if bad:
        raise UsageError(f"{args.command} does not accept {', '.join(bad)}")
    base: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise DataError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(base)
    for key in ("input", "out", "seed", "alpha", "bandwidth", "periods", "bootstrap", "replications",
                "df_correction"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    return cfg


# --- output helpers ------------------------------------------------------------

def _clean(obj):
    """Make floats JSON-safe (NaN and inf become null)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _load(cfg: RunConfig, covariates=()):
    if not cfg.input:
        raise DataError("no input file given (--input or 'input' in the config)")
    try:
        return load_projects(cfg.input, cfg.columns, cfg.cutoff_spec, covariates)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.input}: {exc}") from None


def _bandwidth(cfg: RunConfig, projects_trimmed, required: bool = False):
    if cfg.bandwidth is None:
        if required:
            raise DataError("a bandwidth is required (--bandwidth PATH or 'auto')")
        return None
    if cfg.bandwidth == "auto":
        spec, _ = select_bandwidth(projects_trimmed, cfg.grid, n_steps=cfg.n_steps,
                                   min_projects=cfg.min_projects, days_per_month=cfg.days_per_month)
        return spec
    return BandwidthSpec.load(cfg.bandwidth)


def _f(x, w=9, d=3):
    return f"{x:{w}.{d}f}" if x is not None and math.isfinite(x) else f"{'n/a':>{w}}"


def _ci(est, se, alpha):
    z = norm.ppf(1 - alpha / 2)
    return est - z * se, est + z * se


# --- commands ------------------------------------------------------------------

def cmd_estimate(cfg: RunConfig) -> int:
    projects = _load(cfg)
    out = _out_dir(cfg)
    bw = _bandwidth(cfg, trim(projects, cfg.trim_spec))
    res = estimate_effects(projects, None, cfg.trim_spec, bw, cfg.grid, alpha=cfg.alpha,
                           df_correction=cfg.df_correction, bootstrap=cfg.bootstrap, seed=cfg.seed or 0,
                           days_per_month=cfg.days_per_month)
    write_json(out / "coefficients.json", res.coefficients_dict())
    write_json(out / "effects.json", res.effects_dict())
    res.person_period.to_csv(out / "person_period.csv")

    T = cfg.grid.n_periods
    labels = cfg.grid.labels()
    level = round(100 * (1 - cfg.alpha))
    names = {"period[{t}]": "baseline", "monitored:period[{t}]": "monitored",
             "above1:period[{t}]": "above c1", "above2:period[{t}]": "above c2"}
    print("Estimated coefficients")
    print(f"{'Coeff.':<11}{'t':<15}{'Estimate':>9}{'Std.Err.':>10}{f'{level}% C.I.':>20}")
    se = res.fit.se
    for pattern, label in names.items():
        for t in range(1, T + 1):
            j = res.fit.column_names.index(pattern.format(t=t))
            lo, hi = _ci(res.fit.beta[j], se[j], cfg.alpha)
            print(f"{label if t == 1 else '':<11}{labels[t - 1]:<15}{_f(res.fit.beta[j])}"
                  f"{_f(se[j], 10)}{_f(lo, 10)}{_f(hi, 10)}")
    print()
    print("Estimated causal effects at the cutoffs")
    print(f"{'Time period':<15}{'tau':>9}{'Std.Err.':>10}{'p-value':>9}{f'{level}% C.I.':>20}")
    for e, lab in zip(res.effects, labels):
        print(f"{lab:<15}{_f(e.tau)}{_f(e.se, 10)}{_f(e.p_one_sided)}{_f(e.ci_low, 10)}{_f(e.ci_high, 10)}")
    if res.extreme_rows:
        logger.warning("%d person-periods have fitted hazards near 0 or 1 (quasi-separation); the "
                       "affected coefficients and their SEs are unreliable", res.extreme_rows)
    print(f"\nprojects: {res.n_projects}  person-periods: {res.n_rows}  "
          f"inference: {res.effects_dict()['inference']}")
    return EXIT_OK


def cmd_select_bandwidth(cfg: RunConfig) -> int:
    projects = _load(cfg)
    out = _out_dir(cfg)
    trimmed = trim(projects, cfg.trim_spec)
    spec, report = select_bandwidth(trimmed, cfg.grid, n_steps=cfg.n_steps, min_projects=cfg.min_projects,
                                    days_per_month=cfg.days_per_month)
    spec.save(out / "bandwidth.json")
    report.to_csv(out / "cv_report.csv")
    before = projects.quadrant_counts()
    after = trimmed.quadrant_counts()
    print("Results of the bandwidth selection process")
    print(f"{'Quadrant':<10}{'original':>9}{'trimmed':>9}{'selected':>9}"
          f"{'s1 range':>24}{'s2 range':>18}{'Brier':>9}")
    for k in (1, 2, 3, 4):
        r = spec.rectangles[k]
        sel = report.selected[k]
        a = {1: "(1,1)", 2: "(1,0)", 3: "(0,0)", 4: "(0,1)"}[k]
        print(f"{a:<10}{before[k]:>9}{after[k]:>9}{sel.n_projects:>9}"
              f"{f'[{r.s1_lo:.0f}, {r.s1_hi:.0f}]':>24}{f'[{r.s2_lo:.3f}, {r.s2_hi:.3f}]':>18}"
              f"{_f(sel.brier, 9, 4)}")
    print(f"{'Total':<10}{len(projects):>9}{len(trimmed):>9}"
          f"{sum(report.selected[k].n_projects for k in (1, 2, 3, 4)):>9}")
    return EXIT_OK


_SET_LABEL = {(1, 0): "A1=1,A2=0", (0, 0): "A1=0,A2=0", (0, 1): "A1=0,A2=1"}


def cmd_diagnose(cfg: RunConfig) -> int:
    projects = _load(cfg, cfg.covariates)
    out = _out_dir(cfg)
    trimmed = trim(projects, cfg.trim_spec)
    bw = "auto" if cfg.bandwidth in (None, "auto") else BandwidthSpec.load(cfg.bandwidth)
    failed = False

    placebo = []
    print("Covariates as pseudo-outcomes")
    print(f"{'Pseudo-outcome':<34}{'Control set':<12}{'Effect':>9}{'Std.Err.':>10}{'p-value':>9}"
          f"{'n treated':>11}{'n control':>11}")
    for cov in cfg.covariates:
        for i, cs in enumerate(CONTROL_SETS):
            try:
                pe = pseudo_effect(trimmed, cov, cs, bandwidth=bw, intercept=cfg.intercept,
                                   n_steps=cfg.n_steps, min_projects=cfg.min_projects)
            except EstimationError as exc:
                failed = True
                logger.error("%s vs %s: %s", cov, cs, exc)
                placebo.append({"covariate": cov, "control_set": list(cs), "error": str(exc)})
                print(f"{cov if i == 0 else '':<34}{_SET_LABEL[cs]:<12}  failed: {exc}")
                continue
            placebo.append(pe.to_dict())
            name = f"{cov} ({'1/0' if pe.model == 'logit' else 'cont.'})"
            print(f"{name if i == 0 else '':<34}{_SET_LABEL[cs]:<12}{_f(pe.gamma1)}{_f(pe.se, 10)}"
                  f"{_f(pe.p_two_sided)}{pe.n_treated:>11}{pe.n_control:>11}")
    write_json(out / "placebo.json", {"intercept": cfg.intercept, "pseudo_effects": placebo})

    scores = center_scores(trimmed, standardize=cfg.standardize)
    print()
    print("Tests for no density discontinuity at zero of the single score")
    print(f"{'':<5}{'z < 0':<14}{'z >= 0':<8}{'statistic':>10}{'p-value':>9}")
    try:
        tests = density_tests(scores, cfg.density_bandwidth)
        dens = [t.to_dict() for t in tests]
        for i, t in enumerate(tests, 1):
            left = "all controls" if t.control_set == "all" else t.control_set
            print(f"[{i}]  {left:<14}{'(1,1)':<8}{_f(t.statistic, 10)}{_f(t.p_two_sided)}")
    except EstimationError as exc:
        failed = True
        logger.error("density test: %s", exc)
        dens = [{"error": str(exc)}]
        print(f"  failed: {exc}")
    write_json(out / "density.json", {"standardize": cfg.standardize, "tests": dens})

    try:
        curves = smooth_curves(trimmed, scores, bandwidth=cfg.curve_bandwidth,
                               horizon_months=cfg.horizon_months)
        curves.to_csv(out / "curves.csv")
        print(f"\nnet curve minus control curve at zero: {_f(curves.discontinuity).strip()} "
              f"(bandwidth {curves.bandwidth:.4f})")
    except EstimationError as exc:
        failed = True
        logger.error("curves: %s", exc)
        print(f"  curves failed: {exc}")
    return EXIT_ESTIMATION if failed else EXIT_OK


def cmd_sensitivity(cfg: RunConfig) -> int:
    projects = _load(cfg)
    out = _out_dir(cfg)
    trim_spec = cfg.trim_spec
    base = _bandwidth(cfg, trim(projects, trim_spec), required=True)
    res = sensitivity_sweep(projects, None, trim_spec, base, cfg.grid, cfg.range_pct, cfg.step_pct,
                            alpha=cfg.alpha, df_correction=cfg.df_correction, bootstrap=cfg.bootstrap,
                            seed=cfg.seed or 0, days_per_month=cfg.days_per_month)
    res.to_csv(out / "sweep.csv")
    T = cfg.grid.n_periods
    print("Sensitivity to bandwidth scaling")
    print(f"{'scale %':>8}{'n':>6}" + "".join(f"{f'tau t{t}':>9}" for t in range(1, T + 1)))
    for r in res.rows:
        vals = "".join(_f(e.tau) for e in r.effects) if r.effects else "  (not estimable)"
        print(f"{r.scale_pct:>+8d}{r.n_projects:>6}{vals}")
    if all(r.effects is None for r in res.rows):
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    dgp = DgpConfig.from_dict(cfg.dgp)
    if cfg.seed is not None:
        dgp = dgp.replace(seed=cfg.seed)
    out = _out_dir(cfg)
    if cfg.replications is None:
        data = generate(dgp)
        write_projects(data, out / "dataset.csv")
        print(f"wrote {len(data)} projects to {out / 'dataset.csv'} (quadrant counts "
              f"{data.quadrant_counts()})")
        return EXIT_OK
    if cfg.replications < 2:
        raise DataError(f"replications must be at least 2, got {cfg.replications}")
    if cfg.mc_bandwidth not in ("fixed", "auto"):
        raise DataError(f"mc_bandwidth must be 'fixed' or 'auto', got {cfg.mc_bandwidth!r}")
    summary = run_monte_carlo(dgp, cfg.replications, trim=cfg.trim_spec,
                              bandwidth="auto" if cfg.mc_bandwidth == "auto" else None,
                              alpha=cfg.alpha, n_steps=cfg.n_steps, min_projects=cfg.min_projects)
    write_json(out / "mc_summary.json", {**summary.to_dict(), "config": dgp.to_dict()})
    level = round(100 * (1 - cfg.alpha))
    print(f"Monte Carlo: {summary.replications} replications, {summary.failures} failed")
    print(f"{'period':>6}{'true':>9}{'mean':>9}{'sd':>9}{'mean se':>9}{f'cover{level}':>9}{'reject':>9}")
    for p in summary.to_dict()["periods"]:
        print(f"{p['period']:>6}{_f(p['true_tau'])}{_f(p['mean_tau'])}{_f(p['sd_tau'])}"
              f"{_f(p['mean_se'])}{_f(p['coverage'])}{_f(p['rejection_rate'])}")
    return EXIT_OK


_DISPATCH = {
    "estimate": cmd_estimate,
    "select-bandwidth": cmd_select_bandwidth,
    "diagnose": cmd_diagnose,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
}


def _setup_logging():
    level = os.environ.get("MRDD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _DISPATCH[args.command](cfg)
    except UsageError as exc:
        print(f"mrdd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mrdd: input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"mrdd: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
