"""Sharp regression discontinuity with two assignment scores and a
right-censored duration outcome, estimated with local discrete-time
logit hazard models."""

__version__ = "0.1.0"

from .bandwidth import BandwidthSpec, CvReport, default_candidate_grid, select_bandwidth
from .data import (
    CutoffSpec,
    PeriodGrid,
    PersonPeriod,
    Project,
    ProjectTable,
    QuadrantLabel,
    TrimSpec,
    classify_quadrant,
    expand_person_period,
    load_projects,
    trim,
    write_projects,
)
from .diagnostics import (
    CenteredScore,
    DensityTestResult,
    PseudoEffect,
    SmoothedCurve,
    center_scores,
    density_test,
    density_tests,
    pseudo_effect,
    smooth_curves,
)
from .errors import (
    ConvergenceError,
    DataError,
    EstimationError,
    MrddError,
    RankDeficiencyError,
    SchemaError,
    SeparationError,
    SharpDesignError,
)
from .estimator import EffectEstimate, EffectsResult, estimate_effects, predict_hazards, sensitivity_sweep
from .glm import DesignMatrix, FitResult, cluster_sandwich, delta_method, fit_logit
from .simulate import DgpConfig, McSummary, generate, run_monte_carlo, true_effects

__all__ = [name for name in dir() if not name.startswith("_")]
