"""
Completion-hazard effects at a double cutoff
============================================

A project is monitored when both its financial size and its co-funding
share reach their cutoffs. This walk-through simulates such projects,
picks a bandwidth rectangle per quadrant by cross-validation, fits the
pooled logit hazard model and checks how the estimates move when the
rectangles are scaled.
"""

import numpy as np

from mrdd import (DgpConfig, TrimSpec, estimate_effects, generate, select_bandwidth,
                  sensitivity_sweep, trim, true_effects)
from mrdd.simulate import treatment_shift_for

# planted per-period hazard gaps of 0.30, 0.20 and 0.10
baseline = np.array([-0.6, -0.4, -0.2])
cfg = DgpConfig(n_projects=3000, baseline_logit_hazard=baseline,
                treatment_logit_shift=treatment_shift_for(baseline, [0.3, 0.2, 0.1]), seed=1)
projects = generate(cfg)
print("quadrant counts:", projects.quadrant_counts())

###############################################################################
# Trimming drops extreme scores before anything else is done.
trimmed = trim(projects, TrimSpec())
print("after trimming:", trimmed.quadrant_counts())

###############################################################################
# Each quadrant gets its own rectangle. The candidates are quantiles of the
# distance from the cutoff, and the score is a leave-one-project-out Brier
# score of a quadrant-local hazard model.
bandwidth, report = select_bandwidth(trimmed, n_steps=6)
for k, chosen in report.selected.items():
    print(f"quadrant {k}: limits ({chosen.s1_limit:,.0f}, {chosen.s2_limit:.3f}), "
          f"{chosen.n_projects} projects, Brier {chosen.brier:.4f}")

###############################################################################
# The effect in each period is the gap between the treated and untreated
# hazards at the corner of the two cutoffs. Fit once on the whole trimmed
# box and once inside the selected rectangles.
truth = true_effects(cfg)
wide = estimate_effects(projects, bandwidth=None)
res = estimate_effects(projects, bandwidth=bandwidth)
for label, fit in (("whole box", wide), ("selected", res)):
    print(f"{label}: {fit.n_projects} projects")
    for e, t in zip(fit.effects, truth):
        print(f"  period {e.period}: tau {e.tau:6.3f} (true {t:.3f}), se {e.se:.3f}, "
              f"90% CI [{e.ci_low:6.3f}, {e.ci_high:6.3f}]")

###############################################################################
# The Brier criterion is a mean over the projects inside each candidate,
# so a small window with homogeneous outcomes can win. When the treated
# rectangle holds only a few dozen projects the standard errors say so;
# the wider fit is the sensible reference here because the simulated
# hazard is flat in both distances.

###############################################################################
# Widening or narrowing every rectangle by up to 10% of its extent
# should leave the estimates within sampling noise.
sweep = sensitivity_sweep(projects, None, TrimSpec(), bandwidth, range_pct=10, step_pct=5)
for row in sweep.rows:
    taus = "  ".join(f"{e.tau:6.3f}" for e in row.effects) if row.effects else "not estimable"
    print(f"{row.scale_pct:+4d}%  n={row.n_projects:5d}  {taus}")
