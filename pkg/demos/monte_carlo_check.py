"""
Checking interval coverage by simulation
========================================

The hazard gaps come with delta-method standard errors from a
project-clustered sandwich. A small Monte Carlo study shows how close the
90% intervals get to their nominal level, and how that depends on the
sample size.
"""

import numpy as np

from mrdd import DgpConfig, run_monte_carlo
from mrdd.simulate import treatment_shift_for

tau = np.array([0.3, 0.2, 0.1])
baseline = np.log((0.5 - tau / 2) / (0.5 + tau / 2))
cfg = DgpConfig(baseline_logit_hazard=baseline, treatment_logit_shift=treatment_shift_for(baseline, tau),
                seed=11)

###############################################################################
# Every replication draws a fresh dataset from its own random stream, keeps
# the whole trimmed box and fits the hazard model.
for n in (1000, 4000):
    mc = run_monte_carlo(cfg.replace(n_projects=n), 100)
    print(f"n = {n}")
    print("  mean bias   ", np.round(mc.mean_tau - mc.truth, 4))
    print("  sd / mean se", np.round(mc.sd_tau / mc.mean_se, 3))
    print("  coverage    ", mc.coverage)

###############################################################################
# Intervals tend to undercover in smaller samples: the gap is estimated
# from the corner of the treated quadrant, and draws with a large error
# there also tend to have a small estimated standard error. The shortfall
# shrinks as the sample grows.
