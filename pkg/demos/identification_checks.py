"""
Identification checks for a double-cutoff design
================================================

Three checks that the corner of the two cutoffs behaves like a random
assignment: covariates fixed before treatment should not jump there, the
single collapsed score should have no bunching just above zero, and the
smoothed completion curves should line up.
"""

import numpy as np

from mrdd import DgpConfig, TrimSpec, center_scores, density_tests, generate, pseudo_effect, smooth_curves, trim

cfg = DgpConfig(n_projects=3000, seed=2)
projects = trim(generate(cfg), TrimSpec())

###############################################################################
# Placebo outcomes. The treated quadrant is paired with each control quadrant
# in turn and the covariate is regressed on the treatment flag with separate
# distance slopes on both sides. A fixed window (``bandwidth=None`` keeps the
# whole trimmed box) avoids the optimism of choosing the window on the same
# data that is then tested.
for cov in ("expected_duration_months", "auction", "lowest_bid"):
    for cs in ((1, 0), (0, 0), (0, 1)):
        pe = pseudo_effect(projects, cov, cs, bandwidth=None)
        print(f"{cov:<26}{str(cs):<8}{pe.model:<6}{pe.gamma1:8.3f}{pe.se:8.3f}  p={pe.p_two_sided:.3f}")

###############################################################################
# Collapsing the two scores. Each distance is divided by its cutoff and the
# two are combined into a Euclidean norm, positive only for treated projects.
scores = center_scores(projects)
print("z range:", np.round([scores.z.min(), scores.z.max()], 3))

###############################################################################
# Density test on the collapsed score, for all controls and for each
# control quadrant. The simulated scores are not manipulated, but read the
# p-values with care: few projects sit close to a corner in two dimensions,
# so the density of the collapsed score falls to zero at the cutoff on both
# sides and the local fit there is curved. In null simulations the 5% test
# rejects 5-13% of the time depending on the control set.
for t in density_tests(scores):
    print(f"density {t.control_set:<6} statistic {t.statistic:6.2f}  p={t.p_two_sided:.3f}")

###############################################################################
# Now let most projects lying just below the cutoffs nudge their scores over
# them. The per-quadrant tests react more than the pooled one, which mixes
# the thinned quadrants with the others.
sorted_projects = trim(generate(cfg.replace(sorting_intensity=0.7)), TrimSpec())
for t in density_tests(center_scores(sorted_projects)):
    print(f"with sorting {t.control_set:<6} statistic {t.statistic:6.2f}  p={t.p_two_sided:.4f}")

###############################################################################
# Completion curves. A, B, C and D smooth the completion indicator of each
# quadrant against distance from the corner. E = A - B - D + 2C removes the
# separate shifts from crossing each cutoff alone, so E - C at zero is the
# jump attributable to treatment.
# Local-linear fits extrapolate at the corner, where data are thin, so the
# quadrant curves can leave [0, 1] there; such points are flagged.
curves = smooth_curves(projects, scores)
for lab in "ABCDE":
    v = curves.curves[lab].value
    flagged = int(curves.curves[lab].flagged.sum())
    print(f"curve {lab}: value at 0 {v[0]:.3f}, at max distance {v[-1]:.3f}, {flagged} flagged points")
print(f"E - C at zero: {curves.discontinuity:.3f} (bandwidth {curves.bandwidth:.3f})")
