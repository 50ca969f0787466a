import numpy as np
import pytest
from scipy.stats import norm

from mrdd.bandwidth import BandwidthSpec
from mrdd.data import CutoffSpec, PeriodGrid, ProjectTable, TrimSpec, expand_person_period
from mrdd.errors import EstimationError, RankDeficiencyError
from mrdd.estimator import (
    build_design,
    column_names,
    effect_from_coefficients,
    estimate_effects,
    sensitivity_sweep,
)
from mrdd.glm import expit

from conftest import make_table


def test_column_layout():
    names = column_names(3)
    assert len(names) == 20
    assert names[:3] == ["period[1]", "period[2]", "period[3]"]
    assert names[3] == "monitored:period[1]"
    assert names[-1] == "quadrant[4]:d2"


def test_design_rows_by_hand(eight_projects):
    pp = expand_person_period(eight_projects)
    d = build_design(pp, check_cells=False)
    X = d.design.values
    names = d.design.column_names
    # "a": treated, one period-1 row, d1 = 100k -> 0.1 in millions
    row = dict(zip(names, X[0]))
    assert row["period[1]"] == 1 and row["monitored:period[1]"] == 1
    assert row["above1:period[1]"] == 1 and row["above2:period[1]"] == 1
    assert row["quadrant[1]:d1"] == pytest.approx(0.1)
    assert row["quadrant[1]:d2"] == pytest.approx(0.2)
    assert sum(v != 0 for v in row.values()) == 6
    # "f" in quadrant (0,0): period dummies only, negative distances
    f = np.flatnonzero(pp.project_id == "f")
    last = dict(zip(names, X[f[-1]]))
    assert last["period[3]"] == 1
    assert last["monitored:period[3]"] == last["above1:period[3]"] == last["above2:period[3]"] == 0
    assert last["quadrant[3]:d1"] == pytest.approx(-0.3)
    assert last["quadrant[3]:d2"] == pytest.approx(-0.4)
    assert len(f) == 3 and d.y[f].tolist() == [0, 0, 1]


def test_empty_cells_name_the_lost_coefficient(eight_projects):
    pp = expand_person_period(eight_projects)
    with pytest.raises(RankDeficiencyError) as err:
        build_design(pp)
    assert "monitored:period[3]" in err.value.columns


def test_tau_identity_and_interval():
    V = np.array([[0.04, -0.01], [-0.01, 0.09]])
    e = effect_from_coefficients(1, -0.3, 0.8, V, alpha=0.10)
    assert e.tau == pytest.approx(expit(0.5) - expit(-0.3), abs=1e-15)
    assert e.h1_hazard - e.h0_hazard == pytest.approx(e.tau, abs=1e-15)
    z = norm.ppf(0.95)
    assert e.ci_low == pytest.approx(e.tau - z * e.se, abs=1e-14)
    assert e.ci_high == pytest.approx(e.tau + z * e.se, abs=1e-14)
    assert e.p_one_sided == pytest.approx(norm.sf(e.tau / e.se), abs=1e-14)


def test_zero_treatment_coefficient_gives_zero_effect():
    e = effect_from_coefficients(2, 1.3, 0.0, np.eye(2) * 0.01)
    assert e.tau == 0.0


@pytest.fixture(scope="module")
def main_estimate(sim_data):
    _, projects = sim_data
    return estimate_effects(projects)


def test_estimate_on_simulated_data(sim_data, main_estimate):
    cfg, _ = sim_data
    from mrdd.simulate import true_effects
    truth = true_effects(cfg)
    res = main_estimate
    assert res.fit.converged
    assert res.fit.n_clusters == res.n_projects
    assert np.all(np.abs(res.tau - truth) < 4 * res.se)
    d = res.effects_dict()
    assert d["inference"] == "delta-method" and len(d["effects"]) == 3


def test_d1_rescaling_is_invariant(sim_data, main_estimate):
    _, projects = sim_data
    other = estimate_effects(projects, d1_scale=1e3)
    assert np.max(np.abs(other.tau - main_estimate.tau)) < 1e-8
    assert np.max(np.abs(other.se - main_estimate.se)) < 1e-8


def test_duration_shift_within_period_is_invariant(sim_data, main_estimate):
    _, projects = sim_data
    g = PeriodGrid()
    months = projects.duration_days / 30.4375
    shifted = projects.duration_days + 1
    same = g.final_period(months) == g.final_period(shifted / 30.4375)
    dur = np.where(same, shifted, projects.duration_days)
    moved = ProjectTable(projects.ids, projects.s1, projects.s2, projects.monitored, dur,
                         projects.censored, projects.covariates)
    res = estimate_effects(moved)
    assert np.array_equal(res.tau, main_estimate.tau)


def test_no_treated_projects_is_an_error():
    rows = [(str(i), s1, s2, 100 + 40 * i, 0) for i, (s1, s2) in
            enumerate([(600_000, 0.3), (700_000, 0.2), (300_000, 0.3), (200_000, 0.2),
                       (300_000, 0.7), (200_000, 0.8)])]
    with pytest.raises(EstimationError, match="no treated"):
        estimate_effects(make_table(rows))


def test_sweep_properties(sim_data, main_estimate):
    _, projects = sim_data
    base = BandwidthSpec.from_external(CutoffSpec(), {1: (800_000, 0.8), 2: (800_000, 0.2),
                                                      3: (200_000, 0.2), 4: (200_000, 0.8)})
    sweep = sensitivity_sweep(projects, None, TrimSpec(), base, range_pct=10, step_pct=5)
    assert [r.scale_pct for r in sweep.rows] == [-10, -5, 0, 5, 10]
    ns = [r.n_projects for r in sweep.rows]
    assert ns == sorted(ns)
    centre = estimate_effects(projects, bandwidth=base)
    assert np.array_equal([e.tau for e in sweep.row(0).effects], centre.tau)
    # the DGP is linear in distance, so moving the window only adds noise
    for r in sweep.rows:
        tau = np.array([e.tau for e in r.effects])
        assert np.all(np.abs(tau - centre.tau) < 2 * centre.se)


def test_sweep_keeps_failed_steps(sim_data):
    _, projects = sim_data
    tiny = BandwidthSpec.from_external(CutoffSpec(), {1: (500_001, 0.5), 2: (800_000, 0.2),
                                                      3: (200_000, 0.2), 4: (200_000, 0.8)})
    sweep = sensitivity_sweep(projects, None, TrimSpec(), tiny, range_pct=1, step_pct=1)
    assert len(sweep.rows) == 3
    assert all(r.effects is None and r.error for r in sweep.rows)


def test_bootstrap_standard_errors(sim_data, main_estimate):
    _, projects = sim_data
    a = estimate_effects(projects, bootstrap=40, seed=5)
    b = estimate_effects(projects, bootstrap=40, seed=5)
    assert a.effects_dict()["inference"] == "cluster-bootstrap"
    assert np.array_equal(a.se, b.se)
    assert np.array_equal(a.tau, main_estimate.tau)
    # 40 draws: the bootstrap SE is within a factor of two of the analytic one
    assert np.all((a.se > main_estimate.se / 2) & (a.se < main_estimate.se * 2))
