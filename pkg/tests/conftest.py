import numpy as np
import pytest

from mrdd.data import CutoffSpec, ProjectTable
from mrdd.simulate import DgpConfig, generate

# acceptance outcomes collected by test_acceptance.py, printed at the end
ACCEPTANCE_LINES: list[str] = []


def make_table(rows, cutoffs=CutoffSpec(), covariates=None):
    """rows: (id, s1, s2, duration_days, censored); monitored follows the rule."""
    ids, s1, s2, dur, cen = zip(*rows)
    s1 = np.array(s1, float)
    s2 = np.array(s2, float)
    mon = ((s1 >= cutoffs.c1) & (s2 >= cutoffs.c2)).astype(int)
    return ProjectTable(ids, s1, s2, mon, dur, cen, covariates, cutoffs=cutoffs)


@pytest.fixture
def eight_projects():
    # two per quadrant, mixed durations and censoring
    return make_table([
        ("a", 600_000, 0.7, 100, 0),   # (1,1), event in period 1
        ("b", 500_000, 0.5, 250, 0),   # (1,1) at the cutoffs, event in period 2
        ("c", 800_000, 0.2, 400, 1),   # (1,0), censored in period 3
        ("d", 700_000, 0.4, 50, 0),    # (1,0)
        ("e", 300_000, 0.3, 200, 0),   # (0,0)
        ("f", 200_000, 0.1, 500, 0),   # (0,0), event in period 3
        ("g", 400_000, 0.9, 190, 1),   # (0,1), censored in period 2
        ("h", 250_000, 0.6, 30, 0),    # (0,1)
    ])


@pytest.fixture(scope="session")
def sim_data():
    cfg = DgpConfig(n_projects=1500, baseline_logit_hazard=(-0.6, -0.4, -0.2),
                    treatment_logit_shift=(1.2, 0.8, 0.4), seed=123)
    return cfg, generate(cfg)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
