"""Reference computations that share no code with the package."""

import itertools
import math

import numpy as np


def loglik(beta, X, y):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def grid_zoom_mle(X, y, half_width=10.0, points=21, tol=1e-7, shrink=0.3):
    """Maximise the logit likelihood by exhaustive search over a regular
    grid that is re-centred on the best point and shrunk until its spacing
    falls below ``tol``."""
    p = X.shape[1]
    centre = np.zeros(p)
    hw = half_width
    offsets = np.linspace(-1.0, 1.0, points)
    while True:
        axes = [centre[j] + hw * offsets for j in range(p)]
        grid = np.array(list(itertools.product(*axes)))
        eta = X @ grid.T
        ll = (y[:, None] * eta - np.logaddexp(0.0, eta)).sum(axis=0)
        centre = grid[int(np.argmax(ll))]
        if 2 * hw / (points - 1) < tol:
            return centre
        hw *= shrink


def random_logit_dataset(rng, n, p):
    """Intercept plus p-1 standard normal columns, outcomes from moderate
    coefficients, redrawn until both outcome values occur and the data are
    not separable along any single column."""
    while True:
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        beta = rng.uniform(-1, 1, size=p)
        y = (rng.random(n) < 1 / (1 + np.exp(-(X @ beta)))).astype(float)
        if 0.2 < y.mean() < 0.8:
            return X, y


def hand_sandwich_example():
    """Four rows, two clusters, saturated two-parameter logit.

    The MLE puts both cell probabilities at 1/2, so beta = 0, the weights are
    1/4 and the residuals are -1/2, +1/2, +1/2, -1/2. With clusters
    {rows 1, 3} and {rows 2, 4}:

        bread = (X'WX)^-1 = [[2, -2], [-2, 4]]
        cluster scores  s1 = (0, 1/2),  s2 = (0, -1/2)
        meat = [[0, 0], [0, 1/2]]
        V = bread meat bread = [[2, -4], [-4, 8]]

    With each row its own cluster (HC0):
        meat = [[1, 1/2], [1/2, 1/2]],  V = [[2, -2], [-2, 4]]
    """
    X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    clusters = np.array(["g1", "g2", "g1", "g2"])
    V_cluster = np.array([[2.0, -4.0], [-4.0, 8.0]])
    V_hc0 = np.array([[2.0, -2.0], [-2.0, 4.0]])
    return X, y, clusters, V_cluster, V_hc0


def expit(x):
    return 1.0 / (1.0 + math.exp(-x))
