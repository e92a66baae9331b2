import math

import numpy as np
import pytest

from nonconv.fitting import (
    loglog_fit,
    geometric_fit,
    power_geometric_tail,
)


def test_loglog_fit_recovers_exact_power_law():
    x = np.array([10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0])
    y = 2.5 * x ** 0.37
    fit = loglog_fit(x, y)
    assert fit.exponent == pytest.approx(0.37, abs=1e-12)
    assert fit.amplitude == pytest.approx(2.5, rel=1e-10)
    assert fit.exponent_se == pytest.approx(0.0, abs=1e-10)
    assert fit.max_residual < 1e-12
    assert fit.n_points == 6


def test_loglog_fit_ci_covers_noisy_truth():
    rng = np.random.default_rng(5)
    x = np.geomspace(10, 1e5, 40)
    y = 3.0 * x ** 0.45 * np.exp(rng.normal(0, 0.05, size=40))
    fit = loglog_fit(x, y)
    assert fit.ci_low < 0.45 < fit.ci_high
    assert fit.ci_high - fit.ci_low < 0.1


def test_loglog_fit_drops_nonpositive_points():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    y = np.array([1.0, 0.0, 4.0, -3.0, 16.0])  # only three usable points
    fit = loglog_fit(x, y)
    assert fit.n_points == 3
    assert fit.exponent == pytest.approx(1.0, abs=1e-12)


def test_loglog_fit_needs_three_points():
    with pytest.raises(ValueError, match="three positive points"):
        loglog_fit([1.0, 2.0], [1.0, 2.0])


def test_geometric_fit_exact_rate():
    n = np.arange(1, 9)
    v = 5.0 * 0.4 ** n
    fit = geometric_fit(n, v)
    assert fit.rate == pytest.approx(0.4, abs=1e-12)
    assert fit.c == pytest.approx(5.0, rel=1e-10)
    assert fit.converged
    assert fit.max_log_residual < 1e-12


def test_geometric_fit_degenerate_sequence():
    fit = geometric_fit([1, 2, 3], [0.0, 0.0, 0.0])
    assert fit.c == 0.0
    assert fit.rate == 0.0
    assert fit.converged


def test_power_geometric_tail_dominates_partial_sums():
    c, rate, delta, start = 2.0, 0.6, 1.5, 10
    bound = power_geometric_tail(c, rate, delta, start)
    direct = sum(c * n ** delta * rate ** n for n in range(start, 400))
    assert direct <= bound
    assert bound < 5 * direct  # not wildly loose either


def test_power_geometric_tail_edge_cases():
    assert power_geometric_tail(0.0, 0.5, 2.0, 1) == 0.0
    assert power_geometric_tail(1.0, 1.0, 0.0, 1) == math.inf
    # envelope ratio above one: bound must refuse rather than underestimate
    assert power_geometric_tail(1.0, 0.99, 5.0, 1) == math.inf
