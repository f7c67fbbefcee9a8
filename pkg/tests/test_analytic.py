import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse
from scipy.optimize import linprog

from mccovar.analytic import (LinearPortfolioSpec, NonlinearPortfolioSpec, linear_covar, nonlinear_covar,
                              pinball_loss, qre_covar, qre_fit, rho_star, sample_linear, sample_nonlinear)
from mccovar.dgmodel import LossSample
from mccovar.errors import InvalidParameterError
from mccovar.estimators import BatchConfig, batching_estimate, batching_report
from mccovar.numerics import RngStream, inv_norm_cdf


def _lp_quantile_regression(x, y, beta):
    """Independent oracle: the quantile regression LP solved by HiGHS."""
    n = x.size
    cost = np.concatenate([[0.0, 0.0], np.full(n, beta), np.full(n, 1.0 - beta)])
    a_eq = sparse.hstack([sparse.csr_matrix(np.column_stack([np.ones(n), x])), sparse.eye(n), -sparse.eye(n)])
    res = linprog(cost, A_eq=a_eq, b_eq=y, bounds=[(None, None)] * 2 + [(0, None)] * (2 * n), method="highs")
    return res.x[0], res.x[1], res.fun


# -- closed forms ----------------------------------------------------------------------

@pytest.mark.parametrize("rho,expected", [(0.95, 0.1240), (-0.95, -0.0670), (0.5, 0.1344), (-0.5, 0.0339)])
def test_linear_covar_table_values(rho, expected):
    assert abs(linear_covar(LinearPortfolioSpec(rho=rho), 0.95, 0.95) - expected) <= 5e-5


@pytest.mark.parametrize("rho,expected", [(0.95, 0.7184), (-0.95, -0.2192), (0.5, 0.7696), (-0.5, 0.2762)])
def test_nonlinear_covar_table_values(rho, expected):
    assert abs(nonlinear_covar(NonlinearPortfolioSpec(rho=rho), 0.95, 0.95)[0] - expected) <= 5e-5


def test_linear_covar_independence():
    spec = LinearPortfolioSpec(rho=0.0)
    assert linear_covar(spec, 0.9, 0.95) - spec.mu_y == spec.sigma_y * inv_norm_cdf(0.95)


def test_nonlinear_reduces_to_linear():
    lin = LinearPortfolioSpec(mu_x=0.01, mu_y=0.01, sigma_x=0.3, sigma_y=0.2, rho=0.4)
    non = NonlinearPortfolioSpec(mu_x=0.01, sigma_x=0.3, sigma_y=0.2, rho=0.4, delta=1.0, gamma=0.0)
    covar, var_x = nonlinear_covar(non, 0.9, 0.8)
    assert var_x == pytest.approx(0.01 + 0.3 * inv_norm_cdf(0.9))
    # with delta=1, gamma=0 the Y level adds var_x on top of the linear noise term
    assert covar == pytest.approx(linear_covar(lin, 0.9, 0.8) - lin.mu_y + var_x, abs=1e-15)
    zero = NonlinearPortfolioSpec(sigma_y=0.2, rho=0.4, delta=0.0, gamma=0.0)
    assert nonlinear_covar(zero, 0.9, 0.8)[0] == pytest.approx(linear_covar(lin, 0.9, 0.8) - lin.mu_y, abs=1e-15)


def test_rho_star():
    assert rho_star(0.95, 0.95) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert rho_star(0.7, 0.7) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert rho_star(0.9, 0.5) == 1.0
    with pytest.raises(InvalidParameterError):
        rho_star(0.5, 0.5)


def test_linear_covar_argmax_at_rho_star():
    grid = np.linspace(-1, 1, 201)
    vals = [linear_covar(LinearPortfolioSpec(rho=r), 0.95, 0.95) for r in grid]
    assert int(np.argmax(vals)) == int(np.argmin(np.abs(grid - rho_star(0.95, 0.95))))


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        LinearPortfolioSpec(rho=1.5)
    with pytest.raises(InvalidParameterError):
        NonlinearPortfolioSpec(sigma_x=0.0)
    with pytest.raises(InvalidParameterError):
        linear_covar(LinearPortfolioSpec(), 1.0, 0.5)


# -- samplers ---------------------------------------------------------------------------

def test_sample_linear_correlation_and_mean():
    s = sample_linear(LinearPortfolioSpec(rho=1.0), RngStream(1), 1000)
    assert abs(np.corrcoef(s.x, s.y)[0, 1] - 1.0) <= 1e-12
    s = sample_linear(LinearPortfolioSpec(rho=0.0), RngStream(2), 10**5)
    assert abs(np.corrcoef(s.x, s.y)[0, 1]) <= 0.01
    spec = LinearPortfolioSpec()
    s = sample_linear(spec, RngStream(3), 10**6)
    assert abs(s.y.mean() - spec.mu_y) <= 4 * spec.sigma_y / 1e3


def test_sample_nonlinear_moments():
    spec = NonlinearPortfolioSpec(delta=0.0, gamma=0.0)
    s = sample_nonlinear(spec, RngStream(4), 10**6)
    assert abs(s.y.var() / spec.sigma_y**2 - 1.0) <= 0.01
    spec = NonlinearPortfolioSpec(gamma=0.0, rho=0.6)
    s = sample_nonlinear(spec, RngStream(5), 10**6)
    slope = np.polyfit(s.x, s.y, 1)[0]
    assert slope == pytest.approx(spec.delta + spec.sigma_y * spec.rho / spec.sigma_x, abs=0.01)


def test_batching_on_nonlinear_sampler():
    spec = NonlinearPortfolioSpec(rho=0.95)
    s = sample_nonlinear(spec, RngStream(6), 360_000)
    point, _ = batching_estimate(s, BatchConfig(600, 600), 0.95, 0.95)
    assert abs(point - nonlinear_covar(spec, 0.95, 0.95)[0]) <= 1e-2


def test_batching_ci_covers_linear_truth():
    spec = LinearPortfolioSpec(rho=0.95)
    truth = linear_covar(spec, 0.95, 0.95)
    hits = sum(batching_report(sample_linear(spec, RngStream(7, r), 160_000), BatchConfig(400, 400),
                               0.95, 0.95).contains(truth) for r in range(100))
    assert hits >= 85


# -- quantile regression ------------------------------------------------------------------

def test_qre_fit_trivial_cases():
    x = RngStream(8).normal(50)
    a, b = qre_fit(LossSample(x, np.full(50, 3.0)), 0.9)
    assert a == pytest.approx(3.0, abs=1e-12) and b == pytest.approx(0.0, abs=1e-12)
    a, b = qre_fit(LossSample(x, 2.0 * x), 0.3)
    assert a == pytest.approx(0.0, abs=1e-12) and b == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(InvalidParameterError):
        qre_fit(LossSample(x[:5], x[:5]), 0.5)


@pytest.mark.parametrize("n,beta,seed", [(200, 0.95, 1), (3000, 0.5, 2), (20_000, 0.95, 3), (20_000, 0.1, 4)])
def test_qre_fit_matches_lp_oracle(n, beta, seed):
    s = sample_nonlinear(NonlinearPortfolioSpec(rho=0.5), RngStream(seed), n)
    _, _, best = _lp_quantile_regression(s.x, s.y, beta)
    a, b = qre_fit(s, beta)
    assert pinball_loss(s.y - a - b * s.x, beta) <= best * (1 + 1e-9)


def test_qre_fit_warm_start_and_duplicates():
    s = sample_linear(LinearPortfolioSpec(), RngStream(9), 20_000)
    a, b = qre_fit(s, 0.95)
    idx = (RngStream(10).raw(s.x.size) % np.uint64(s.x.size)).astype(np.intp)
    boot = LossSample(s.x[idx], s.y[idx])
    cold = qre_fit(boot, 0.95)
    warm = qre_fit(boot, 0.95, start=(a, b))
    f = lambda ab: pinball_loss(boot.y - ab[0] - ab[1] * boot.x, 0.95)
    assert f(warm) == pytest.approx(f(cold), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.integers(10, 6000), st.floats(0.02, 0.98))
def test_qre_objective_monotone(seed, n, beta):
    s = sample_nonlinear(NonlinearPortfolioSpec(rho=0.3), RngStream(seed), n)
    history = []
    a, b = qre_fit(s, beta, history=history)
    assert len(history) >= 1
    assert all(later <= earlier for earlier, later in zip(history, history[1:]))
    assert pinball_loss(s.y - a - b * s.x, beta) <= history[-1] * (1 + 1e-12) + 1e-300


def test_qre_linear_point():
    spec = LinearPortfolioSpec(rho=0.95)
    s = sample_linear(spec, RngStream(11), 10**5)
    rep = qre_covar(s, 0.95, 0.95, 0)
    assert abs(rep.point - 0.1240) <= 1e-3


def test_qre_bias_linear_and_nonlinear():
    lin = LinearPortfolioSpec(rho=0.95)
    point = qre_covar(sample_linear(lin, RngStream(12), 360_000), 0.95, 0.95, 0).point
    assert abs(point - linear_covar(lin, 0.95, 0.95)) <= 5e-4
    non = NonlinearPortfolioSpec(rho=0.95)
    point = qre_covar(sample_nonlinear(non, RngStream(13), 360_000), 0.95, 0.95, 0).point
    assert -0.03 <= point - nonlinear_covar(non, 0.95, 0.95)[0] <= -0.015


def test_qre_no_bootstrap_and_bootstrap_ci():
    s = sample_linear(LinearPortfolioSpec(), RngStream(14), 5000)
    rep = qre_covar(s, 0.95, 0.95, 0)
    assert not rep.has_ci and rep.ci_low == rep.point == rep.ci_high and rep.width == 0
    assert rep.diagnostics["ci_method"] == "none"
    rep = qre_covar(s, 0.95, 0.95, 50, RngStream(15))
    assert rep.has_ci and rep.ci_low <= rep.point <= rep.ci_high
    assert rep.diagnostics["ci_method"] == "bootstrap-percentile"
    again = qre_covar(s, 0.95, 0.95, 50, RngStream(15))
    assert (again.ci_low, again.ci_high) == (rep.ci_low, rep.ci_high)
    with pytest.raises(InvalidParameterError):
        qre_covar(s, 0.95, 0.95, 5, None)
