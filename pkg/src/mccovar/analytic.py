"""Closed-form CoVaR for the linear and nonlinear test portfolios, their samplers,
and the quantile-regression (QRE) baseline estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgmodel import LossSample
from .errors import ConvergenceError, InvalidParameterError
from .estimators import EstimateReport, _check_prob, var_order_stat
from .numerics import RngStream, inv_norm_cdf


def _check_rho(rho):
    if not -1.0 <= rho <= 1.0:
        raise InvalidParameterError(f"rho must lie in [-1, 1], got {rho}")


@dataclass(frozen=True)
class LinearPortfolioSpec:
    mu_x: float = -0.005
    mu_y: float = -0.00286
    sigma_x: float = 0.08
    sigma_y: float = 0.06111
    rho: float = 0.95

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise InvalidParameterError("volatilities must be positive")
        _check_rho(self.rho)


@dataclass(frozen=True)
class NonlinearPortfolioSpec:
    mu_x: float = -0.03
    sigma_x: float = 0.2
    sigma_y: float = 0.3
    rho: float = 0.95
    delta: float = 0.2
    gamma: float = 0.8

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise InvalidParameterError("volatilities must be positive")
        _check_rho(self.rho)


def _shape_term(rho, alpha, beta):
    return rho * inv_norm_cdf(alpha) + math.sqrt(1.0 - rho * rho) * inv_norm_cdf(beta)


def linear_covar(spec: LinearPortfolioSpec, alpha: float, beta: float) -> float:
    _check_prob("alpha", alpha)
    _check_prob("beta", beta)
    return spec.mu_y + spec.sigma_y * _shape_term(spec.rho, alpha, beta)


def nonlinear_covar(spec: NonlinearPortfolioSpec, alpha: float, beta: float):
    """Returns ``(covar, var_x)``."""
    _check_prob("alpha", alpha)
    _check_prob("beta", beta)
    var_x = spec.mu_x + inv_norm_cdf(alpha) * spec.sigma_x
    covar = (spec.delta * var_x + 0.5 * spec.gamma * var_x * var_x
             + spec.sigma_y * _shape_term(spec.rho, alpha, beta))
    return covar, var_x


def rho_star(alpha: float, beta: float) -> float:
    """Correlation maximizing CoVaR in both closed forms."""
    za, zb = inv_norm_cdf(alpha), inv_norm_cdf(beta)
    den = za * za + zb * zb
    if den == 0.0:
        raise InvalidParameterError("rho* is undefined when alpha = beta = 0.5")
    return math.sqrt(za * za / den)


def _noise(rho, sigma_y, xs, z):
    return sigma_y * (rho * xs + math.sqrt(1.0 - rho * rho) * z)


def sample_linear(spec: LinearPortfolioSpec, stream: RngStream, n: int) -> LossSample:
    if n < 1:
        raise InvalidParameterError("n must be positive")
    g = stream.normal((n, 2))
    x = spec.mu_x + spec.sigma_x * g[:, 0]
    y = spec.mu_y + _noise(spec.rho, spec.sigma_y, g[:, 0], g[:, 1])
    return LossSample(x, y)


def sample_nonlinear(spec: NonlinearPortfolioSpec, stream: RngStream, n: int) -> LossSample:
    if n < 1:
        raise InvalidParameterError("n must be positive")
    g = stream.normal((n, 2))
    x = spec.mu_x + spec.sigma_x * g[:, 0]
    y = spec.delta * x + 0.5 * spec.gamma * x * x + _noise(spec.rho, spec.sigma_y, g[:, 0], g[:, 1])
    return LossSample(x, y)


# -- quantile regression ---------------------------------------------------------

def pinball_loss(u, beta: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(np.sum(u * (beta - (u < 0))))


def _rotate(c, x, y, beta, theta, max_iter, history=None):
    """Exact descent for min sum rho(y - c*t0 - x*t1) over vertices of the LP.

    Each step pins the residual of one row at zero and minimizes exactly along
    that line (a weighted quantile); the row that becomes zero is the next pivot.
    Stops once a rotation no longer lowers the objective.
    """
    u = y - c * theta[0] - x * theta[1]
    j = int(np.argmin(np.abs(u)))
    zz = c[j] * c[j] + x[j] * x[j]
    theta = theta + u[j] / zz * np.array([c[j], x[j]])
    obj = pinball_loss(y - c * theta[0] - x * theta[1], beta)
    if history is not None:
        history.append(obj)
    first = True
    for _ in range(max_iter):
        d = np.array([-x[j], c[j]])
        r = y - c * theta[0] - x * theta[1]
        t = c * d[0] + x * d[1]
        live = np.flatnonzero(t != 0.0)
        if live.size == 0:
            return theta
        tl = t[live]
        q = r[live] / tl
        w = np.abs(tl)
        target = float(np.sum(w * np.where(tl > 0, beta, 1.0 - beta)))
        order = np.argsort(q, kind="stable")
        k = min(int(np.searchsorted(np.cumsum(w[order]), target)), order.size - 1)
        cand = theta + q[order[k]] * d
        cand_obj = pinball_loss(y - c * cand[0] - x * cand[1], beta)
        if not first and cand_obj >= obj - 1e-13 * abs(obj):
            return theta
        first = False
        if cand_obj <= obj:
            theta, obj = cand, cand_obj
            if history is not None:
                history.append(obj)
        j = int(live[order[k]])
    raise ConvergenceError(f"quantile regression did not converge in {max_iter} pivots", last=theta)


_DIRECT_ROWS = 4000


def _qr_solve(xs, y, beta, theta, max_iter, history):
    n = y.size
    ones = np.ones(n)
    if n <= _DIRECT_ROWS:
        if theta is None:
            theta = np.array([float(np.quantile(y, beta)), 0.0])
        return _rotate(ones, xs, y, beta, theta, max_iter, history)
    if theta is None:
        # Cold start from an evenly strided subsample, solved the same way.
        m = max(_DIRECT_ROWS, int(2.0 * n ** (2.0 / 3.0)))
        sub = np.linspace(0, n - 1, m).astype(np.intp)
        theta = _qr_solve(xs[sub], y[sub], beta, None, max_iter, None)
    if history is not None:
        history.append(pinball_loss(y - theta[0] - theta[1] * xs, beta))
    # Rows far below / above the current fit are globbed into two pseudo rows.
    # The reduced objective never exceeds the full one and agrees with it while
    # every globbed row keeps its sign, so a sign check certifies optimality.
    half = int(3.0 * math.sqrt(n)) + 50
    pivot = min(n - 1, max(0, math.ceil(beta * n) - 1))
    while True:
        u = y - theta[0] - theta[1] * xs
        lo_rank, hi_rank = max(0, pivot - half), min(n - 1, pivot + half)
        part = np.partition(u, (lo_rank, hi_rank))
        low, high = u < part[lo_rank], u > part[hi_rank]
        keep = ~(low | high)
        rc, rx, ry = [ones[keep]], [xs[keep]], [y[keep]]
        for mask in (low, high):
            if mask.any():
                rc.append([float(mask.sum())])
                rx.append([float(xs[mask].sum())])
                ry.append([float(y[mask].sum())])
        theta = _rotate(np.concatenate(rc), np.concatenate(rx), np.concatenate(ry),
                        beta, theta, max_iter)
        u = y - theta[0] - theta[1] * xs
        if not ((low & (u > 0)).any() or (high & (u < 0)).any()):
            break
        half *= 2
    if history is not None:
        obj = pinball_loss(u, beta)
        if obj <= history[-1]:
            history.append(obj)
    return theta


def qre_fit(sample: LossSample, beta: float, max_iter: int = 1000, start=None,
            history: list | None = None):
    """Linear beta-quantile regression of Y on X, solved exactly.

    ``start`` is an optional ``(a, b)`` warm start.  The objective values of the
    accepted iterates are appended to ``history`` and never increase.
    Returns ``(a, b)``.
    """
    _check_prob("beta", beta)
    x, y = sample.x, sample.y
    n = x.size
    if n < 10:
        raise InvalidParameterError("quantile regression needs at least 10 observations")
    # Centering x keeps the pivot geometry well conditioned.
    xc = float(x.mean())
    xs = x - xc
    theta = None if start is None else np.array([start[0] + start[1] * xc, start[1]])
    t0, t1 = _qr_solve(xs, y, beta, theta, max_iter, history)
    return float(t0 - t1 * xc), float(t1)


def qre_covar(sample: LossSample, alpha: float, beta: float, bootstrap_reps: int = 200,
              stream: RngStream | None = None, gamma: float = 0.05) -> EstimateReport:
    """Plug-in QRE: fitted beta-quantile line at the sample alpha-VaR of X.

    The interval is a case-resampling percentile bootstrap; with zero replicates
    the report carries a zero-width interval and ``has_ci=False``.
    """
    a, b = qre_fit(sample, beta)
    v = var_order_stat(sample.x, alpha)
    point = a + b * v
    diagnostics = {"a": a, "b": b, "v_alpha": v, "ci_method": "bootstrap-percentile"}
    if bootstrap_reps <= 0:
        diagnostics["ci_method"] = "none"
        return EstimateReport(point, point, point, 1.0 - gamma, diagnostics, has_ci=False)
    if stream is None:
        raise InvalidParameterError("bootstrap needs a random stream")
    n = len(sample)
    boots = np.empty(bootstrap_reps)
    for r in range(bootstrap_reps):
        sub = stream.substream(r)
        idx = (sub.raw(n) % np.uint64(n)).astype(np.intp)
        resampled = LossSample(sample.x[idx], sample.y[idx])
        ra, rb = qre_fit(resampled, beta, start=(a, b))
        boots[r] = ra + rb * var_order_stat(resampled.x, alpha)
    lo, hi = np.quantile(boots, [gamma / 2.0, 1.0 - gamma / 2.0])
    lo, hi = min(lo, point), max(hi, point)
    diagnostics["bootstrap_reps"] = bootstrap_reps
    return EstimateReport(point, float(lo), float(hi), 1.0 - gamma, diagnostics)
