"""CoVaR estimators: batching (BE) and IS-inspired (ISE), with confidence intervals.

The batching estimator works on any paired sample (X, Y).  The IS-inspired
estimator needs a simplified delta-gamma model: it conditions on every driver
except the last, solves the quadratic ``g(z) = x`` in the last driver, and
weights the two root-evaluated Y values by ``phi(r) / lambda``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dgmodel import (CHUNK_ROWS, LossSample, SimplifiedDeltaGamma, TailSpec,
                      sample_losses, sample_shock)
from .errors import (CurvatureError, DegenerateISError, EmptyBandError, InfeasibleCIError,
                     InfiniteQuantileError, InvalidParameterError)
from .numerics import RngStream, inv_norm_cdf, norm_pdf, t_quantile

log = logging.getLogger(__name__)


def _check_prob(name, p):
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"{name} must lie in (0, 1), got {p}")


def ceil_rank(p: float, n: int) -> int:
    """ceil(p * n), immune to products like 0.95 * 20 landing a hair above 19."""
    return max(1, math.ceil(round(p * n, 9)))


@dataclass(frozen=True)
class BatchConfig:
    k: int
    m: int

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise InvalidParameterError(f"batch counts must be positive, got k={self.k}, m={self.m}")

    @property
    def n(self) -> int:
        return self.k * self.m

    @classmethod
    def default(cls, n: int) -> "BatchConfig":
        """k ~ n^(2/3) / 2 batches of m = n // k."""
        k = math.ceil(n ** (2.0 / 3.0) / 2.0)
        return cls(k, n // k)

    def label(self) -> str:
        return f"k={self.k};m={self.m}"


@dataclass(frozen=True)
class IsConfig:
    n1: int
    n2: int
    b: int = 10

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise InvalidParameterError("n1 and n2 must be positive")
        if self.b < 2:
            raise InvalidParameterError("sectioning needs b >= 2")
        if self.n2 % self.b:
            raise InvalidParameterError(f"b={self.b} must divide n2={self.n2}")

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @classmethod
    def default(cls, n: int, b: int = 10) -> "IsConfig":
        """Even split between the two stages, with n2 rounded down to a multiple of b."""
        n2 = (n // 2) // b * b
        return cls(n - n2, n2, b)

    def label(self) -> str:
        return f"n1={self.n1};n2={self.n2};b={self.b}"


@dataclass
class EstimateReport:
    point: float
    ci_low: float
    ci_high: float
    level: float
    diagnostics: dict = field(default_factory=dict)
    has_ci: bool = True

    def contains(self, value: float) -> bool:
        return self.has_ci and self.ci_low <= value <= self.ci_high

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low


def var_order_stat(xs, alpha: float) -> float:
    """The ceil(alpha * n)-th smallest value."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise InvalidParameterError("cannot take an order statistic of an empty sample")
    _check_prob("alpha", alpha)
    k = ceil_rank(alpha, xs.size)
    return float(np.partition(xs, k - 1)[k - 1])


# -- batching -----------------------------------------------------------------

def batching_estimate(sample: LossSample, cfg: BatchConfig, alpha: float, beta: float):
    """Batching estimate of CoVaR and the per-batch conditional draws.

    Returns ``(point, yhats)``.  Observations past ``k * m`` are dropped.
    """
    _check_prob("alpha", alpha)
    _check_prob("beta", beta)
    n = len(sample)
    if n < cfg.n:
        raise InvalidParameterError(f"sample has {n} pairs but k*m = {cfg.n}")
    if n > cfg.n:
        log.warning("discarding %d trailing observations (k*m = %d < n = %d)", n - cfg.n, cfg.n, n)
    x = sample.x[:cfg.n].reshape(cfg.k, cfg.m)
    y = sample.y[:cfg.n].reshape(cfg.k, cfg.m)
    j = ceil_rank(alpha, cfg.m) - 1
    order = np.argsort(x, axis=1, kind="stable")
    yhats = y[np.arange(cfg.k), order[:, j]]
    return var_order_stat(yhats, beta), yhats


def min_batches_for_ci(beta: float, gamma: float, k_max: int = 10**7) -> int:
    z = inv_norm_cdf(1.0 - gamma / 2.0)
    spread = z * math.sqrt(beta * (1.0 - beta))
    for k in range(2, k_max):
        if math.floor(k * beta - spread * math.sqrt(k)) >= 1 and math.ceil(k * beta + spread * math.sqrt(k)) <= k:
            return k
    raise InfeasibleCIError("no feasible batch count below k_max")


def batching_ci(yhats, beta: float, gamma: float = 0.05):
    """Distribution-free order-statistic interval (Y_(floor K1), Y_(ceil K2))."""
    yhats = np.sort(np.asarray(yhats, dtype=np.float64), kind="stable")
    k = yhats.size
    if k < 2:
        raise InfeasibleCIError("need at least two batches for a confidence interval", min_k=2)
    _check_prob("beta", beta)
    _check_prob("gamma", gamma)
    half = inv_norm_cdf(1.0 - gamma / 2.0) * math.sqrt(beta * (1.0 - beta) / k)
    lo = math.floor(round(k * (beta - half), 9))
    hi = math.ceil(round(k * (beta + half), 9))
    if lo < 1 or hi > k:
        min_k = min_batches_for_ci(beta, gamma)
        raise InfeasibleCIError(
            f"order-statistic interval needs indices {lo}..{hi} within 1..{k}; "
            f"use at least k={min_k} batches", min_k=min_k)
    return float(yhats[lo - 1]), float(yhats[hi - 1])


def batching_report(sample: LossSample, cfg: BatchConfig, alpha: float, beta: float,
                    gamma: float = 0.05) -> EstimateReport:
    point, yhats = batching_estimate(sample, cfg, alpha, beta)
    diagnostics = {"k": cfg.k, "m": cfg.m}
    try:
        lo, hi = batching_ci(yhats, beta, gamma)
    except InfeasibleCIError as exc:
        diagnostics["ci_error"] = str(exc)
        return EstimateReport(point, point, point, 1.0 - gamma, diagnostics, has_ci=False)
    return EstimateReport(point, lo, hi, 1.0 - gamma, diagnostics)


# -- IS-inspired ----------------------------------------------------------------

@dataclass
class RootWeights:
    """Per-scenario root quantities; arrays share one shape (0-d for a single scenario)."""

    crossed: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    lam: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __len__(self):
        return self.crossed.size

    def pairs(self):
        """Interleaved (Y_1,1, Y_2,1, Y_1,2, ...) values and matching q weights."""
        values = np.column_stack([np.ravel(self.y1), np.ravel(self.y2)]).ravel()
        weights = np.column_stack([np.ravel(self.q1), np.ravel(self.q2)]).ravel()
        return values, weights

    def __getitem__(self, sl) -> "RootWeights":
        return RootWeights(*(getattr(self, f)[sl] for f in
                             ("crossed", "r1", "r2", "lam", "q1", "q2", "y1", "y2")))


def conditional_root_weights(xi1, b, a, x) -> RootWeights:
    """Roots of ``xi1 + b z + a z^2 = x`` and their density weights ``phi(r) / lambda``.

    Works elementwise on arrays.  Y fields are left at +inf.
    """
    xi1, b, a = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (xi1, b, a)))
    if np.any(~(a > 0)):
        raise CurvatureError("IS needs a positive curvature on the conditioning driver")
    disc = b * b + 4.0 * a * (x - xi1)
    crossed = disc > 0.0
    lam = np.sqrt(np.where(crossed, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        qq = -0.5 * (b + np.copysign(lam, b))
        ra = qq / a
        rb = (xi1 - x) / qq
    r1 = np.where(crossed, np.minimum(ra, rb), np.nan)
    r2 = np.where(crossed, np.maximum(ra, rb), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        q1 = np.where(crossed, norm_pdf(r1) / lam, 0.0)
        q2 = np.where(crossed, norm_pdf(r2) / lam, 0.0)
    inf = np.full(crossed.shape, np.inf)
    return RootWeights(crossed, r1, r2, lam, q1, q2, inf, inf.copy())


def is_scenarios(model: SimplifiedDeltaGamma, tail: TailSpec, v_alpha: float,
                 stream: RngStream, n: int) -> RootWeights:
    """n conditional scenarios at target X level ``v_alpha``.

    Draws (Z_1..Z_{d-1}) row-major from ``stream`` (and W from a substream for t tails),
    then substitutes each root for Z_d to evaluate Y.
    """
    if not model.gamma1[-1] > 0:
        raise CurvatureError(
            f"last driver has X-curvature {model.gamma1[-1]:.3g} <= 0; reorder so the largest "
            "positive curvature comes last")
    w = sample_shock(tail, stream.substream(0), n)
    xi1 = np.empty(n)
    eta2 = np.empty(n)
    d1 = model.d - 1
    for lo in range(0, n, CHUNK_ROWS):
        hi = min(n, lo + CHUNK_ROWS)
        z = stream.normal((hi - lo, d1))
        if w is not None:
            z /= w[lo:hi, None]
        z2 = z * z
        xi1[lo:hi] = model.c1 + z @ model.delta1[:d1] + z2 @ model.gamma1[:d1]
        eta2[lo:hi] = model.c2 + z @ model.delta2[:d1] + z2 @ model.gamma2[:d1]
    inv_w = 1.0 if w is None else 1.0 / w
    b_eff = model.delta1[-1] * inv_w
    a_eff = model.gamma1[-1] * inv_w * inv_w
    rw = conditional_root_weights(xi1, b_eff, a_eff, v_alpha)
    b2 = model.delta2[-1] * inv_w
    a2 = model.gamma2[-1] * inv_w * inv_w
    with np.errstate(invalid="ignore"):
        rw.y1 = np.where(rw.crossed, eta2 + b2 * rw.r1 + a2 * rw.r1 * rw.r1, np.inf)
        rw.y2 = np.where(rw.crossed, eta2 + b2 * rw.r2 + a2 * rw.r2 * rw.r2, np.inf)
    return rw


def normalized_weights(weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if not total > 0:
        raise DegenerateISError("all IS weights are zero: the target X level lies below g* "
                                "in every scenario; increase n1 or check the model")
    return weights / total


def weighted_quantile(values, weights, beta: float) -> float:
    """First sorted value whose cumulative normalized weight exceeds beta."""
    _check_prob("beta", beta)
    values = np.asarray(values, dtype=np.float64)
    w = normalized_weights(weights)
    order = np.argsort(values, kind="stable")
    pi = np.cumsum(w[order])
    i = int(np.searchsorted(pi, beta, side="right"))
    if i >= pi.size:
        # cumulative mass fell short of 1 by rounding; take the last weighted value
        i = int(np.flatnonzero(w[order] > 0)[-1])
    value = values[order[i]]
    if not np.isfinite(value):
        raise InfiniteQuantileError(f"beta={beta} quantile falls on a +inf (non-crossed) value")
    return float(value)


def sectioning_ci(section_points, point: float, gamma: float = 0.05):
    """point +- t_{b-1, 1-gamma/2} * S / sqrt(b), with S measured around ``point``."""
    s = np.asarray(section_points, dtype=np.float64)
    b = s.size
    if b < 2:
        raise InvalidParameterError("sectioning needs at least two sections")
    _check_prob("gamma", gamma)
    spread = math.sqrt(np.sum((s - point) ** 2) / (b - 1))
    half = t_quantile(1.0 - gamma / 2.0, b - 1) * spread / math.sqrt(b)
    return point - half, point + half


def is_estimate(model: SimplifiedDeltaGamma, tail: TailSpec, cfg: IsConfig, alpha: float,
                beta: float, stream: RngStream, gamma: float = 0.05) -> EstimateReport:
    """Two-stage IS-inspired CoVaR estimate with a sectioning confidence interval."""
    _check_prob("alpha", alpha)
    _check_prob("beta", beta)
    if not model.gamma1[-1] > 0:
        raise CurvatureError(f"last driver has X-curvature {model.gamma1[-1]:.3g} <= 0")
    x1 = sample_losses(model, tail, stream.substream(1), cfg.n1).x
    v_alpha = var_order_stat(x1, alpha)
    rw = is_scenarios(model, tail, v_alpha, stream.substream(2), cfg.n2)
    crossed = float(np.mean(rw.crossed))
    if crossed == 0.0:
        raise DegenerateISError(
            f"no scenario reaches the VaR estimate {v_alpha:.6g} (all q = 0); g* exceeds it "
            "everywhere - increase n1 or check the model")
    values, weights = rw.pairs()
    point = weighted_quantile(values, weights, beta)
    size = 2 * (cfg.n2 // cfg.b)
    sections = [weighted_quantile(values[i:i + size], weights[i:i + size], beta)
                for i in range(0, 2 * cfg.n2, size)]
    lo, hi = sectioning_ci(sections, point, gamma)
    return EstimateReport(point, lo, hi, 1.0 - gamma, {
        "v_alpha": v_alpha, "crossed_fraction": crossed,
        "n1": cfg.n1, "n2": cfg.n2, "b": cfg.b,
    })


def is_conditional_cdf(model: SimplifiedDeltaGamma, tail: TailSpec, x: float, y,
                       n2: int, stream: RngStream):
    """IS ratio estimate of P(Y <= y | X = x); ``y`` may be a scalar or a grid."""
    rw = is_scenarios(model, tail, x, stream, n2)
    values, weights = rw.pairs()
    w = normalized_weights(weights)
    order = np.argsort(values, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    idx = np.searchsorted(values[order], np.asarray(y, dtype=np.float64), side="right")
    # all mass below y is exactly 1, whatever the rounding in the cumulative sum
    out = np.where(idx >= np.flatnonzero(w[order] > 0)[-1] + 1, 1.0, np.minimum(cum[idx], 1.0))
    return float(out) if np.ndim(y) == 0 else out


def band_conditional_cdf(sample: LossSample, x: float, y, eps: float):
    """Brute-force P(Y <= y | |X - x| <= eps) from a plain sample."""
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    in_band = np.abs(sample.x - x) <= eps
    count = int(in_band.sum())
    if count == 0:
        raise EmptyBandError(f"no observation within eps={eps} of x={x}")
    yb = np.sort(sample.y[in_band])
    hits = np.searchsorted(yb, np.asarray(y, dtype=np.float64), side="right")
    out = hits / count
    return float(out) if np.ndim(y) == 0 else out


ROOT_CSV_COLUMNS = ("scenario", "crossed", "r1", "r2", "lambda", "q1", "q2", "y1", "y2")


def export_root_weights_csv(rw: RootWeights, path) -> None:
    """Write scenarios to CSV; non-crossed rows leave the root and Y columns empty."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(ROOT_CSV_COLUMNS)
        for i in range(len(rw)):
            c = bool(np.ravel(rw.crossed)[i])
            vals = [np.ravel(getattr(rw, f))[i] for f in ("r1", "r2", "lam", "q1", "q2", "y1", "y2")]
            cells = [repr(float(v)) if (c or f in ("lam", "q1", "q2")) else ""
                     for v, f in zip(vals, ("r1", "r2", "lam", "q1", "q2", "y1", "y2"))]
            out.writerow([i, int(c), *cells])
