"""Replicated experiments: bias / SD / RMSE / coverage / width tables, log-log
rate fits, report emission and cached high-n reference values.

Replication ``r`` at sample size ``n`` owns the stream ``RngStream(seed, r, (n,))``,
so results do not depend on the number of worker threads or their scheduling.
Within a replication the sample comes from substream 1 (the IS second stage
from substream 2) and QRE bootstrap draws from substream 3; BE and QRE with the
same seed therefore see identical data.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import (LinearPortfolioSpec, NonlinearPortfolioSpec, linear_covar, nonlinear_covar,
                       qre_covar, sample_linear, sample_nonlinear)
from .dgmodel import NORMAL, SimplifiedDeltaGamma, TailKind, TailSpec, load_model, published_fixture, sample_losses
from .errors import InvalidParameterError, MissingTruthError
from .estimators import BatchConfig, EstimateReport, IsConfig, batching_report, is_estimate
from .numerics import RngStream

log = logging.getLogger(__name__)

ESTIMATORS = ("BE", "IS", "QRE")
CLOSED_FORM_MODELS = ("linear", "nonlinear")
FIXTURE_MODEL = "fixture"
CSV_HEADER = ("n", "alloc", "bias", "sd", "rmse", "cp", "width", "seconds")


@dataclass
class ExperimentSpec:
    """One replicated sweep over sample sizes.

    ``model`` is ``linear``, ``nonlinear``, ``fixture``, a path to a model
    document or a :class:`SimplifiedDeltaGamma` instance.  ``allocation`` is ``"default"``, one explicit tuple ((k, m) for BE,
    (n1, n2, b) for IS) or a list with one tuple per sample size.
    """
    model: object = "linear"
    estimator: str = "BE"
    alpha: float = 0.95
    beta: float = 0.95
    sample_sizes: list = field(default_factory=lambda: [10_000])
    allocation: object = "default"
    replications: int = 100
    seed: int = 2024
    ci_level: float = 0.95
    tail: TailSpec = NORMAL
    rho: float = 0.95
    truth: float | None = None
    reference_cache: str | None = None
    bootstrap_reps: int = 200
    sections: int = 10

    def __post_init__(self):
        self.estimator = self.estimator.upper()
        if self.estimator not in ESTIMATORS:
            raise InvalidParameterError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.replications < 1:
            raise InvalidParameterError("replications must be at least 1")
        if not self.sample_sizes or any(int(n) < 1 for n in self.sample_sizes):
            raise InvalidParameterError("sample sizes must be positive integers")
        self.sample_sizes = [int(n) for n in self.sample_sizes]
        if not 0.0 < self.ci_level < 1.0:
            raise InvalidParameterError("ci_level must lie in (0, 1)")
        if self.estimator == "IS" and isinstance(self.model, str) and self.model in CLOSED_FORM_MODELS:
            raise InvalidParameterError("the IS-inspired estimator needs a delta-gamma model")
        for n in self.sample_sizes:
            self.config_for(n)

    @property
    def gamma(self) -> float:
        return 1.0 - self.ci_level

    def config_for(self, n: int):
        """The estimator configuration used at sample size ``n``."""
        alloc = self.allocation
        if isinstance(alloc, list) and alloc and isinstance(alloc[0], (list, tuple)):
            if len(alloc) != len(self.sample_sizes):
                raise InvalidParameterError("need one allocation per sample size")
            alloc = alloc[self.sample_sizes.index(n)]
        if self.estimator == "QRE":
            return None
        if alloc == "default":
            return BatchConfig.default(n) if self.estimator == "BE" else IsConfig.default(n, self.sections)
        alloc = tuple(int(v) for v in alloc)
        if self.estimator == "BE":
            cfg = BatchConfig(*alloc)
            if cfg.n != n:
                raise InvalidParameterError(f"k*m = {cfg.n} does not match n = {n}")
        else:
            cfg = IsConfig(*alloc)
            if cfg.n != n:
                raise InvalidParameterError(f"n1+n2 = {cfg.n} does not match n = {n}")
        return cfg

    def alloc_label(self, n: int) -> str:
        cfg = self.config_for(n)
        return f"boot={self.bootstrap_reps}" if cfg is None else cfg.label()


@dataclass
class MetricsRow:
    n: int
    alloc: str
    bias: float
    sd: float
    rmse: float
    cp: float
    width: float
    wall_seconds: float


def resolve_model(name):
    """Model object for a spec's ``model`` field (a name, a path or a model itself)."""
    if isinstance(name, SimplifiedDeltaGamma):
        return name
    if name == FIXTURE_MODEL:
        return published_fixture()
    if name in CLOSED_FORM_MODELS:
        raise InvalidParameterError(f"{name} is a closed-form portfolio, not a delta-gamma model")
    return load_model(name)


def _portfolio(spec: ExperimentSpec):
    if spec.model == "linear":
        return LinearPortfolioSpec(rho=spec.rho)
    return NonlinearPortfolioSpec(rho=spec.rho)


def _sampler(spec: ExperimentSpec):
    if spec.model == "linear":
        p = _portfolio(spec)
        return lambda stream, n: sample_linear(p, stream, n)
    if spec.model == "nonlinear":
        p = _portfolio(spec)
        return lambda stream, n: sample_nonlinear(p, stream, n)
    model = resolve_model(spec.model)
    return lambda stream, n: sample_losses(model, spec.tail, stream, n)


def resolve_truth(spec: ExperimentSpec) -> float:
    """Closed form, then user-supplied value, then a cached reference run."""
    if spec.model == "linear":
        return linear_covar(_portfolio(spec), spec.alpha, spec.beta)
    if spec.model == "nonlinear":
        return nonlinear_covar(_portfolio(spec), spec.alpha, spec.beta)[0]
    if spec.truth is not None:
        return float(spec.truth)
    if spec.reference_cache:
        model = resolve_model(spec.model)
        hit = lookup_reference(spec.reference_cache, model, spec.tail, spec.alpha, spec.beta)
        if hit is not None:
            return hit
    raise MissingTruthError(
        f"no ground truth for model {spec.model!r}: pass a reference value or run "
        "the reference command first")


def single_estimate(spec: ExperimentSpec, n: int, stream: RngStream, model=None,
                    sampler=None) -> EstimateReport:
    """One estimate at sample size ``n`` from a replication stream."""
    cfg = spec.config_for(n)
    if spec.estimator == "IS":
        model = model if model is not None else resolve_model(spec.model)
        return is_estimate(model, spec.tail, cfg, spec.alpha, spec.beta, stream, spec.gamma)
    sampler = sampler if sampler is not None else _sampler(spec)
    if spec.estimator == "BE":
        return batching_report(sampler(stream.substream(1), cfg.n), cfg, spec.alpha, spec.beta, spec.gamma)
    sample = sampler(stream.substream(1), n)
    return qre_covar(sample, spec.alpha, spec.beta, spec.bootstrap_reps, stream.substream(3), spec.gamma)


def summarize(n: int, alloc: str, estimates, truth: float, reports, seconds) -> MetricsRow:
    """Reduce replications to one row; SD uses the population divisor R."""
    est = np.asarray(estimates, dtype=np.float64)
    err = est - truth
    bias = float(err.mean())
    sd = float(est.std())
    rmse = float(math.sqrt(np.mean(err * err)))
    if all(r.has_ci for r in reports):
        cp = float(np.mean([r.ci_low <= truth <= r.ci_high for r in reports]))
        width = float(np.mean([r.width for r in reports]))
    else:
        cp = width = math.nan
    return MetricsRow(n, alloc, bias, sd, rmse, cp, width, float(np.mean(seconds)))


def _is_closed_form(spec: ExperimentSpec) -> bool:
    return isinstance(spec.model, str) and spec.model in CLOSED_FORM_MODELS


def run_replications(spec: ExperimentSpec, n: int, indices, threads: int = 1):
    """``(report, seconds)`` for each replication index, in index order."""
    model = None if _is_closed_form(spec) else resolve_model(spec.model)
    sampler = _sampler(spec)

    def one(r):
        t0 = time.perf_counter()
        rep = single_estimate(spec, n, RngStream(spec.seed, r, (n,)), model, sampler)
        return rep, time.perf_counter() - t0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, indices))
    return [one(r) for r in indices]


def run_experiment(spec: ExperimentSpec, threads: int = 1, truth: float | None = None) -> list[MetricsRow]:
    truth = resolve_truth(spec) if truth is None else truth
    rows = []
    for n in spec.sample_sizes:
        results = run_replications(spec, n, range(spec.replications), threads)
        reports = [r for r, _ in results]
        rows.append(summarize(n, spec.alloc_label(n), [r.point for r in reports], truth, reports,
                              [s for _, s in results]))
        log.info("n=%d done: rmse=%.3e", n, rows[-1].rmse)
    return rows


def loglog_slope(rows) -> float:
    """Least-squares slope of log(rmse) against log(n)."""
    if len(rows) < 3:
        raise InvalidParameterError("a rate fit needs at least three sample sizes")
    n = np.array([r.n for r in rows], dtype=np.float64)
    rmse = np.array([r.rmse for r in rows], dtype=np.float64)
    if np.unique(n).size != n.size:
        raise InvalidParameterError("sample sizes must be distinct")
    if not np.all(rmse > 0):
        raise InvalidParameterError("rmse must be positive for a log-log fit")
    return float(np.polyfit(np.log(n), np.log(rmse), 1)[0])


# -- reports --------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.5e}"


def _cells(row: MetricsRow):
    return [str(row.n), row.alloc, _fmt(row.bias), _fmt(row.sd), _fmt(row.rmse),
            _fmt(row.cp), _fmt(row.width), _fmt(row.wall_seconds)]


def emit_report(rows, fmt: str = "csv") -> str:
    if not rows:
        raise InvalidParameterError("nothing to report")
    if fmt == "csv":
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(CSV_HEADER)
        out.writerows(_cells(r) for r in rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(CSV_HEADER) + " |", "|" + "---|" * len(CSV_HEADER)]
        lines += ["| " + " | ".join(_cells(r)) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise InvalidParameterError(f"unknown report format {fmt!r}")


def parse_report(text: str) -> list[MetricsRow]:
    """Inverse of the CSV form of :func:`emit_report`."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise InvalidParameterError(f"unexpected report header {header}")
    return [MetricsRow(int(r[0]), r[1], *(float(v) for v in r[2:])) for r in reader if r]


# -- reference values -------------------------------------------------------------

def _ref_prefix(model: SimplifiedDeltaGamma, tail: TailSpec, alpha: float, beta: float) -> str:
    return f"{model.fingerprint()}|{tail.label()}|{alpha!r}|{beta!r}"


def reference_key(model, tail, alpha, beta, n_ref, seed) -> str:
    return f"{_ref_prefix(model, tail, alpha, beta)}|{int(n_ref)}|{int(seed)}"


def _read_cache(path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"{path}: unreadable reference cache ({exc})") from None


def lookup_reference(cache_path, model, tail, alpha, beta):
    """Cached reference with the largest n_ref for this model and target, or None."""
    prefix = _ref_prefix(model, tail, alpha, beta) + "|"
    hits = [(int(k[len(prefix):].split("|")[0]), v) for k, v in _read_cache(cache_path).items()
            if k.startswith(prefix)]
    return max(hits)[1] if hits else None


def reference_run(model: SimplifiedDeltaGamma, tail: TailSpec, alpha: float, beta: float,
                  n_ref: int, seed: int, cache_path=None) -> float:
    """A single high-n IS estimate, memoized in a JSON file when ``cache_path`` is given."""
    key = reference_key(model, tail, alpha, beta, n_ref, seed)
    cache = _read_cache(cache_path) if cache_path else {}
    if key in cache:
        return float(cache[key])
    value = is_estimate(model, tail, IsConfig.default(n_ref), alpha, beta, RngStream(seed, 0)).point
    if cache_path:
        cache = _read_cache(cache_path)
        cache[key] = value
        Path(cache_path).write_text(json.dumps(cache, indent=2, sort_keys=True) + "\n")
    return value


def tail_from(kind: str, nu=None) -> TailSpec:
    if kind == TailKind.NORMAL.value:
        return NORMAL
    if kind == TailKind.STUDENT_T.value:
        if nu is None:
            raise InvalidParameterError("a t tail needs --nu")
        return TailSpec.student_t(int(nu))
    raise InvalidParameterError(f"unknown tail {kind!r}; use 'normal' or 't'")
