import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mccovar.harness as harness
from mccovar.dgmodel import NORMAL, SimplifiedDeltaGamma, TailSpec, published_fixture, save_model
from mccovar.errors import InvalidParameterError, MissingTruthError
from mccovar.estimators import EstimateReport
from mccovar.harness import (CSV_HEADER, ExperimentSpec, MetricsRow, emit_report, loglog_slope,
                             lookup_reference, parse_report, reference_run, run_experiment,
                             run_replications, summarize)
from mccovar.numerics import RngStream


def _rows(n_values, rmse):
    return [MetricsRow(n, "x", 0.0, r, r, 1.0, 0.1, 0.0) for n, r in zip(n_values, rmse)]


def _strip_time(rows):
    return [dataclasses.replace(r, wall_seconds=0.0) for r in rows]


@st.composite
def models(draw):
    d = draw(st.integers(2, 10))
    s = RngStream(draw(st.integers(0, 2**32)))
    g1 = np.sort(s.uniform(d) - 0.3)
    g1[-1] = 0.5 + s.uniform()
    return SimplifiedDeltaGamma(d, 0.0, 0.0, 0.3 * s.normal(d), g1, 0.3 * s.normal(d), 0.3 * s.normal(d))


# -- spec validation and truth ----------------------------------------------------

def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(replications=0)
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(estimator="XYZ")
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(model="linear", estimator="IS")
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(sample_sizes=[1000], allocation=(10, 10))
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(model="fixture", estimator="IS", sample_sizes=[1000], allocation=(400, 500, 10))
    spec = ExperimentSpec(sample_sizes=[100, 400], allocation=[(10, 10), (20, 20)])
    assert spec.alloc_label(400) == "k=20;m=20"


def test_truth_precedence(tmp_path):
    spec = ExperimentSpec(model="linear", truth=123.0)
    assert harness.resolve_truth(spec) == pytest.approx(0.1240, abs=5e-5)
    with pytest.raises(MissingTruthError):
        harness.resolve_truth(ExperimentSpec(model="fixture"))
    assert harness.resolve_truth(ExperimentSpec(model="fixture", truth=0.6)) == 0.6
    cache = tmp_path / "ref.json"
    m = published_fixture()
    cache.write_text('{"%s": 0.61}' % harness.reference_key(m, NORMAL, 0.95, 0.95, 1000, 1))
    assert harness.resolve_truth(ExperimentSpec(model="fixture", reference_cache=str(cache))) == 0.61
    # a user value wins over the cache
    assert harness.resolve_truth(ExperimentSpec(model="fixture", truth=0.7, reference_cache=str(cache))) == 0.7


def test_model_file_and_object(tmp_path):
    path = tmp_path / "m.json"
    save_model(published_fixture(), path)
    a = run_experiment(ExperimentSpec(model=str(path), estimator="IS", sample_sizes=[2000], replications=3, truth=0.6))
    b = run_experiment(ExperimentSpec(model=published_fixture(), estimator="IS", sample_sizes=[2000],
                                      replications=3, truth=0.6))
    assert _strip_time(a) == _strip_time(b)


# -- metrics -------------------------------------------------------------------------

def test_summarize_stub_exact_truth():
    rep = EstimateReport(0.5, 0.4, 0.6, 0.95)
    row = summarize(10, "stub", [0.5], 0.5, [rep], [0.01])
    assert (row.bias, row.sd, row.rmse, row.cp) == (0.0, 0.0, 0.0, 1.0)
    assert row.width == pytest.approx(0.2)


def test_summarize_missing_ci_gives_nan():
    reps = [EstimateReport(0.5, 0.5, 0.5, 0.95, has_ci=False), EstimateReport(0.5, 0.4, 0.6, 0.95)]
    row = summarize(10, "x", [0.5, 0.5], 0.5, reps, [0.0, 0.0])
    assert math.isnan(row.cp) and math.isnan(row.width)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(-1e3, 1e3))
def test_rmse_identity(estimates, truth):
    reps = [EstimateReport(e, e - 1, e + 1, 0.95) for e in estimates]
    row = summarize(1, "x", estimates, truth, reps, [0.0] * len(estimates))
    lhs, rhs = row.rmse**2, row.bias**2 + row.sd**2
    assert abs(lhs - rhs) <= 1e-10 * max(lhs, 1e-300) + 1e-20
    assert 0.0 <= row.cp <= 1.0 and row.width >= 0.0


def test_linear_be_table_row():
    spec = ExperimentSpec(model="linear", estimator="BE", sample_sizes=[40_000], allocation=(200, 200),
                          replications=100, seed=11)
    (row,) = run_experiment(spec)
    assert 1.27e-3 / 2 <= abs(row.bias) <= 1.27e-3 * 2 or abs(row.bias) <= 5e-3
    assert 2.85e-3 / 2 <= row.rmse <= 2.85e-3 * 2
    assert row.cp >= 0.85
    assert abs(row.rmse**2 - row.bias**2 - row.sd**2) <= 1e-10 * row.rmse**2


def test_fixture_is_table_row():
    spec = ExperimentSpec(model="fixture", estimator="IS", sample_sizes=[100_000],
                          allocation=(50_000, 50_000, 10), replications=100, seed=12, truth=0.6167)
    (row,) = run_experiment(spec)
    assert row.rmse <= 6e-3
    assert row.width > 0


# -- determinism and independence ----------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(models(), st.sampled_from(["BE", "IS"]), st.integers(0, 2**32))
def test_determinism_across_threads(model, estimator, seed):
    spec = ExperimentSpec(model=model, estimator=estimator, sample_sizes=[400], replications=4,
                          seed=seed, truth=0.0, allocation=(20, 20) if estimator == "BE" else (200, 200, 10))
    try:
        one = run_experiment(spec, threads=1)
    except harness.InvalidParameterError:
        raise
    except Exception as exc:  # degenerate draws must fail identically too
        with pytest.raises(type(exc)):
            run_experiment(spec, threads=3)
        return
    three = run_experiment(spec, threads=3)
    assert emit_report(_strip_time(one)) == emit_report(_strip_time(three))


def test_replication_split_merge():
    spec = ExperimentSpec(model="nonlinear", estimator="BE", sample_sizes=[10_000], replications=10, seed=3)
    truth = harness.resolve_truth(spec)
    full = run_replications(spec, 10_000, range(10))
    merged = run_replications(spec, 10_000, range(5)) + run_replications(spec, 10_000, range(5, 10), threads=2)
    summary = lambda res: summarize(10_000, "x", [r.point for r, _ in res], truth, [r for r, _ in res], [0.0])
    assert summary(full) == summary(merged)
    (row,) = run_experiment(spec)
    assert _strip_time([row])[0] == dataclasses.replace(summary(full), alloc=row.alloc)


def test_be_and_qre_share_data():
    base = dict(model="nonlinear", sample_sizes=[5000], replications=1, seed=4)
    stream = RngStream(4, 0, (5000,))
    sample_be = harness._sampler(ExperimentSpec(estimator="BE", **base))(stream.substream(1), 5000)
    sample_qre = harness._sampler(ExperimentSpec(estimator="QRE", **base))(stream.substream(1), 5000)
    np.testing.assert_array_equal(sample_be.y, sample_qre.y)


# -- rates and reports ----------------------------------------------------------------

def test_loglog_slope_examples():
    n = [1e3, 1e4, 1e5]
    assert loglog_slope(_rows(n, [x**-0.5 for x in n])) == pytest.approx(-0.5, abs=1e-12)
    assert loglog_slope(_rows(n, [0.3] * 3)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidParameterError):
        loglog_slope(_rows(n[:2], [1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        loglog_slope(_rows([10, 10, 100], [1.0, 1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        loglog_slope(_rows(n, [1.0, 0.0, 1.0]))


def test_emit_csv_and_roundtrip():
    row = MetricsRow(40000, "k=200;m=200", 1.2345678e-3, 2.5e-3, 2.7876543e-3, 0.96, 1.1e-2, 0.25)
    text = emit_report([row])
    lines = text.splitlines()
    assert len(lines) == 2
    assert lines[0] == "n,alloc,bias,sd,rmse,cp,width,seconds"
    assert lines[1] == "40000,k=200;m=200,1.23457e-03,2.50000e-03,2.78765e-03,9.60000e-01,1.10000e-02,2.50000e-01"
    (back,) = parse_report(text)
    assert back.n == row.n and back.alloc == row.alloc
    for f in ("bias", "sd", "rmse", "cp", "width", "wall_seconds"):
        assert getattr(back, f) == pytest.approx(getattr(row, f), rel=5e-6)
    nan_row = dataclasses.replace(row, cp=math.nan, width=math.nan)
    assert math.isnan(parse_report(emit_report([nan_row]))[0].cp)


def test_emit_markdown():
    rows = _rows([10, 20], [1.0, 0.5])
    text = emit_report(rows, "markdown")
    lines = text.splitlines()
    assert len(lines) == 4
    assert all(line.count("|") == 9 for line in lines)
    assert [c.strip() for c in lines[0].strip("|").split("|")] == list(CSV_HEADER)
    with pytest.raises(InvalidParameterError):
        emit_report([], "csv")
    with pytest.raises(InvalidParameterError):
        emit_report(rows, "html")


def test_parse_rejects_wrong_header():
    with pytest.raises(InvalidParameterError):
        parse_report("a,b\n1,2\n")


# -- reference values --------------------------------------------------------------------

def test_reference_cache_hit(tmp_path, monkeypatch):
    cache = tmp_path / "reference_cache.json"
    m = published_fixture()
    v = reference_run(m, NORMAL, 0.95, 0.95, 20_000, 5, cache)
    assert lookup_reference(cache, m, NORMAL, 0.95, 0.95) == v

    def boom(*a, **k):
        raise AssertionError("recomputed despite cache")

    monkeypatch.setattr(harness, "is_estimate", boom)
    assert reference_run(m, NORMAL, 0.95, 0.95, 20_000, 5, cache) == v
    # a larger n_ref entry takes precedence in lookups
    monkeypatch.undo()
    v2 = reference_run(m, NORMAL, 0.95, 0.95, 40_000, 5, cache)
    assert lookup_reference(cache, m, NORMAL, 0.95, 0.95) == v2
    assert lookup_reference(cache, m, TailSpec.student_t(6), 0.95, 0.95) is None


def test_reference_fixture_normal():
    assert abs(reference_run(published_fixture(), NORMAL, 0.95, 0.95, 10**7, 2024) - 0.6167) <= 2e-3


def test_reference_fixture_student_t():
    v = reference_run(published_fixture(), TailSpec.student_t(6), 0.95, 0.95, 10**7, 2024)
    assert abs(v - 1.4421) <= 2e-2
