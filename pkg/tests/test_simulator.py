import math

import numpy as np
import pytest
from scipy import stats

from tracefit.degree import Fixed, Poisson
from tracefit.inference import EmptyHistogramError
from tracefit.kernels import EpidemicParams
from tracefit.mixture import detectee_pmf
from tracefit.simulator import (
    RECORD_COLUMNS,
    IndexCaseRecord,
    SimConfig,
    configuration_graph,
    records_to_csv,
    records_to_histogram,
    simulate,
    simulate_configuration,
    simulate_tree,
)

BASE = EpidemicParams(1.5, 0.5, 0.5, 0.6)


def run(params=BASE, degree=Poisson(4.0), **kw):
    kw.setdefault("max_index_cases", 2000)
    kw.setdefault("max_infected", None)
    return simulate_tree(SimConfig(params, degree, **kw))


def binned_chi2_pvalue(hist, pmf, max_bin):
    # counts 0..max_bin-1 separately, the rest pooled
    obs = np.zeros(max_bin + 1)
    for i, n in hist.items():
        obs[min(i, max_bin)] += n
    exp = np.append(pmf.probs[:max_bin], 1.0 - pmf.probs[:max_bin].sum()) * hist.n
    return stats.chisquare(obs, exp).pvalue


class TestConfig:
    def test_needs_a_stop(self):
        with pytest.raises(ValueError):
            SimConfig(BASE, Poisson(4.0), max_infected=None)

    def test_window_order(self):
        with pytest.raises(ValueError):
            SimConfig(BASE, Poisson(4.0), window=(2.0, 1.0))

    def test_graph_kind(self):
        with pytest.raises(ValueError):
            SimConfig(BASE, Poisson(4.0), graph="lattice")


class TestTree:
    def test_p_zero(self):
        res = run(BASE.with_p(0.0), mode="full")
        assert res.records and all(r.total_detected == 0 for r in res.records)

    def test_sigma_zero(self):
        res = run(EpidemicParams(1.5, 1.0, 0.0, 0.6), max_index_cases=None, max_infected=3000)
        assert res.empty and res.summary["no_index_cases"]
        assert res.summary["stop_reason"] == "max_infected"

    def test_reproducible(self):
        a = records_to_csv(run(seed=11, mode="full").records)
        b = records_to_csv(run(seed=11, mode="full").records)
        c = records_to_csv(run(seed=12, mode="full").records)
        assert a == b
        assert a != c

    def test_record_invariants(self):
        res = run(mode="full", seed=3)
        by_node = {r.node: r for r in res.records}
        for r in res.records:
            assert r.age > 0 and r.infection_time < r.diagnosis_time
            assert r.forward_detected <= r.downstream_infected
            assert r.total_detected <= r.forward_detected + 1
            assert not r.outside_infection
            if r.infector in by_node:
                assert by_node[r.infector].infection_time < r.infection_time

    def test_backward_removes_infector(self):
        res = run(BASE.with_p(1.0), mode="full", seed=5)
        by_node = {r.node: r for r in res.records}
        backward = [r for r in res.records if r.backward_detected]
        assert backward
        for r in backward:
            # the infector left at r's diagnosis, so it can never be diagnosed itself
            assert r.infector not in by_node

    def test_forward_never_backward(self):
        assert not any(r.backward_detected for r in run(mode="forward").records)

    def test_index_fraction_is_p_obs(self):
        par = EpidemicParams(1.5, 0.3, 0.7, 0.0)
        res = run(par, max_index_cases=None, max_infected=50_000, seed=2)
        removals = res.summary["diagnosed"] + res.summary["recovered"]
        assert removals > 10_000
        frac = res.summary["diagnosed"] / removals
        se = math.sqrt(par.p_obs * (1 - par.p_obs) / removals)
        assert abs(frac - par.p_obs) < 3 * se

    def test_age_distribution_without_tracing(self):
        res = run(BASE.with_p(0.0), max_index_cases=20_000, seed=4)
        ages = np.array([r.age for r in res.records])
        assert stats.kstest(ages, "expon", args=(0, 1 / 4.5)).pvalue > 1e-3

    def test_forward_histogram_matches_pmf(self):
        res = run(degree=Fixed(4), max_index_cases=20_000, seed=6)
        pmf = detectee_pmf(BASE, Fixed(4), "forward", 4)
        assert binned_chi2_pvalue(res.histogram(), pmf, 4) > 1e-3

    def test_full_histogram_matches_pmf_when_rarely_diagnosed(self):
        # the infector-alive factor is exact when few infectors are removed by diagnosis
        par = EpidemicParams(1.5, 0.95, 0.05, 0.6)
        res = run(par, mode="full", max_index_cases=3000, seed=7)
        pmf = detectee_pmf(par, Poisson(4.0), "full", 8)
        assert binned_chi2_pvalue(res.histogram(), pmf, 5) > 1e-3

    def test_window(self):
        res = run(window=(1.0, 1.5), max_index_cases=None, max_infected=5000)
        assert all(1.0 <= r.diagnosis_time <= 1.5 for r in res.records)


class TestConfiguration:
    def test_graph_structure(self):
        rng = np.random.default_rng(0)
        indptr, indices = configuration_graph(2001, Fixed(2), rng)
        deg = np.diff(indptr)
        assert deg.max() <= 3
        for v in range(0, 2001, 97):
            nb = indices[indptr[v]:indptr[v + 1]]
            assert v not in nb and len(set(nb)) == len(nb)
            for w in nb:
                assert v in indices[indptr[w]:indptr[w + 1]]

    def test_p_zero(self):
        cfg = SimConfig(BASE.with_p(0.0), Poisson(3.0), graph="configuration", n_nodes=20_000,
                        max_infected=3000, window=(0.0, 5.0), seed=1)
        res = simulate_configuration(cfg)
        assert res.records and all(r.total_detected == 0 for r in res.records)
        assert 0.0 <= res.outside_fraction <= 1.0

    def test_outside_infections_appear(self):
        cfg = SimConfig(BASE, Poisson(3.0), graph="configuration", n_nodes=2000,
                        max_infected=2000, max_time=6.0, seed=2)
        res = simulate(cfg)
        assert res.outside_fraction > 0
        assert res.outside_fraction == pytest.approx(
            np.mean([r.outside_infection for r in res.records]))

    def test_reproducible(self):
        cfg = SimConfig(BASE, Fixed(3), graph="configuration", n_nodes=5000, max_infected=1500,
                        seed=9, mode="full")
        assert records_to_csv(simulate(cfg).records) == records_to_csv(simulate(cfg).records)


def test_records_to_histogram():
    recs = [IndexCaseRecord(i, 0.0, 1.0, 3, c, False) for i, c in enumerate((0, 0, 2))]
    h = records_to_histogram(recs, "forward")
    assert h.items() == [(0, 2), (2, 1)] and h.n == 3
    back = [IndexCaseRecord(0, 0.0, 1.0, 3, 1, True)]
    assert records_to_histogram(back, "full").items() == [(2, 1)]
    assert records_to_histogram(back, "forward").items() == [(1, 1)]
    with pytest.raises(EmptyHistogramError):
        records_to_histogram([], "forward")


def test_csv_columns():
    text = records_to_csv([IndexCaseRecord(4, 0.25, 1.0, 3, 1, True)])
    head, row = text.strip().split("\n")
    assert head == ",".join(RECORD_COLUMNS)
    assert head == ("node,infection_time,diagnosis_time,age,downstream_infected,"
                    "forward_detected,backward_detected,total_detected,outside_infection")
    assert row == "4,0.25,1.0,0.75,3,1,1,2,0"
