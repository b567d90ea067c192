import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_table
from webbias.clicks import ClickRecord
from webbias.errors import InsufficientDataError
from webbias.graph import PageRankVector
from webbias.scaling import (TrafficVolumeTable, fit_rank_distribution, fit_traffic_scaling, log_bin,
                             traffic_by_domain, write_binned_csv)


def pareto(alpha, n, seed, x_min=1e-6):
    u = np.random.default_rng(seed).random(n)
    return x_min * (1.0 - u) ** (-1.0 / (alpha - 1.0))


def prv(scores):
    names = [f"d{i}.com" for i in range(len(scores))]
    return PageRankVector(names, np.asarray(scores, dtype=float), 0.15, 1, 0.0, True)


def volumes_for(pr, values):
    return TrafficVolumeTable(dict(zip(pr.names, values)))


def test_traffic_by_domain_counts():
    recs = [ClickRecord(i, "u", "a", "r") for i in range(5)] + [ClickRecord(9, "u", "b", "r")] * 2
    assert traffic_by_domain(recs).volume == {"a": 5, "b": 2}
    assert traffic_by_domain([ClickRecord(0, "u", "t", "r")]).volume == {"t": 1}


def test_traffic_by_domain_table_matches_oracle():
    rng = np.random.default_rng(0)
    rows = [(i, "u", f"t{rng.integers(100)}", f"r{rng.integers(3)}") for i in range(5000)]
    oracle = {}
    for r in rows:
        oracle[r[2]] = oracle.get(r[2], 0) + 1
    assert traffic_by_domain(make_table(rows)).volume == oracle


def test_exact_proportionality():
    pr = prv(pareto(2.1, 20_000, 1))
    fit = fit_traffic_scaling(volumes_for(pr, 3.7e6 * pr.scores), pr)
    assert fit.exponent == pytest.approx(1.0, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0)


def test_flat_traffic():
    pr = prv(pareto(2.1, 20_000, 2))
    fit = fit_traffic_scaling(volumes_for(pr, np.full(20_000, 42.0)), pr)
    assert fit.exponent == pytest.approx(0.0, abs=1e-6)


def test_noisy_power_law_recovered():
    pr = prv(pareto(2.1, 100_000, 3))
    noise = np.exp(np.random.default_rng(4).normal(0.0, 0.3, 100_000))
    fit = fit_traffic_scaling(volumes_for(pr, 1e5 * pr.scores ** 0.8 * noise), pr)
    assert fit.exponent == pytest.approx(0.8, abs=0.05)
    assert fit.stderr > 0
    assert fit.extra["unbinned"]["exponent"] == pytest.approx(0.8, abs=0.05)


def test_rescaling_volumes_keeps_slope():
    pr = prv(pareto(2.1, 5000, 5))
    v = 50 * pr.scores ** 1.2 * np.exp(np.random.default_rng(6).normal(0, 0.5, 5000))
    a = fit_traffic_scaling(volumes_for(pr, v), pr)
    b = fit_traffic_scaling(volumes_for(pr, 1000 * v), pr)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-9)
    assert b.intercept == pytest.approx(a.intercept + 3.0, abs=1e-9)


@given(st.floats(0.2, 2.5), st.integers(5, 20))
def test_bin_density_irrelevant_for_exact_law(gamma, bpd):
    pr = prv(pareto(2.1, 3000, 7))
    vol = volumes_for(pr, 10.0 * pr.scores ** gamma)
    a = fit_traffic_scaling(vol, pr, bins_per_decade=bpd, min_bin_count=1)
    b = fit_traffic_scaling(vol, pr, bins_per_decade=2 * bpd, min_bin_count=1)
    assert abs(a.exponent - b.exponent) < 1e-9


def test_too_few_bins():
    pr = prv([1e-3, 1.1e-3, 1.2e-3])
    with pytest.raises(InsufficientDataError):
        fit_traffic_scaling(volumes_for(pr, [1, 2, 3]), pr)


def test_domains_without_traffic_are_ignored():
    pr = prv(pareto(2.1, 4000, 8))
    vol = dict(zip(pr.names, pr.scores * 1e6))
    for name in pr.names[::3]:
        del vol[name]
    fit = fit_traffic_scaling(TrafficVolumeTable(vol), pr)
    assert fit.extra["n_domains"] == len(vol)
    assert fit.exponent == pytest.approx(1.0, abs=1e-6)


@given(st.lists(st.floats(1e-8, 1.0), min_size=1, max_size=200), st.integers(1, 12))
def test_log_bin_partition(xs, bpd):
    x = np.array(xs)
    b = log_bin(x, np.ones_like(x), bpd)
    assert b.n.sum() == len(x)
    assert (np.diff(b.edges) > 0).all()
    assert (b.x_center >= b.edges[:-1] * (1 - 1e-12)).all() and (b.x_center <= b.edges[1:] * (1 + 1e-12)).all()


def test_binned_csv(tmp_path):
    pr = prv(pareto(2.1, 2000, 9))
    fit = fit_traffic_scaling(volumes_for(pr, pr.scores * 1e4), pr)
    write_binned_csv(tmp_path / "b.csv", fit)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "x_center,y_mean,n,used" and len(lines) == 1 + len(fit.extra["bins"])


@pytest.mark.parametrize("alpha, tol", [(2.1, 0.02), (3.0, 0.03)])
def test_mle_recovers_pareto(alpha, tol):
    fit = fit_rank_distribution(pareto(alpha, 100_000, 11), 1e-6)
    assert fit.exponent == pytest.approx(alpha, abs=tol)
    assert fit.stderr == pytest.approx((fit.exponent - 1) / np.sqrt(100_000))
    assert 0.0 <= fit.r_squared <= 1.0


@given(st.floats(1e-3, 1e3))
def test_mle_scale_invariant(c):
    x = pareto(2.5, 2000, 12)
    a = fit_rank_distribution(x, 2e-6).exponent
    b = fit_rank_distribution(x * c, 2e-6 * c).exponent
    assert abs(a - b) < 1e-12


def test_mle_degenerate_inputs():
    with pytest.raises(InsufficientDataError):
        fit_rank_distribution(np.full(500, 0.01), 0.01)
    with pytest.raises(InsufficientDataError):
        fit_rank_distribution(pareto(2.1, 50, 1), 1e-6)
    with pytest.raises(ValueError):
        fit_rank_distribution(pareto(2.1, 500, 1), 0.0)


def test_mle_accepts_pagerank_vector():
    pr = prv(pareto(2.2, 5000, 13))
    assert fit_rank_distribution(pr, 1e-6).n_points == 5000
