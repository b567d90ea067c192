import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from conftest import make_table
from webbias.bias import ClickSample
from webbias.clicks import ClickRecord
from webbias.errors import InsufficientDataError
from webbias.graph import PercentileTable
from webbias.null_model import (TrafficGraph, WalkerConfig, baseline_biases, build_traffic_graph,
                                simulate_walkers, walk_paths)


def weighted_stationary_oracle(n, weights, p):
    """Dense solve of pi = pi @ P for the teleporting weighted walk."""
    w = np.zeros((n, n))
    for (a, b), c in weights.items():
        w[a, b] = c
    rows = w.sum(axis=1)
    trans = np.empty((n, n))
    for i in range(n):
        trans[i] = (1 - p) * w[i] / rows[i] + p / n if rows[i] else 1.0 / n
    a = trans.T - np.eye(n)
    a[-1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return np.linalg.solve(a, rhs)


def ten_node_graph():
    rng = np.random.default_rng(10)
    weights = {}
    for a in range(10):
        if a == 9:
            continue  # one dangling node
        for b in rng.choice(10, 3, replace=False).tolist():
            weights[(a, b)] = int(rng.integers(1, 20))
    names = [f"n{k}.com" for k in range(10)]
    g = TrafficGraph.from_pair_counts({(names[a], names[b]): c for (a, b), c in weights.items()})
    return g, weights


def test_traffic_graph_counts():
    recs = [ClickRecord(i, "u", "b", "a") for i in range(3)] + [ClickRecord(9, "u", "c", "a")]
    g = build_traffic_graph(recs)
    assert g.edges() == {("a", "b"): 3, ("a", "c"): 1}
    assert g.names == ["a", "b", "c"]


def test_single_edge_graph():
    g = build_traffic_graph([ClickRecord(0, "u", "y.com", "x.com")])
    assert (g.n_nodes, g.n_edges) == (2, 1)


def test_empty_stream_errors():
    with pytest.raises(InsufficientDataError):
        build_traffic_graph([])


def test_table_and_record_paths_match_hash_oracle():
    rng = np.random.default_rng(3)
    rows = [(i, "u", f"t{rng.integers(40)}.com", f"r{rng.integers(6)}.com") for i in range(3000)]
    rows += [(5000, "u", "r1.com", "t3.com")]
    oracle = Counter((r[3], r[2]) for r in rows)
    from_table = build_traffic_graph(make_table(rows))
    from_recs = build_traffic_graph([ClickRecord(*r) for r in rows])
    assert from_table.edges() == dict(oracle) == from_recs.edges()
    assert from_table.names == from_recs.names


def test_pure_teleport_is_uniform():
    g, _ = ten_node_graph()
    cfg = WalkerConfig(10, 10_000, teleport_probability=1.0, seed=4)
    visits = np.bincount(np.concatenate(walk_paths(g, cfg)), minlength=g.n_nodes)
    assert stats.chisquare(visits).pvalue > 0.01


def test_single_node_graph():
    g = build_traffic_graph([ClickRecord(0, "u", "only.com", "only.com")])
    (s,) = simulate_walkers(g, WalkerConfig(1, 25))
    assert set(s.targets) == {"only.com"} and s.n_clicks == 25


def test_visit_frequencies_match_stationary_oracle():
    g, weights = ten_node_graph()
    cfg = WalkerConfig(10, 100_000, seed=1)
    visits = np.bincount(np.concatenate(walk_paths(g, cfg)), minlength=10) / 1_000_000
    oracle = weighted_stationary_oracle(10, weights, 0.15)
    assert 0.5 * np.abs(visits - oracle).sum() < 0.01
    np.testing.assert_allclose(g.stationary_distribution(), oracle, atol=1e-12)


def test_tv_distance_shrinks_with_steps():
    g, weights = ten_node_graph()
    oracle = weighted_stationary_oracle(10, weights, 0.15)
    tv = []
    for steps in (1_000, 10_000, 100_000, 1_000_000):
        visits = np.bincount(walk_paths(g, WalkerConfig(1, steps, seed=2))[0], minlength=10) / steps
        tv.append(0.5 * np.abs(visits - oracle).sum())
    assert tv[-1] < tv[0]
    assert tv[-1] < 0.01


def test_walks_deterministic_and_batch_independent():
    g, _ = ten_node_graph()
    a = walk_paths(g, WalkerConfig(5, 300, seed=7))
    b = walk_paths(g, WalkerConfig(5, 300, seed=7))
    c = walk_paths(g, WalkerConfig(12, 300, seed=7))
    for x, y, z in zip(a, b, c):
        assert x.tolist() == y.tolist() == z.tolist()
    d = walk_paths(g, WalkerConfig(5, 300, seed=8))
    assert any(x.tolist() != y.tolist() for x, y in zip(a, d))


def test_step_counts_per_walker():
    g, _ = ten_node_graph()
    samples = simulate_walkers(g, WalkerConfig(3, 50, seed=0), step_counts=[5, 50, 17])
    assert [s.n_clicks for s in samples] == [5, 50, 17]
    assert [s.user for s in samples] == ["walker_0", "walker_1", "walker_2"]
    assert all(t in g.names for s in samples for t in s.targets)


def test_burn_in_drops_prefix():
    g, _ = ten_node_graph()
    full = walk_paths(g, WalkerConfig(2, 40, seed=3))
    burned = walk_paths(g, WalkerConfig(2, 30, seed=3, burn_in=10))
    for f, b in zip(full, burned):
        assert b.tolist() == f[10:].tolist()


def test_config_validation():
    with pytest.raises(ValueError):
        WalkerConfig(1, 1, teleport_probability=0.0)
    with pytest.raises(ValueError):
        WalkerConfig(0, 5)


def uniform_complete(k):
    names = [f"c{i:03d}.com" for i in range(k)]
    # self-pairs make every move a uniform draw over all nodes
    return TrafficGraph.from_pair_counts({(a, b): 1 for a in names for b in names}), names


def expected_plugin_entropy(m, k):
    x = np.arange(1, m + 1)
    pmf = stats.binom.pmf(x, m, 1.0 / k)
    return -k * float(np.sum(pmf * (x / m) * np.log(x / m)))


def test_baseline_on_uniform_complete_graph_hits_entropy_floor():
    k, m, walkers = 50, 40, 800
    g, names = uniform_complete(k)
    pct = PercentileTable(names, np.arange(1, k + 1) / k)
    res = baseline_biases(simulate_walkers(g, WalkerConfig(walkers, m, seed=5)), pct, k, "uniform")
    want_bh = 1.0 - expected_plugin_entropy(m, k) / math.log(k)
    mean, se = res.baseline_b_h
    assert abs(mean - want_bh) < 4 * se
    # step Lorenz: E[B_p] = 2 E[r] - 1 = 1/k for uniform draws over k/k grid
    mean_p, se_p = res.baseline_b_p
    assert abs(mean_p - 1.0 / k) < 4 * se_p
    assert res.summary.app == "baseline:uniform"


def test_baseline_single_node_is_one():
    g = build_traffic_graph([ClickRecord(0, "u", "only.com", "only.com")])
    pct = PercentileTable(["only.com", "other.com"], np.array([1.0, 0.5]))
    res = baseline_biases(simulate_walkers(g, WalkerConfig(4, 10)), pct, 2)
    assert res.baseline_b_h == (1.0, 0.0)


def test_baseline_deterministic():
    g, _ = ten_node_graph()
    pct = PercentileTable(g.names, np.arange(1, 11) / 10)
    cfg = WalkerConfig(30, 60, seed=11)
    a = baseline_biases(simulate_walkers(g, cfg), pct, 10, config=cfg)
    b = baseline_biases(simulate_walkers(g, cfg), pct, 10, config=cfg)
    assert a.summary == b.summary and a.config["seed"] == 11


def test_concentrating_an_edge_does_not_lower_baseline_homogeneity():
    g, weights = ten_node_graph()
    names = g.names
    pct = PercentileTable(names, np.arange(1, 11) / 10)
    heavy = dict(weights)
    heavy[(0, 1)] = heavy.get((0, 1), 0) + 500
    g2 = TrafficGraph.from_pair_counts({(names[a], names[b]): c for (a, b), c in heavy.items()})
    diffs = []
    for seed in range(5):
        cfg = WalkerConfig(400, 50, seed=seed)
        a = baseline_biases(simulate_walkers(g, cfg), pct, 10).summary
        b = baseline_biases(simulate_walkers(g2, cfg), pct, 10).summary
        diffs.append((b.mean_b_h - a.mean_b_h, math.hypot(a.se_b_h, b.se_b_h)))
    total = sum(d for d, _ in diffs)
    se = math.sqrt(sum(s * s for _, s in diffs))
    assert total > -1.96 * se


def test_walker_samples_are_click_samples():
    g, _ = ten_node_graph()
    for s in simulate_walkers(g, WalkerConfig(3, 5)):
        assert isinstance(s, ClickSample) and s.app == "baseline"
