import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import dense_pagerank
from webbias.domains import normalize_domain
from webbias.errors import EmptyGraphError
from webbias.graph import (DomainGraph, PageRankVector, compute_pagerank, edge_list_lines, load_edge_list,
                           pagerank_step, rank_percentiles, read_pagerank_csv, write_pagerank_csv)


# --- normalization

@pytest.mark.parametrize("raw, want", [
    ("WWW.Example.COM", "example.com"),
    ("https://www.example.com/path?q=1", "example.com"),
    ("http://user:pw@Example.com:8080/", "example.com"),
    ("www.www.example.com.", "example.com"),
    ("example.com#frag", "example.com"),
    ("  news.google.com  ", "news.google.com"),
    ("", ""),
])
def test_normalize_domain(raw, want):
    assert normalize_domain(raw) == want


@given(st.text(alphabet="wW.:/@?#abcxyz019 -", max_size=30))
def test_normalize_idempotent(raw):
    once = normalize_domain(raw)
    assert normalize_domain(once) == once


# --- loading

def test_minimal_cycle():
    g = load_edge_list(["a.com\tb.com", "b.com\ta.com"])
    assert (g.n_domains, g.n_edges) == (2, 2)


def test_duplicate_edges_collapse():
    g = load_edge_list("a.com\tb.com\na.com\tb.com\n".encode())
    assert (g.n_domains, g.n_edges) == (2, 1)
    assert g.report.duplicates == 1


def test_load_counts_and_errors():
    text = "# header\na.com\tb.com\n\nbroken line\nWWW.A.com\tA.COM\nc.com\tb.com\textra\nb.com\tc.com\n"
    g = load_edge_list(io.StringIO(text))
    rep = g.report
    assert g.names == ["a.com", "b.com", "c.com"]
    assert g.n_edges == 2
    assert rep.comments == 1
    assert rep.self_loops == 1
    assert [ln for ln, _ in rep.errors] == [4, 6]
    assert rep.malformed == 2


def test_load_edge_list_from_path(tmp_path):
    p = tmp_path / "g.tsv"
    p.write_text("x.org\ty.org\n")
    assert load_edge_list(p).names == ["x.org", "y.org"]


@pytest.mark.parametrize("text", ["", "# only a comment\n", "\n\n", "garbage\n"])
def test_empty_graph_errors(text):
    with pytest.raises(EmptyGraphError):
        load_edge_list(io.StringIO(text))


def test_self_loop_only_keeps_node():
    g = load_edge_list(["a.com\ta.com"])
    assert (g.n_domains, g.n_edges, g.report.self_loops) == (1, 0, 1)
    assert compute_pagerank(g).scores.tolist() == [1.0]


edge_lists = st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), min_size=1, max_size=60)


@given(edge_lists)
def test_graph_structure_invariants(pairs):
    pairs = [(a, b) for a, b in pairs if a != b]
    if not pairs:
        return
    g = load_edge_list([f"n{a}.com\tn{b}.com" for a, b in pairs])
    edges = {(g.names[i], g.names[j]) for i in range(g.n_domains) for j in g.out_links(i).tolist()}
    assert edges == {(f"n{a}.com", f"n{b}.com") for a, b in pairs}
    assert g.n_edges == len(edges)
    for i in range(g.n_domains):
        assert g.out_degree[i] == len(g.out_links(i))
        assert sorted(g.in_links(i).tolist()) == sorted(j for j in range(g.n_domains) if i in g.out_links(j))


# --- PageRank

def test_two_node_cycle_exact():
    pr = compute_pagerank(load_edge_list(["a.com\tb.com", "b.com\ta.com"]))
    assert pr.scores.tolist() == [0.5, 0.5]


def test_pagerank_matches_dense_oracle_random_graphs():
    rng = np.random.default_rng(7)
    for trial in range(5):
        n = 50
        src = rng.integers(0, n, 200)
        dst = rng.integers(0, n, 200)
        edges = list(zip(src.tolist(), dst.tolist()))
        names = [f"d{i:02d}.net" for i in range(n)]
        g = DomainGraph.from_edges(names, src, dst)
        pr = compute_pagerank(g, tolerance=1e-14, max_iterations=1000)
        oracle = dense_pagerank(n, edges)
        assert np.abs(pr.scores - oracle).max() < 1e-8
        assert abs(pr.scores.sum() - 1.0) < 1e-9


@given(edge_lists, st.floats(0.05, 0.95))
def test_pagerank_normalized_and_floor(pairs, alpha):
    pairs = [(a, b) for a, b in pairs if a != b] or [(0, 1)]
    g = load_edge_list([f"n{a}\tn{b}" for a, b in pairs])
    pr = compute_pagerank(g, alpha=alpha)
    assert abs(pr.scores.sum() - 1.0) < 1e-9
    assert (pr.scores >= alpha / g.n_domains - 1e-15).all()


def test_sum_preserved_every_iteration():
    rng = np.random.default_rng(3)
    n = 40
    g = DomainGraph.from_edges([f"s{i}" for i in range(n)], rng.integers(0, n, 90), rng.integers(0, n, 90))
    x = rng.random(n)
    x /= x.sum()
    for _ in range(30):
        x = pagerank_step(g, x, 0.15)
        assert abs(x.sum() - 1.0) < 1e-9


def test_fixed_point_without_dangling_nodes():
    n = 30
    src = np.concatenate([np.arange(n), np.arange(n)])
    dst = np.concatenate([(np.arange(n) + 1) % n, (np.arange(n) * 7 + 3) % n])
    g = DomainGraph.from_edges([f"c{i}" for i in range(n)], src, dst)
    assert (g.out_degree > 0).all()
    pr = compute_pagerank(g, tolerance=1e-10)
    assert pr.converged
    assert np.abs(pagerank_step(g, pr.scores, 0.15) - pr.scores).sum() <= 1e-10


def test_nonconvergence_is_flagged_not_fatal():
    rng = np.random.default_rng(0)
    g = DomainGraph.from_edges([f"s{i}" for i in range(20)], rng.integers(0, 20, 60), rng.integers(0, 20, 60))
    pr = compute_pagerank(g, tolerance=1e-30, max_iterations=3)
    assert not pr.converged and pr.iterations_used == 3


def test_pagerank_rejects_bad_alpha():
    g = load_edge_list(["a\tb"])
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            compute_pagerank(g, alpha=a)


@given(st.permutations(list(range(12))))
def test_percentiles_invariant_under_relabeling(perm):
    edges = [(0, 1), (1, 2), (2, 0), (3, 0), (4, 0), (5, 1), (6, 3), (7, 3), (8, 9), (9, 10), (10, 11), (11, 8)]
    names = [f"site{k}.com" for k in range(12)]
    base = rank_percentiles(compute_pagerank(DomainGraph.from_edges(
        names, np.array([a for a, _ in edges]), np.array([b for _, b in edges])))).lookup
    # the same graph with internal ids permuted
    inv = np.argsort(perm)
    shuffled_names = [names[perm[i]] for i in range(12)]
    src = np.array([inv[a] for a, _ in edges])
    dst = np.array([inv[b] for _, b in edges])
    g = DomainGraph.from_edges(shuffled_names, src, dst)
    assert rank_percentiles(compute_pagerank(g)).lookup == pytest.approx(base, abs=0, rel=1e-12)


# --- percentiles

def prv(d):
    names = list(d)
    return PageRankVector(names, np.array([d[k] for k in names], dtype=float), 0.15, 1, 0.0, True)


def test_percentile_tie_break_by_name():
    pct = rank_percentiles(prv({"d": 0.25, "b": 0.25, "a": 0.25, "c": 0.25}))
    assert [pct[x] for x in "abcd"] == [0.25, 0.5, 0.75, 1.0]


def test_percentile_ascending_score():
    pct = rank_percentiles(prv({"x": 0.7, "y": 0.2, "z": 0.1}))
    assert (pct["z"], pct["y"], pct["x"]) == (1 / 3, 2 / 3, 1.0)


def test_percentile_order_matches_sort_oracle():
    rng = np.random.default_rng(11)
    scores = rng.integers(1, 200, 1000) / 1000.0  # plenty of ties
    names = [f"dom{i:04d}" for i in rng.permutation(1000)]
    pct = rank_percentiles(PageRankVector(names, scores, 0.15, 1, 0.0, True))
    oracle = sorted(zip(scores.tolist(), names))
    assert [n for _, n in oracle] == sorted(names, key=pct.__getitem__)
    assert [pct[n] for _, n in oracle] == [(k + 1) / 1000 for k in range(1000)]


@given(st.lists(st.integers(1, 20), min_size=1, max_size=40))
def test_percentiles_monotone_and_distinct(raw):
    scores = {f"n{i}": s / 20 for i, s in enumerate(raw)}
    pct = rank_percentiles(prv(scores))
    vals = [pct[k] for k in scores]
    assert len(set(vals)) == len(vals)
    assert all(0 < v <= 1 for v in vals)
    for a in scores:
        for b in scores:
            if scores[a] < scores[b]:
                assert pct[a] < pct[b]


def test_mass_percentiles():
    pct = rank_percentiles(prv({"x": 0.5, "y": 0.3, "z": 0.2}), mode="mass")
    assert pct["z"] == pytest.approx(0.2) and pct["y"] == pytest.approx(0.5) and pct["x"] == 1.0


# --- csv

def test_pagerank_csv_roundtrip(tmp_path):
    g = load_edge_list(list(edge_list_lines(["a", "b", "c"], [0, 1, 2, 2], [1, 2, 0, 1])))
    pr = compute_pagerank(g)
    write_pagerank_csv(tmp_path / "pr.csv", pr)
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "domain,score,percentile"
    scores = [float(ln.split(",")[1]) for ln in lines[1:]]
    assert scores == sorted(scores, reverse=True)
    back = read_pagerank_csv(tmp_path / "pr.csv")
    assert back.as_dict() == pr.as_dict()
    assert (tmp_path / "pr.csv.meta.json").exists()
