"""Synthetic domain graphs and click logs with known ground truth.

Graphs grow by preferential attachment: node ``k`` links to
``min(m, k)`` distinct earlier nodes, each chosen with probability
proportional to its in-degree plus one. Click logs draw each user's clicks
i.i.d. from the target model of the application they use.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numba
import numpy as np

from webbias._rng import derive_rng, derive_seed
from webbias.clicks import CategoryMap
from webbias.graph import DomainGraph, PageRankVector, compute_pagerank, rank_percentiles

MODELS = ("single-target", "uniform", "zipf", "pagerank-power")
ORDERS = ("random", "popular", "unpopular")


def domain_name(k: int) -> str:
    return f"site{k}.com"


@numba.njit(cache=True)
def _attach(n, m, seed):
    np.random.seed(seed)
    total = 0
    for k in range(n):
        total += min(m, k)
    src = np.empty(total, np.int64)
    dst = np.empty(total, np.int64)
    chosen = np.empty(max(m, 1), np.int64)
    e = 0
    for k in range(1, n):
        mk = min(m, k)
        c = 0
        while c < mk:
            # uniform over k nodes (the "+1") plus one slot per existing in-link
            idx = np.random.randint(0, k + e)
            node = idx if idx < k else dst[idx - k]
            dup = False
            for q in range(c):
                if chosen[q] == node:
                    dup = True
                    break
            if not dup:
                chosen[c] = node
                c += 1
        for q in range(mk):
            src[e] = k
            dst[e] = chosen[q]
            e += 1
    return src, dst


@dataclass
class GraphSpec:
    n_nodes: int = 10_000
    edges_per_node: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.edges_per_node < 1:
            raise ValueError("edges_per_node must be positive")
        if self.n_nodes < self.edges_per_node + 1:
            raise ValueError("n_nodes must exceed edges_per_node")


def declared_edge_count(n_nodes: int, edges_per_node: int) -> int:
    m = edges_per_node
    return sum(min(m, k) for k in range(min(n_nodes, m + 1))) + max(0, n_nodes - m - 1) * m


@dataclass
class ScaleFreeGraph:
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def names(self) -> list[str]:
        return [domain_name(k) for k in range(self.n_nodes)]

    def lines(self) -> Iterator[str]:
        for s, d in zip(self.src.tolist(), self.dst.tolist()):
            yield f"site{s}.com\tsite{d}.com\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# preferential attachment: {self.n_nodes} nodes, {self.n_edges} edges\n")
            chunk = 1 << 16
            for a in range(0, self.n_edges, chunk):
                fh.write("".join(f"site{s}.com\tsite{d}.com\n" for s, d in
                                 zip(self.src[a:a + chunk].tolist(), self.dst[a:a + chunk].tolist())))

    def to_domain_graph(self) -> DomainGraph:
        """Same graph as loading :meth:`write` output, without the text round trip."""
        names = self.names
        order = np.argsort(np.array(names))
        new_id = np.empty(self.n_nodes, dtype=np.int64)
        new_id[order] = np.arange(self.n_nodes)
        return DomainGraph.from_edges([names[i] for i in order.tolist()], new_id[self.src], new_id[self.dst])

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)


def gen_scale_free_graph(spec: GraphSpec) -> ScaleFreeGraph:
    seed32 = int(derive_seed(spec.seed, "graph").generate_state(1)[0])
    src, dst = _attach(spec.n_nodes, spec.edges_per_node, seed32)
    return ScaleFreeGraph(spec.n_nodes, src, dst)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "", name)


@dataclass
class AppSpec:
    name: str
    category: str
    model: str = "uniform"
    n_users: int = 50
    clicks_per_user: int = 100
    s: float | None = None
    gamma: float | None = None
    order: str = "random"
    target: str | None = None
    referrer: str | None = None
    user_pool: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown target model {self.model!r}; choose from {MODELS}")
        if self.model == "zipf" and (self.s is None or self.s <= 0):
            raise ValueError("zipf model needs s > 0")
        if self.model == "pagerank-power" and self.gamma is None:
            raise ValueError("pagerank-power model needs gamma")
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}; choose from {ORDERS}")
        if self.n_users < 1 or self.clicks_per_user < 1:
            raise ValueError("n_users and clicks_per_user must be positive")

    @property
    def referrer_domain(self) -> str:
        if self.referrer:
            return self.referrer
        cmap = CategoryMap.default()
        known = sorted(r for r, a in cmap.app_of_referrer.items() if a == self.name)
        return known[0] if known else f"{_slug(self.name).lower()}.example"

    def needs_pagerank(self) -> bool:
        return self.model == "pagerank-power" or (self.model == "zipf" and self.order != "random")


@dataclass
class SynthSpec:
    graph: GraphSpec = field(default_factory=GraphSpec)
    apps: list[AppSpec] = field(default_factory=list)
    seed: int = 0
    start_time: int = 1_404_172_800
    news_fraction: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        graph = GraphSpec(**d.pop("graph", {}))
        apps = [AppSpec(**a) for a in d.pop("apps", [])]
        return cls(graph=graph, apps=apps, **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def needs_pagerank(self) -> bool:
        return any(a.needs_pagerank() for a in self.apps)


def default_spec(seed: int = 0) -> SynthSpec:
    return SynthSpec(
        graph=GraphSpec(2000, 4, seed),
        apps=[
            AppSpec("Google", "Web Search", "uniform", 60, 100),
            AppSpec("Facebook", "Social Media", "zipf", 60, 100, s=1.2, order="popular"),
            AppSpec("GMail", "Email", "zipf", 60, 100, s=2.0),
            AppSpec("Wikipedia", "Wiki", "single-target", 40, 100),
        ],
        seed=seed,
    )


def _target_probs(app: AppSpec, n: int, rng: np.random.Generator,
                  pr_by_node: np.ndarray | None) -> np.ndarray:
    if app.model == "uniform":
        return np.full(n, 1.0 / n)
    if app.model == "single-target":
        p = np.zeros(n)
        if app.target is not None:
            m = re.fullmatch(r"site(\d+)\.com", app.target)
            if m is None or int(m.group(1)) >= n:
                raise ValueError(f"single-target domain {app.target!r} is not in the synthetic graph")
            p[int(m.group(1))] = 1.0
        else:
            p[rng.integers(n)] = 1.0
        return p
    if app.model == "pagerank-power":
        w = pr_by_node ** app.gamma
        return w / w.sum()
    # zipf: rank k gets weight k^-s
    if app.order == "random":
        ranking = rng.permutation(n)
    else:
        # descending popularity; ties broken by node id
        ranking = np.lexsort((np.arange(n), -pr_by_node))
        if app.order == "unpopular":
            ranking = ranking[::-1]
    p = np.empty(n)
    p[ranking] = np.arange(1, n + 1, dtype=np.float64) ** -app.s
    return p / p.sum()


def _user_id(app: AppSpec, k: int) -> str:
    return f"u{_slug(app.user_pool or app.name)}_{k}"


def _expected(p: np.ndarray, percentile_by_node: np.ndarray | None) -> dict:
    nz = p[p > 0]
    n = len(p)
    out = {"asymptotic_b_h": 1.0 - float(-(nz * np.log(nz)).sum()) / math.log(n)}
    if percentile_by_node is not None:
        out["asymptotic_b_p"] = 2.0 * float(p @ percentile_by_node) - 1.0
    return out


def gen_click_log(spec: SynthSpec, pagerank: PageRankVector | None = None) -> tuple[Iterator[str], dict]:
    """Generate click-log lines and a manifest of the ground truth.

    ``pagerank`` is required when any app uses the ``pagerank-power`` model
    or a popularity-ordered Zipf law. Lines come out app by app, user by
    user; user ``k`` of an app clicks at ``start_time + j`` for its ``j``-th
    click. The manifest's asymptotic biases assume the full synthetic graph
    as the target universe and rank percentiles.
    """
    n = spec.graph.n_nodes
    pr_by_node = pct_by_node = None
    if pagerank is not None:
        lookup = pagerank.as_dict()
        pr_by_node = np.array([lookup[domain_name(k)] for k in range(n)])
        pct = rank_percentiles(pagerank).lookup
        pct_by_node = np.array([pct[domain_name(k)] for k in range(n)])
    elif spec.needs_pagerank():
        raise ValueError("this spec needs PageRank scores of the synthetic graph")
    names = np.array([domain_name(k) for k in range(n)], dtype=object)

    plans = []
    for app in spec.apps:
        rng = derive_rng(spec.seed, "app", app.name)
        p = _target_probs(app, n, rng, pr_by_node)
        plans.append((app, p, rng))

    apps_manifest = []
    for app, p, _ in plans:
        entry = {
            "name": app.name, "category": app.category, "referrer": app.referrer_domain,
            "model": app.model, "s": app.s, "gamma": app.gamma, "order": app.order,
            "n_users": app.n_users, "clicks_per_user": app.clicks_per_user,
            "n_records": app.n_users * app.clicks_per_user,
            "users": [_user_id(app, 0), _user_id(app, app.n_users - 1)],
        }
        if app.model == "single-target":
            entry["target"] = str(names[int(np.argmax(p))])
        entry.update(_expected(p, pct_by_node))
        if app.model == "uniform":
            entry["limit_b_h"] = 0.0
        elif app.model == "single-target":
            entry["limit_b_h"] = 1.0
        apps_manifest.append(entry)

    manifest = {
        "seed": spec.seed,
        "graph": {"n_nodes": n, "edges_per_node": spec.graph.edges_per_node,
                  "n_edges": declared_edge_count(n, spec.graph.edges_per_node)},
        "start_time": spec.start_time,
        "n_records": sum(a["n_records"] for a in apps_manifest),
        "apps": apps_manifest,
    }

    def lines():
        for app, p, rng in plans:
            cdf = np.cumsum(p)
            cdf /= cdf[-1]
            ref = app.referrer_domain
            for k in range(app.n_users):
                user = _user_id(app, k)
                picks = np.searchsorted(cdf, rng.random(app.clicks_per_user), side="right")
                picks = np.minimum(picks, n - 1)
                t0 = spec.start_time
                for j, t in enumerate(picks.tolist()):
                    yield f"{t0 + j}\t{user}\t{names[t]}\t{ref}\n"

    return lines(), manifest


def target_counts(spec: SynthSpec, app: AppSpec, n_clicks: int,
                  pagerank: PageRankVector | None = None) -> dict[str, int]:
    """Per-domain click totals of ``n_clicks`` i.i.d. draws from an app's model.

    Equivalent in distribution to counting the targets of a generated log,
    without materializing it.
    """
    n = spec.graph.n_nodes
    pr_by_node = None
    if pagerank is not None:
        lookup = pagerank.as_dict()
        pr_by_node = np.array([lookup[domain_name(k)] for k in range(n)])
    rng = derive_rng(spec.seed, "app", app.name)
    p = _target_probs(app, n, rng, pr_by_node)
    counts = derive_rng(spec.seed, "counts", app.name).multinomial(n_clicks, p)
    return {domain_name(k): int(c) for k, c in enumerate(counts.tolist()) if c}


def category_map_for(spec: SynthSpec) -> CategoryMap:
    tree: dict[str, dict[str, list[str]]] = {}
    for app in spec.apps:
        tree.setdefault(app.category, {})[app.name] = [app.referrer_domain]
    return CategoryMap.from_dict(tree)


def news_domains(spec: SynthSpec) -> list[str]:
    n = spec.graph.n_nodes
    k = int(round(spec.news_fraction * n))
    picks = np.sort(derive_rng(spec.seed, "news").choice(n, size=k, replace=False))
    return [domain_name(i) for i in picks.tolist()]


def write_dataset(spec: SynthSpec, out_dir) -> dict:
    """Write graph, click log, category map, news list and manifest to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = gen_scale_free_graph(spec.graph)
    graph.write(out / "graph.tsv")
    pagerank = compute_pagerank(graph.to_domain_graph()) if spec.needs_pagerank() else None
    lines, manifest = gen_click_log(spec, pagerank)
    with open(out / "clicks.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    category_map_for(spec).dump(out / "categories.json")
    news = news_domains(spec)
    (out / "news.txt").write_text("".join(d + "\n" for d in news), encoding="utf-8")
    manifest["graph"]["n_edges_generated"] = graph.n_edges
    manifest["n_news_domains"] = len(news)
    manifest["spec"] = spec.to_dict()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
