"""Traffic-weighted random walkers used as the unbiased reference.

A walker moves on the graph of observed referrer -> target clicks. At every
step it teleports to a uniformly random node with probability
``teleport_probability`` and otherwise follows an out-edge chosen with
probability proportional to its click count. Nodes with no out-edges always
teleport. Every node reached after a move counts as one click.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

from webbias._rng import derive_seed
from webbias.bias import AppBiasSummary, ClickSample, aggregate_app, score_samples
from webbias.clicks import ClickRecord, ClickTable
from webbias.errors import InsufficientDataError
from webbias.graph import PercentileTable

DEFAULT_TELEPORT = 0.15
# upper bound on walkers x steps held in memory at once
_BATCH_CELLS = 1 << 22


class TrafficGraph:
    """Directed graph of click counts, in CSR form over sorted node names."""

    def __init__(self, names: Sequence[str], indptr, indices, weights):
        self.names = list(names)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.int64)
        if (self.weights < 1).any():
            raise ValueError("edge weights must be positive click counts")
        self._cum = np.cumsum(self.weights)
        cum0 = np.concatenate([[0], self._cum])
        self._base = cum0[self.indptr[:-1]]
        self.out_weight = cum0[self.indptr[1:]] - self._base

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    def edges(self) -> dict[tuple[str, str], int]:
        out = {}
        for i in range(self.n_nodes):
            for e in range(self.indptr[i], self.indptr[i + 1]):
                out[(self.names[i], self.names[self.indices[e]])] = int(self.weights[e])
        return out

    @classmethod
    def from_pair_counts(cls, counts: dict[tuple[str, str], int]) -> "TrafficGraph":
        if not counts:
            raise InsufficientDataError("no clicks to build a traffic graph from")
        names = sorted({a for a, _ in counts} | {b for _, b in counts})
        idx = {n: i for i, n in enumerate(names)}
        items = sorted(((idx[a], idx[b]), w) for (a, b), w in counts.items())
        src = np.array([k[0] for k, _ in items], dtype=np.int64)
        dst = np.array([k[1] for k, _ in items], dtype=np.int64)
        w = np.array([w for _, w in items], dtype=np.int64)
        indptr = np.zeros(len(names) + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=len(names)), out=indptr[1:])
        return cls(names, indptr, dst, w)

    def stationary_distribution(self, teleport_probability: float = DEFAULT_TELEPORT,
                                tolerance: float = 1e-14, max_iterations: int = 10_000) -> np.ndarray:
        """Long-run visit frequencies of the walker, by power iteration."""
        n = self.n_nodes
        src = np.repeat(np.arange(n), np.diff(self.indptr))
        ow = self.out_weight.astype(np.float64)
        prob = self.weights / ow[src]
        dangling = ow == 0
        x = np.full(n, 1.0 / n)
        for _ in range(max_iterations):
            y = np.bincount(self.indices, weights=x[src] * prob, minlength=n)
            y = (1 - teleport_probability) * y + (1 - teleport_probability) * x[dangling].sum() / n
            y += teleport_probability / n
            done = np.abs(y - x).sum() <= tolerance
            x = y
            if done:
                break
        return x


def build_traffic_graph(records: Iterable[ClickRecord] | ClickTable) -> TrafficGraph:
    """Referrer -> target graph whose edge weights are exact click counts."""
    if isinstance(records, ClickTable):
        t = records
        if len(t) == 0:
            raise InsufficientDataError("no clicks to build a traffic graph from")
        used = np.unique(np.concatenate([t.referrer, t.target]))
        remap = np.full(len(t.domains), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        n = len(used)
        key, w = np.unique(remap[t.referrer] * n + remap[t.target], return_counts=True)
        src, dst = key // n, key % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return TrafficGraph([t.domains[i] for i in used.tolist()], indptr, dst, w)
    counts = Counter((r.referrer, r.target) for r in records)
    return TrafficGraph.from_pair_counts(counts)


@dataclass(frozen=True)
class WalkerConfig:
    n_walkers: int
    steps_per_walker: int
    teleport_probability: float = DEFAULT_TELEPORT
    seed: int = 0
    burn_in: int = 0
    label: str = "baseline"

    def __post_init__(self):
        if not 0.0 < self.teleport_probability <= 1.0:
            raise ValueError("teleport_probability must lie in (0, 1]")
        if self.n_walkers < 1 or self.steps_per_walker < 1:
            raise ValueError("n_walkers and steps_per_walker must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


@numba.njit(cache=True)
def _walk(start, u_tel, u_move, p, out_weight, base, cum, indices):
    k, t_max = u_tel.shape
    n = len(out_weight)
    visits = np.empty((k, t_max), dtype=np.int64)
    for j in range(k):
        pos = start[j]
        for t in range(t_max):
            w = out_weight[pos]
            if u_tel[j, t] < p or w == 0:
                nxt = min(int(u_move[j, t] * n), n - 1)
            else:
                v = base[pos] + min(int(u_move[j, t] * w), w - 1)
                nxt = indices[np.searchsorted(cum, v, side="right")]
            visits[j, t] = nxt
            pos = nxt
    return visits


def walk_paths(graph: TrafficGraph, config: WalkerConfig,
               step_counts: Sequence[int] | None = None) -> list[np.ndarray]:
    """Node ids visited by each walker after each move.

    Walker ``i`` draws all its randomness from its own stream
    ``(config.seed, config.label, i)``, so its path does not depend on how
    walkers are batched. ``step_counts`` overrides ``steps_per_walker`` per
    walker.
    """
    n = graph.n_nodes
    if n == 0:
        raise InsufficientDataError("traffic graph has no nodes")
    if step_counts is None:
        step_counts = [config.steps_per_walker] * config.n_walkers
    step_counts = np.asarray(step_counts, dtype=np.int64)
    if len(step_counts) != config.n_walkers or (step_counts < 1).any():
        raise ValueError("step_counts must give a positive count for every walker")
    total_steps = step_counts + config.burn_in
    root = derive_seed(config.seed, config.label)
    p = config.teleport_probability
    ow = graph.out_weight
    base = graph._base
    cum = graph._cum
    paths: list[np.ndarray] = []

    batch = max(1, _BATCH_CELLS // max(1, int(total_steps.max())))
    for lo in range(0, config.n_walkers, batch):
        ids = range(lo, min(lo + batch, config.n_walkers))
        t_max = int(total_steps[ids.start:ids.stop].max())
        k = len(ids)
        start = np.empty(k, dtype=np.int64)
        u_tel = np.ones((k, t_max))
        u_move = np.zeros((k, t_max))
        for j, i in enumerate(ids):
            rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, i)))
            start[j] = rng.integers(n)
            m = int(total_steps[i])
            u = rng.random((2, m))
            u_tel[j, :m] = u[0]
            u_move[j, :m] = u[1]
        visits = _walk(start, u_tel, u_move, p, ow, base, cum, graph.indices)
        for j, i in enumerate(ids):
            paths.append(visits[j, config.burn_in:int(total_steps[i])].copy())
    return paths


def simulate_walkers(graph: TrafficGraph, config: WalkerConfig,
                     step_counts: Sequence[int] | None = None) -> list[ClickSample]:
    """Walker traces as click samples (user ``walker_<i>``, app ``config.label``)."""
    names = np.asarray(graph.names, dtype=object)
    return [
        ClickSample(f"walker_{i}", config.label, tuple(names[path].tolist()))
        for i, path in enumerate(walk_paths(graph, config, step_counts))
    ]


@dataclass
class BaselineResult:
    summary: AppBiasSummary
    config: dict
    n_skipped: int = 0

    @property
    def baseline_b_h(self) -> tuple[float, float]:
        return self.summary.mean_b_h, self.summary.se_b_h

    @property
    def baseline_b_p(self) -> tuple[float, float]:
        return self.summary.mean_b_p, self.summary.se_b_p


def baseline_biases(
    samples: Sequence[ClickSample],
    percentiles: PercentileTable,
    universe_size: int,
    context: str = "all",
    config: WalkerConfig | None = None,
    missing: str = "drop",
    interpolation: str = "step",
) -> BaselineResult:
    """Score walker samples exactly like user samples and average them.

    The summary's app is ``baseline:<context>``.
    """
    if not samples:
        raise InsufficientDataError("no walker samples")
    scores, skipped = score_samples(samples, percentiles, universe_size, missing, interpolation)
    if not scores:
        raise InsufficientDataError("no walker sample reached a domain with known PageRank")
    summary = aggregate_app(scores, app=f"baseline:{context}", category=None)
    return BaselineResult(summary, asdict(config) if config else {}, len(skipped))
