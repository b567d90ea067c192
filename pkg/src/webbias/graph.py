"""Domain graph, PageRank and popularity percentiles.

The graph is stored as two CSR adjacency structures (out-links and their
transpose) over dense integer ids. Ids are assigned in ascending order of the
normalized domain name, so a given edge set always yields the same ids.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import polars as pl
import scipy.sparse as sp

from webbias.domains import normalize_domain
from webbias.errors import EmptyGraphError, InputFormatError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.15


@dataclass
class LoadReport:
    lines_read: int = 0
    comments: int = 0
    malformed: int = 0
    self_loops: int = 0
    duplicates: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def lines_dropped(self) -> int:
        return self.malformed + self.self_loops + self.duplicates


class DomainGraph:
    """Immutable directed graph over Web domains with deduplicated edges."""

    def __init__(self, names: Sequence[str], out_indptr, out_indices, report: LoadReport | None = None):
        self.names = list(names)
        self.out_indptr = np.asarray(out_indptr, dtype=np.int64)
        self.out_indices = np.asarray(out_indices, dtype=np.int32)
        self.report = report
        n = len(self.names)
        if len(self.out_indptr) != n + 1:
            raise ValueError("indptr length must be n_domains + 1")
        src = np.repeat(np.arange(n, dtype=np.int32), np.diff(self.out_indptr))
        order = np.lexsort((src, self.out_indices))
        self.in_indices = src[order]
        self.in_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.out_indices, minlength=n), out=self.in_indptr[1:])
        self._index: dict[str, int] | None = None

    @classmethod
    def from_edges(cls, names: Sequence[str], src, dst, report: LoadReport | None = None) -> "DomainGraph":
        """Build from parallel id arrays; self-loops and repeated edges are dropped.

        ``names`` must already be normalized and unique. Ids refer to
        positions in ``names``.
        """
        n = len(names)
        if n == 0:
            raise EmptyGraphError("graph has no domains")
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        n_loops = int((~keep).sum())
        key = np.unique(src[keep] * n + dst[keep])
        n_dups = int(keep.sum()) - len(key)
        s = (key // n).astype(np.int32)
        d = (key % n).astype(np.int32)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(s, minlength=n), out=indptr[1:])
        if report is not None:
            report.self_loops += n_loops
            report.duplicates += n_dups
        return cls(names, indptr, d, report)

    @property
    def n_domains(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return len(self.out_indices)

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_indptr)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_indptr)

    @property
    def index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {name: i for i, name in enumerate(self.names)}
        return self._index

    def out_links(self, i: int) -> np.ndarray:
        return self.out_indices[self.out_indptr[i]:self.out_indptr[i + 1]]

    def in_links(self, i: int) -> np.ndarray:
        return self.in_indices[self.in_indptr[i]:self.in_indptr[i + 1]]

    def transition_matrix(self) -> sp.csr_matrix:
        """Sparse ``n x n`` matrix with entry ``(i, j) = 1`` when ``j -> i``."""
        n = self.n_domains
        data = np.ones(self.n_edges, dtype=np.float64)
        return sp.csr_matrix((data, self.in_indices, self.in_indptr), shape=(n, n))


def _read_text(source) -> bytes:
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    if isinstance(source, bytes):
        return source
    if hasattr(source, "read"):
        data = source.read()
        return data.encode("utf-8") if isinstance(data, str) else data
    return "".join(line if line.endswith("\n") else line + "\n" for line in source).encode("utf-8")


def load_edge_list(source) -> DomainGraph:
    """Read a ``source<TAB>target`` edge list into a :class:`DomainGraph`.

    ``source`` is a path, a file object, or an iterable of text lines.
    Blank lines and ``#`` comments are skipped. Malformed lines are recorded
    in ``graph.report.errors`` with their 1-based line number and skipped.
    """
    raw = _read_text(source)
    report = LoadReport()
    if not raw.strip():
        raise EmptyGraphError("edge list is empty")
    df = pl.read_csv(
        io.BytesIO(raw),
        separator="\t",
        has_header=False,
        new_columns=["source", "target", "extra"],
        schema={"source": pl.Utf8, "target": pl.Utf8, "extra": pl.Utf8},
        quote_char=None,
        truncate_ragged_lines=True,
        missing_utf8_is_empty_string=True,
    ).with_row_index("line", offset=1)

    blank = (pl.col("source") == "") & (pl.col("target") == "") & (pl.col("extra") == "")
    comment = pl.col("source").str.starts_with("#")
    df = df.filter(~blank)
    n_comments = df.filter(comment).height
    df = df.filter(~comment)
    report.comments = n_comments
    report.lines_read = df.height

    raw_names = pl.concat([df["source"], df["target"]]).unique().sort()
    normalized = [normalize_domain(x) for x in raw_names.to_list()]
    vocab = sorted(set(normalized) - {""})
    vocab_index = {name: i for i, name in enumerate(vocab)}
    raw_to_id = np.array([vocab_index.get(x, -1) for x in normalized], dtype=np.int64)
    enum = pl.Enum(raw_names.to_list())
    src = raw_to_id[df["source"].cast(enum).to_physical().to_numpy()]
    dst = raw_to_id[df["target"].cast(enum).to_physical().to_numpy()]
    extra = df["extra"].to_numpy()
    bad = (src < 0) | (dst < 0) | (extra != "")
    if bad.any():
        lines = df["line"].to_numpy()[bad]
        for ln, s, d, x in zip(lines, src[bad], dst[bad], extra[bad]):
            if x != "":
                msg = "expected exactly two tab-separated fields"
            elif s < 0 and d < 0:
                msg = "missing source and target domain"
            else:
                msg = "missing source domain" if s < 0 else "missing target domain"
            report.errors.append((int(ln), msg))
        report.malformed = int(bad.sum())
        logger.warning("edge list: %d malformed lines skipped", report.malformed)
    src, dst = src[~bad], dst[~bad]
    if len(src) == 0:
        raise EmptyGraphError("edge list has no valid edges")
    used = np.zeros(len(vocab), dtype=bool)
    used[src] = True
    used[dst] = True
    if not used.all():
        # names that only appeared on malformed lines
        remap = np.cumsum(used) - 1
        vocab = [v for v, u in zip(vocab, used) if u]
        src, dst = remap[src], remap[dst]
    return DomainGraph.from_edges(vocab, src, dst, report)


@dataclass
class PageRankVector:
    names: list[str]
    scores: np.ndarray
    alpha: float = DEFAULT_ALPHA
    iterations_used: int = 0
    residual: float = 0.0
    converged: bool = True

    def __len__(self):
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.scores.tolist()))


def pagerank_step(graph: DomainGraph, x: np.ndarray, alpha: float, matrix=None) -> np.ndarray:
    """One synchronous application of the PageRank update map.

    Rank held by dangling domains is spread uniformly over all domains.
    """
    n = graph.n_domains
    m = graph.transition_matrix() if matrix is None else matrix
    deg = graph.out_degree
    dangling = deg == 0
    w = np.divide(x, deg, out=np.zeros_like(x), where=~dangling)
    spread = x[dangling].sum() / n
    return (1.0 - alpha) * (m @ w + spread) + alpha / n


def compute_pagerank(
    graph: DomainGraph,
    alpha: float = DEFAULT_ALPHA,
    tolerance: float = 1e-10,
    max_iterations: int = 200,
) -> PageRankVector:
    """Power iteration of ``R(i) = a/N + (1-a) * sum_{j -> i} R(j)/N_j``.

    Iterates from the uniform vector until the L1 change between successive
    iterates is at most ``tolerance``. Hitting ``max_iterations`` first is not
    an error; the returned vector has ``converged=False``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = graph.n_domains
    if n == 0:
        raise EmptyGraphError("cannot rank an empty graph")
    m = graph.transition_matrix()
    deg = graph.out_degree.astype(np.float64)
    dangling = deg == 0
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=~dangling)
    dangling_ids = np.flatnonzero(dangling)
    base = alpha / n

    x = np.full(n, 1.0 / n)
    residual = math.inf
    it = 0
    for it in range(1, max_iterations + 1):
        y = m @ (x * inv_deg)
        y += x[dangling_ids].sum() / n
        y *= 1.0 - alpha
        y += base
        residual = float(np.abs(y - x).sum())
        x = y
        if residual <= tolerance:
            break
    converged = residual <= tolerance
    if not converged:
        logger.warning("PageRank did not converge in %d iterations (residual %.3g)", it, residual)
    return PageRankVector(list(graph.names), x, alpha, it, residual, converged)


@dataclass
class PercentileTable:
    """Popularity position of each domain on ``(0, 1]``.

    ``mode`` is ``"rank"`` (uniform rank measure, the default) or ``"mass"``
    (cumulative PageRank mass of all domains up to and including this one).
    """

    names: list[str]
    values: np.ndarray
    mode: str = "rank"
    _lookup: dict[str, float] | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.lookup

    def __getitem__(self, name: str) -> float:
        return self.lookup[name]

    def get(self, name, default=None):
        return self.lookup.get(name, default)

    @property
    def lookup(self) -> dict[str, float]:
        if self._lookup is None:
            self._lookup = dict(zip(self.names, self.values.tolist()))
        return self._lookup

    @property
    def minimum(self) -> float:
        return float(self.values.min())


def popularity_order(pr: PageRankVector) -> np.ndarray:
    """Indices sorted by ascending score, ties by ascending name."""
    names = np.asarray(pr.names, dtype=str)
    name_rank = np.empty(len(names), dtype=np.int64)
    name_rank[np.argsort(names, kind="stable")] = np.arange(len(names))
    # lexsort: last key is primary
    return np.lexsort((name_rank, pr.scores))


def rank_percentiles(pr: PageRankVector, mode: str = "rank") -> PercentileTable:
    n = len(pr.names)
    order = popularity_order(pr)
    values = np.empty(n, dtype=np.float64)
    if mode == "rank":
        values[order] = np.arange(1, n + 1) / n
    elif mode == "mass":
        cum = np.cumsum(pr.scores[order])
        cum /= cum[-1]
        cum[-1] = 1.0
        values[order] = cum
    else:
        raise ValueError(f"unknown percentile mode {mode!r}")
    return PercentileTable(list(pr.names), values, mode)


def write_pagerank_csv(path, pr: PageRankVector, percentiles: PercentileTable | None = None) -> None:
    """Write ``domain,score,percentile`` rows, highest score first.

    A JSON sidecar (``<path>.meta.json``) keeps alpha and convergence info.
    """
    if percentiles is None:
        percentiles = rank_percentiles(pr)
    order = popularity_order(pr)[::-1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "score", "percentile"])
        for i in order:
            w.writerow([pr.names[i], repr(float(pr.scores[i])), repr(float(percentiles.values[i]))])
    meta = {
        "alpha": pr.alpha,
        "iterations_used": pr.iterations_used,
        "residual": pr.residual,
        "converged": pr.converged,
        "n_domains": len(pr.names),
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_pagerank_csv(path) -> PageRankVector:
    df = pl.read_csv(path, schema={"domain": pl.Utf8, "score": pl.Float64, "percentile": pl.Float64})
    if df.height == 0:
        raise InputFormatError(f"{path}: no PageRank rows")
    meta_path = Path(str(path) + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return PageRankVector(
        df["domain"].to_list(),
        df["score"].to_numpy().copy(),
        alpha=meta.get("alpha", DEFAULT_ALPHA),
        iterations_used=meta.get("iterations_used", 0),
        residual=meta.get("residual", 0.0),
        converged=meta.get("converged", True),
    )


def edge_list_lines(names: Sequence[str], src: Iterable[int], dst: Iterable[int]):
    for s, d in zip(src, dst):
        yield f"{names[s]}\t{names[d]}\n"
