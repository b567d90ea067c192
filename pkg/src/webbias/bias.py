"""Homogeneity and popularity bias of click samples.

Homogeneity bias is one minus the Shannon entropy of a sample's target
distribution, normalized by ``log |D|``. Popularity bias is one minus twice
the area under the Lorenz curve of cumulative traffic share against target
popularity percentile.

All logarithms are natural; the homogeneity ratio does not depend on the base.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from webbias._rng import derive_rng
from webbias.errors import NoCurveError, UndefinedCorrelationError
from webbias.graph import PercentileTable


@dataclass(frozen=True)
class ClickSample:
    """Clicks of one user through one application (or pooled category)."""

    user: str
    app: str
    targets: tuple[str, ...]
    category: str | None = None

    def __post_init__(self):
        if not self.targets:
            raise ValueError("a click sample needs at least one click")

    @property
    def n_clicks(self) -> int:
        return len(self.targets)

    def counts(self) -> list[tuple[str, int]]:
        """Per-target click counts, sorted by target name."""
        return sorted(Counter(self.targets).items())


def _entropy(counts: np.ndarray) -> float:
    counts = np.sort(counts[counts > 0])
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def homogeneity_bias(sample: ClickSample | Sequence[int], universe_size: int) -> float:
    """``1 - H(p) / log |D|`` with ``H`` the Shannon entropy of click shares.

    ``sample`` may also be a plain vector of per-target click counts.
    Equals 1 when every click lands on one domain and 0 when clicks are
    spread evenly over all ``universe_size`` domains.
    """
    if universe_size < 2:
        raise ValueError(f"universe_size must be at least 2 to normalize entropy, got {universe_size}")
    if isinstance(sample, ClickSample):
        counts = np.array([c for _, c in sample.counts()], dtype=np.float64)
    else:
        counts = np.asarray(sample, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("empty sample")
    if np.count_nonzero(counts) > universe_size:
        raise ValueError("sample has more distinct targets than the universe")
    b = 1.0 - _entropy(counts) / math.log(universe_size)
    return min(1.0, max(0.0, b))


@dataclass
class LorenzCurve:
    """Cumulative traffic share ``V`` against popularity percentile ``r``.

    ``points`` run from ``(0, 0)`` to ``(1, 1)``. With ``interpolation="step"``
    (the default) ``V(r)`` is the share of clicks on domains whose percentile
    is at most ``r``: it stays flat between points and jumps at each one.
    With ``"linear"`` consecutive points are joined by straight segments.
    """

    points: np.ndarray
    dropped_targets: int = 0
    dropped_clicks: int = 0
    interpolation: str = "step"

    def polyline(self) -> np.ndarray:
        """Vertices of the curve drawn as straight segments."""
        if self.interpolation == "linear":
            return self.points
        r, v = self.points[:, 0], self.points[:, 1]
        out = np.empty((2 * len(r) - 1, 2))
        out[0::2, 0], out[0::2, 1] = r, v
        out[1::2, 0], out[1::2, 1] = r[1:], v[:-1]
        return out

    def __call__(self, r):
        """Evaluate ``V`` at percentile(s) ``r``."""
        pr, pv = self.points[:, 0], self.points[:, 1]
        if self.interpolation == "linear":
            return np.interp(r, pr, pv)
        idx = np.searchsorted(pr, r, side="right") - 1
        return pv[np.clip(idx, 0, len(pv) - 1)]


def lorenz_curve(
    sample: ClickSample,
    percentiles: PercentileTable,
    missing: str = "drop",
    interpolation: str = "step",
) -> LorenzCurve:
    """Lorenz curve of one sample's clicks over target popularity.

    Targets absent from ``percentiles`` are dropped and the remaining clicks
    renormalized (``missing="drop"``), or placed at the table's lowest
    percentile (``missing="lowest"``).
    """
    if missing not in ("drop", "lowest"):
        raise ValueError(f"unknown missing-target policy {missing!r}")
    lookup = percentiles.lookup
    by_r: dict[float, int] = {}
    dropped_targets = dropped_clicks = 0
    for target, c in sample.counts():
        r = lookup.get(target)
        if r is None:
            if missing == "drop":
                dropped_targets += 1
                dropped_clicks += c
                continue
            r = percentiles.minimum
        by_r[r] = by_r.get(r, 0) + c
    if not by_r:
        raise NoCurveError(f"no target of {sample.user}/{sample.app} has a known percentile")
    rs = np.array(sorted(by_r), dtype=np.float64)
    cs = np.array([by_r[r] for r in rs.tolist()], dtype=np.int64)
    share = np.cumsum(cs) / cs.sum()
    share[-1] = 1.0
    pts = [np.array([[0.0, 0.0]]), np.column_stack([rs, share])]
    if rs[-1] < 1.0:
        pts.append(np.array([[1.0, 1.0]]))
    return LorenzCurve(np.vstack(pts), dropped_targets, dropped_clicks, interpolation)


def popularity_bias(curve: LorenzCurve) -> float:
    """``1 - 2 * integral_0^1 V(r) dr``, integrated exactly over the polyline."""
    xy = curve.polyline()
    dx = np.diff(xy[:, 0])
    area = float(np.sum(dx * (xy[1:, 1] + xy[:-1, 1]) * 0.5))
    return 1.0 - 2.0 * area


@dataclass(frozen=True)
class BiasScore:
    user: str
    app: str
    b_h: float
    b_p: float
    n_clicks: int
    category: str | None = None


def score_sample(
    sample: ClickSample,
    percentiles: PercentileTable,
    universe_size: int,
    missing: str = "drop",
    interpolation: str = "step",
) -> BiasScore:
    curve = lorenz_curve(sample, percentiles, missing, interpolation)
    return BiasScore(
        sample.user,
        sample.app,
        homogeneity_bias(sample, universe_size),
        popularity_bias(curve),
        sample.n_clicks,
        sample.category,
    )


def score_samples(
    samples: Iterable[ClickSample],
    percentiles: PercentileTable,
    universe_size: int,
    missing: str = "drop",
    interpolation: str = "step",
) -> tuple[list[BiasScore], list[ClickSample]]:
    """Score many samples; those with no rankable target are returned as skipped."""
    scores, skipped = [], []
    for s in samples:
        try:
            scores.append(score_sample(s, percentiles, universe_size, missing, interpolation))
        except NoCurveError:
            skipped.append(s)
    return scores, skipped


@dataclass(frozen=True)
class AppBiasSummary:
    app: str
    category: str | None
    n_users: int
    mean_b_h: float
    se_b_h: float
    mean_b_p: float
    se_b_p: float
    se_defined: bool = True


def _mean_se(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate_app(scores: Iterable[BiasScore], app: str | None = None,
                  category: str | None = None) -> AppBiasSummary:
    """Mean and standard error of the mean for both biases across users.

    With a single user the standard errors are reported as 0 and
    ``se_defined`` is False.
    """
    scores = sorted(scores, key=lambda s: s.user)
    if not scores:
        raise ValueError("no scores to aggregate")
    app = scores[0].app if app is None else app
    category = scores[0].category if category is None else category
    mh, sh = _mean_se([s.b_h for s in scores])
    mp, sp_ = _mean_se([s.b_p for s in scores])
    return AppBiasSummary(app, category, len(scores), mh, sh, mp, sp_, len(scores) > 1)


def aggregate_by_app(scores: Iterable[BiasScore]) -> list[AppBiasSummary]:
    groups: dict[str, list[BiasScore]] = {}
    for s in scores:
        groups.setdefault(s.app, []).append(s)
    return [aggregate_app(groups[a]) for a in sorted(groups)]


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance in one of the bias axes")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def correlate_biases(
    summaries: Sequence[AppBiasSummary],
    method: str = "t",
    n_permutations: int = 9999,
    seed: int = 0,
) -> tuple[float, float]:
    """Pearson correlation of mean homogeneity vs mean popularity bias across apps.

    Returns ``(r, p)`` with a two-sided p-value, from the Student-t
    distribution with ``n - 2`` degrees of freedom by default, or from a
    label-permutation test when ``method="permutation"``.
    """
    n = len(summaries)
    if n < 3:
        raise UndefinedCorrelationError(f"need at least 3 applications, got {n}")
    x = np.array([s.mean_b_h for s in summaries], dtype=np.float64)
    y = np.array([s.mean_b_p for s in summaries], dtype=np.float64)
    r = _pearson(x, y)
    if method == "t":
        if abs(r) == 1.0:
            return r, 0.0
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        return r, float(2.0 * stats.t.sf(abs(t), n - 2))
    if method == "permutation":
        rng = derive_rng(seed, "correlation")
        hits = 0
        for _ in range(n_permutations):
            if abs(_pearson(x, rng.permutation(y))) >= abs(r) - 1e-12:
                hits += 1
        return r, (hits + 1) / (n_permutations + 1)
    raise ValueError(f"unknown p-value method {method!r}")


SCORE_FIELDS = ["user", "app", "category", "n_clicks", "b_h", "b_p"]
SUMMARY_FIELDS = ["app", "category", "n_users", "mean_b_h", "se_b_h", "mean_b_p", "se_b_p"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return "" if x is None else str(x)


def write_scores_csv(path, scores: Iterable[BiasScore]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for s in scores:
            w.writerow([_fmt(v) for v in (s.user, s.app, s.category, s.n_clicks, s.b_h, s.b_p)])


def write_summaries_csv(path, summaries: Iterable[AppBiasSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for s in summaries:
            w.writerow([_fmt(v) for v in (s.app, s.category, s.n_users, s.mean_b_h,
                                          s.se_b_h, s.mean_b_p, s.se_b_p)])


def read_summaries_csv(path) -> list[AppBiasSummary]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            AppBiasSummary(row["app"], row["category"] or None, int(row["n_users"]),
                           float(row["mean_b_h"]), float(row["se_b_h"]),
                           float(row["mean_b_p"]), float(row["se_b_p"]), int(row["n_users"]) > 1)
            for row in csv.DictReader(fh)
        ]


def write_lorenz_json(path, entries: Iterable[tuple[str, str, LorenzCurve]], x_axis: str) -> None:
    out = [
        {"user": user, "app": app, "x_axis": x_axis, "interpolation": c.interpolation,
         "dropped_targets": c.dropped_targets, "points": c.points.tolist()}
        for user, app, c in entries
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh)
        fh.write("\n")
