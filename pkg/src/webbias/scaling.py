"""Power-law fits: traffic volume against PageRank, and the PageRank distribution."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from webbias.clicks import ClickRecord, ClickTable
from webbias.errors import InsufficientDataError
from webbias.graph import PageRankVector


@dataclass
class TrafficVolumeTable:
    """Total clicks received by each target domain."""

    volume: dict[str, int]

    def __len__(self):
        return len(self.volume)

    def __getitem__(self, domain):
        return self.volume[domain]


def traffic_by_domain(records: Iterable[ClickRecord] | ClickTable) -> TrafficVolumeTable:
    if isinstance(records, ClickTable):
        counts = np.bincount(records.target, minlength=len(records.domains))
        nz = np.flatnonzero(counts)
        return TrafficVolumeTable({records.domains[i]: int(counts[i]) for i in nz.tolist()})
    return TrafficVolumeTable(dict(Counter(r.target for r in records)))


@dataclass
class BinnedSeries:
    """Log-binned points. ``x_center`` is the geometric mean of the x values in
    the bin and ``y_mean`` the mean of log10 y, so exact power laws stay exact."""

    edges: np.ndarray
    x_center: np.ndarray
    y_mean: np.ndarray
    n: np.ndarray

    def rows(self):
        for x, y, k in zip(self.x_center.tolist(), self.y_mean.tolist(), self.n.tolist()):
            yield x, y, k


@dataclass
class PowerLawFit:
    exponent: float
    intercept: float
    stderr: float
    r_squared: float
    n_points: int
    method: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def log_bin(x: np.ndarray, y: np.ndarray, bins_per_decade: int = 10) -> BinnedSeries:
    """Group points into bins of equal width in log10 x, anchored at decades."""
    if bins_per_decade < 1:
        raise ValueError("bins_per_decade must be positive")
    lx = np.log10(x)
    ly = np.log10(y)
    b = np.floor(lx * bins_per_decade).astype(np.int64)
    ids, inv, counts = np.unique(b, return_inverse=True, return_counts=True)
    sx = np.bincount(inv, weights=lx)
    sy = np.bincount(inv, weights=ly)
    edges = np.concatenate([ids, [ids[-1] + 1]]) / bins_per_decade
    return BinnedSeries(10.0 ** edges, 10.0 ** (sx / counts), sy / counts, counts)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    n = len(x)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise InsufficientDataError("all points share one x value")
    slope = float(dx @ dy) / sxx
    intercept = my - slope * mx
    resid = dy - slope * dx
    ssr = float(resid @ resid)
    sst = float(dy @ dy)
    stderr = math.sqrt(ssr / (n - 2) / sxx) if n > 2 else 0.0
    r2 = 1.0 if sst == 0.0 else max(0.0, min(1.0, 1.0 - ssr / sst))
    return slope, intercept, stderr, r2


def _join(volumes: TrafficVolumeTable, pr: PageRankVector) -> tuple[np.ndarray, np.ndarray]:
    r, t = [], []
    for name, score in zip(pr.names, pr.scores.tolist()):
        v = volumes.volume.get(name)
        if v and score > 0:
            r.append(score)
            t.append(v)
    return np.array(r, dtype=np.float64), np.array(t, dtype=np.float64)


def fit_traffic_scaling(
    volumes: TrafficVolumeTable,
    pr: PageRankVector,
    bins_per_decade: int = 10,
    min_bin_count: int = 3,
) -> PowerLawFit:
    """Fit ``T ~ R^gamma`` by least squares on log-binned data.

    Domains are binned by PageRank; the slope of mean log10 traffic against
    the log10 geometric bin center is the exponent. Bins with fewer than
    ``min_bin_count`` domains are ignored. ``extra`` holds the bins and an
    unbinned least-squares fit over all domains for comparison.
    """
    r, t = _join(volumes, pr)
    if len(r) < 2:
        raise InsufficientDataError("fewer than two domains have both traffic and PageRank")
    bins = log_bin(r, t, bins_per_decade)
    use = bins.n >= min_bin_count
    if use.sum() < 2:
        raise InsufficientDataError(f"fewer than 2 bins hold at least {min_bin_count} domains")
    slope, icpt, se, r2 = _ols(np.log10(bins.x_center[use]), bins.y_mean[use])
    try:
        u_slope, u_icpt, u_se, u_r2 = _ols(np.log10(r), np.log10(t))
        unbinned = {"exponent": u_slope, "intercept": u_icpt, "stderr": u_se, "r_squared": u_r2,
                    "n_points": int(len(r))}
    except InsufficientDataError:
        unbinned = None
    extra = {
        "bins_per_decade": bins_per_decade,
        "min_bin_count": min_bin_count,
        "n_domains": int(len(r)),
        "bins": [{"x_center": x, "y_mean": y, "n": k, "used": bool(u)}
                 for (x, y, k), u in zip(bins.rows(), use.tolist())],
        "unbinned": unbinned,
    }
    return PowerLawFit(slope, icpt, se, r2, int(use.sum()), "log-binned OLS", extra)


def fit_rank_distribution(pr: PageRankVector | np.ndarray, x_min: float, min_tail: int = 100) -> PowerLawFit:
    """Continuous maximum-likelihood exponent of ``P(R) ~ R^-alpha`` for ``R >= x_min``.

    ``alpha = 1 + n / sum(ln(R_i / x_min))`` with standard error
    ``(alpha - 1) / sqrt(n)``. ``r_squared`` compares the empirical and fitted
    complementary CDFs in log space; ``intercept`` is log10 of the fitted
    density's prefactor.
    """
    values = pr.scores if isinstance(pr, PageRankVector) else np.asarray(pr, dtype=np.float64)
    if x_min <= 0:
        raise ValueError("x_min must be positive")
    tail = np.sort(values[values >= x_min])
    n = len(tail)
    if n < min_tail:
        raise InsufficientDataError(f"only {n} values >= x_min (need {min_tail})")
    s = float(np.log(tail / x_min).sum())
    if s <= 0.0:
        raise InsufficientDataError("tail has no variation above x_min")
    alpha = 1.0 + n / s
    stderr = (alpha - 1.0) / math.sqrt(n)
    emp = np.log10(1.0 - np.arange(n) / n)
    model = (1.0 - alpha) * np.log10(tail / x_min)
    sst = float(((emp - emp.mean()) ** 2).sum())
    r2 = 0.0 if sst == 0 else max(0.0, min(1.0, 1.0 - float(((emp - model) ** 2).sum()) / sst))
    intercept = math.log10(alpha - 1.0) + (alpha - 1.0) * math.log10(x_min)
    return PowerLawFit(alpha, intercept, stderr, r2, n, "continuous MLE", {"x_min": x_min})


def write_binned_csv(path, fit: PowerLawFit) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_center", "y_mean", "n", "used"])
        for b in fit.extra.get("bins", []):
            w.writerow([repr(b["x_center"]), repr(b["y_mean"]), b["n"], int(b["used"])])
