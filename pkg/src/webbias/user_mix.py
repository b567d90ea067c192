"""Users placed on a ternary map by their mix of three click categories.

Corners of the triangle: the first category sits at the bottom-left
``(0, 0)``, the second at the bottom-right ``(1, 0)`` and the third at the
top ``(0.5, sqrt(3)/2)``. The default order is email, search, social media,
which puts heavy searchers in the bottom-right corner.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from webbias.bias import ClickSample, score_sample
from webbias.errors import NoCurveError
from webbias.graph import PercentileTable
from webbias.sampling import ClickStore

logger = logging.getLogger(__name__)

DEFAULT_CORNERS = ("Email", "Web Search", "Social Media")
MIN_PER_CATEGORY = 1000
SQRT3 = math.sqrt(3.0)
# about fifteen hexagons across each edge of the unit triangle
DEFAULT_HEX_SIZE = 1.0 / (15 * SQRT3)


@dataclass(frozen=True)
class UserMixPoint:
    user: str
    fractions: tuple[float, float, float]
    counts: tuple[int, int, int]
    b_h: float
    b_p: float


def compute_mix(
    store: ClickStore,
    categories: Sequence[str],
    percentiles: PercentileTable,
    universe_size: int,
    min_per_category: int = MIN_PER_CATEGORY,
    missing: str = "drop",
    interpolation: str = "step",
) -> list[UserMixPoint]:
    """Category mix and pooled biases of users active enough in all three categories.

    ``store`` must be built at category level. A user qualifies with at
    least ``min_per_category`` clicks in each category. The biases are
    measured on all of the user's clicks across the three categories.
    """
    if store.level != "category":
        raise ValueError("compute_mix needs a category-level ClickStore")
    cats = list(categories)
    if len(cats) != 3 or len(set(cats)) != 3:
        raise ValueError("exactly three distinct categories are required")
    missing_cats = [c for c in cats if c not in store.groups]
    if missing_cats:
        warnings.warn(f"no clicks for categories {missing_cats}; no user qualifies")
        return []

    per_cat = [dict(store.users_of(c)) for c in cats]
    eligible = sorted(set.intersection(*(
        {u for u, n in counts.items() if n >= min_per_category} for counts in per_cat)))
    points = []
    for user in eligible:
        counts = tuple(per_cat[i][user] for i in range(3))
        total = sum(counts)
        fractions = tuple(c / total for c in counts)
        pooled = tuple(t for c in cats for t in store.targets_of(user, c))
        sample = ClickSample(user, "+".join(cats), pooled)
        try:
            s = score_sample(sample, percentiles, universe_size, missing, interpolation)
        except NoCurveError:
            logger.warning("user %s: no target with known PageRank, skipped", user)
            continue
        points.append(UserMixPoint(user, fractions, counts, s.b_h, s.b_p))
    if not points:
        warnings.warn(f"no user has at least {min_per_category} clicks in each of {cats}")
    return points


def ternary_project(fractions: Sequence[float]) -> tuple[float, float]:
    """Barycentric ``(f1, f2, f3)`` to Cartesian ``(x, y)`` in the unit triangle."""
    _, f2, f3 = fractions
    return f2 + 0.5 * f3, 0.5 * SQRT3 * f3


def hex_round(x, y, size: float) -> tuple[np.ndarray, np.ndarray]:
    """Axial ``(q, r)`` of the pointy-top hexagon containing each point."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    qf = (SQRT3 / 3.0 * x - y / 3.0) / size
    rf = (2.0 / 3.0 * y) / size
    sf = -qf - rf
    q, r, s = np.round(qf), np.round(rf), np.round(sf)
    dq, dr, ds = np.abs(q - qf), np.abs(r - rf), np.abs(s - sf)
    fix_q = (dq > dr) & (dq > ds)
    fix_r = ~fix_q & (dr > ds)
    q = np.where(fix_q, -r - s, q)
    r = np.where(fix_r, -q - s, r)
    return q.astype(np.int64), r.astype(np.int64)


def hex_center(q, r, size: float) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return size * SQRT3 * (q + r / 2.0), size * 1.5 * r


@dataclass(frozen=True)
class TernaryBin:
    q: int
    r: int
    center: tuple[float, float]
    n_users: int
    mean_b_h: float
    mean_b_p: float


def hexbin(points: Sequence[UserMixPoint], hex_size: float = DEFAULT_HEX_SIZE) -> list[TernaryBin]:
    """Bin projected users into a hexagonal lattice; bins sorted by (r, q)."""
    if hex_size <= 0:
        raise ValueError("hex_size must be positive")
    if not points:
        return []
    xy = np.array([ternary_project(p.fractions) for p in points])
    q, r = hex_round(xy[:, 0], xy[:, 1], hex_size)
    members: dict[tuple[int, int], list[UserMixPoint]] = {}
    for qi, ri, p in zip(q.tolist(), r.tolist(), points):
        members.setdefault((qi, ri), []).append(p)
    bins = []
    for (qi, ri) in sorted(members, key=lambda k: (k[1], k[0])):
        ms = members[(qi, ri)]
        cx, cy = hex_center(qi, ri, hex_size)
        bins.append(TernaryBin(
            qi, ri, (float(cx), float(cy)), len(ms),
            math.fsum(m.b_h for m in ms) / len(ms),
            math.fsum(m.b_p for m in ms) / len(ms),
        ))
    return bins


def write_ternary_csv(path, bins: Sequence[TernaryBin]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_q", "bin_r", "center_x", "center_y", "n_users", "mean_b_h", "mean_b_p"])
        for b in bins:
            w.writerow([b.q, b.r, repr(b.center[0]), repr(b.center[1]), b.n_users,
                        repr(b.mean_b_h), repr(b.mean_b_p)])


def write_mix_csv(path, points: Sequence[UserMixPoint], categories: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", *(f"f_{c}" for c in categories), "x", "y", "b_h", "b_p"])
        for p in points:
            x, y = ternary_project(p.fractions)
            w.writerow([p.user, *(repr(f) for f in p.fractions), repr(x), repr(y),
                        repr(p.b_h), repr(p.b_p)])
