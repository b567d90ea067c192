"""Per-(user, application) click store and the two sampling protocols.

Fixed-count sampling draws the same number of clicks for every sampled user
so that samples reflect equal effort in click volume. Time-window sampling
keeps every click inside a half-open window ``[start, end)`` so that samples
reflect equal effort in time.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from webbias._rng import derive_rng
from webbias.bias import ClickSample
from webbias.clicks import CategoryMap, ClickTable
from webbias.errors import ExcludedApplicationWarning, InsufficientDataError

logger = logging.getLogger(__name__)

FIXED_COUNT = "fixed-count"
TIME_WINDOW = "time-window"

CLICKS_PER_PAIR = 100
USERS_PER_APP = 500
USERS_PER_CATEGORY = 1200
MIN_USERS_PER_APP = 30
WINDOW_MIN_CLICKS = 10


class ClickStore:
    """Clicks grouped by (user, group), each group time-ordered.

    A group is an application (``level="app"``) or a whole category
    (``level="category"``), in which case a user's clicks through all the
    category's applications are pooled. Clicks whose referrer is not in the
    category map are left out.
    """

    def __init__(self, table: ClickTable, cmap: CategoryMap, level: str = "app"):
        if level not in ("app", "category"):
            raise ValueError(f"level must be 'app' or 'category', got {level!r}")
        self.level = level
        self.domains = table.domains
        self.user_names = table.users

        resolved = [cmap.lookup(d) for d in table.domains]
        key_of = (lambda h: h[0]) if level == "app" else (lambda h: h[1])
        self.groups = sorted({key_of(h) for h in resolved if h is not None})
        gi = {g: i for i, g in enumerate(self.groups)}
        self.category_of = {}
        for h in resolved:
            if h is not None:
                self.category_of[key_of(h)] = h[1]
        group_of_domain = np.array([gi[key_of(h)] if h is not None else -1 for h in resolved],
                                   dtype=np.int32)

        grp = group_of_domain[table.referrer] if len(table) else np.zeros(0, np.int32)
        keep = grp >= 0
        grp = grp[keep]
        user = table.user[keep]
        ts = table.timestamp[keep]
        tgt = table.target[keep]
        order = np.lexsort((ts, user, grp))
        self._group = grp[order]
        self._user = user[order]
        self.timestamps = ts[order]
        self.targets = tgt[order]

        n = len(order)
        if n:
            change = np.flatnonzero((np.diff(self._group) != 0) | (np.diff(self._user) != 0)) + 1
            starts = np.concatenate([[0], change])
        else:
            starts = np.zeros(0, dtype=np.int64)
        self.pair_start = starts
        self.pair_end = np.concatenate([starts[1:], [n]]) if n else starts
        self.pair_group = self._group[starts] if n else starts
        self.pair_user = self._user[starts] if n else starts
        self._index = {
            (self.user_names[u], self.groups[g]): k
            for k, (u, g) in enumerate(zip(self.pair_user.tolist(), self.pair_group.tolist()))
        }

    def __len__(self):
        return len(self.targets)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_start)

    def pairs(self) -> Iterator[tuple[str, str]]:
        """(user, group) keys sorted by group then user."""
        for u, g in zip(self.pair_user.tolist(), self.pair_group.tolist()):
            yield self.user_names[u], self.groups[g]

    def count(self, user: str, group: str) -> int:
        k = self._index.get((user, group))
        return 0 if k is None else int(self.pair_end[k] - self.pair_start[k])

    def _slice(self, user, group) -> slice:
        k = self._index[(user, group)]
        return slice(int(self.pair_start[k]), int(self.pair_end[k]))

    def targets_of(self, user: str, group: str) -> list[str]:
        return [self.domains[t] for t in self.targets[self._slice(user, group)].tolist()]

    def timestamps_of(self, user: str, group: str) -> np.ndarray:
        return self.timestamps[self._slice(user, group)]

    def users_of(self, group: str) -> list[tuple[str, int]]:
        """(user, click count) for every user active in ``group``, sorted by user."""
        g = self.groups.index(group)
        ks = np.flatnonzero(self.pair_group == g)
        return [(self.user_names[self.pair_user[k]], int(self.pair_end[k] - self.pair_start[k]))
                for k in ks.tolist()]

    def distinct_targets(self) -> int:
        return int(len(np.unique(self.targets)))

    def _pair_ids(self, group_index: int) -> np.ndarray:
        return np.flatnonzero(self.pair_group == group_index)


@dataclass(frozen=True)
class SampleSpec:
    mode: str = FIXED_COUNT
    clicks_per_pair: int = CLICKS_PER_PAIR
    users_per_app: int = USERS_PER_APP
    min_clicks: int = CLICKS_PER_PAIR
    window: tuple[int, int] | None = None
    min_users_per_app: int = MIN_USERS_PER_APP
    seed: int = 0

    def __post_init__(self):
        if self.mode == FIXED_COUNT:
            if self.clicks_per_pair < 1 or self.users_per_app < 1:
                raise ValueError("clicks_per_pair and users_per_app must be positive")
            if self.clicks_per_pair > self.min_clicks:
                raise ValueError("clicks_per_pair cannot exceed min_clicks")
        elif self.mode == TIME_WINDOW:
            if self.window is None or len(self.window) != 2:
                raise ValueError("time-window mode needs window=(start, end)")
            if not self.window[0] < self.window[1]:
                raise ValueError(f"empty window {self.window}: start must precede end")
            if self.min_clicks < 1:
                raise ValueError("min_clicks must be positive")
        else:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.min_users_per_app < 1:
            raise ValueError("min_users_per_app must be positive")

    @classmethod
    def fixed_count(cls, clicks_per_pair=CLICKS_PER_PAIR, users_per_app=USERS_PER_APP,
                    min_clicks=None, min_users_per_app=MIN_USERS_PER_APP, seed=0) -> "SampleSpec":
        return cls(FIXED_COUNT, clicks_per_pair, users_per_app,
                   clicks_per_pair if min_clicks is None else min_clicks,
                   None, min_users_per_app, seed)

    @classmethod
    def time_window(cls, start: int, end: int, min_clicks=WINDOW_MIN_CLICKS,
                    min_users_per_app=MIN_USERS_PER_APP, seed=0) -> "SampleSpec":
        return cls(TIME_WINDOW, CLICKS_PER_PAIR, USERS_PER_APP, min_clicks,
                   (int(start), int(end)), min_users_per_app, seed)


def _exclude(group: str, n_users: int, spec: SampleSpec):
    msg = f"{group}: only {n_users} eligible users (< {spec.min_users_per_app}); excluded"
    logger.warning(msg)
    warnings.warn(msg, ExcludedApplicationWarning, stacklevel=3)


def sample_fixed_count(store: ClickStore, spec: SampleSpec) -> list[ClickSample]:
    """Draw ``clicks_per_pair`` clicks for up to ``users_per_app`` users per group.

    Users and clicks are drawn uniformly without replacement. Each group has
    its own random stream derived from ``(spec.seed, group)``. Returned
    samples are ordered by group then user, and each sample's clicks keep
    their time order.
    """
    if spec.mode != FIXED_COUNT:
        raise ValueError("spec is not in fixed-count mode")
    out: list[ClickSample] = []
    for gi, group in enumerate(store.groups):
        ks = store._pair_ids(gi)
        sizes = store.pair_end[ks] - store.pair_start[ks]
        eligible = ks[sizes >= spec.min_clicks]
        if len(eligible) < spec.min_users_per_app:
            _exclude(group, len(eligible), spec)
            continue
        rng = derive_rng(spec.seed, "fixed-count", group)
        n_take = min(spec.users_per_app, len(eligible))
        chosen = np.sort(rng.choice(len(eligible), size=n_take, replace=False))
        category = store.category_of[group]
        for k in eligible[chosen].tolist():
            start, end = int(store.pair_start[k]), int(store.pair_end[k])
            pick = np.sort(rng.choice(end - start, size=spec.clicks_per_pair, replace=False))
            targets = tuple(store.domains[t] for t in store.targets[start + pick].tolist())
            out.append(ClickSample(store.user_names[store.pair_user[k]], group, targets, category))
    return out


def sample_time_window(store: ClickStore, spec: SampleSpec) -> list[ClickSample]:
    """Keep every click with ``start <= timestamp < end`` for each (user, group).

    Pairs with fewer than ``min_clicks`` clicks in the window are dropped,
    then groups with fewer than ``min_users_per_app`` users are excluded.
    """
    if spec.mode != TIME_WINDOW:
        raise ValueError("spec is not in time-window mode")
    start, end = spec.window
    in_window = (store.timestamps >= start) & (store.timestamps < end)
    if not in_window.any():
        raise InsufficientDataError(f"no clicks in window [{start}, {end})")
    out: list[ClickSample] = []
    for gi, group in enumerate(store.groups):
        category = store.category_of[group]
        group_samples = []
        for k in store._pair_ids(gi).tolist():
            a, b = int(store.pair_start[k]), int(store.pair_end[k])
            ts = store.timestamps[a:b]
            lo = a + int(np.searchsorted(ts, start, side="left"))
            hi = a + int(np.searchsorted(ts, end, side="left"))
            if hi - lo < spec.min_clicks:
                continue
            targets = tuple(store.domains[t] for t in store.targets[lo:hi].tolist())
            group_samples.append(ClickSample(store.user_names[store.pair_user[k]], group, targets, category))
        if not group_samples:
            continue
        if len(group_samples) < spec.min_users_per_app:
            _exclude(group, len(group_samples), spec)
            continue
        out.extend(group_samples)
    return out


def draw_samples(store: ClickStore, spec: SampleSpec) -> list[ClickSample]:
    if spec.mode == FIXED_COUNT:
        return sample_fixed_count(store, spec)
    return sample_time_window(store, spec)


MANIFEST_FIELDS = ["user", "app", "category", "n_clicks"]


def write_manifest(path, samples: list[ClickSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for s in samples:
            w.writerow([s.user, s.app, s.category or "", s.n_clicks])


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["n_clicks"] = int(row["n_clicks"])
    return rows
