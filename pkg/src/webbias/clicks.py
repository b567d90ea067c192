"""Click-log ingestion, referrer classification and news filtering.

Two readers share one record schema (``timestamp, user, target, referrer``,
tab-separated):

* :func:`parse_click_log` streams :class:`ClickRecord` objects in constant
  memory, one line at a time.
* :func:`read_click_log` loads a whole log into a columnar
  :class:`ClickTable`; this is the fast path used by the pipeline.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import polars as pl

from webbias.domains import normalize_domain
from webbias.errors import ClickLogFormatError, InputFormatError

logger = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.5


class ClickRecord(NamedTuple):
    timestamp: int
    user: str
    target: str
    referrer: str


@dataclass
class ParseTally:
    lines: int = 0
    malformed: int = 0
    first_errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def records(self) -> int:
        return self.lines - self.malformed

    def check(self, source="click log"):
        if self.lines and self.malformed > MAX_MALFORMED_FRACTION * self.lines:
            raise ClickLogFormatError(
                f"{source}: {self.malformed} of {self.lines} lines malformed; "
                f"first errors: {self.first_errors[:5]}"
            )


def parse_click_log(lines: Iterable[str], tally: ParseTally | None = None) -> Iterator[ClickRecord]:
    """Yield normalized records from TSV lines, skipping malformed ones.

    Progress is accumulated in ``tally``. Once the input is exhausted a
    :class:`ClickLogFormatError` is raised if more than half of the nonblank
    lines were malformed.
    """
    if tally is None:
        tally = ParseTally()
    cache: dict[str, str] = {}

    def bad(lineno, msg):
        tally.malformed += 1
        if len(tally.first_errors) < 20:
            tally.first_errors.append((lineno, msg))

    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip("\t"):
            continue
        tally.lines += 1
        fields = line.split("\t")
        if len(fields) != 4:
            bad(lineno, f"expected 4 fields, got {len(fields)}")
            continue
        ts_raw, user, target, referrer = fields
        try:
            ts = int(ts_raw)
        except ValueError:
            bad(lineno, f"bad timestamp {ts_raw!r}")
            continue
        if ts < 0:
            bad(lineno, "negative timestamp")
            continue
        if not user:
            bad(lineno, "empty user")
            continue
        t = cache.get(target)
        if t is None:
            t = cache[target] = normalize_domain(target)
        r = cache.get(referrer)
        if r is None:
            r = cache[referrer] = normalize_domain(referrer)
        if not t or not r:
            bad(lineno, "empty domain")
            continue
        yield ClickRecord(ts, user, t, r)
    tally.check()


@dataclass
class ClickTable:
    """Columnar click log.

    ``user`` indexes into ``users``; ``target`` and ``referrer`` index into
    the shared ``domains`` vocabulary. Both vocabularies are sorted.
    """

    timestamp: np.ndarray
    user: np.ndarray
    target: np.ndarray
    referrer: np.ndarray
    users: list[str]
    domains: list[str]
    tally: ParseTally = field(default_factory=ParseTally)

    def __len__(self):
        return len(self.timestamp)

    def __iter__(self) -> Iterator[ClickRecord]:
        return self.records()

    def records(self) -> Iterator[ClickRecord]:
        users, domains = self.users, self.domains
        for ts, u, t, r in zip(self.timestamp.tolist(), self.user.tolist(),
                               self.target.tolist(), self.referrer.tolist()):
            yield ClickRecord(ts, users[u], domains[t], domains[r])

    def select(self, mask: np.ndarray) -> "ClickTable":
        """Rows where ``mask`` holds, order preserved; vocabularies unchanged."""
        return ClickTable(self.timestamp[mask], self.user[mask], self.target[mask],
                          self.referrer[mask], self.users, self.domains, self.tally)

    def domain_mask(self, names: Iterable[str]) -> np.ndarray:
        index = {d: i for i, d in enumerate(self.domains)}
        mask = np.zeros(len(self.domains), dtype=bool)
        for name in names:
            i = index.get(name)
            if i is not None:
                mask[i] = True
        return mask

    def distinct_targets(self) -> int:
        return int(len(np.unique(self.target)))

    @classmethod
    def from_records(cls, records: Iterable[ClickRecord]) -> "ClickTable":
        recs = list(records)
        users = sorted({r.user for r in recs})
        domains = sorted({r.target for r in recs} | {r.referrer for r in recs})
        ui = {u: i for i, u in enumerate(users)}
        di = {d: i for i, d in enumerate(domains)}
        return cls(
            np.array([r.timestamp for r in recs], dtype=np.int64),
            np.array([ui[r.user] for r in recs], dtype=np.int32),
            np.array([di[r.target] for r in recs], dtype=np.int32),
            np.array([di[r.referrer] for r in recs], dtype=np.int32),
            users, domains, ParseTally(len(recs), 0),
        )


def _read_bytes(source) -> bytes:
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        data = path.read_bytes()
    elif isinstance(source, bytes):
        data = source
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    else:
        data = "".join(line if line.endswith("\n") else line + "\n" for line in source).encode("utf-8")
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _sorted_codes(col: pl.Series) -> tuple[np.ndarray, list[str]]:
    vocab = col.unique().sort()
    codes = col.cast(pl.Enum(vocab.to_list())).to_physical().to_numpy()
    return codes, vocab.to_list()


def _tabs_per_line(data: bytes) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    ends = np.flatnonzero(buf == 10)
    if len(buf) and buf[-1] != 10:
        ends = np.append(ends, len(buf))
    before = np.searchsorted(np.flatnonzero(buf == 9), ends)
    return np.diff(before, prepend=0)


def read_click_log(source) -> ClickTable:
    """Load a TSV click log (optionally gzip-compressed) into a :class:`ClickTable`.

    Malformed lines are counted in ``table.tally`` and dropped. Raises
    :class:`ClickLogFormatError` when more than half of the nonblank lines
    are malformed.
    """
    data = _read_bytes(source)
    empty = ClickTable(np.zeros(0, np.int64), np.zeros(0, np.int32), np.zeros(0, np.int32),
                       np.zeros(0, np.int32), [], [], ParseTally())
    if not data.strip():
        return empty
    df = pl.read_csv(
        io.BytesIO(data),
        separator="\t",
        has_header=False,
        new_columns=["ts", "user", "target", "referrer", "extra"],
        schema={"ts": pl.Utf8, "user": pl.Utf8, "target": pl.Utf8,
                "referrer": pl.Utf8, "extra": pl.Utf8},
        quote_char=None,
        truncate_ragged_lines=True,
    ).with_row_index("line", offset=1)
    # an empty trailing field reads the same as a missing one, so count separators directly
    n_tabs = _tabs_per_line(data)
    if len(n_tabs) != df.height:
        raise ClickLogFormatError(f"click log: line count mismatch ({len(n_tabs)} vs {df.height} rows)")
    df = df.with_columns(pl.Series("n_tabs", n_tabs))
    blank = pl.all_horizontal(pl.col(c).is_null() for c in ("ts", "user", "target", "referrer", "extra"))
    df = df.filter(~blank)
    df = df.with_columns(pl.col("ts").cast(pl.Int64, strict=False).alias("t"))
    ok = (
        pl.col("t").is_not_null() & (pl.col("t") >= 0)
        & pl.col("user").is_not_null() & (pl.col("user") != "")
        & pl.col("target").is_not_null() & pl.col("referrer").is_not_null()
        & (pl.col("n_tabs") == 3)
    )
    tally = ParseTally(lines=df.height)
    good = df.filter(ok)
    if good.height < df.height:
        bad = df.filter(~ok).head(20)
        tally.first_errors = [(int(ln), "malformed line") for ln in bad["line"].to_list()]

    raw_dom, raw_vocab = _sorted_codes(pl.concat([good["target"], good["referrer"]]))
    normalized = [normalize_domain(d) for d in raw_vocab]
    domains = sorted(set(normalized) - {""})
    di = {d: i for i, d in enumerate(domains)}
    to_norm = np.array([di.get(d, -1) for d in normalized], dtype=np.int32)
    n = good.height
    target = to_norm[raw_dom[:n]] if n else np.zeros(0, np.int32)
    referrer = to_norm[raw_dom[n:]] if n else np.zeros(0, np.int32)
    valid = (target >= 0) & (referrer >= 0)
    if not valid.all():
        bad_lines = good["line"].to_numpy()[~valid]
        tally.first_errors = sorted(tally.first_errors + [(int(x), "empty domain") for x in bad_lines[:20]])[:20]
        good = good.filter(pl.Series(valid))
        target, referrer = target[valid], referrer[valid]
    tally.malformed = tally.lines - good.height
    tally.check()
    if tally.malformed:
        logger.warning("click log: %d of %d lines malformed and skipped", tally.malformed, tally.lines)
    if good.height == 0:
        empty.tally = tally
        return empty
    user, users = _sorted_codes(good["user"])
    return ClickTable(
        good["t"].to_numpy().astype(np.int64, copy=False),
        user.astype(np.int32, copy=False),
        target.astype(np.int32, copy=False),
        referrer.astype(np.int32, copy=False),
        users, domains, tally,
    )


def write_click_log(path, records: Iterable[ClickRecord]) -> int:
    n = 0
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.timestamp}\t{r.user}\t{r.target}\t{r.referrer}\n")
            n += 1
    return n


class CategoryMap:
    """Referrer domain -> application -> category.

    Referrers are matched exactly first, then by their nearest registered
    parent domain (``de.wikipedia.org`` matches ``wikipedia.org``).
    """

    def __init__(self, app_of_referrer: dict[str, str], category_of_app: dict[str, str]):
        self.app_of_referrer = {normalize_domain(k): v for k, v in app_of_referrer.items()}
        self.category_of_app = dict(category_of_app)
        self.validate()
        self._cache: dict[str, tuple[str, str] | None] = {}

    def validate(self):
        for ref, app in self.app_of_referrer.items():
            if not ref:
                raise InputFormatError("empty referrer domain in category map")
            if app not in self.category_of_app:
                raise InputFormatError(f"application {app!r} has no category")

    @classmethod
    def from_dict(cls, tree: dict[str, dict[str, list[str]]]) -> "CategoryMap":
        """Build from ``{category: {application: [referrer, ...]}}``."""
        app_of_referrer: dict[str, str] = {}
        category_of_app: dict[str, str] = {}
        for category, apps in tree.items():
            for app, referrers in apps.items():
                if app in category_of_app and category_of_app[app] != category:
                    raise InputFormatError(f"application {app!r} listed under two categories")
                category_of_app[app] = category
                for ref in referrers:
                    ref = normalize_domain(ref)
                    if app_of_referrer.get(ref, app) != app:
                        raise InputFormatError(f"referrer {ref!r} mapped to two applications")
                    app_of_referrer[ref] = app
        return cls(app_of_referrer, category_of_app)

    def to_dict(self) -> dict[str, dict[str, list[str]]]:
        tree: dict[str, dict[str, list[str]]] = {}
        for app, cat in self.category_of_app.items():
            tree.setdefault(cat, {})[app] = sorted(r for r, a in self.app_of_referrer.items() if a == app)
        return tree

    @classmethod
    def load(cls, path) -> "CategoryMap":
        try:
            tree = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: {exc}") from exc
        return cls.from_dict(tree)

    @classmethod
    def default(cls) -> "CategoryMap":
        text = resources.files("webbias").joinpath("data/categories.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @property
    def applications(self) -> list[str]:
        return sorted(self.category_of_app)

    @property
    def categories(self) -> list[str]:
        return sorted(set(self.category_of_app.values()))

    def lookup(self, referrer: str) -> tuple[str, str] | None:
        if referrer in self._cache:
            return self._cache[referrer]
        host = referrer
        hit = None
        while host:
            app = self.app_of_referrer.get(host)
            if app is not None:
                hit = (app, self.category_of_app[app])
                break
            dot = host.find(".")
            host = host[dot + 1:] if dot >= 0 else ""
        self._cache[referrer] = hit
        return hit


def assign_application(record: ClickRecord, cmap: CategoryMap) -> tuple[str, str] | None:
    """Return ``(application, category)`` for the record's referrer, or None."""
    return cmap.lookup(record.referrer)


def load_news_list(source) -> frozenset[str]:
    if isinstance(source, (str, os.PathLike)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)
    out = set()
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        d = normalize_domain(line)
        if d:
            out.add(d)
    return frozenset(out)


def filter_news(records, news_domains):
    """Keep only clicks whose target is a news domain, preserving order.

    Accepts a :class:`ClickTable` (returns a table) or any iterable of
    :class:`ClickRecord` (returns a list).
    """
    if not news_domains:
        raise InputFormatError("news domain list is empty")
    if isinstance(records, ClickTable):
        return records.select(records.domain_mask(news_domains)[records.target])
    return [r for r in records if r.target in news_domains]
