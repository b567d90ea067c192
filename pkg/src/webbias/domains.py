"""Canonical domain names."""

import re

_SCHEME = re.compile(r"^[a-z][a-z0-9+.\-]*://")
_WWW = re.compile(r"^(?:www\.)+")


def _once(s: str) -> str:
    s = s.strip().lower()
    s = _SCHEME.sub("", s)
    for sep in "/?#":
        cut = s.find(sep)
        if cut >= 0:
            s = s[:cut]
    at = s.rfind("@")
    if at >= 0:
        s = s[at + 1:]
    colon = s.rfind(":")
    if colon >= 0 and s[colon + 1:].isdigit():
        s = s[:colon]
    s = s.rstrip(".")
    return _WWW.sub("", s)


def normalize_domain(raw: str) -> str:
    """Reduce a URL or host string to a bare lowercase domain.

    Strips the scheme, user info, port, path, query, fragment and any
    leading ``www.`` labels. Returns ``""`` when nothing is left.

    >>> normalize_domain("https://WWW.Example.COM:8080/a/b?q=1")
    'example.com'
    """
    s = raw
    # stripping one layer can expose another ("www. www.a"); repeat to a fixed point
    for _ in range(len(raw) + 2):
        t = _once(s)
        if t == s:
            break
        s = t
    return s
