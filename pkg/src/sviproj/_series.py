"""Numeric verdicts on sequences: does a term tend to zero, is a series finite.

Both verdicts rest on the local power-law exponent of the term over the
last decade before the horizon. A series with terms ~ k^p is declared
finite when p < -1 - margin; a term tends to zero when p < -margin.
Log factors (e.g. 1/(k ln^2 k)) shift the local exponent in the right
direction, so they are classified correctly at horizons >= 10^3.
"""
from dataclasses import dataclass

import numpy as np

MARGIN = 1e-3


@dataclass(frozen=True)
class SeriesVerdict:
    name: str
    kind: str  # "summable", "divergent" or "to_zero"
    exponent: float
    partial_sum: float
    last_term: float
    passed: bool

    def as_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "exponent": self.exponent,
            "partial_sum": self.partial_sum,
            "last_term": self.last_term,
            "passed": self.passed,
        }


def tail_exponent(k, terms):
    """Least-squares slope of log|term| against log k over the last decade.

    Returns -inf when the tail is identically zero and +inf when it
    contains non-finite values.
    """
    k = np.asarray(k, dtype=np.float64)
    t = np.abs(np.asarray(terms, dtype=np.float64))
    sel = k >= k[-1] / 10.0
    kt, tt = k[sel], t[sel]
    if not np.all(np.isfinite(tt)):
        return float("inf")
    if np.all(tt == 0):
        return float("-inf")
    if np.any(tt == 0):
        # intermittent zeros: judge the nonzero envelope
        kt, tt = kt[tt > 0], tt[tt > 0]
        if kt.size < 2:
            return float("-inf")
    lx, ly = np.log(kt), np.log(tt)
    lx = lx - lx.mean()
    return float((lx * (ly - ly.mean())).sum() / (lx**2).sum())


def verdict(name, k, terms, kind):
    """Classify ``terms`` (indexed by ``k``) according to ``kind``.

    ``kind`` is "summable" (pass when the series is finite), "divergent"
    (pass when it is infinite) or "to_zero" (pass when the term vanishes).
    """
    p = tail_exponent(k, terms)
    terms = np.asarray(terms, dtype=np.float64)
    finite = p < -1.0 - MARGIN
    if kind == "summable":
        passed = finite
    elif kind == "divergent":
        passed = not finite
    elif kind == "to_zero":
        passed = p < -MARGIN
    else:
        raise ValueError(kind)
    return SeriesVerdict(name, kind, p, float(np.sum(terms)), float(terms[-1]), bool(passed))
