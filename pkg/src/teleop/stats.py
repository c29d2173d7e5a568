"""Order statistics shared by the mux and the session report.

Percentiles use the nearest-rank definition so that replaying a trace
reproduces the report bit-exactly: p = sorted[ceil(q * n) - 1].
"""

from __future__ import annotations

import math


def nearest_rank(sorted_vals: list, q: float):
    if not sorted_vals:
        raise ValueError("empty sample")
    idx = max(math.ceil(q * len(sorted_vals)) - 1, 0)
    return sorted_vals[min(idx, len(sorted_vals) - 1)]


def summarize(values: list) -> dict:
    """{count, min, max, mean, p50, p99} over the sample."""
    if not values:
        raise ValueError("empty sample")
    s = sorted(values)
    return {
        "count": len(s),
        "min": s[0],
        "max": s[-1],
        "mean": sum(s) / len(s),
        "p50": nearest_rank(s, 0.50),
        "p99": nearest_rank(s, 0.99),
    }
