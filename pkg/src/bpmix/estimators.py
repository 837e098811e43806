"""Posterior summaries of ``N`` and the Chao lower bound."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .freq_data import DataError, FrequencyTable

__all__ = [
    "EstimateReport",
    "StudySummary",
    "summarize",
    "posterior_mode",
    "chao_lower_bound",
    "coverage_and_error",
    "format_report_table",
]


@dataclass(frozen=True)
class EstimateReport:
    point: int
    interval_lower: int
    interval_upper: int
    posterior_mode: int
    tail_adjustment: int = 0
    levels: tuple = (0.025, 0.975)

    def __post_init__(self):
        if not self.interval_lower <= self.point <= self.interval_upper:
            raise ValueError(f"inconsistent report: {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def posterior_mode(samples) -> int:
    """Most frequent value inside the fullest histogram bin.

    Bins have integer width ``max(1, Freedman-Diaconis width)``, so for
    well-spread chains the mode is that of a smoothed histogram rather than
    of single, rarely repeated integers.  Ties go to the smaller value.
    """
    x = np.asarray(samples, dtype=np.int64)
    if x.size == 0:
        raise ValueError("empty sample")
    lo, hi = int(x.min()), int(x.max())
    if lo == hi:
        return lo
    q25, q75 = np.percentile(x, [25, 75])
    width = max(1, int(math.ceil(2 * (q75 - q25) / len(x) ** (1 / 3))))
    counts = np.bincount((x - lo) // width)
    b = int(np.argmax(counts))
    inside = x[(x - lo) // width == b]
    values, freq = np.unique(inside, return_counts=True)
    return int(values[np.argmax(freq)])


def summarize(chain, tail_units: int = 0, levels: Sequence[float] = (0.025, 0.975)) -> EstimateReport:
    """Median, equal-tailed interval and mode of ``N``, shifted by ``tail_units``.

    ``chain`` is a :class:`~bpmix.mcmc.Chain` or an array of ``N`` draws.
    Quantiles are order statistics (inverted empirical CDF), so the median
    of an even-length sample is the lower middle value.
    """
    samples = np.asarray(getattr(chain, "samples_N", chain))
    if samples.size == 0:
        raise ValueError("cannot summarize an empty chain")
    lo_level, hi_level = levels
    if not 0 <= lo_level <= 0.5 <= hi_level <= 1:
        raise ValueError(f"levels must straddle the median, got {levels}")
    q = np.quantile(samples, [lo_level, 0.5, hi_level], method="inverted_cdf")
    lo, med, hi = (int(v) + tail_units for v in q)
    return EstimateReport(point=med, interval_lower=lo, interval_upper=hi,
                          posterior_mode=posterior_mode(samples) + tail_units,
                          tail_adjustment=tail_units, levels=tuple(levels))


def chao_lower_bound(data: FrequencyTable) -> float:
    """``n + f_1^2 / (2 f_2)``."""
    f1, f2 = data[1], data[2]
    if f2 == 0:
        raise DataError(f"Chao's bound needs f_2 > 0 ({data.label or 'table'} has f_2 = 0)")
    return data.n + f1 * f1 / (2 * f2)


@dataclass(frozen=True)
class StudySummary:
    replications: int
    median_point: float
    rmse: float
    coverage: float
    mean_width: float


def coverage_and_error(estimates: Iterable[EstimateReport], true_N: int) -> StudySummary:
    """Median point estimate, RMSE, interval coverage and mean interval width."""
    est = list(estimates)
    if not est:
        raise ValueError("no estimates to summarize")
    points = np.array([e.point for e in est], dtype=float)
    covered = [e.interval_lower <= true_N <= e.interval_upper for e in est]
    widths = [e.interval_upper - e.interval_lower for e in est]
    return StudySummary(
        replications=len(est),
        median_point=float(np.median(points)),
        rmse=float(np.sqrt(np.mean((points - true_N) ** 2))),
        coverage=sum(covered) / len(est),
        mean_width=float(np.mean(widths)),
    )


def format_report_table(rows: Sequence[tuple[str, float, float, float]]) -> str:
    """Aligned text table with columns Methods, N^, N-, N+ (blank for missing bounds)."""
    header = ("Methods", "N^", "N-", "N+")
    cells = [header]
    for name, point, lo, hi in rows:
        cells.append((name,) + tuple("" if v is None else _fmt(v) for v in (point, lo, hi)))
    widths = [max(len(r[i]) for r in cells) for i in range(4)]
    lines = []
    for r in cells:
        lines.append("  ".join([r[0].ljust(widths[0])] + [r[i].rjust(widths[i]) for i in range(1, 4)]))
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) or float(v).is_integer():
        return str(int(v))
    return f"{v:.1f}"
