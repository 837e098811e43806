"""Synthetic zero-truncated Poisson-mixture data and the replication study."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .estimators import EstimateReport, coverage_and_error, summarize
from .freq_data import DataError, FrequencyTable, right_truncate
from .mcmc import SamplerConfig, run_sampler
from .model import PriorConfig

__all__ = [
    "Component",
    "MixingDistribution",
    "SETTINGS",
    "GAMMA_CONVENTIONS",
    "setting",
    "draw_counts",
    "draw_dataset",
    "StudyResult",
    "run_study",
    "write_study_json",
]

GAMMA_CONVENTIONS = ("rate", "scale")


@dataclass(frozen=True)
class Component:
    """One mixture component: ``gamma(a, b)``, ``lognormal(mu, sigma)`` or ``point(loc)``."""

    family: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.family not in ("gamma", "lognormal", "point"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "gamma" and not (self.a > 0 and self.b > 0):
            raise ValueError(f"gamma needs positive shape and rate/scale, got ({self.a}, {self.b})")
        if self.family == "lognormal" and not self.b > 0:
            raise ValueError(f"lognormal needs a positive sigma, got {self.b}")
        if self.family == "point" and self.a < 0:
            raise ValueError("point mass location must be nonnegative")

    def frozen(self, gamma_convention: str):
        if self.family == "gamma":
            scale = 1.0 / self.b if gamma_convention == "rate" else self.b
            return stats.gamma(self.a, scale=scale)
        if self.family == "lognormal":
            return stats.lognorm(self.b, scale=math.exp(self.a))
        return None


@dataclass(frozen=True)
class MixingDistribution:
    """Finite mixture of components with weights summing to one.

    ``gamma_convention`` says whether the second gamma parameter is a
    rate or a scale.
    """

    weights: tuple
    components: tuple
    label: str = ""
    gamma_convention: str = "rate"

    def __post_init__(self):
        if len(self.weights) != len(self.components) or not self.components:
            raise ValueError("need one weight per component")
        if any(not 0 < w <= 1 for w in self.weights) or not math.isclose(sum(self.weights), 1.0):
            raise ValueError(f"weights must lie in (0, 1] and sum to 1, got {self.weights}")
        if self.gamma_convention not in GAMMA_CONVENTIONS:
            raise ValueError(f"gamma_convention must be one of {GAMMA_CONVENTIONS}")

    @property
    def variant(self) -> str:
        fams = {c.family for c in self.components}
        if fams == {"point"}:
            return "two_point" if len(self.components) == 2 else "point"
        fam = fams.pop() if len(fams) == 1 else "mixed"
        return fam if len(self.components) == 1 else f"{fam}_mixture"

    def with_convention(self, gamma_convention: str) -> "MixingDistribution":
        return replace(self, gamma_convention=gamma_convention)

    def sample(self, size: int, rng) -> np.ndarray:
        which = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        lam = np.empty(size)
        for i, comp in enumerate(self.components):
            idx = np.flatnonzero(which == i)
            if comp.family == "point":
                lam[idx] = comp.a
            else:
                lam[idx] = comp.frozen(self.gamma_convention).rvs(size=len(idx), random_state=rng)
        return lam

    def zero_probability(self) -> float:
        """``E[exp(-lambda)]`` by quadrature (exact for point masses)."""
        total = 0.0
        for w, comp in zip(self.weights, self.components):
            if comp.family == "point":
                total += w * math.exp(-comp.a)
                continue
            dist = comp.frozen(self.gamma_convention)
            val, _ = integrate.quad(lambda x: math.exp(-x) * dist.pdf(x), 0, np.inf, limit=200)
            total += w * val
        return total


def _mix(label, *parts):
    return MixingDistribution(tuple(w for w, _ in parts), tuple(c for _, c in parts), label)


def _ga(a, b):
    return Component("gamma", a, b)


def _ln(mu, sigma):
    return Component("lognormal", mu, sigma)


def _pt(loc):
    return Component("point", loc)


SETTINGS = {
    1: _mix("Ga(4, 3.125)", (1.0, _ga(4, 3.125))),
    2: _mix("Ga(4, 1)", (1.0, _ga(4, 1))),
    3: _mix("Ga(1, 0.25)", (1.0, _ga(1, 0.25))),
    4: _mix("0.5 Ga(2, 1) + 0.5 Ga(2, 2)", (0.5, _ga(2, 1)), (0.5, _ga(2, 2))),
    5: _mix("0.5 Ga(2, 1) + 0.5 Ga(4, 1)", (0.5, _ga(2, 1)), (0.5, _ga(4, 1))),
    6: _mix("LN(0.75, 0.75)", (1.0, _ln(0.75, 0.75))),
    7: _mix("LN(-0.5, 2)", (1.0, _ln(-0.5, 2))),
    8: _mix("LN(-1, 1)", (1.0, _ln(-1, 1))),
    9: _mix("0.5 LN(-0.5, 1) + 0.5 LN(0.5, 1)", (0.5, _ln(-0.5, 1)), (0.5, _ln(0.5, 1))),
    10: _mix("0.8 d(1.2) + 0.2 d(6.7)", (0.8, _pt(1.2)), (0.2, _pt(6.7))),
    11: _mix("0.89 d(0.5) + 0.11 d(6.7)", (0.89, _pt(0.5)), (0.11, _pt(6.7))),
    12: _mix("0.8 d(0.2) + 0.2 d(1.3)", (0.8, _pt(0.2)), (0.2, _pt(1.3))),
}


def setting(number: int, gamma_convention: str = "rate") -> MixingDistribution:
    """Mixing distribution of simulation setting ``number`` (1..12)."""
    if number not in SETTINGS:
        raise ValueError(f"unknown setting {number!r}; choose 1..{len(SETTINGS)}")
    return SETTINGS[number].with_convention(gamma_convention)


def draw_counts(q: MixingDistribution, true_N: int, rng) -> np.ndarray:
    """Counts of all ``true_N`` units, zeros included."""
    if true_N < 1:
        raise ValueError("true_N must be at least 1")
    return rng.poisson(q.sample(true_N, rng))


def draw_dataset(q: MixingDistribution, true_N: int, rng) -> FrequencyTable:
    """Frequency table of the units seen at least once."""
    counts = draw_counts(q, true_N, rng)
    seen = counts[counts > 0]
    if seen.size == 0:
        raise DataError("no observed units: every simulated count is zero")
    return FrequencyTable(tuple(np.bincount(seen)[1:].tolist()), label=q.label)


@dataclass(frozen=True)
class StudyResult:
    setting: int
    label: str
    replications: int
    failures: int
    true_N: int
    median_point: float
    rmse: float
    coverage: float
    mean_width: float
    gamma_convention: str


_FIELDS = ["setting", "rep", "config", "status", "n", "tail_units", "point", "lower", "upper",
           "mode", "error"]


def _config_key(**kw) -> str:
    blob = json.dumps(kw, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _one_replication(task):
    number, rep, q, true_N, m_star, prior, sampler, mode, seed = task
    ss = np.random.SeedSequence(seed, spawn_key=(number, rep))
    data_seed, chain_seed = ss.generate_state(2, np.uint32)
    row = {"setting": number, "rep": rep, "status": "ok", "n": "", "tail_units": "",
           "point": "", "lower": "", "upper": "", "mode": "", "error": ""}
    try:
        table = draw_dataset(q, true_N, np.random.default_rng(int(data_seed)))
        row["n"] = table.n
        trunc = right_truncate(table, m_star)
        chain = run_sampler(trunc.table, prior, replace(sampler, seed=int(chain_seed)), mode,
                            m_star=m_star)
        r = summarize(chain, trunc.tail_units)
        row.update(tail_units=trunc.tail_units, point=r.point, lower=r.interval_lower,
                   upper=r.interval_upper, mode=r.posterior_mode)
    except (DataError, ValueError, ArithmeticError, RuntimeError) as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _FIELDS:
            raise DataError(f"{path} is not a study results file")
        return list(reader)


def _write_rows(path: Path, rows: Iterable[dict]):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)


def run_study(settings: Sequence[int], true_N: int = 1000, reps: int = 20, m_star: int = 10,
              prior: PriorConfig = PriorConfig(),
              sampler: SamplerConfig = SamplerConfig(iterations=20_000, burn_in=2_000),
              mode: str = "full_bayes", seed: int = 0, gamma_convention: str = "rate",
              results_path=None, workers: int = 1) -> list[StudyResult]:
    """Replicate draw, truncate, sample and summarize for each setting.

    Every replication has its own seed derived from ``(seed, setting, rep)``,
    so results do not depend on ``workers`` or on resuming.  With
    ``results_path`` each finished replication is saved to a CSV file, and
    rows already present for the same configuration are reused.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    qs = {s: setting(s, gamma_convention) for s in settings}
    key = _config_key(true_N=true_N, m_star=m_star, prior=asdict(prior), sampler=asdict(sampler),
                      mode=mode, seed=seed, gamma_convention=gamma_convention)
    path = Path(results_path) if results_path is not None else None
    done = {}
    others = []
    for row in _read_rows(path) if path else []:
        if row["config"] == key:
            done[(int(row["setting"]), int(row["rep"]))] = row
        else:
            others.append(row)

    def flush():
        if path is not None:
            _write_rows(path, others + [done[k] for k in sorted(done)])

    tasks = [(s, r, qs[s], true_N, m_star, prior, sampler, mode, seed)
             for s in settings for r in range(reps) if (s, r) not in done]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_one_replication, t) for t in tasks]
            for fut in as_completed(futures):
                row = fut.result()
                done[(row["setting"], row["rep"])] = dict(row, config=key)
                flush()
    else:
        for t in tasks:
            row = _one_replication(t)
            done[(row["setting"], row["rep"])] = dict(row, config=key)
            flush()
    flush()

    results = []
    for s in settings:
        rows = [done[(s, r)] for r in range(reps)]
        ok = [row for row in rows if row["status"] == "ok"]
        reports = [EstimateReport(int(row["point"]), int(row["lower"]), int(row["upper"]),
                                  int(row["mode"]), int(row["tail_units"])) for row in ok]
        if reports:
            agg = coverage_and_error(reports, true_N)
            stats_ = (agg.median_point, agg.rmse, agg.coverage, agg.mean_width)
        else:
            stats_ = (math.nan,) * 4
        results.append(StudyResult(s, qs[s].label, len(ok), len(rows) - len(ok), true_N,
                                   *stats_, gamma_convention))
    return results


def write_study_json(results: Sequence[StudyResult], path):
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in results], fh, indent=2, sort_keys=True)
        fh.write("\n")
