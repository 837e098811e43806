"""Frequency-of-frequencies tables: parsing, truncation and bundled datasets.

A table stores ``f_1, ..., f_M`` where ``f_k`` is the number of units
observed exactly ``k`` times.  The number of unseen units ``f_0`` is never
stored; it is ``N - n`` for the unknown population size ``N``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

__all__ = [
    "FrequencyTable",
    "TruncationResult",
    "DataError",
    "parse_frequency_table",
    "format_frequency_table",
    "right_truncate",
    "builtin_datasets",
    "load_dataset",
    "DATASET_NAMES",
    "KNOWN_SIZES",
]

DATASET_NAMES = ("traffic", "root", "polyps_low", "polyps_high", "scrapie", "methamphetamine")

# Population sizes known from the original studies.
KNOWN_SIZES = {"traffic": 9461, "polyps_low": 584, "polyps_high": 722}

_SPLIT = re.compile(r"[,\s]+")


class DataError(ValueError):
    """Raised for malformed or inconsistent frequency data."""


@dataclass(frozen=True)
class FrequencyTable:
    """Observed frequencies ``f_1..f_M``.

    ``tail`` marks the last cell as open-ended ("M+"): it holds every unit
    seen at least ``M`` times, so it cannot enter the likelihood directly.
    """

    freqs: tuple[int, ...]
    label: str = ""
    tail: bool = False
    n: int = field(init=False)
    M: int = field(init=False)

    def __post_init__(self):
        freqs = tuple(self.freqs)
        if not freqs:
            raise DataError("frequency table is empty")
        for k, f in enumerate(freqs, start=1):
            if isinstance(f, bool) or int(f) != f:
                raise DataError(f"f_{k} = {f!r} is not an integer")
            if f < 0:
                raise DataError(f"f_{k} = {f} is negative")
        freqs = tuple(int(f) for f in freqs)
        if freqs[-1] == 0:
            raise DataError("the last cell must have a positive frequency")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "n", sum(freqs))
        object.__setattr__(self, "M", len(freqs))

    def __getitem__(self, k: int) -> int:
        """Frequency of count ``k`` (zero outside ``1..M``)."""
        if 1 <= k <= self.M:
            return self.freqs[k - 1]
        return 0

    def padded(self, m_star: int) -> list[int]:
        """Cells ``f_1..f_{m_star}``, zero-padded beyond ``M``."""
        if m_star < self.M:
            raise DataError(f"table has {self.M} cells, more than m_star={m_star}")
        return list(self.freqs) + [0] * (m_star - self.M)


class TruncationResult(NamedTuple):
    table: FrequencyTable
    tail_units: int


def parse_frequency_table(text, label: str = "") -> FrequencyTable:
    """Parse ``k,f_k`` (or whitespace separated) records into a table.

    ``text`` may be a string or any iterable of lines.  Lines starting with
    ``#`` and blank lines are skipped; the first record may be a header.
    A trailing ``+`` on the largest ``k`` marks an open-ended tail cell.
    Missing counts between 1 and the largest ``k`` get frequency zero.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    cells: dict[int, int] = {}
    tail_k = None
    seen_record = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = [t for t in _SPLIT.split(line) if t]
        if len(tokens) != 2:
            raise DataError(f"line {lineno}: expected two fields, got {len(tokens)}")
        k_tok, f_tok = tokens
        is_tail = k_tok.endswith("+")
        if is_tail:
            k_tok = k_tok[:-1]
        if not seen_record and not is_tail and not _is_int(k_tok):
            seen_record = True  # header
            continue
        try:
            k, f = int(k_tok), int(f_tok)
        except ValueError:
            raise DataError(f"line {lineno}: non-integer token in {line!r}") from None
        seen_record = True
        if k < 1:
            raise DataError(f"line {lineno}: count k={k} must be a positive integer")
        if f < 0:
            raise DataError(f"line {lineno}: negative frequency {f}")
        if k in cells:
            raise DataError(f"line {lineno}: duplicate count k={k}")
        if is_tail:
            if tail_k is not None:
                raise DataError(f"line {lineno}: more than one open-ended cell")
            tail_k = k
        cells[k] = f
    if not any(f > 0 for f in cells.values()):
        raise DataError("no positive frequency found")
    top = max(k for k, f in cells.items() if f > 0)
    if tail_k is not None and tail_k != max(cells):
        raise DataError(f"open-ended cell {tail_k}+ is not the largest count")
    freqs = tuple(cells.get(k, 0) for k in range(1, top + 1))
    return FrequencyTable(freqs, label=label, tail=tail_k is not None and tail_k == top)


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


def format_frequency_table(table: FrequencyTable) -> str:
    """Serialize ``table`` in the format read by :func:`parse_frequency_table`."""
    rows = ["k,f"]
    for k, f in enumerate(table.freqs, start=1):
        mark = "+" if table.tail and k == table.M else ""
        rows.append(f"{k}{mark},{f}")
    return "\n".join(rows) + "\n"


def right_truncate(table: FrequencyTable, m_star: int) -> TruncationResult:
    """Keep counts ``1..m_star``; units seen more often become ``tail_units``.

    Trailing zero cells are dropped from the returned table, so its ``M`` may
    be below ``m_star``.  Callers fitting the model pass ``m_star`` explicitly.
    """
    if int(m_star) != m_star or m_star < 1:
        raise DataError(f"m_star must be a positive integer, got {m_star!r}")
    if m_star >= table.M:
        return TruncationResult(table, 0)
    kept = list(table.freqs[:m_star])
    tail_units = sum(table.freqs[m_star:])
    while kept and kept[-1] == 0:
        kept.pop()
    if not kept:
        raise DataError(f"no observed units with count <= {m_star}")
    return TruncationResult(FrequencyTable(tuple(kept), label=table.label), tail_units)


def _read_fixture(name: str) -> FrequencyTable:
    text = (resources.files("bpmix") / "data" / f"{name}.txt").read_text(encoding="utf-8")
    return parse_frequency_table(text, label=name)


def builtin_datasets() -> list[FrequencyTable]:
    """The six benchmark tables, in a fixed order."""
    return [_read_fixture(name) for name in DATASET_NAMES]


def load_dataset(ref) -> FrequencyTable:
    """Load a bundled dataset by name, or a table from a file path."""
    if isinstance(ref, FrequencyTable):
        return ref
    ref = str(ref)
    if ref in DATASET_NAMES:
        return _read_fixture(ref)
    path = Path(ref)
    if not path.is_file():
        raise DataError(f"unknown dataset {ref!r} (not a fixture name or a file)")
    return parse_frequency_table(path.read_text(encoding="utf-8"), label=path.stem)
