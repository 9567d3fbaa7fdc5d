"""Point, subset and range queries over released summaries."""

from __future__ import annotations

import dataclasses
import io
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .dyadic import answer_range_dyadic
from .summary import FILTER_METHODS, Summary
from .table import SparseTable

MODES = ("adjusted", "unadjusted", "clamped", "corrected")


class QueryFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class Query:
    """A point, subset or range query.

    ``cells`` holds the point index or the subset; ``lo``/``hi`` the closed
    range bounds.
    """

    kind: str
    cells: np.ndarray = dataclasses.field(default_factory=lambda: np.empty(0, np.int64))
    lo: int = 0
    hi: int = -1

    @classmethod
    def point(cls, i: int) -> "Query":
        return cls("point", np.array([int(i)], dtype=np.int64))

    @classmethod
    def subset(cls, cells: Iterable[int]) -> "Query":
        return cls("subset", np.unique(np.fromiter(cells, dtype=np.int64)))

    @classmethod
    def range(cls, lo: int, hi: int) -> "Query":
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return cls("range", np.empty(0, np.int64), int(lo), int(hi))

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1 if self.kind == "range" else len(self.cells)

    def check(self, m: int) -> None:
        if self.kind == "range":
            if not 0 <= self.lo <= self.hi < m:
                raise ValueError(f"range [{self.lo}, {self.hi}] outside [0, {m})")
        elif self.cells.size and (self.cells.min() < 0 or self.cells.max() >= m):
            raise ValueError(f"query cell outside [0, {m})")

    def truth(self, table: SparseTable) -> int:
        if self.kind == "range":
            return table.range_sum(self.lo, self.hi)
        return table.subset_sum(self.cells)


def _column(summary: Summary, mode: str, fill: Optional[float]) -> np.ndarray:
    if mode in ("adjusted", "corrected"):
        return summary.weights
    if mode == "unadjusted":
        return summary.values.astype(np.float64)
    if mode == "clamped":
        return np.maximum(summary.values, 0).astype(np.float64)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def answer(summary: Summary, query: Query, mode: str = "adjusted",
           fill: Optional[float] = None) -> float:
    """Estimates the query answer from the summary.

    Args:
        summary: released summary.
        query: point, subset or range query.
        mode: ``adjusted`` sums estimation weights, ``unadjusted`` raw
            noisy values, ``clamped`` values rounded up to 0. ``corrected``
            applies only to filter summaries: absent cells count as ``fill``
            (theta / 2 by default). It is an uncalibrated heuristic.
        fill: value assumed for absent cells in ``corrected`` mode.
    """
    if summary.is_dyadic:
        if query.kind == "subset":
            raise ValueError("dyadic summaries answer range and point queries only")
        lo, hi = (query.lo, query.hi) if query.kind == "range" else (int(query.cells[0]),) * 2
        return answer_range_dyadic(summary, lo, hi, "adjusted" if mode == "corrected" else mode)
    query.check(summary.m)
    col = _column(summary, mode, fill)
    idx = summary.indices
    if query.kind == "range":
        a, b = np.searchsorted(idx, [query.lo, query.hi + 1])
        total, present = float(col[a:b].sum()), int(b - a)
    else:
        cells = query.cells
        if idx.size == 0:
            total, present = 0.0, 0
        else:
            pos = np.minimum(np.searchsorted(idx, cells), idx.size - 1)
            hit = idx[pos] == cells
            total, present = float(col[pos[hit]].sum()), int(hit.sum())
    if mode == "corrected":
        if summary.method not in FILTER_METHODS:
            raise ValueError("corrected mode applies to filter summaries only")
        if fill is None:
            fill = summary.params["theta"] / 2.0
        total += fill * (query.size - present)
    return total


@dataclasses.dataclass
class ErrorReport:
    rows: list  # (query_id, truth, estimate, abs_err, rel_err)

    @property
    def abs_errors(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows], dtype=np.float64)

    @property
    def rel_errors(self) -> np.ndarray:
        return np.array([r[4] for r in self.rows], dtype=np.float64)

    @property
    def mean_abs_error(self) -> float:
        return float(self.abs_errors.mean()) if self.rows else 0.0

    @property
    def median_rel_error(self) -> float:
        return float(np.median(self.rel_errors)) if self.rows else 0.0


def relative_error(table: SparseTable, summary: Summary, queries: Sequence[Query],
                   mode: str = "adjusted") -> ErrorReport:
    """Per-query absolute error and |estimate - truth| / max(1, |truth|)."""
    rows = []
    for qid, q in enumerate(queries):
        truth = q.truth(table)
        est = answer(summary, q, mode)
        err = abs(est - truth)
        rows.append((qid, truth, est, err, err / max(1.0, abs(truth))))
    return ErrorReport(rows)


def random_ranges(m: int, size: int, count: int, rng: np.random.Generator) -> List[Query]:
    starts = rng.integers(0, m - size + 1, size=count)
    return [Query.range(int(s), int(s) + size - 1) for s in starts]


def random_subsets(m: int, size: int, count: int, rng: np.random.Generator) -> List[Query]:
    return [Query.subset(rng.choice(m, size=size, replace=False)) for _ in range(count)]


# ---------------------------------------------------------------------------
# Files


def parse_queries(source) -> List[Query]:
    """Reads ``P,i`` / ``R,lo,hi`` / ``S,i1 i2 ...`` lines."""
    if isinstance(source, str):
        source = io.StringIO(source)
    out = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        tag = parts[0].upper()
        try:
            if tag == "P" and len(parts) == 2:
                out.append(Query.point(int(parts[1])))
            elif tag == "R" and len(parts) == 3:
                out.append(Query.range(int(parts[1]), int(parts[2])))
            elif tag == "S" and len(parts) == 2:
                out.append(Query.subset(int(x) for x in parts[1].split()))
            else:
                raise QueryFormatError(f"line {lineno}: cannot parse {line!r}")
        except ValueError as exc:
            if isinstance(exc, QueryFormatError):
                raise
            raise QueryFormatError(f"line {lineno}: {exc}") from None
    return out


def read_queries(path) -> List[Query]:
    with open(path, encoding="utf-8") as fh:
        return parse_queries(fh)


def format_report(summary: Summary, queries: Sequence[Query], mode: str = "adjusted",
                  table: Optional[SparseTable] = None) -> str:
    """CSV report; truth and error columns only when ``table`` is given."""
    buf = io.StringIO()
    if table is None:
        buf.write("query_id,estimate\n")
        for qid, q in enumerate(queries):
            buf.write(f"{qid},{answer(summary, q, mode)!r}\n")
    else:
        buf.write("query_id,truth,estimate,abs_err,rel_err\n")
        for qid, truth, est, err, rel in relative_error(table, summary, queries, mode).rows:
            buf.write(f"{qid},{truth},{est!r},{err!r},{rel!r}\n")
    return buf.getvalue()
