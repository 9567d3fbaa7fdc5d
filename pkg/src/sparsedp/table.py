"""Sparse contingency tables.

A table is stored as two parallel sorted arrays (cell index, count) over a
linearized domain. Multi-attribute cells are flattened row-major, so the
last attribute varies fastest.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import os
from typing import Iterable, Mapping, Optional

import numpy as np


class TableFormatError(ValueError):
    """Raised when table input cannot be parsed or violates the domain."""


@dataclasses.dataclass(frozen=True)
class DomainSpec:
    """Per-attribute cardinalities of a contingency table."""

    cardinalities: tuple

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        if not cards:
            raise ValueError("a domain needs at least one attribute")
        if any(c < 1 for c in cards):
            raise ValueError(f"cardinalities must be >= 1, got {cards}")
        object.__setattr__(self, "cardinalities", cards)

    @classmethod
    def flat(cls, m: int) -> "DomainSpec":
        return cls((int(m),))

    @property
    def m(self) -> int:
        return math.prod(self.cardinalities)

    @property
    def ndim(self) -> int:
        return len(self.cardinalities)

    def linearize(self, multi_index) -> np.ndarray:
        """Row-major flat index of one or many multi-indices.

        Args:
            multi_index: sequence of length ``ndim`` (or an array of shape
                ``(k, ndim)``).

        Returns:
            The flat index (int) or an int64 array of flat indices.
        """
        arr = np.asarray(multi_index, dtype=np.int64)
        if arr.ndim == 1:
            return int(np.ravel_multi_index(tuple(arr), self.cardinalities))
        return np.ravel_multi_index(tuple(arr.T), self.cardinalities).astype(np.int64)

    def delinearize(self, index):
        out = np.unravel_index(np.asarray(index, dtype=np.int64), self.cardinalities)
        if np.ndim(index) == 0:
            return tuple(int(x) for x in out)
        return np.stack(out, axis=-1)


class SparseTable:
    """Immutable sparse table M: nonzero cells of a linearized domain.

    Attributes:
        domain: the DomainSpec.
        indices: sorted int64 array of nonzero cell indices.
        counts: int64 array of the matching counts (never zero).
    """

    __slots__ = ("domain", "indices", "counts", "_l1")

    def __init__(self, domain: DomainSpec, indices, counts):
        if isinstance(domain, int):
            domain = DomainSpec.flat(domain)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        cnt = np.asarray(counts, dtype=np.int64).reshape(-1)
        if idx.shape != cnt.shape:
            raise ValueError("indices and counts must have equal length")
        if idx.size:
            order = np.argsort(idx, kind="stable")
            idx, cnt = idx[order], cnt[order]
            if idx[0] < 0 or idx[-1] >= domain.m:
                raise ValueError(f"cell index outside domain [0, {domain.m})")
            if np.any(idx[1:] == idx[:-1]):
                raise ValueError("duplicate cell indices")
            if np.any(cnt == 0):
                raise ValueError("stored counts must be nonzero")
        idx.setflags(write=False)
        cnt.setflags(write=False)
        self.domain = domain
        self.indices = idx
        self.counts = cnt
        self._l1 = int(np.abs(cnt).sum())

    @classmethod
    def from_mapping(cls, domain, cells: Mapping[int, int]) -> "SparseTable":
        items = [(int(i), int(c)) for i, c in cells.items() if c != 0]
        if not items:
            return cls(domain, [], [])
        idx, cnt = zip(*items)
        return cls(domain, idx, cnt)

    @classmethod
    def from_dense(cls, dense) -> "SparseTable":
        dense = np.asarray(dense, dtype=np.int64).reshape(-1)
        nz = np.flatnonzero(dense)
        return cls(DomainSpec.flat(dense.size), nz, dense[nz])

    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def n(self) -> int:
        return int(self.indices.size)

    @property
    def l1(self) -> int:
        return self._l1

    @property
    def density(self) -> float:
        return self.n / self.m

    def to_dict(self) -> dict:
        return dict(zip(self.indices.tolist(), self.counts.tolist()))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.m, dtype=np.int64)
        dense[self.indices] = self.counts
        return dense

    def get(self, i: int) -> int:
        pos = np.searchsorted(self.indices, i)
        if pos < self.n and self.indices[pos] == i:
            return int(self.counts[pos])
        return 0

    def is_nonzero(self, cells) -> np.ndarray:
        """Vectorized membership test against the nonzero cells."""
        cells = np.asarray(cells, dtype=np.int64)
        if self.n == 0:
            return np.zeros(cells.shape, dtype=bool)
        pos = np.searchsorted(self.indices, cells)
        pos = np.minimum(pos, self.n - 1)
        return self.indices[pos] == cells

    def range_sum(self, lo: int, hi: int) -> int:
        a, b = np.searchsorted(self.indices, [lo, hi + 1])
        return int(self.counts[a:b].sum())

    def subset_sum(self, cells) -> int:
        cells = np.unique(np.asarray(cells, dtype=np.int64))
        pos = np.searchsorted(self.indices, cells)
        pos = np.minimum(pos, max(self.n - 1, 0))
        if self.n == 0:
            return 0
        hit = self.indices[pos] == cells
        return int(self.counts[pos[hit]].sum())

    def __eq__(self, other):
        if not isinstance(other, SparseTable):
            return NotImplemented
        return (self.domain == other.domain
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.counts, other.counts))

    def __repr__(self):
        return f"SparseTable(m={self.m}, n={self.n}, l1={self.l1})"


def table_stats(table: SparseTable):
    """Returns ``(n, m, density, l1)``."""
    return table.n, table.m, table.density, table.l1


# ---------------------------------------------------------------------------
# Text ingestion


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_domain_line(line: str) -> Optional[DomainSpec]:
    """Reads a ``# {"cardinalities": [...]}`` sidecar comment, if present."""
    body = line.lstrip("#").strip()
    if not body.startswith("{"):
        return None
    try:
        meta = json.loads(body)
    except json.JSONDecodeError:
        return None
    if "cardinalities" in meta:
        return DomainSpec(tuple(meta["cardinalities"]))
    if "m" in meta:
        return DomainSpec.flat(meta["m"])
    return None


def load_sparse_table(source, domain: Optional[DomainSpec] = None) -> SparseTable:
    """Parses ``index,count`` or ``i1,...,ik,count`` lines into a table.

    Lines starting with ``#`` are comments; a JSON comment carrying
    ``cardinalities`` supplies the domain when ``domain`` is None. Duplicate
    cells are summed.

    Raises:
        TableFormatError: malformed line, index out of domain, or a count
            that is not a positive integer. The message carries the line
            number.
    """
    cells: dict = {}
    rows = []
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if domain is None:
                domain = parse_domain_line(line)
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise TableFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        rows.append((lineno, nums))
    if domain is None:
        raise TableFormatError("no domain given and no cardinalities header found")
    k = domain.ndim
    for lineno, nums in rows:
        if len(nums) != k + 1:
            raise TableFormatError(
                f"line {lineno}: expected {k + 1} fields, got {len(nums)}")
        *coords, count = nums
        if count <= 0:
            raise TableFormatError(f"line {lineno}: count must be positive, got {count}")
        if k == 1:
            index = coords[0]
            if not 0 <= index < domain.m:
                raise TableFormatError(
                    f"line {lineno}: index {index} outside domain [0, {domain.m})")
        else:
            for c, card in zip(coords, domain.cardinalities):
                if not 0 <= c < card:
                    raise TableFormatError(
                        f"line {lineno}: coordinate {c} outside attribute size {card}")
            index = domain.linearize(coords)
        cells[index] = cells.get(index, 0) + count
    return SparseTable.from_mapping(domain, cells)


def save_sparse_table(table: SparseTable, dest) -> None:
    """Writes a table in the format read by :func:`load_sparse_table`."""
    lines = ["# " + json.dumps({"cardinalities": list(table.domain.cardinalities)})]
    if table.domain.ndim == 1:
        lines.extend(f"{i},{c}" for i, c in zip(table.indices.tolist(), table.counts.tolist()))
    else:
        coords = table.domain.delinearize(table.indices)
        for row, c in zip(coords.tolist(), table.counts.tolist()):
            lines.append(",".join(map(str, row)) + f",{c}")
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_table(path, domain: Optional[DomainSpec] = None) -> SparseTable:
    with open(path, encoding="utf-8") as fh:
        return load_sparse_table(fh, domain)


# ---------------------------------------------------------------------------
# Synthetic data


@dataclasses.dataclass(frozen=True)
class ExperimentProfile:
    """Generator parameters for synthetic sparse tables.

    ``placement="skewed"`` puts every nonzero inside one contiguous block of
    ``2n`` cells (local density about one half) at a random offset.
    """

    m: int = 10**6
    rho: float = 0.1
    mu: float = 100.0
    sigma: float = 20.0
    placement: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.placement not in ("uniform", "skewed"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if round(self.rho * self.m) < 1:
            raise ValueError("rho * m must round to at least one cell")

    @property
    def n(self) -> int:
        return int(round(self.rho * self.m))


DEFAULT_PROFILE = ExperimentProfile()


def synth_table(profile: ExperimentProfile, rng: Optional[np.random.Generator] = None) -> SparseTable:
    """Draws a synthetic table with ``round(rho * m)`` nonzero cells.

    Values are Normal(mu, sigma) rounded to the nearest integer and clamped
    to at least 1. With ``rng=None`` the profile seed is used.
    """
    if rng is None:
        rng = np.random.default_rng(profile.seed)
    m, n = profile.m, profile.n
    if profile.placement == "uniform":
        cells = rng.choice(m, size=n, replace=False)
    else:
        block = min(2 * n, m)
        start = int(rng.integers(0, m - block + 1))
        cells = start + rng.choice(block, size=n, replace=False)
    values = np.rint(rng.normal(profile.mu, profile.sigma, size=n))
    values = np.maximum(values, 1).astype(np.int64)
    return SparseTable(DomainSpec.flat(m), cells, values)
