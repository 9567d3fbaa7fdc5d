"""Dyadic range transform, range decomposition and consistency pruning.

The domain is padded to ``2**h`` leaves with ``h = ceil(log2 m)``. Node
``(level, offset)`` covers ``[offset * 2**level, (offset + 1) * 2**level)``;
level 0 holds the leaves and level h the root. Nodes are laid out level by
level, leaves first, giving a flat domain of ``2**(h+1) - 1`` cells so the
transform can be fed to any summarizer unchanged.
"""

from __future__ import annotations

import dataclasses
from typing import List, Tuple

import numpy as np

from .noise import NoiseSpec
from .summary import FILTER_METHODS, Summary
from .table import DomainSpec, SparseTable


def tree_height(m: int) -> int:
    if m < 1:
        raise ValueError("m must be >= 1")
    return (int(m) - 1).bit_length()


def level_start(level, height: int):
    """Flat index of node (level, 0)."""
    return (1 << (height + 1)) - (np.left_shift(1, height + 1 - np.asarray(level)))


def node_index(level, offset, height: int):
    out = level_start(level, height) + np.asarray(offset)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def node_of(flat, height: int):
    """Inverse of :func:`node_index`: flat id -> (level, offset)."""
    flat = np.asarray(flat, dtype=np.int64)
    # q = 2**(h+1) - flat lies in (2**(h-l), 2**(h+1-l)] for level l
    q = (1 << (height + 1)) - flat
    _, ceil_log2 = np.frexp((q - 1).astype(np.float64))
    level = height + 1 - ceil_log2.astype(np.int64)
    offset = flat - level_start(level, height)
    if np.ndim(flat) == 0:
        return int(level), int(offset)
    return level, offset.astype(np.int64)


def node_interval(level: int, offset: int) -> Tuple[int, int]:
    """Closed leaf interval [lo, hi] covered by a node."""
    return offset << level, ((offset + 1) << level) - 1


@dataclasses.dataclass(frozen=True, eq=False)
class DyadicTable:
    """Sparse dyadic-range transform of a table.

    ``levels[l]`` is a pair ``(offsets, counts)`` of the nonzero nodes at
    level ``l``.
    """

    m: int
    height: int
    levels: tuple

    @property
    def node_count(self) -> int:
        return sum(int(off.size) for off, _ in self.levels)

    @property
    def domain_size(self) -> int:
        return (1 << (self.height + 1)) - 1

    def count(self, level: int, offset: int) -> int:
        off, cnt = self.levels[level]
        pos = np.searchsorted(off, offset)
        if pos < off.size and off[pos] == offset:
            return int(cnt[pos])
        return 0

    def as_table(self) -> SparseTable:
        """The transform as a flat SparseTable over all tree nodes."""
        idx = [node_index(lvl, off, self.height) for lvl, (off, _) in enumerate(self.levels)]
        cnt = [c for _, c in self.levels]
        if not idx:
            return SparseTable(DomainSpec.flat(self.domain_size), [], [])
        return SparseTable(DomainSpec.flat(self.domain_size),
                           np.concatenate(idx), np.concatenate(cnt))


def dyadic_transform(table: SparseTable) -> DyadicTable:
    """Builds the tree bottom-up from the nonzero leaves only, O(n log m)."""
    h = tree_height(table.m)
    off = table.indices.copy()
    cnt = table.counts.copy()
    levels = [(off, cnt)]
    for _ in range(h):
        parent = off >> 1
        if parent.size:
            starts = np.flatnonzero(np.r_[True, parent[1:] != parent[:-1]])
            off = parent[starts]
            cnt = np.add.reduceat(cnt, starts)
        else:
            off, cnt = parent, cnt
        levels.append((off, cnt))
    return DyadicTable(table.m, h, tuple(levels))


def dyadic_noise_spec(base: NoiseSpec, m: int) -> NoiseSpec:
    """Sensitivity times the h + 1 levels each individual touches."""
    return base.scaled(tree_height(m) + 1)


@dataclasses.dataclass(frozen=True)
class RangeDecomposition:
    nodes: tuple  # (level, offset) pairs

    def __len__(self):
        return len(self.nodes)

    def intervals(self) -> List[Tuple[int, int]]:
        return [node_interval(lvl, off) for lvl, off in self.nodes]

    def flat(self, height: int) -> np.ndarray:
        if not self.nodes:
            return np.empty(0, dtype=np.int64)
        lv, of = zip(*self.nodes)
        return node_index(np.array(lv), np.array(of), height)


def decompose_range(lo: int, hi: int, m: int) -> RangeDecomposition:
    """Canonical minimal cover of [lo, hi] by disjoint dyadic nodes."""
    if not 0 <= lo <= hi < m:
        raise ValueError(f"need 0 <= lo <= hi < m, got lo={lo}, hi={hi}, m={m}")
    nodes = []
    left, right, level = lo, hi + 1, 0
    while left < right:
        if left & 1:
            nodes.append((level, left))
            left += 1
        if right & 1:
            right -= 1
            nodes.append((level, right))
        left >>= 1
        right >>= 1
        level += 1
    nodes.sort(key=lambda node: node_interval(*node)[0])
    return RangeDecomposition(tuple(nodes))


# ---------------------------------------------------------------------------
# Summaries over the transform


def mark_dyadic(summary: Summary, m: int, height: int) -> Summary:
    params = dict(summary.params)
    params.update({"dyadic": True, "height": int(height), "leaf_m": int(m)})
    return summary.replace(params=params)


def dyadic_summary(table: SparseTable, method: str, params: dict, base: NoiseSpec,
                   rng: np.random.Generator) -> Summary:
    """Runs a summarizer on the dyadic transform with rescaled sensitivity."""
    from .summarizers import summarize

    tree = dyadic_transform(table)
    spec = dyadic_noise_spec(base, table.m)
    summary = summarize(tree.as_table(), method, params, spec, rng)
    return mark_dyadic(summary, table.m, tree.height)


def consistency_prune(summary: Summary) -> Summary:
    """Drops every node that has an ancestor missing from the summary.

    Only meaningful for filter output, where an absent ancestor (whose
    true count dominates its descendants) is evidence the node is noise.
    """
    if not summary.is_dyadic:
        raise ValueError("consistency pruning needs a dyadic summary")
    if summary.method not in FILTER_METHODS:
        raise ValueError(
            f"consistency pruning applies to filter summaries, not {summary.method!r}")
    h = summary.params["height"]
    level, offset = node_of(summary.indices, h)
    present = summary.indices
    keep = np.ones(len(summary), dtype=bool)
    for up in range(1, h + 1):
        lvl = level + up
        live = lvl <= h
        anc = node_index(np.minimum(lvl, h), offset >> up, h)
        # present is sorted, so membership is a searchsorted lookup
        pos = np.minimum(np.searchsorted(present, anc), max(present.size - 1, 0))
        found = present[pos] == anc if present.size else np.zeros_like(live)
        keep &= ~live | found
    params = dict(summary.params)
    params["consistency"] = True
    return summary.select(keep).replace(params=params)


def filter_prune_priority(table: SparseTable, theta: int, s: int, base: NoiseSpec,
                          rng: np.random.Generator) -> Summary:
    """Dyadic filter, consistency pruning, then priority sampling to size s.

    Pruning has to happen between filtering and sampling, so the filter
    output is materialized; cost is linear in that output, not in m.
    """
    from .summarizers import _priority_extract, adjust_weights, filter_shortcut

    tree = dyadic_transform(table)
    spec = dyadic_noise_spec(base, table.m)
    filt = mark_dyadic(filter_shortcut(tree.as_table(), theta, "two", spec, rng),
                       table.m, tree.height)
    pruned = consistency_prune(filt)
    if len(pruned) <= s:
        raise ValueError(f"only {len(pruned)} nodes survive filtering and pruning; need > {s}")
    origin = pruned.origin if pruned.origin is not None else np.zeros(len(pruned), bool)
    # tau_guess = 1 makes every surviving node a candidate with r ~ U(0, 1]
    idx, vals, org, tau_s = _priority_extract(pruned.indices, pruned.values, origin, 1, s, rng)
    params = dict(pruned.params)
    params.update({"s": int(s), "tau_s": tau_s})
    out = Summary.build(idx, vals, "filter-priority", spec, pruned.m, params, org)
    return adjust_weights(out)


def answer_range_dyadic(summary: Summary, lo: int, hi: int, mode: str = "adjusted") -> float:
    """Sums summary nodes of the canonical cover of [lo, hi]; absent nodes add 0."""
    if not summary.is_dyadic:
        raise ValueError("summary is not dyadic")
    h = summary.params["height"]
    m = summary.params.get("leaf_m", 1 << h)
    nodes = decompose_range(lo, hi, m).flat(h)
    pos = np.searchsorted(summary.indices, nodes)
    pos = np.minimum(pos, max(len(summary) - 1, 0))
    if len(summary) == 0:
        return 0.0
    hit = summary.indices[pos] == nodes
    sel = pos[hit]
    if mode == "adjusted":
        return float(summary.weights[sel].sum())
    if mode == "unadjusted":
        return float(summary.values[sel].sum())
    if mode == "clamped":
        return float(np.maximum(summary.values[sel], 0).sum())
    raise ValueError(f"unknown mode {mode!r}")
