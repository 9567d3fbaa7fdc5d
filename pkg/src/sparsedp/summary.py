"""Released summaries M'' and their on-disk format.

A summary file is one ``#meta <json>`` line followed by a CSV body with
header ``index,value,adjusted_weight``. Weights are written with ``repr``
so reading a file back reproduces every float bit for bit. Dyadic
summaries write node ids as ``level:offset``.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .noise import NoiseSpec

METHODS = (
    "filter1",
    "filter2",
    "threshold",
    "filter-threshold",
    "priority",
    "filter-priority",
    "geometric-full",
)
FILTER_METHODS = ("filter1", "filter2")


class SummaryEntry(NamedTuple):
    index: int
    value: int
    adjusted_weight: float


class SummaryFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class Summary:
    """A released sample of the noisy table.

    ``origin`` marks upgraded zero cells. It is a verification aid only and
    is dropped by :meth:`released` and by :func:`write_summary`.
    """

    indices: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    method: str
    noise: NoiseSpec
    m: int
    params: dict = dataclasses.field(default_factory=dict)
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if not idx.shape == vals.shape == w.shape:
            raise ValueError("indices, values and weights must align")
        for arr in (idx, vals, w):
            arr.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", w)
        if self.origin is not None:
            org = np.asarray(self.origin, dtype=bool)
            org.setflags(write=False)
            object.__setattr__(self, "origin", org)

    @classmethod
    def build(cls, indices, values, method, noise, m, params=None, origin=None, weights=None):
        """Sorts entries by index; weights default to the values."""
        indices = np.asarray(indices, dtype=np.int64)
        order = np.argsort(indices, kind="stable")
        values = np.asarray(values, dtype=np.int64)[order]
        if weights is None:
            weights = values.astype(np.float64)
        else:
            weights = np.asarray(weights, dtype=np.float64)[order]
        if origin is not None:
            origin = np.asarray(origin, dtype=bool)[order]
        return cls(indices[order], values, weights, method, noise, int(m),
                   dict(params or {}), origin)

    def __len__(self):
        return int(self.indices.size)

    def __iter__(self) -> Iterator[SummaryEntry]:
        for i, v, w in zip(self.indices.tolist(), self.values.tolist(), self.weights.tolist()):
            yield SummaryEntry(i, v, w)

    @property
    def is_dyadic(self) -> bool:
        return bool(self.params.get("dyadic", False))

    @property
    def tau_s(self) -> Optional[float]:
        return self.params.get("tau_s")

    def replace(self, **changes) -> "Summary":
        return dataclasses.replace(self, **changes)

    def select(self, mask) -> "Summary":
        mask = np.asarray(mask, dtype=bool)
        origin = None if self.origin is None else self.origin[mask]
        return self.replace(indices=self.indices[mask], values=self.values[mask],
                            weights=self.weights[mask], origin=origin)

    def released(self) -> "Summary":
        return self.replace(origin=None)

    def upgraded_mask(self) -> np.ndarray:
        if self.origin is None:
            raise ValueError("summary carries no origin diagnostics")
        return self.origin

    def metadata(self) -> dict:
        meta = {
            "method": self.method,
            "epsilon": self.noise.epsilon,
            "sensitivity": self.noise.sensitivity,
            "alpha": self.noise.alpha,
            "m": self.m,
        }
        meta.update(self.params)
        return meta

    def equals(self, other: "Summary") -> bool:
        return (self.method == other.method and self.noise == other.noise
                and self.m == other.m and self.params == other.params
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.weights, other.weights))


# ---------------------------------------------------------------------------
# Serialization


def _node_label(flat: int, height: int) -> str:
    from .dyadic import node_of

    level, offset = node_of(flat, height)
    return f"{level}:{offset}"


def dumps_summary(summary: Summary) -> str:
    meta = summary.metadata()
    lines = ["#meta " + json.dumps(meta, sort_keys=True), "index,value,adjusted_weight"]
    height = meta.get("height") if summary.is_dyadic else None
    for i, v, w in zip(summary.indices.tolist(), summary.values.tolist(),
                       summary.weights.tolist()):
        label = _node_label(i, height) if height is not None else str(i)
        lines.append(f"{label},{v},{w!r}")
    return "\n".join(lines) + "\n"


def loads_summary(text: str) -> Summary:
    lines = io.StringIO(text).read().splitlines()
    if not lines or not lines[0].startswith("#meta "):
        raise SummaryFormatError("missing '#meta' header line")
    meta = json.loads(lines[0][len("#meta "):])
    try:
        method = meta.pop("method")
        noise = NoiseSpec(meta.pop("epsilon"), meta.pop("sensitivity"))
        meta.pop("alpha", None)
        m = int(meta.pop("m"))
    except KeyError as exc:
        raise SummaryFormatError(f"metadata lacks {exc}") from None
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if body and body[0].startswith("index"):
        body = body[1:]
    height = meta.get("height") if meta.get("dyadic") else None
    idx, vals, wts = [], [], []
    for lineno, line in enumerate(body, start=3):
        parts = line.split(",")
        if len(parts) != 3:
            raise SummaryFormatError(f"line {lineno}: expected 3 fields")
        if height is not None:
            from .dyadic import node_index

            level, offset = parts[0].split(":")
            idx.append(node_index(int(level), int(offset), height))
        else:
            idx.append(int(parts[0]))
        vals.append(int(parts[1]))
        wts.append(float(parts[2]))
    return Summary.build(idx, vals, method, noise, m, params=meta, weights=wts)


def write_summary(summary: Summary, dest) -> None:
    text = dumps_summary(summary)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_summary(path) -> Summary:
    with open(path, encoding="utf-8") as fh:
        return loads_summary(fh.read())
