"""Differentially private Count sketch.

Once the hash functions are fixed, each sketch row partitions the cells,
so one individual moves at most one bucket per row. Over d rows the
sensitivity is taken as 2d and every bucket gets independent geometric
noise at that sensitivity.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os

import numpy as np

from .noise import NoiseSpec, sample_geometric
from .table import SparseTable

# Mersenne prime 2**31 - 1 keeps a * x + b inside uint64 for x < 2**31.
_PRIME = (1 << 31) - 1


@dataclasses.dataclass(frozen=True)
class SketchHashes:
    """Pairwise-independent bucket and sign hashes, one pair per row."""

    width: int
    coeffs: np.ndarray  # shape (depth, 4): a, b for buckets; c, e for signs

    @classmethod
    def from_seed(cls, seed: int, width: int, depth: int) -> "SketchHashes":
        rng = np.random.default_rng(seed)
        coeffs = rng.integers(1, _PRIME, size=(depth, 4), dtype=np.int64)
        coeffs[:, [1, 3]] = rng.integers(0, _PRIME, size=(depth, 2), dtype=np.int64)
        return cls(int(width), coeffs)

    @property
    def depth(self) -> int:
        return int(self.coeffs.shape[0])

    def _mix(self, x, a, b):
        x = np.asarray(x, dtype=np.uint64) % np.uint64(_PRIME)
        return (np.uint64(a) * x + np.uint64(b)) % np.uint64(_PRIME)

    def bucket(self, row: int, x) -> np.ndarray:
        a, b = self.coeffs[row, 0], self.coeffs[row, 1]
        return (self._mix(x, a, b) % np.uint64(self.width)).astype(np.int64)

    def sign(self, row: int, x) -> np.ndarray:
        c, e = self.coeffs[row, 2], self.coeffs[row, 3]
        return (self._mix(x, c, e) & np.uint64(1)).astype(np.int64) * 2 - 1


@dataclasses.dataclass(frozen=True, eq=False)
class PrivateSketch:
    width: int
    depth: int
    buckets: np.ndarray
    hash_seed: int
    noise: NoiseSpec
    m: int

    @property
    def hashes(self) -> SketchHashes:
        return SketchHashes.from_seed(self.hash_seed, self.width, self.depth)

    def equals(self, other: "PrivateSketch") -> bool:
        return (self.width == other.width and self.depth == other.depth
                and self.hash_seed == other.hash_seed and self.noise == other.noise
                and self.m == other.m and np.array_equal(self.buckets, other.buckets))


def sketch_noise_spec(base: NoiseSpec, depth: int) -> NoiseSpec:
    return base.scaled(2 * depth)


def sketch_counts(table: SparseTable, hashes: SketchHashes) -> np.ndarray:
    """Noiseless d x w Count sketch of the table."""
    out = np.zeros((hashes.depth, hashes.width), dtype=np.int64)
    for row in range(hashes.depth):
        np.add.at(out[row], hashes.bucket(row, table.indices),
                  hashes.sign(row, table.indices) * table.counts)
    return out


def build_private_sketch(table: SparseTable, width: int, depth: int, spec: NoiseSpec,
                         rng: np.random.Generator, hash_seed=None) -> PrivateSketch:
    """Hashes the n nonzeros into d rows, then noises all w * d buckets.

    Args:
        table: input M.
        width: buckets per row, >= 1.
        depth: number of rows, >= 1.
        spec: overall budget; the bucket noise uses sensitivity 2 * depth
            times ``spec.sensitivity``.
        rng: generator for noise (and hash seeds when ``hash_seed`` is None).
        hash_seed: fixes the hash functions independently of the noise.
    """
    if width < 1 or depth < 1:
        raise ValueError("sketch width and depth must be >= 1")
    if hash_seed is None:
        hash_seed = int(rng.integers(0, 2**63 - 1))
    hashes = SketchHashes.from_seed(hash_seed, width, depth)
    noise = sketch_noise_spec(spec, depth)
    buckets = sketch_counts(table, hashes) + sample_geometric(noise, rng, (depth, width))
    return PrivateSketch(int(width), int(depth), buckets, int(hash_seed), noise, table.m)


def sketch_point_estimate(sketch: PrivateSketch, index, combine: str = "mean"):
    """Combines g_j(i) * bucket[j, h_j(i)] over the d rows."""
    idx = np.asarray(index, dtype=np.int64)
    if np.any((idx < 0) | (idx >= sketch.m)):
        raise ValueError("index outside the sketch domain")
    hashes = sketch.hashes
    rows = np.stack([hashes.sign(j, idx) * sketch.buckets[j, hashes.bucket(j, idx)]
                     for j in range(sketch.depth)])
    if combine == "mean":
        est = rows.mean(axis=0)
    elif combine == "median":
        est = np.median(rows, axis=0)
    else:
        raise ValueError(f"combine must be 'mean' or 'median', got {combine!r}")
    return float(est) if np.ndim(index) == 0 else est


def dumps_sketch(sketch: PrivateSketch) -> str:
    meta = {"width": sketch.width, "depth": sketch.depth, "hash_seed": sketch.hash_seed,
            "epsilon": sketch.noise.epsilon, "sensitivity": sketch.noise.sensitivity,
            "m": sketch.m}
    lines = ["#sketch " + json.dumps(meta, sort_keys=True)]
    lines.extend(",".join(map(str, row)) for row in sketch.buckets.tolist())
    return "\n".join(lines) + "\n"


def loads_sketch(text: str) -> PrivateSketch:
    lines = io.StringIO(text).read().splitlines()
    if not lines or not lines[0].startswith("#sketch "):
        raise ValueError("missing '#sketch' header")
    meta = json.loads(lines[0][len("#sketch "):])
    rows = [[int(v) for v in ln.split(",")] for ln in lines[1:] if ln]
    buckets = np.array(rows, dtype=np.int64).reshape(meta["depth"], meta["width"])
    return PrivateSketch(meta["width"], meta["depth"], buckets, meta["hash_seed"],
                         NoiseSpec(meta["epsilon"], meta["sensitivity"]), meta["m"])


def write_sketch(sketch: PrivateSketch, dest) -> None:
    text = dumps_sketch(sketch)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_sketch(path) -> PrivateSketch:
    with open(path, encoding="utf-8") as fh:
        return loads_sketch(fh.read())
