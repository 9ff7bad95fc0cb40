"""Seeded sampling schemes: uniform random, contiguous blocks, partitioning.

Every scheme is a pure function of its parameters and a 64-bit seed.
Replicate seeds are derived from a master seed with :func:`derive_seed`, so
a replicate's sample does not depend on how many others were drawn before it.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import DataError, RangeError

SeedLike = Union[int, np.integer]


def _stream_key(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode())


def derive_seed(master_seed: SeedLike, *keys) -> int:
    """Deterministic 64-bit seed for the substream named by ``keys``.

    String keys are hashed with CRC32; integer keys are used as-is.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_stream_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(int(seed))


@dataclass(frozen=True, eq=False)
class SampleIndex:
    """Sorted distinct row indices into a parent dataset of ``parent_n`` rows.

    ``scheme`` is ``"random"``, ``"block"`` or ``"partition"``; ``params``
    holds the scheme parameters (``size``; ``n_blocks``/``block_size``;
    ``k``/``part_id``).
    """

    indices: np.ndarray
    parent_n: int
    scheme: str
    params: tuple = ()
    seed: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise DataError("indices must be a vector")
        if idx.size and (idx.min() < 0 or idx.max() >= self.parent_n):
            raise DataError(f"indices outside [0, {self.parent_n})")
        if np.unique(idx).size != idx.size:
            raise DataError("indices are not distinct")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "params", tuple(self.params))

    def __len__(self) -> int:
        return self.indices.size

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.scheme}({inner})"

    def __eq__(self, other):
        if not isinstance(other, SampleIndex):
            return NotImplemented
        return (
            self.parent_n == other.parent_n
            and self.scheme == other.scheme
            and self.params == other.params
            and self.seed == other.seed
            and np.array_equal(self.indices, other.indices)
        )

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# scheme={self.describe()} parent_n={self.parent_n} seed={self.seed}\n")
            fh.write("row_index\n")
            for i in self.indices:
                fh.write(f"{int(i)}\n")

    @classmethod
    def from_csv(cls, path) -> "SampleIndex":
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line[1:].split():
                        k, _, v = tok.partition("=")
                        meta[k] = v
                elif line != "row_index":
                    rows.append(int(line))
        desc = meta.get("scheme", "random()")
        scheme, _, inner = desc.partition("(")
        params = []
        for tok in filter(None, inner.rstrip(")").split(",")):
            k, _, v = tok.partition("=")
            params.append((k, int(v)))
        parent_n = int(meta["parent_n"]) if "parent_n" in meta else (max(rows) + 1 if rows else 0)
        return cls(np.asarray(rows, dtype=np.int64), parent_n, scheme, tuple(params), int(meta.get("seed", 0)))


def full_index(n: int) -> SampleIndex:
    """The identity scope covering all ``n`` rows."""
    return SampleIndex(np.arange(n), n, "random", (("size", n),), 0)


def random_sample(n: int, size: int, seed: SeedLike) -> SampleIndex:
    """Uniform sample of ``size`` rows without replacement."""
    if not 1 <= size <= n:
        raise RangeError(f"sample size {size} outside [1, {n}]")
    idx = make_rng(seed).choice(n, size=size, replace=False)
    return SampleIndex(np.sort(idx), n, "random", (("size", size),), int(seed))


def block_sample(n: int, n_blocks: int, block_size: int, seed: SeedLike) -> SampleIndex:
    """``n_blocks`` disjoint runs of ``block_size`` consecutive rows.

    Placements are uniform over all non-overlapping, non-wrapping layouts:
    choose ``n_blocks`` distinct slots among ``n - n_blocks*(block_size-1)``
    and shift the j-th smallest slot right by ``j*(block_size-1)``.
    """
    if n_blocks < 1 or block_size < 1:
        raise RangeError("n_blocks and block_size must be >= 1")
    if n_blocks * block_size > n:
        raise RangeError(f"{n_blocks} blocks of {block_size} do not fit in {n} rows")
    slots = n - n_blocks * (block_size - 1)
    chosen = np.sort(make_rng(seed).choice(slots, size=n_blocks, replace=False))
    starts = chosen + np.arange(n_blocks) * (block_size - 1)
    idx = (starts[:, None] + np.arange(block_size)[None, :]).ravel()
    return SampleIndex(idx, n, "block", (("n_blocks", n_blocks), ("block_size", block_size)), int(seed))


def partition(n: int, k: int, seed: SeedLike) -> list[SampleIndex]:
    """Split a uniform random permutation of ``range(n)`` into ``k`` chunks.

    Chunk sizes differ by at most one; larger chunks come first.
    """
    if not 1 <= k <= n:
        raise RangeError(f"number of parts {k} outside [1, {n}]")
    perm = make_rng(seed).permutation(n)
    return [
        SampleIndex(np.sort(chunk), n, "partition", (("k", k), ("part_id", j)), int(seed))
        for j, chunk in enumerate(np.array_split(perm, k))
    ]
