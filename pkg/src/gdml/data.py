"""Dataset ingestion: LibSVM parsing, feature hashing, and partitioning.

Examples are kept sparse (sorted index/value pairs with a {-1,+1} label).
A dataset is partitioned into one shard per data center; shards are
immutable after construction and can be serialized to a compact binary
file (magic ``GDML1``) for handing to worker processes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from gdml.errors import ConfigError, ParseError

SHARD_MAGIC = b"GDML1"

# splitmix64 finalizer constants
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SIGN_SALT = np.uint64(0xD6E8FEB86659FD93)


@dataclass(frozen=True)
class SparseExample:
    """One labeled training point: strictly increasing indices, non-zero values."""

    indices: np.ndarray
    values: np.ndarray
    label: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d and equal length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("indices must be non-negative and strictly increasing")
        if not np.all(np.isfinite(val)) or np.any(val == 0.0):
            raise ValueError("values must be finite and non-zero")
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


@dataclass
class DcShard:
    """The slice of the dataset resident in one data center."""

    dc_id: int
    examples: list = field(repr=False)

    @property
    def n_p(self) -> int:
        return len(self.examples)

    @property
    def nnz_total(self) -> int:
        return sum(ex.nnz for ex in self.examples)


@dataclass(frozen=True)
class HashingConfig:
    target_dim: int
    seed: int = 0
    signed: bool = False

    def __post_init__(self):
        if self.target_dim < 1:
            raise ConfigError("hash target_dim must be >= 1")


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; a seedable 64-bit avalanche hash.

    Test vectors (input -> output), frozen for cross-platform checks:
      0                  -> 0x0
      1                  -> 0x5692161d100b05e5
      0x9e3779b97f4a7c15 -> 0xe220a8397b1dcdaf
    """
    with np.errstate(over="ignore"):
        x = np.asarray(x, dtype=np.uint64).copy()
        x ^= x >> np.uint64(30)
        x *= _M1
        x ^= x >> np.uint64(27)
        x *= _M2
        x ^= x >> np.uint64(31)
    return x


def _dedupe_sum(indices: np.ndarray, values: np.ndarray):
    """Sum duplicate indices, drop exact zeros, return sorted pairs."""
    if indices.size == 0:
        return indices.astype(np.int64), values.astype(np.float64)
    order = np.argsort(indices, kind="stable")
    idx = indices[order]
    val = values[order]
    uniq, start = np.unique(idx, return_index=True)
    summed = np.add.reduceat(val, start)
    keep = summed != 0.0
    return uniq[keep].astype(np.int64), summed[keep]


def parse_libsvm(lines) -> list:
    """Parse LibSVM-format text (`label idx:val ...`) into examples.

    ``lines`` may be an open text file or any iterable of strings. Labels
    0/1 are mapped to -1/+1. Duplicate indices on a line are summed and
    zero results dropped.
    """
    out = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            y = float(parts[0])
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", line_no) from None
        if y in (1.0, -1.0):
            label = int(y)
        elif y == 0.0:
            label = -1
        else:
            raise ParseError(f"label must be -1, 0 or +1, got {parts[0]!r}", line_no)
        idx_list = []
        val_list = []
        for tok in parts[1:]:
            try:
                i_s, v_s = tok.split(":")
                i = int(i_s)
                v = float(v_s)
            except ValueError:
                raise ParseError(f"bad feature token {tok!r}", line_no) from None
            if i < 0:
                raise ParseError(f"negative feature index {i}", line_no)
            if not math.isfinite(v):
                raise ParseError(f"non-finite value in {tok!r}", line_no)
            idx_list.append(i)
            val_list.append(v)
        idx, val = _dedupe_sum(np.asarray(idx_list, dtype=np.int64),
                               np.asarray(val_list, dtype=np.float64))
        out.append(SparseExample(idx, val, label))
    return out


def serialize_libsvm(example: SparseExample) -> str:
    """Render one example back into canonical LibSVM text."""
    label = "+1" if example.label > 0 else "-1"
    feats = " ".join(f"{i}:{v:.17g}" for i, v in zip(example.indices, example.values))
    return f"{label} {feats}".rstrip()


def hash_features(example: SparseExample, cfg: HashingConfig) -> SparseExample:
    """Map raw feature ids into ``target_dim`` buckets, summing collisions."""
    seed = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    raw = example.indices.astype(np.uint64)
    h = _mix64(raw ^ _mix64(seed ^ _GOLDEN))
    buckets = (h % np.uint64(cfg.target_dim)).astype(np.int64)
    vals = example.values
    if cfg.signed:
        sign_bit = _mix64(raw ^ _mix64(seed ^ _SIGN_SALT)) & np.uint64(1)
        vals = vals * np.where(sign_bit == 1, 1.0, -1.0)
    idx, val = _dedupe_sum(buckets, vals)
    return SparseExample(idx, val, example.label)


def hash_dataset(examples, cfg: HashingConfig) -> list:
    return [hash_features(ex, cfg) for ex in examples]


def partition(dataset, P: int, strategy: str = "random-uniform", seed: int = 0,
              weights=None, skew: float = None) -> list:
    """Split a dataset into P shards, one per data center.

    Strategies:
      random-uniform   each example lands in a uniformly chosen DC.
      random-weighted  DC drawn with the given probabilities (must sum to 1).
      label-biased     each +1 example is sent to DC 0 with probability
                       ``skew`` (uniform otherwise); -1 examples uniform.
    """
    n = len(dataset)
    if P < 1:
        raise ConfigError("P must be >= 1")
    if P > n:
        raise ConfigError(f"cannot split {n} examples into {P} shards")
    rng = np.random.default_rng(seed)
    if strategy == "random-uniform":
        assign = rng.integers(0, P, size=n)
    elif strategy == "random-weighted":
        if weights is None or len(weights) != P:
            raise ConfigError("random-weighted needs one weight per shard")
        w = np.asarray(weights, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError(f"weights sum to {w.sum()!r}, expected 1")
        assign = rng.choice(P, size=n, p=w)
    elif strategy == "label-biased":
        if skew is None or not (0.0 <= skew <= 1.0):
            raise ConfigError("label-biased needs skew in [0, 1]")
        assign = rng.integers(0, P, size=n)
        labels = np.array([ex.label for ex in dataset])
        to_zero = (labels == 1) & (rng.random(n) < skew)
        assign[to_zero] = 0
    else:
        raise ConfigError(f"unknown partition strategy {strategy!r}")
    shards = [DcShard(p, []) for p in range(P)]
    for ex, p in zip(dataset, assign):
        shards[p].examples.append(ex)
    return shards


def avg_sparsity(examples) -> float:
    """Mean number of non-zeros per example (d-bar)."""
    if not examples:
        return 0.0
    return sum(ex.nnz for ex in examples) / len(examples)


def max_index(examples) -> int:
    m = -1
    for ex in examples:
        if ex.nnz:
            m = max(m, int(ex.indices[-1]))
    return m


def to_csr(examples, d: int):
    """Compile examples into a CSR matrix and label vector for the kernels."""
    indptr = np.zeros(len(examples) + 1, dtype=np.int64)
    for i, ex in enumerate(examples):
        if ex.nnz and ex.indices[-1] >= d:
            raise ValueError(f"feature index {ex.indices[-1]} >= dimension {d}")
        indptr[i + 1] = indptr[i] + ex.nnz
    indices = np.concatenate([ex.indices for ex in examples]) if examples \
        else np.zeros(0, dtype=np.int64)
    values = np.concatenate([ex.values for ex in examples]) if examples \
        else np.zeros(0, dtype=np.float64)
    X = sp.csr_matrix((values, indices, indptr), shape=(len(examples), d))
    y = np.array([ex.label for ex in examples], dtype=np.float64)
    return X, y


def write_shard_file(path, examples):
    """Binary shard format: magic GDML1, u64 count, then per record
    u32 nnz, nnz x (u32 idx, f32 val), i8 label. Little-endian throughout."""
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<Q", len(examples)))
        for ex in examples:
            fh.write(struct.pack("<I", ex.nnz))
            if ex.nnz:
                fh.write(ex.indices.astype("<u4").tobytes())
                fh.write(ex.values.astype("<f4").tobytes())
            fh.write(struct.pack("<b", ex.label))


def read_shard_file(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != SHARD_MAGIC:
            raise ParseError(f"bad shard magic {magic!r}")
        (count,) = struct.unpack("<Q", fh.read(8))
        out = []
        for _ in range(count):
            (nnz,) = struct.unpack("<I", fh.read(4))
            idx = np.frombuffer(fh.read(4 * nnz), dtype="<u4").astype(np.int64)
            val = np.frombuffer(fh.read(4 * nnz), dtype="<f4").astype(np.float64)
            (label,) = struct.unpack("<b", fh.read(1))
            out.append(SparseExample(idx, val, label))
        return out
