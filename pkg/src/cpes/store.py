"""Embedding data model, CPEM binary serialization, and a synthetic
generator that plants known signal patches for recall evaluation.

CPEM layout (little-endian):
  magic "CPEM" | version u16 | flags u16 (bit0: ground-truth section)
  | dim_d u32 | patches_m u32 | class_count u32 | record_count u64
  | per record: record_id u64, label u32, class_embedding f32 x D,
    patch_embeddings f32 x (M*D)
  | optional ground-truth section: per record, s u16 then s x u16 indices.

Values are stored at 32-bit precision; in memory everything is float64
that has been rounded through float32, so write/read round trips exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import (
    BadMagic,
    InfeasibleConfig,
    NonFiniteValue,
    TruncatedFile,
    UnsupportedVersion,
)
from .numerics import Rng64, rng_split

MAGIC = b"CPEM"
VERSION = 1
# how strongly each distractor pool item leans toward one class's signal
CONFUSER_WEIGHT = 0.7
_FLAG_GROUND_TRUTH = 1
HEADER_BYTES = 4 + 2 + 2 + 4 + 4 + 4 + 8  # magic, version, flags, D, M, C, count


def _f32_round(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


@dataclass
class EmbeddingRecord:
    """One image's encoder output: a class embedding plus M patch embeddings."""

    record_id: int
    label: int
    class_embedding: np.ndarray  # (D,) float64
    patch_embeddings: np.ndarray  # (M, D) float64


@dataclass
class EmbeddingStore:
    """Immutable-by-convention container for a set of embedding records."""

    dim_d: int
    patches_m: int
    class_count: int
    records: list[EmbeddingRecord] = field(default_factory=list)
    # per-record planted signal patch indices; synthetic stores only
    ground_truth: list[tuple[int, ...]] | None = None

    def records_by_label(self) -> dict[int, list[int]]:
        by_label: dict[int, list[int]] = {}
        for i, rec in enumerate(self.records):
            by_label.setdefault(rec.label, []).append(i)
        return by_label


@dataclass
class SyntheticConfig:
    """Knobs for the planted-signal generator.

    Each class gets a unit signal direction; every record plants
    ``signal_patches`` noisy copies of it among distractors drawn from a
    pool orthogonalized against all signal directions, so the separability
    of selection is controlled by the two noise scales.
    """

    class_count: int
    records_per_class: int
    dim: int
    patches: int
    signal_patches: int
    signal_noise: float
    distractor_pool_size: int
    distractor_noise: float
    seed: int

    def validate(self) -> None:
        if not 1 <= self.signal_patches <= self.patches:
            raise InfeasibleConfig("signal_patches must be in [1, patches]")
        if self.signal_noise < 0 or self.distractor_noise < 0:
            raise InfeasibleConfig("noise scales must be >= 0")
        if self.distractor_pool_size + self.class_count > self.dim:
            raise InfeasibleConfig(
                f"cannot orthogonalize {self.distractor_pool_size} distractors "
                f"against {self.class_count} signals in dim {self.dim}"
            )


def write_store(store: EmbeddingStore, destination) -> int:
    """Serialize to CPEM. destination is a path or a binary sink; returns bytes written."""
    if isinstance(destination, (str, Path)):
        with open(destination, "wb") as fh:
            return write_store(store, fh)
    buf: BinaryIO = destination
    flags = _FLAG_GROUND_TRUTH if store.ground_truth is not None else 0
    n = 0
    n += buf.write(MAGIC)
    n += buf.write(
        struct.pack(
            "<HHIIIQ",
            VERSION,
            flags,
            store.dim_d,
            store.patches_m,
            store.class_count,
            len(store.records),
        )
    )
    for rec in store.records:
        n += buf.write(struct.pack("<QI", rec.record_id, rec.label))
        n += buf.write(np.ascontiguousarray(rec.class_embedding, dtype="<f4").tobytes())
        n += buf.write(np.ascontiguousarray(rec.patch_embeddings, dtype="<f4").tobytes())
    if store.ground_truth is not None:
        for indices in store.ground_truth:
            n += buf.write(struct.pack("<H", len(indices)))
            n += buf.write(struct.pack(f"<{len(indices)}H", *indices))
    return n


def _read_exact(buf: BinaryIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected end of file while reading {what}")
    return data


def read_store(source) -> EmbeddingStore:
    """Parse a CPEM file, validating magic, version, and byte counts."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_store(fh)
    buf: BinaryIO = source
    magic = _read_exact(buf, 4, "magic")
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    version, flags, dim_d, patches_m, class_count, record_count = struct.unpack(
        "<HHIIIQ", _read_exact(buf, 24, "header")
    )
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    records = []
    for _ in range(record_count):
        record_id, label = struct.unpack("<QI", _read_exact(buf, 12, "record header"))
        cls = np.frombuffer(
            _read_exact(buf, 4 * dim_d, "class embedding"), dtype="<f4"
        ).astype(np.float64)
        patches = np.frombuffer(
            _read_exact(buf, 4 * patches_m * dim_d, "patch embeddings"), dtype="<f4"
        ).astype(np.float64).reshape(patches_m, dim_d)
        if not (np.all(np.isfinite(cls)) and np.all(np.isfinite(patches))):
            raise NonFiniteValue(f"record {record_id} contains NaN/Inf")
        records.append(EmbeddingRecord(record_id, label, cls, patches))
    ground_truth = None
    if flags & _FLAG_GROUND_TRUTH:
        ground_truth = []
        for _ in range(record_count):
            (s,) = struct.unpack("<H", _read_exact(buf, 2, "ground-truth count"))
            indices = struct.unpack(f"<{s}H", _read_exact(buf, 2 * s, "ground-truth indices"))
            ground_truth.append(tuple(indices))
    return EmbeddingStore(dim_d, patches_m, class_count, records, ground_truth)


def _unit_normal(rng: Rng64, dim: int) -> np.ndarray:
    v = rng.normals(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg: SyntheticConfig) -> EmbeddingStore:
    """Generate a planted-signal store, fully determined by cfg.seed."""
    cfg.validate()
    rng = rng_split(cfg.seed, 0)

    signals = np.stack([_unit_normal(rng, cfg.dim) for _ in range(cfg.class_count)])
    # Orthonormal basis of the signal span, for projecting distractors out.
    basis, _ = np.linalg.qr(signals.T)
    distractors = []
    for j in range(cfg.distractor_pool_size):
        v = rng.normals(cfg.dim)
        v = v - basis @ (basis.T @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise InfeasibleConfig("distractor collapsed onto the signal span")
        # Background content is not pure noise: each pool item leans toward
        # one class's signal, so a retained distractor patch can be mistaken
        # for evidence of that class. Without this, discarded patches carry
        # no misleading content and selection could never beat keeping all.
        flavor = signals[j % cfg.class_count]
        v = v / norm + CONFUSER_WEIGHT * flavor
        distractors.append(v / np.linalg.norm(v))

    records = []
    ground_truth = []
    record_id = 0
    for label in range(cfg.class_count):
        g = signals[label]
        for _ in range(cfg.records_per_class):
            signal_pos = sorted(
                rng.sample_without_replacement(cfg.patches, cfg.signal_patches)
            )
            patches = np.empty((cfg.patches, cfg.dim))
            signal_set = set(signal_pos)
            for j in range(cfg.patches):
                if j in signal_set:
                    v = g + cfg.signal_noise * rng.normals(cfg.dim)
                else:
                    b = distractors[rng.randint(cfg.distractor_pool_size)]
                    v = b + cfg.distractor_noise * rng.normals(cfg.dim)
                patches[j] = v / np.linalg.norm(v)
            class_embedding = patches.mean(axis=0)
            records.append(
                EmbeddingRecord(
                    record_id,
                    label,
                    _f32_round(class_embedding),
                    _f32_round(patches),
                )
            )
            ground_truth.append(tuple(signal_pos))
            record_id += 1
    return EmbeddingStore(cfg.dim, cfg.patches, cfg.class_count, records, ground_truth)
