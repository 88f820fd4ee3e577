"""Class-relevant patch selection: similarity sequences against the class
embedding, deterministic top-m ranking, and fusion of the survivors with
the class embedding.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, SelectionOutOfRange
from .numerics import DEGENERATE_NORM
from .store import EmbeddingRecord

FUSION_CLASS_WEIGHT = 2.0  # fused patch = patch + 2 * class embedding


class DistanceKind(enum.Enum):
    """Ranking functions for patch-vs-class relevance.

    ABS and SQR are distances; they enter as negated values so that
    "larger means more similar" holds uniformly for top-m selection.
    """

    COS = "cos"
    DOT = "dot"
    ABS = "abs"
    SQR = "sqr"


@dataclass
class SelectionResult:
    indices: list[int]  # top-m patch indices, descending similarity
    similarities: np.ndarray  # full length-M sequence


@dataclass
class FusedRepresentation:
    rows: np.ndarray  # (m, D), or (1, D) class-only fallback when m=0
    source_indices: list[int]


def similarity_sequence(record: EmbeddingRecord, kind: DistanceKind) -> np.ndarray:
    """Per-patch similarity of the record's patches to its class embedding."""
    c = record.class_embedding
    patches = record.patch_embeddings
    if kind is DistanceKind.COS:
        norms = np.linalg.norm(patches, axis=1)
        cnorm = np.linalg.norm(c)
        denom = norms * cnorm
        sims = patches @ c
        # same degenerate policy as numerics.cosine: 0 when either norm tiny
        safe = (norms >= DEGENERATE_NORM) & (cnorm >= DEGENERATE_NORM)
        return np.where(safe, sims / np.where(safe, denom, 1.0), 0.0)
    if kind is DistanceKind.DOT:
        return patches @ c
    diff = patches - c
    if kind is DistanceKind.ABS:
        return -np.sum(np.abs(diff), axis=1)
    return -np.sum(diff * diff, axis=1)  # SQR


def select_top(similarities: np.ndarray, m: int) -> SelectionResult:
    """Indices of the m largest similarities, ties broken by lower index."""
    similarities = np.asarray(similarities, dtype=np.float64)
    big = similarities.size
    if not 0 <= m <= big:
        raise SelectionOutOfRange(f"m={m} with M={big}")
    # lexsort: primary key last -> sort by -sim, then by index ascending
    order = np.lexsort((np.arange(big), -similarities))
    return SelectionResult(indices=[int(i) for i in order[:m]], similarities=similarities)


def fuse(record: EmbeddingRecord, selection: SelectionResult) -> FusedRepresentation:
    """Add twice the class embedding to each selected patch.

    An empty selection (m=0) falls back to the bare class embedding as the
    single-row image representation.
    """
    if not selection.indices:
        return FusedRepresentation(
            rows=record.class_embedding[np.newaxis, :].copy(), source_indices=[]
        )
    for i in selection.indices:
        if not 0 <= i < record.patch_embeddings.shape[0]:
            raise IndexOutOfRange(f"patch index {i}")
    rows = (
        record.patch_embeddings[selection.indices]
        + FUSION_CLASS_WEIGHT * record.class_embedding
    )
    return FusedRepresentation(rows=rows, source_indices=list(selection.indices))


def mask_json(record_id: int, selection: SelectionResult) -> str:
    """JSON artifact describing which patches a selection kept."""
    return json.dumps(
        {
            "record_id": record_id,
            "m": len(selection.indices),
            "indices": selection.indices,
            "similarities": [float(s) for s in selection.similarities],
        },
        indent=2,
    )


def mask_pgm(selection: SelectionResult) -> str | None:
    """ASCII PGM mask (selected cells 255, others 0), row-major patch order.

    Only defined when the patch count is a perfect square; returns None
    otherwise.
    """
    total = int(selection.similarities.size)
    side = math.isqrt(total)
    if side * side != total:
        return None
    selected = set(selection.indices)
    lines = ["P2", f"{side} {side}", "255"]
    for r in range(side):
        lines.append(" ".join("255" if r * side + c in selected else "0" for c in range(side)))
    return "\n".join(lines) + "\n"
