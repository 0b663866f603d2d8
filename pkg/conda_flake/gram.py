"""
Function-party Gram matrix.

The Gram matrix is a symmetric block matrix over ordered segments, one segment
per masked batch received from a party. New batches are appended as rows and
columns; existing entries are never recomputed. Removing a party drops all its
segments and erases every masked payload it sent.
"""

from __future__ import annotations

import logging
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigvalsh

from conda_flake.exceptions import (
    DuplicatePartyError,
    GramError,
    IncompleteGramError,
    ProtocolError,
    UnknownPartyError,
)
from conda_flake.masking import MaskedMatrix
from conda_flake.protocol.wire import write_matrix_file

log = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-8
PSD_TOLERANCE = 1e-6


class Segment(NamedTuple):
    party_id: str
    sample_count: int
    iteration: int


class Block(NamedTuple):
    rows: slice
    cols: slice
    segments: Tuple[Segment, Segment]


@dataclass(frozen=True, eq=False)
class GramMatrix:
    segments: Tuple[Segment, ...]
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def parties(self) -> List[str]:
        return list(dict.fromkeys(segment.party_id for segment in self.segments))

    @property
    def offsets(self) -> np.ndarray:
        counts = [segment.sample_count for segment in self.segments]
        return np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])

    def segment_slice(self, index: int) -> slice:
        offsets = self.offsets
        return slice(int(offsets[index]), int(offsets[index + 1]))

    @property
    def block_index(self) -> Dict[Tuple[str, str], List[Block]]:
        """Map each ordered party pair to the value ranges it produced."""
        index: Dict[Tuple[str, str], List[Block]] = {}
        for i, seg_i in enumerate(self.segments):
            for j, seg_j in enumerate(self.segments):
                block = Block(self.segment_slice(i), self.segment_slice(j), (seg_i, seg_j))
                index.setdefault((seg_i.party_id, seg_j.party_id), []).append(block)
        return index

    def party_indices(self, party_id: str) -> np.ndarray:
        offsets = self.offsets
        ranges = [
            np.arange(offsets[i], offsets[i + 1])
            for i, segment in enumerate(self.segments)
            if segment.party_id == party_id
        ]
        return np.concatenate(ranges) if ranges else np.empty(0, dtype=np.int64)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()


class PayloadStore:
    """
    Masked payloads retained by the function party for later updates.

    Payloads are kept per party in arrival order. When ``directory`` is given
    each payload is also written there as a MatrixWire file.
    """

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory is not None else None
        self._payloads: Dict[str, List[MaskedMatrix]] = {}
        self._lock = threading.Lock()

    def __contains__(self, party_id: str) -> bool:
        return party_id in self._payloads

    def parties(self) -> List[str]:
        return list(self._payloads)

    def payloads(self, party_id: str) -> List[MaskedMatrix]:
        try:
            return list(self._payloads[party_id])
        except KeyError:
            raise UnknownPartyError(f"no payloads stored for party {party_id!r}")

    def add(self, masked: MaskedMatrix) -> None:
        with self._lock:
            batches = self._payloads.setdefault(masked.party_id, [])
            batches.append(masked)
            if self.directory is not None:
                name = f"{len(batches) - 1:04d}-{masked.iteration}.flk"
                path = self._party_dir(masked.party_id) / name
                path.parent.mkdir(parents=True, exist_ok=True)
                write_matrix_file(path, masked.payload)

    def erase(self, party_id: str) -> None:
        with self._lock:
            self._payloads.pop(party_id, None)
            if self.directory is not None:
                shutil.rmtree(self._party_dir(party_id), ignore_errors=True)
        log.info("erased stored payloads of party %s", party_id)

    def stored_files(self, party_id: str) -> List[Path]:
        if self.directory is None:
            return []
        return sorted(self._party_dir(party_id).glob("*.flk"))

    def in_segment_order(self, segments: Sequence[Segment]) -> List[MaskedMatrix]:
        seen: Dict[str, int] = {}
        ordered = []
        for segment in segments:
            position = seen.get(segment.party_id, 0)
            seen[segment.party_id] = position + 1
            ordered.append(self.payloads(segment.party_id)[position])
        return ordered

    def _party_dir(self, party_id: str) -> Path:
        return self.directory / party_id


def _segment(masked: MaskedMatrix) -> Segment:
    return Segment(masked.party_id, masked.sample_count, masked.iteration)


def cross_block(a: MaskedMatrix, b: MaskedMatrix) -> np.ndarray:
    if a.width != b.width:
        raise ProtocolError(
            f"masked widths differ ({a.party_id}: {a.width}, {b.party_id}: {b.width}); "
            "parties did not share the same seed"
        )
    return a.payload @ b.payload.T


def assemble_gram(
    blocks: Mapping[Tuple[int, int], np.ndarray],
    segments: Sequence[Segment],
) -> GramMatrix:
    """
    Build the full matrix from upper-triangle blocks keyed by segment index
    pairs ``(i, j)`` with ``i <= j``; the lower triangle is their transpose.
    """
    segments = tuple(segments)
    missing = [
        (i, j)
        for i in range(len(segments))
        for j in range(i, len(segments))
        if (i, j) not in blocks
    ]
    if missing:
        raise IncompleteGramError(missing)

    gram = GramMatrix(segments, np.empty((0, 0)))
    values = np.empty((int(gram.offsets[-1]),) * 2)
    for (i, j), block in blocks.items():
        rows, cols = gram.segment_slice(i), gram.segment_slice(j)
        values[rows, cols] = block
        if i != j:
            values[cols, rows] = block.T
    return GramMatrix(segments, values)


def compute_gram(payloads: Sequence[MaskedMatrix]) -> GramMatrix:
    blocks = {
        (i, j): cross_block(payloads[i], payloads[j])
        for i in range(len(payloads))
        for j in range(i, len(payloads))
    }
    return assemble_gram(blocks, [_segment(masked) for masked in payloads])


def recompute_gram(store: PayloadStore, segments: Sequence[Segment]) -> GramMatrix:
    """From-scratch Gram over every retained payload, in ``segments`` order."""
    return compute_gram(store.in_segment_order(segments))


def _append(g: GramMatrix, x_masked: MaskedMatrix, store: PayloadStore) -> GramMatrix:
    previous = store.in_segment_order(g.segments)
    if previous and previous[0].width != x_masked.width:
        raise ProtocolError(
            f"masked width {x_masked.width} from {x_masked.party_id} does not match "
            f"stored width {previous[0].width}"
        )
    size, extra = g.size, x_masked.sample_count
    values = np.empty((size + extra, size + extra))
    values[:size, :size] = g.values
    if previous:
        cross = np.hstack([cross_block(x_masked, stored) for stored in previous])
        values[size:, :size] = cross
        values[:size, size:] = cross.T
    values[size:, size:] = cross_block(x_masked, x_masked)
    store.add(x_masked)
    return GramMatrix(g.segments + (_segment(x_masked),), values)


def extend_with_data(g: GramMatrix, x_masked: MaskedMatrix, store: PayloadStore) -> GramMatrix:
    """Append a new batch from a registered party; old entries are copied verbatim."""
    if x_masked.party_id not in g.parties:
        raise UnknownPartyError(f"party {x_masked.party_id!r} is not part of the Gram matrix")
    if x_masked.sample_count == 0:
        return g
    return _append(g, x_masked, store)


def add_party(g: GramMatrix, d_masked: MaskedMatrix, store: PayloadStore) -> GramMatrix:
    if d_masked.party_id in g.parties:
        raise DuplicatePartyError(f"party {d_masked.party_id!r} is already registered")
    return _append(g, d_masked, store)


def remove_party(
    g: GramMatrix, party_id: str, store: Optional[PayloadStore] = None
) -> GramMatrix:
    """Drop every row and column of ``party_id`` and erase its stored payloads."""
    if party_id not in g.parties:
        raise UnknownPartyError(f"party {party_id!r} is not part of the Gram matrix")
    keep = np.setdiff1d(np.arange(g.size), g.party_indices(party_id))
    segments = tuple(segment for segment in g.segments if segment.party_id != party_id)
    if store is not None:
        store.erase(party_id)
    return GramMatrix(segments, g.values[np.ix_(keep, keep)])


def check_gram(g: GramMatrix) -> None:
    """Raise unless the values are symmetric and positive semi-definite."""
    values = g.values
    if values.size == 0:
        return
    asymmetry = np.max(np.abs(values - values.T))
    if asymmetry > SYMMETRY_TOLERANCE * max(1.0, np.max(np.abs(values))):
        raise GramError(f"Gram matrix is not symmetric (max deviation {asymmetry:.3g})")
    eigenvalues = eigvalsh(values)
    if eigenvalues[0] < -PSD_TOLERANCE * max(eigenvalues[-1], 0.0):
        raise GramError(
            f"Gram matrix is not positive semi-definite (min eigenvalue {eigenvalues[0]:.3g})"
        )


def plaintext_gram(parts: Iterable, iteration: int = 0) -> GramMatrix:
    """
    Gram matrix of unmasked ``(party_id, DataMatrix)`` pairs, for the
    centralized pipeline and as a reference.
    """
    parts = list(parts)
    values = np.vstack([data.values for _, data in parts])
    segments = tuple(Segment(party_id, data.n_samples, iteration) for party_id, data in parts)
    return GramMatrix(segments, values @ values.T)
