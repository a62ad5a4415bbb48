"""Ingestion of embeddings, item metadata, and interaction logs.

File formats:

* embeddings: TSV, UTF-8, one entity per line,
  ``entity_id<TAB>f1<TAB>...<TAB>fk``. Lines containing no tab fall back to
  whitespace splitting, so small hand-written fixtures can use spaces.
* interactions: CSV with the MovieLens header ``userId,movieId,rating,timestamp``.
* entity maps: TSV ``item_id<TAB>entity1,entity2,...``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError, MissingMetadataError

RATING_MIN = 0.5
RATING_MAX = 5.0
DEFAULT_LIKE_THRESHOLD = 4.0

INTERACTIONS_HEADER = ["userId", "movieId", "rating", "timestamp"]


@dataclass
class EmbeddingTable:
    """All embeddings of one modality; ``ids[i]`` labels ``vectors[i]``."""

    modality: str
    ids: list[str]
    vectors: np.ndarray  # [n, dim] float64
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {eid: i for i, eid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.index

    def vector(self, entity_id: str) -> np.ndarray:
        try:
            return self.vectors[self.index[entity_id]]
        except KeyError:
            raise MissingMetadataError(
                f"no embedding for entity {entity_id!r} in modality {self.modality!r}"
            ) from None


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    timestamp: int


def _parse_embedding_line(line: str) -> list[str]:
    fields = line.rstrip("\n").split("\t")
    if len(fields) == 1:
        fields = line.split()
    return fields


def load_embeddings(path: str | Path, modality: str) -> EmbeddingTable:
    """Parse a TSV embedding file; the first row fixes the dimension.

    Raises DataFormatError on dimension mismatch (with the 1-based line
    number), non-finite components, duplicate ids, or an empty file.
    """
    path = Path(path)
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim: int | None = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = _parse_embedding_line(line)
            if len(fields) < 2:
                raise DataFormatError(f"{path}: line {lineno}: expected id and values")
            entity_id, raw = fields[0], fields[1:]
            if dim is None:
                dim = len(raw)
            elif len(raw) != dim:
                raise DataFormatError(
                    f"{path}: line {lineno}: dimension {len(raw)} differs from {dim}"
                )
            if entity_id in seen:
                raise DataFormatError(f"{path}: line {lineno}: duplicate id {entity_id!r}")
            seen.add(entity_id)
            try:
                values = [float(tok) for tok in raw]
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            ids.append(entity_id)
            rows.append(values)
    if dim is None:
        raise DataFormatError(f"{path}: no embedding rows")
    return EmbeddingTable(modality, ids, np.asarray(rows, dtype=np.float64))


def load_interactions(path: str | Path) -> list[Interaction]:
    """Parse the ratings CSV; validates header, rating range, and that a
    (user, item) pair repeats only with distinct timestamps."""
    path = Path(path)
    out: list[Interaction] = []
    seen: set[tuple[str, str, int]] = set()
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty interactions file") from None
        if header != INTERACTIONS_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(INTERACTIONS_HEADER)!r}, got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: line {lineno}: expected 4 fields")
            user_id, item_id, rating_raw, ts_raw = row
            try:
                rating = float(rating_raw)
                timestamp = int(ts_raw)
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: bad rating or timestamp") from None
            if not (RATING_MIN <= rating <= RATING_MAX):
                raise DataFormatError(
                    f"{path}: line {lineno}: rating {rating} outside [{RATING_MIN}, {RATING_MAX}]"
                )
            key = (user_id, item_id, timestamp)
            if key in seen:
                raise DataFormatError(
                    f"{path}: line {lineno}: duplicate (user, item, timestamp) {key}"
                )
            seen.add(key)
            out.append(Interaction(user_id, item_id, rating, timestamp))
    return out


def load_entity_map(path: str | Path) -> dict[str, list[str]]:
    """Parse ``item_id<TAB>entity1,entity2,...`` lines."""
    path = Path(path)
    mapping: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected item<TAB>entities")
            item_id, raw = parts
            entities = [e for e in raw.split(",") if e]
            if not entities:
                raise DataFormatError(f"{path}: line {lineno}: empty entity list for {item_id!r}")
            if item_id in mapping:
                raise DataFormatError(f"{path}: line {lineno}: duplicate item {item_id!r}")
            mapping[item_id] = entities
    return mapping


def split_interactions(
    log: list[Interaction], threshold: float = DEFAULT_LIKE_THRESHOLD
) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    """Partition each user's events into liked (rating >= threshold) and
    disliked lists, both ordered by timestamp (file order breaks ties)."""
    if not (RATING_MIN <= threshold <= RATING_MAX):
        raise ContractError(f"threshold {threshold} outside rating range")
    liked: dict[str, list[str]] = {}
    disliked: dict[str, list[str]] = {}
    by_user: dict[str, list[Interaction]] = {}
    for event in log:
        by_user.setdefault(event.user_id, []).append(event)
    for user_id, events in by_user.items():
        events = sorted(events, key=lambda e: e.timestamp)
        liked[user_id] = [e.item_id for e in events if e.rating >= threshold]
        disliked[user_id] = [e.item_id for e in events if e.rating < threshold]
    return liked, disliked


def expand_entities(
    item_id: str, modality: str, entity_map: dict[str, list[str]] | None
) -> list[str]:
    """Expand an item into its entities for one modality.

    ``entity_map is None`` marks an item-identity modality (interactions,
    posters) where the item is its own entity.
    """
    if entity_map is None:
        return [item_id]
    try:
        return entity_map[item_id]
    except KeyError:
        raise MissingMetadataError(
            f"item {item_id!r} has no metadata in modality {modality!r}"
        ) from None


def check_entities_resolvable(
    entity_map: dict[str, list[str]], table: EmbeddingTable, limit: int = 20
) -> None:
    """Eager load-time check that every mapped entity has an embedding."""
    missing = sorted({e for ents in entity_map.values() for e in ents if e not in table})
    if missing:
        shown = ", ".join(missing[:limit])
        more = f" (+{len(missing) - limit} more)" if len(missing) > limit else ""
        raise MissingMetadataError(
            f"modality {table.modality!r}: {len(missing)} mapped entities lack embeddings: {shown}{more}"
        )
