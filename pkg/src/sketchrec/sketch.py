"""Count-min sketches over hashed entity multisets.

A sketch is a non-negative [n_sketches, sketch_dim] count matrix; row k is a
histogram of the multiset's row-k buckets. The multimodal input is one sketch
per modality, flattened in a fixed order: coordinate (m, k, b) sits at flat
index ((m * n_sketches) + k) * sketch_dim + b.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import expand_entities
from .errors import ContractError, MissingMetadataError
from .lsh import CodeBook


def build_sketch(
    entities: Iterable[str],
    codes: Mapping[str, np.ndarray],
    n_sketches: int,
    sketch_dim: int,
) -> np.ndarray:
    """Count-min sketch of an entity multiset; repeats count with multiplicity."""
    values = np.zeros((n_sketches, sketch_dim), dtype=np.float64)
    entities = list(entities)
    if not entities:
        return values
    try:
        buckets = np.stack([codes[e] for e in entities])  # [n, n_sketches]
    except KeyError as exc:
        raise MissingMetadataError(f"no codes for entity {exc.args[0]!r}") from None
    rows = np.tile(np.arange(n_sketches), len(entities))
    np.add.at(values, (rows, buckets.ravel()), 1.0)
    return values


def query_count(sketch: np.ndarray, buckets: np.ndarray) -> float:
    """Count-min point query: min over rows of the item's bucket cells.

    Never undercounts the item's true multiplicity.
    """
    n_sketches = sketch.shape[0]
    return float(sketch[np.arange(n_sketches), np.asarray(buckets)].min())


def l2_normalize_rows(values: np.ndarray) -> np.ndarray:
    """Scale each nonzero row to unit L2 norm; zero rows pass through."""
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    return np.where(norms > 0.0, values / np.where(norms > 0.0, norms, 1.0), values)


@dataclass(frozen=True)
class SketchLayout:
    """Fixed modality order plus sketch geometry; defines the flat indexing."""

    modalities: tuple[str, ...]
    n_sketches: int
    sketch_dim: int

    @property
    def block_size(self) -> int:
        return self.n_sketches * self.sketch_dim

    @property
    def input_dim(self) -> int:
        return len(self.modalities) * self.block_size

    @property
    def output_dim(self) -> int:
        return self.block_size

    def modality_index(self, name: str) -> int:
        try:
            return self.modalities.index(name)
        except ValueError:
            raise ContractError(f"modality {name!r} not in layout {self.modalities}") from None

    def flat_index(self, m: int, k: int, b: int) -> int:
        return ((m * self.n_sketches) + k) * self.sketch_dim + b

    def block(self, flat: np.ndarray, name: str) -> np.ndarray:
        """View of one modality's [n_sketches, sketch_dim] block."""
        m = self.modality_index(name)
        start = m * self.block_size
        return flat[start : start + self.block_size].reshape(self.n_sketches, self.sketch_dim)


@dataclass
class MultiSketch:
    """Per-modality sketches in layout order, with a flat vector view."""

    layout: SketchLayout
    blocks: dict[str, np.ndarray]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.blocks[name].ravel() for name in self.layout.modalities])

    @classmethod
    def unflatten(cls, layout: SketchLayout, flat: np.ndarray) -> "MultiSketch":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (layout.input_dim,):
            raise ContractError(f"flat vector has shape {flat.shape}, expected ({layout.input_dim},)")
        blocks = {
            name: layout.block(flat, name).copy() for name in layout.modalities
        }
        return cls(layout, blocks)


@dataclass(frozen=True)
class ModalitySpec:
    """How one input modality is fed: which history and whether items expand
    through an entity map (``mapped=False`` means the item is its own entity)."""

    name: str
    source: str = "liked"  # "liked" | "disliked"
    mapped: bool = False

    def __post_init__(self):
        if self.source not in ("liked", "disliked"):
            raise ContractError(f"modality {self.name!r}: bad source {self.source!r}")


def expand_user_entities(
    liked: Sequence[str],
    disliked: Sequence[str],
    specs: Sequence[ModalitySpec],
    maps: Mapping[str, dict[str, list[str]] | None],
) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    """Per modality: the input items feeding it and their expanded entity
    multiset (entity order and multiplicity preserved)."""
    items_per: dict[str, list[str]] = {}
    entities_per: dict[str, list[str]] = {}
    for spec in specs:
        items = list(liked if spec.source == "liked" else disliked)
        mapping = maps.get(spec.name) if spec.mapped else None
        entities: list[str] = []
        for item in items:
            entities.extend(expand_entities(item, spec.name, mapping))
        items_per[spec.name] = items
        entities_per[spec.name] = entities
    return items_per, entities_per


def build_user_input(
    liked: Sequence[str],
    disliked: Sequence[str],
    specs: Sequence[ModalitySpec],
    maps: Mapping[str, dict[str, list[str]] | None],
    codebook: CodeBook,
) -> MultiSketch:
    """Assemble the multimodal input: per modality, expand items to entities,
    sketch the multiset, then L2-normalize every nonzero row."""
    layout = SketchLayout(tuple(s.name for s in specs), codebook.n_sketches, codebook.sketch_dim)
    _, entities_per = expand_user_entities(liked, disliked, specs, maps)
    blocks: dict[str, np.ndarray] = {}
    for spec in specs:
        sketch = build_sketch(
            entities_per[spec.name],
            codebook.codes.get(spec.name, {}),
            codebook.n_sketches,
            codebook.sketch_dim,
        )
        blocks[spec.name] = l2_normalize_rows(sketch)
    return MultiSketch(layout, blocks)


def build_user_target(
    target_items: Sequence[str], codebook: CodeBook, modality: str
) -> np.ndarray:
    """Raw count sketch of held-out items in the interaction modality."""
    if not target_items:
        raise ContractError("target item list is empty")
    return build_sketch(
        target_items, codebook.codes.get(modality, {}), codebook.n_sketches, codebook.sketch_dim
    )


@dataclass
class TrainingSet:
    """Flat inputs with raw-count target sketches, one row per user."""

    user_ids: list[str]
    inputs: np.ndarray  # [n, input_dim] float64
    targets: np.ndarray  # [n, n_sketches, sketch_dim] raw counts
    layout: SketchLayout


def assemble_training_set(
    users: Sequence[str],
    liked: Mapping[str, list[str]],
    disliked: Mapping[str, list[str]],
    specs: Sequence[ModalitySpec],
    maps: Mapping[str, dict[str, list[str]] | None],
    codebook: CodeBook,
) -> TrainingSet:
    """Leave-one-out split per user: the last liked item (by timestamp) is the
    target, earlier liked items plus the full dislike history form the input.
    Users with fewer than two liked items are skipped."""
    layout = SketchLayout(tuple(s.name for s in specs), codebook.n_sketches, codebook.sketch_dim)
    output_modality = specs[0].name
    kept: list[str] = []
    inputs: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    for user in users:
        likes = liked.get(user, [])
        if len(likes) < 2:
            continue
        msk = build_user_input(likes[:-1], disliked.get(user, []), specs, maps, codebook)
        inputs.append(msk.flat)
        targets.append(build_user_target([likes[-1]], codebook, output_modality))
        kept.append(user)
    if not kept:
        raise ContractError("no users with at least two liked items")
    return TrainingSet(kept, np.stack(inputs), np.stack(targets), layout)
