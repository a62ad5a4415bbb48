"""Sign-random-projection bucket codec.

Each sketch row k carries d = log2(sketch_dim) random hyperplanes. An
embedding's bucket in row k packs the projection signs into an integer:

    bucket = sum_j bit_j * 2**j,  bit_j = 1  iff  dot(v, plane[k][j]) >= 0

Ties (dot == 0) map to bit 1, so the all-zero vector deterministically lands
in bucket sketch_dim - 1 of every row. Hyperplane entries for (row k, plane j)
are standard normals from a PCG64 stream seeded with
``mix64(seed, fnv1a64(modality), k, j)``; see ``seeding`` for the bit-exact
mixing scheme. Vectors at angle theta collide in a row with probability
(1 - theta/pi)**d, which the test suite checks by Monte Carlo.

Codes file layout (all integers little-endian):

    magic ``SRPCODE1`` (8 bytes)
    u32 n_sketches, u32 sketch_dim, u32 n_modalities
    per modality:
        u16 name length, name (UTF-8), u32 n_entities
        per entity: u16 id length, id (UTF-8), n_sketches x u16 buckets
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingTable
from .errors import ContractError, DataFormatError, MissingMetadataError
from .seeding import fnv1a64, mix64

CODES_MAGIC = b"SRPCODE1"


@dataclass(frozen=True)
class CodecParams:
    n_sketches: int
    sketch_dim: int
    seed: int
    dim: int

    def __post_init__(self):
        if self.n_sketches < 1:
            raise ContractError("n_sketches must be >= 1")
        if self.sketch_dim < 2 or self.sketch_dim & (self.sketch_dim - 1):
            raise ContractError(f"sketch_dim must be a power of two >= 2, got {self.sketch_dim}")
        if self.sketch_dim > 1 << 16:
            raise ContractError("sketch_dim above 65536 is not supported by the codes file")
        if self.dim < 1:
            raise ContractError("embedding dim must be >= 1")

    @property
    def n_planes(self) -> int:
        return self.sketch_dim.bit_length() - 1


def make_hyperplanes(params: CodecParams, modality: str) -> np.ndarray:
    """Deterministic [n_sketches, d, dim] tensor of standard normals."""
    d = params.n_planes
    planes = np.empty((params.n_sketches, d, params.dim), dtype=np.float64)
    modality_word = fnv1a64(modality)
    for k in range(params.n_sketches):
        for j in range(d):
            seed = mix64(params.seed, modality_word, k, j)
            rng = np.random.Generator(np.random.PCG64(seed))
            planes[k, j] = rng.standard_normal(params.dim)
    return planes


def assign_buckets(v: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Bucket index per sketch row for one embedding vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != planes.shape[2]:
        raise ContractError(
            f"vector of dim {v.shape} does not match hyperplane dim {planes.shape[2]}"
        )
    return assign_buckets_many(v[None, :], planes)[0]


def assign_buckets_many(vectors: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Vectorized bucket assignment: [n, dim] -> [n, n_sketches]."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != planes.shape[2]:
        raise ContractError(
            f"vectors of shape {vectors.shape} do not match hyperplane dim {planes.shape[2]}"
        )
    n_sketches, d, dim = planes.shape
    dots = vectors @ planes.reshape(n_sketches * d, dim).T  # [n, n_sketches*d]
    bits = (dots >= 0.0).reshape(len(vectors), n_sketches, d)
    weights = (1 << np.arange(d)).astype(np.int64)
    return bits @ weights


def encode_all(table: EmbeddingTable, params: CodecParams) -> dict[str, np.ndarray]:
    """One bucket-index array per entity, keyed by entity id."""
    if table.dim != params.dim:
        raise ContractError(
            f"modality {table.modality!r} has dim {table.dim}, codec expects {params.dim}"
        )
    if len(table) == 0:
        return {}
    planes = make_hyperplanes(params, table.modality)
    buckets = assign_buckets_many(table.vectors, planes)
    return {eid: buckets[i] for i, eid in enumerate(table.ids)}


class CodeBook:
    """Per-modality entity -> bucket-index maps sharing one sketch geometry."""

    def __init__(self, n_sketches: int, sketch_dim: int, codes: dict[str, dict[str, np.ndarray]]):
        self.n_sketches = n_sketches
        self.sketch_dim = sketch_dim
        self.codes = codes

    def buckets(self, modality: str, entity_id: str) -> np.ndarray:
        try:
            per_modality = self.codes[modality]
        except KeyError:
            raise MissingMetadataError(f"no codes for modality {modality!r}") from None
        try:
            return per_modality[entity_id]
        except KeyError:
            raise MissingMetadataError(
                f"no codes for entity {entity_id!r} in modality {modality!r}"
            ) from None

    def matrix(self, modality: str, entity_ids: list[str]) -> np.ndarray:
        """Stacked bucket rows, [len(entity_ids), n_sketches]."""
        per_modality = self.codes[modality]
        try:
            return np.stack([per_modality[eid] for eid in entity_ids])
        except KeyError as exc:
            raise MissingMetadataError(
                f"no codes for entity {exc.args[0]!r} in modality {modality!r}"
            ) from None

    def save(self, path: str | Path) -> None:
        path = Path(path)
        chunks = [CODES_MAGIC]
        chunks.append(struct.pack("<III", self.n_sketches, self.sketch_dim, len(self.codes)))
        for modality, entries in self.codes.items():
            name = modality.encode("utf-8")
            chunks.append(struct.pack("<H", len(name)))
            chunks.append(name)
            chunks.append(struct.pack("<I", len(entries)))
            for entity_id, buckets in entries.items():
                eid = entity_id.encode("utf-8")
                chunks.append(struct.pack("<H", len(eid)))
                chunks.append(eid)
                chunks.append(np.asarray(buckets, dtype="<u2").tobytes())
        path.write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "CodeBook":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:8] != CODES_MAGIC:
            raise DataFormatError(f"{path}: not a codes file (bad magic)")
        off = 8
        try:
            n_sketches, sketch_dim, n_modalities = struct.unpack_from("<III", blob, off)
            off += 12
            codes: dict[str, dict[str, np.ndarray]] = {}
            for _ in range(n_modalities):
                (name_len,) = struct.unpack_from("<H", blob, off)
                off += 2
                modality = blob[off : off + name_len].decode("utf-8")
                off += name_len
                (n_entities,) = struct.unpack_from("<I", blob, off)
                off += 4
                entries: dict[str, np.ndarray] = {}
                for _ in range(n_entities):
                    (id_len,) = struct.unpack_from("<H", blob, off)
                    off += 2
                    entity_id = blob[off : off + id_len].decode("utf-8")
                    off += id_len
                    raw = np.frombuffer(blob, dtype="<u2", count=n_sketches, offset=off)
                    off += 2 * n_sketches
                    buckets = raw.astype(np.int64)
                    if np.any(buckets >= sketch_dim):
                        raise DataFormatError(f"{path}: bucket index out of range")
                    entries[entity_id] = buckets
                codes[modality] = entries
        except struct.error:
            raise DataFormatError(f"{path}: truncated codes file") from None
        if off != len(blob):
            raise DataFormatError(f"{path}: trailing bytes in codes file")
        return cls(n_sketches, sketch_dim, codes)
