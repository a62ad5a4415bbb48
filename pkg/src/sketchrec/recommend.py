"""Candidate scoring and ranking from output-sketch distributions.

The default decode scores an item by the mean log-probability of its buckets
across sketch rows (a geometric-mean read of the predicted densities); the
``min-count`` decode takes the minimum bucket probability instead, mirroring
a count-min point query. Probabilities are clamped at PROB_FLOOR before the
log so empty buckets score finitely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError
from .lsh import CodeBook
from .net import SketchModel, forward
from .sketch import MultiSketch

PROB_FLOOR = 1e-12

DECODE_MODES = ("mean-log", "min-count")


def score_item(probs: np.ndarray, buckets: np.ndarray) -> float:
    """Mean over rows of ln(probs[k, bucket_k]), clamped at PROB_FLOOR."""
    n_sketches = probs.shape[0]
    picked = probs[np.arange(n_sketches), np.asarray(buckets)]
    return float(np.log(np.maximum(picked, PROB_FLOOR)).mean())


def score_item_min_count(probs: np.ndarray, buckets: np.ndarray) -> float:
    """Count-min style decode: minimum bucket probability across rows."""
    n_sketches = probs.shape[0]
    return float(probs[np.arange(n_sketches), np.asarray(buckets)].min())


def score_candidates(
    probs: np.ndarray, bucket_matrix: np.ndarray, decode: str = "mean-log"
) -> np.ndarray:
    """Vectorized scores for a [n_items, n_sketches] bucket matrix."""
    if decode not in DECODE_MODES:
        raise ContractError(f"unknown decode mode {decode!r}")
    rows = np.arange(probs.shape[0])
    picked = probs[rows, bucket_matrix]  # [n_items, n_sketches]
    if decode == "mean-log":
        return np.log(np.maximum(picked, PROB_FLOOR)).mean(axis=1)
    return picked.min(axis=1)


@dataclass
class Ranking:
    user_id: str
    items: list[tuple[str, float]]  # (item_id, score), scores non-increasing


def rank_candidates(
    probs: np.ndarray,
    candidates: Iterable[str],
    codes: Mapping[str, np.ndarray],
    exclude: Iterable[str] = (),
    top_n: int = 20,
    decode: str = "mean-log",
) -> list[tuple[str, float]]:
    """Top-N candidates by score, ties broken by ascending item id."""
    if top_n < 1:
        raise ContractError("top_n must be >= 1")
    pool = sorted(set(candidates) - set(exclude))
    if not pool:
        raise ContractError("candidate pool is empty after exclusion")
    bucket_matrix = np.stack([codes[item] for item in pool])
    scores = score_candidates(probs, bucket_matrix, decode)
    order = np.argsort(-scores, kind="stable")[:top_n]
    return [(pool[i], float(scores[i])) for i in order]


def recommend(
    model: SketchModel,
    user_input: MultiSketch,
    candidates: Iterable[str],
    exclude: Iterable[str] = (),
    top_n: int = 20,
    codes: Mapping[str, np.ndarray] | None = None,
    codebook: CodeBook | None = None,
    output_modality: str | None = None,
    decode: str = "mean-log",
    user_id: str = "",
) -> Ranking:
    """Score candidates against the model's output distributions for one user."""
    if codes is None:
        if codebook is None or output_modality is None:
            raise ContractError("recommend needs item codes (codes or codebook+modality)")
        codes = codebook.codes[output_modality]
    _, probs, _ = forward(model, user_input.flat)
    return Ranking(user_id, rank_candidates(probs, candidates, codes, exclude, top_n, decode))


def recall_at_n(
    rankings: Mapping[str, Sequence[tuple[str, float]]],
    held_out: Mapping[str, set[str]],
    n: int,
) -> float:
    """Mean over users of |top-N hits| / min(N, |held-out|)."""
    if not rankings:
        raise ContractError("no rankings to evaluate")
    total = 0.0
    for user, ranked in rankings.items():
        held = held_out.get(user)
        if not held:
            raise ContractError(f"user {user!r} has no held-out items")
        top = {item for item, _ in ranked[:n]}
        total += len(top & held) / min(n, len(held))
    return total / len(rankings)


def popularity_order(liked: Mapping[str, list[str]], candidates: Iterable[str]) -> list[str]:
    """Candidates by descending like count (ties ascending id); the
    non-personalized baseline."""
    counts: dict[str, int] = {item: 0 for item in candidates}
    for items in liked.values():
        for item in items:
            if item in counts:
                counts[item] += 1
    return sorted(counts, key=lambda item: (-counts[item], item))


def popularity_recall_at_n(
    popular: Sequence[str],
    held_out: Mapping[str, set[str]],
    exclude: Mapping[str, set[str]],
    n: int,
) -> float:
    """Recall@N of the popularity baseline with per-user exclusion."""
    if not held_out:
        raise ContractError("no users to evaluate")
    total = 0.0
    for user, held in held_out.items():
        banned = exclude.get(user, set())
        top: list[str] = []
        for item in popular:
            if item in banned:
                continue
            top.append(item)
            if len(top) == n:
                break
        total += len(set(top) & held) / min(n, len(held))
    return total / len(held_out)
