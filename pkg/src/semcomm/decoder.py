"""Recover entity and relation ids from noisy received constellation vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import TransmitRecord
from .encoder import EmbeddingTable
from .interpreter import (PolicyNetwork, State, action_mask, featurize_state, policy_forward,
                          valid_actions)
from .kg_store import ExplicitSemantics, KnowledgeGraph, SemanticPath

ENTITY, RELATION = "entity", "relation"


def _distances(y: np.ndarray, rows: np.ndarray, norm: str) -> np.ndarray:
    diff = rows - y
    if norm == "l1":
        return np.abs(diff).sum(axis=-1)
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


def _nearest(y, rows: np.ndarray, norm: str) -> tuple[int, float]:
    if len(rows) == 0:
        raise ValueError("cannot decode against an empty table")
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != rows.shape[1]:
        raise ValueError(f"vector dimension {y.shape[-1]} != table dimension {rows.shape[1]}")
    d = _distances(y, rows, norm)
    # argmin returns the first minimum, which is the lowest id
    i = int(np.argmin(d))
    return i, float(d[i])


def nearest_entity(y, table: EmbeddingTable) -> tuple[int, float]:
    return _nearest(y, table.entities, table.norm)


def nearest_relation(y, table: EmbeddingTable) -> tuple[int, float]:
    return _nearest(y, table.relations, table.norm)


def nearest_entities(ys, table: EmbeddingTable, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`nearest_entity` over the rows of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    ids = np.empty(len(ys), dtype=np.int64)
    dist = np.empty(len(ys))
    for lo in range(0, len(ys), chunk):
        d = _distances(ys[lo:lo + chunk, None, :], table.entities[None, :, :], table.norm)
        ids[lo:lo + chunk] = np.argmin(d, axis=1)
        dist[lo:lo + chunk] = d[np.arange(len(d)), ids[lo:lo + chunk]]
    return ids, dist


def candidate_set(y, table: EmbeddingTable, k: int) -> list[tuple[int, float]]:
    """The ``k`` nearest entities by distance, ties broken by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d = _distances(np.asarray(y, dtype=float), table.entities, table.norm)
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


@dataclass
class RecoveryResult:
    """Decoded semantics.

    In soft mode ``recovered`` holds the best guesses, while ``vectors`` and
    ``candidates`` carry the raw received vectors and their nearest entities
    for the reasoning stage.
    """

    recovered: ExplicitSemantics
    distances: list[float]
    mode: str
    vectors: list[np.ndarray] = field(default_factory=list)
    candidates: list[list[tuple[int, float]]] = field(default_factory=list)


def _slot_vectors(record: TransmitRecord, layout: Sequence[str]) -> np.ndarray:
    vecs = np.atleast_2d(record.received_vectors())
    if len(vecs) != len(layout):
        raise ValueError(f"layout has {len(layout)} slots, record carries {len(vecs)} vectors")
    return vecs


def hard_recover(record: TransmitRecord, layout: Sequence[str], table: EmbeddingTable) -> RecoveryResult:
    """Decode every slot to its nearest entity or relation row.

    ``layout`` names each received vector ``"entity"`` or ``"relation"``.
    Fading is equalized first when the record carries receiver CSI.
    """
    vecs = _slot_vectors(record, layout)
    ents, rels, dists = [], [], []
    for slot, y in zip(layout, vecs):
        if slot == ENTITY:
            i, d = nearest_entity(y, table)
            ents.append(i)
        elif slot == RELATION:
            i, d = nearest_relation(y, table)
            rels.append(i)
        else:
            raise ValueError(f"unknown slot kind {slot!r}")
        dists.append(d)
    return RecoveryResult(ExplicitSemantics(tuple(ents), tuple(rels)), dists, "hard")


def soft_recover(record: TransmitRecord, layout: Sequence[str], table: EmbeddingTable,
                 k: int = 3) -> RecoveryResult:
    """Keep the raw vectors and attach the ``k`` nearest entity candidates."""
    vecs = _slot_vectors(record, layout)
    hard = hard_recover(record, layout, table)
    cands = [candidate_set(y, table, k) if slot == ENTITY else [] for slot, y in zip(layout, vecs)]
    return RecoveryResult(hard.recovered, hard.distances, "soft", list(vecs), cands)


def top_p_relations(probs: np.ndarray, num_relations: int, top_p: float) -> np.ndarray:
    """Smallest set of relations, by decreasing probability, whose mass reaches ``top_p``.

    A stop probability (index ``num_relations``) is dropped and the rest
    renormalised first.
    """
    p = np.asarray(probs[:num_relations], dtype=float)
    total = p.sum()
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    p = p / total
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    chosen = order[:k]
    return chosen[p[chosen] > 0]


def reachable_entities(kg: KnowledgeGraph, net: PolicyNetwork, table: EmbeddingTable,
                       path: SemanticPath, top_p: float, max_length: int,
                       vector=None) -> set[int]:
    """Unvisited tails of ``path.end`` through its top-p policy relations."""
    s = State(path, vector)
    mask = action_mask(net, State(path), kg, max_length)
    probs = policy_forward(net, featurize_state(s, table, max_length), mask)
    if probs is None:
        return set()
    rels = set(top_p_relations(probs, kg.num_relations, top_p).tolist())
    seen = set(path.entities)
    return {e for r, e in kg.neighbors(path.end) if r in rels and e not in seen}


def _nearest_within(y, table: EmbeddingTable, allowed: set[int]) -> int:
    if not allowed:
        return nearest_entity(y, table)[0]
    ids = np.array(sorted(allowed))
    i, _ = _nearest(y, table.entities[ids], table.norm)
    return int(ids[i])


def reasoning_constrained_recover(y, table: EmbeddingTable, policy: PolicyNetwork, prev: int,
                                  kg: KnowledgeGraph, top_p: float = 0.95, *,
                                  path: SemanticPath | None = None,
                                  max_length: int = 3) -> int:
    """Nearest entity among those the policy considers reachable from ``prev``.

    ``path`` is the decoded prefix ending at ``prev`` (a bare start by
    default). Falls back to the whole table when nothing is reachable.
    """
    if not 0 < top_p <= 1:
        raise ValueError("top_p must lie in (0, 1]")
    path = SemanticPath(prev) if path is None else path
    if path.end != prev:
        raise ValueError("path must end at prev")
    allowed = reachable_entities(kg, policy, table, path, top_p, max_length)
    return _nearest_within(y, table, allowed)


def entity_prefix(entities: Sequence[int]) -> SemanticPath:
    """Path over decoded entity ids; relations are unknown and set to -1.

    Only the entity sequence matters for policy features and masks.
    """
    return SemanticPath(entities[0], tuple((-1, e) for e in entities[1:]))


def soft_constrained_recover(y, table: EmbeddingTable, policy: PolicyNetwork, prev_vector,
                             kg: KnowledgeGraph, start: int, step: int, top_p: float = 0.95,
                             k: int = 3, max_length: int = 3) -> int:
    """Constrained recovery that does not commit to the previous entity.

    The policy sees the raw previous vector at position ``step``; relations
    are allowed if any of the ``k`` nearest candidates of that vector has
    them, and the candidate set for ``y`` is the union of their tails.
    """
    if not 0 < top_p <= 1:
        raise ValueError("top_p must lie in (0, 1]")
    cands = [c for c, _ in candidate_set(prev_vector, table, k)]
    if step >= max_length:
        return nearest_entity(y, table)[0]
    mask = np.zeros(kg.num_relations, dtype=bool)
    for c in cands:
        mask |= valid_actions(State(SemanticPath(c)), kg)
    if not mask.any():
        return nearest_entity(y, table)[0]
    feats = np.concatenate([np.asarray(prev_vector, dtype=float), table.entities[start],
                            [step / max_length]])
    probs = policy_forward(policy, feats, mask)
    rels = set(top_p_relations(probs, kg.num_relations, top_p).tolist())
    allowed = {e for c in cands for r, e in kg.neighbors(c) if r in rels and e != c}
    return _nearest_within(y, table, allowed)


def constrained_sequence_recover(ys, table: EmbeddingTable, policy: PolicyNetwork,
                                 kg: KnowledgeGraph, top_p: float = 0.95, max_length: int = 3,
                                 beam: int = 8, reachable=None) -> list[int]:
    """Decode a whole received entity sequence with beam search.

    Every hop is restricted to :func:`reachable_entities` of the decoded
    prefix (whole table when that set is empty), exactly as in
    :func:`reasoning_constrained_recover`, but the start entity is chosen
    jointly with the rest: beams are scored by the summed distance of their
    entities to the received vectors. ``reachable`` may be a callable
    ``prefix_tuple -> set`` used to cache reachability across calls.
    """
    if not 0 < top_p <= 1:
        raise ValueError("top_p must lie in (0, 1]")
    if beam < 1:
        raise ValueError("beam must be >= 1")
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if reachable is None:
        def reachable(prefix):
            return reachable_entities(kg, policy, table, entity_prefix(list(prefix)), top_p,
                                      max_length)
    beams = [(d, (e,)) for e, d in candidate_set(ys[0], table, beam)]
    for y in ys[1:]:
        grown = []
        for score, seq in beams:
            allowed = reachable(seq)
            ids = np.array(sorted(allowed)) if allowed else np.arange(table.num_entities)
            d = _distances(y, table.entities[ids], table.norm)
            for j in np.argsort(d, kind="stable")[:beam]:
                grown.append((score + float(d[j]), seq + (int(ids[j]),)))
        grown.sort()
        beams = grown[:beam]
    return list(beams[0][1])
