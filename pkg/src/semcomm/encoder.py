"""Translation-style semantic encoder: energies, margin loss and training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .kg_store import ExplicitSemantics, KnowledgeGraph

logger = logging.getLogger(__name__)

NORMS = ("l1", "l2")
CORRUPTION_MODES = ("head", "tail", "both")


class EncoderDivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"encoder loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


class UnsatisfiableError(RuntimeError):
    """No corrupted triple outside the graph exists for some positive."""


@dataclass
class EmbeddingTable:
    """Entity and relation constellations.

    ``raw_entity_dim``/``raw_relation_dim`` record the attribute sizes of the
    source representation; they are metadata only.
    """

    entities: np.ndarray
    relations: np.ndarray
    norm: str = "l2"
    raw_entity_dim: int | None = None
    raw_relation_dim: int | None = None

    def __post_init__(self):
        self.entities = np.asarray(self.entities, dtype=float)
        self.relations = np.asarray(self.relations, dtype=float)
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.entities.ndim != 2 or self.relations.ndim != 2:
            raise ValueError("embedding matrices must be 2-D")

    @property
    def n(self) -> int:
        return self.entities.shape[1]

    @property
    def n_rel(self) -> int:
        return self.relations.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relations.shape[0]

    def copy(self) -> "EmbeddingTable":
        return replace(self, entities=self.entities.copy(), relations=self.relations.copy())

    def dumps(self) -> str:
        lines = [f"{self.n} {self.n_rel} {self.norm} {self.num_entities} {self.num_relations}"]
        for row in list(self.entities) + list(self.relations):
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EmbeddingTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty table file")
        head = lines[0].split()
        if len(head) != 5:
            raise ValueError(f"bad table header {lines[0]!r}")
        n, n_rel, norm, ne, nr = int(head[0]), int(head[1]), head[2], int(head[3]), int(head[4])
        rows = [np.array([float(x) for x in ln.split()]) for ln in lines[1:]]
        if len(rows) != ne + nr:
            raise ValueError(f"expected {ne + nr} rows, found {len(rows)}")
        ent = np.array(rows[:ne]).reshape(ne, n)
        rel = np.array(rows[ne:]).reshape(nr, n_rel)
        return cls(ent, rel, norm)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


@dataclass
class EncoderConfig:
    n: int = 50
    n_rel: int | None = None
    margin: float = 1.0
    norm: str = "l1"
    lr: float = 0.01
    epochs: int = 1500
    batch_size: int = 128
    corruption: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.n_rel is None:
            self.n_rel = self.n
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.corruption not in CORRUPTION_MODES:
            raise ValueError(f"corruption must be one of {CORRUPTION_MODES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TripletBatch:
    positives: np.ndarray
    negatives: np.ndarray
    # which slot was corrupted per pair: 0 head, 2 tail
    corrupted_slot: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64).reshape(-1, 3)
        self.negatives = np.asarray(self.negatives, dtype=np.int64).reshape(-1, 3)
        if len(self.positives) != len(self.negatives):
            raise ValueError("positives and negatives must be aligned one-to-one")


# ---------------------------------------------------------------------------
# energies


def _norm(u: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.abs(u).sum(axis=-1)
    if norm == "l2":
        return np.sqrt((u * u).sum(axis=-1))
    raise ValueError(f"unknown norm {norm!r}")


def energy(h, r, t, norm: str = "l2"):
    """``||h + r - t||`` under ``norm``; broadcasts over leading axes."""
    h, r, t = (np.asarray(v, dtype=float) for v in (h, r, t))
    if not (h.shape[-1] == r.shape[-1] == t.shape[-1]):
        raise ValueError(f"dimension mismatch: {h.shape[-1]}, {r.shape[-1]}, {t.shape[-1]}")
    out = _norm(h + r - t, norm)
    return float(out) if out.ndim == 0 else out


def path_energy(e0, rels: Sequence, e_last, norm: str = "l2") -> float:
    """Energy of a multi-hop path: relations are summed before the distance."""
    if len(rels) == 0:
        raise ValueError("path_energy needs at least one relation")
    r_sum = np.sum(np.asarray(rels, dtype=float), axis=0)
    return energy(e0, r_sum, e_last, norm)


def triple_energies(table: EmbeddingTable, triples: np.ndarray) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E, R = table.entities, table.relations
    return _norm(E[triples[:, 0]] + R[triples[:, 1]] - E[triples[:, 2]], table.norm)


# ---------------------------------------------------------------------------
# negatives


def sample_negatives(kg: KnowledgeGraph, positives, mode: str = "both", seed=0,
                     max_tries: int = 32) -> TripletBatch:
    """Pair each positive with a head- or tail-corrupted triple outside ``kg``.

    In ``both`` mode the corrupted side is a fair coin. Candidates are redrawn
    up to ``max_tries`` times; survivors are resolved exhaustively, falling
    back to the other side when the chosen one has no free entity.
    """
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"mode must be one of {CORRUPTION_MODES}")
    if kg.num_entities == 0:
        raise ValueError("graph is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    m = len(pos)
    ne, nr = kg.num_entities, kg.num_relations
    keys = kg.triple_keys()

    def known(tr):
        k = (tr[:, 0] * nr + tr[:, 1]) * ne + tr[:, 2]
        idx = np.searchsorted(keys, k)
        idx = np.minimum(idx, len(keys) - 1) if len(keys) else idx
        return (keys[idx] == k) if len(keys) else np.zeros(len(k), dtype=bool)

    if mode == "both":
        slot = np.where(rng.random(m) < 0.5, 0, 2)
    else:
        slot = np.full(m, 0 if mode == "head" else 2)
    neg = pos.copy()
    pending = np.arange(m)
    for _ in range(max_tries):
        if not len(pending):
            break
        draws = rng.integers(ne, size=len(pending))
        cand = pos[pending].copy()
        cand[np.arange(len(pending)), slot[pending]] = draws
        ok = ~known(cand)
        neg[pending[ok]] = cand[ok]
        pending = pending[~ok]

    for i in pending:
        h, r, t = (int(x) for x in pos[i])
        sides = [int(slot[i])] + ([2 - int(slot[i])] if mode == "both" else [])
        for side in sides:
            if side == 0:
                free = [e for e in range(ne) if not kg.has_triple(e, r, t)]
            else:
                free = [e for e in range(ne) if not kg.has_triple(h, r, e)]
            if free:
                neg[i] = (h, r, t)
                neg[i, side] = free[int(rng.integers(len(free)))]
                slot[i] = side
                break
        else:
            raise UnsatisfiableError(f"no negative exists for triple {(h, r, t)}")
    return TripletBatch(pos, neg, slot)


# ---------------------------------------------------------------------------
# loss


def margin_loss(batch: TripletBatch, table: EmbeddingTable, margin: float) -> float:
    """Sum over pairs of ``max(0, margin + energy(pos) - energy(neg))``."""
    if not len(batch.positives):
        return 0.0
    gap = margin + triple_energies(table, batch.positives) - triple_energies(table, batch.negatives)
    return float(np.maximum(gap, 0.0).sum())


def _norm_grad(u: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.sign(u)
    length = np.sqrt((u * u).sum(axis=-1, keepdims=True))
    return np.divide(u, length, out=np.zeros_like(u), where=length > 0)


def margin_loss_grad(batch: TripletBatch, table: EmbeddingTable, margin: float):
    """Loss and subgradients ``(loss, d_entities, d_relations)``."""
    E, R = table.entities, table.relations
    p, q = batch.positives, batch.negatives
    up = E[p[:, 0]] + R[p[:, 1]] - E[p[:, 2]]
    un = E[q[:, 0]] + R[q[:, 1]] - E[q[:, 2]]
    gap = margin + _norm(up, table.norm) - _norm(un, table.norm)
    active = gap > 0
    gE = np.zeros_like(E)
    gR = np.zeros_like(R)
    if active.any():
        gp = _norm_grad(up[active], table.norm)
        gn = _norm_grad(un[active], table.norm)
        pa, qa = p[active], q[active]
        np.add.at(gE, pa[:, 0], gp)
        np.add.at(gR, pa[:, 1], gp)
        np.add.at(gE, pa[:, 2], -gp)
        np.add.at(gE, qa[:, 0], -gn)
        np.add.at(gR, qa[:, 1], -gn)
        np.add.at(gE, qa[:, 2], gn)
    return float(gap[active].sum()), gE, gR


# ---------------------------------------------------------------------------
# training


def init_table(num_entities: int, num_relations: int, cfg: EncoderConfig) -> EmbeddingTable:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.n)
    ent = rng.uniform(-bound, bound, size=(num_entities, cfg.n))
    rel = rng.uniform(-bound, bound, size=(num_relations, cfg.n_rel))
    return EmbeddingTable(ent, rel, cfg.norm)


def renormalize(table: EmbeddingTable) -> None:
    lengths = np.linalg.norm(table.entities, axis=1, keepdims=True)
    np.divide(table.entities, lengths, out=table.entities, where=lengths > 0)


def train_encoder(kg: KnowledgeGraph, cfg: EncoderConfig,
                  triples: np.ndarray | None = None) -> tuple[EmbeddingTable, list[float]]:
    """Mini-batch subgradient descent on the margin loss.

    ``triples`` restricts training to a subset of positives (all graph
    triples by default). Entity rows are renormalized to unit length after
    every epoch. Returns the table and the per-epoch summed loss.
    """
    if kg.num_triples == 0:
        raise ValueError("graph has no triples to train on")
    if cfg.n != cfg.n_rel:
        raise ValueError("translation energies need equal entity and relation dimensions")
    table = init_table(kg.num_entities, kg.num_relations, cfg)
    positives = kg.triples if triples is None else np.asarray(triples, dtype=np.int64)
    rng = np.random.default_rng((cfg.seed, 1))
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(positives))
        batch = sample_negatives(kg, positives[order], cfg.corruption, rng)
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            sl = slice(lo, lo + cfg.batch_size)
            part = TripletBatch(batch.positives[sl], batch.negatives[sl])
            loss, gE, gR = margin_loss_grad(part, table, cfg.margin)
            table.entities -= cfg.lr * gE
            table.relations -= cfg.lr * gR
            total += loss
        if not np.isfinite(total):
            raise EncoderDivergenceError(epoch, total)
        renormalize(table)
        losses.append(total)
    if cfg.epochs:
        logger.debug("encoder: %d epochs, loss %.4f -> %.4f", cfg.epochs, losses[0], losses[-1])
    return table, losses


def margin_audit(kg: KnowledgeGraph, table: EmbeddingTable, margin: float, seed: int = 0,
                 mode: str = "both") -> float:
    """Fraction of triples whose fresh negative is at least ``margin`` farther."""
    batch = sample_negatives(kg, kg.triples, mode, seed)
    pe = triple_energies(table, batch.positives)
    ne = triple_energies(table, batch.negatives)
    return float(np.mean(pe + margin <= ne))


# ---------------------------------------------------------------------------
# encoding and symbol packing


def encode_explicit(v: ExplicitSemantics, table: EmbeddingTable) -> list[np.ndarray]:
    """Entity rows followed by relation rows, in input order."""
    out = []
    for e in v.entities:
        if not 0 <= e < table.num_entities:
            raise KeyError(f"unknown entity id {e}")
        out.append(table.entities[e].copy())
    for r in v.relations:
        if not 0 <= r < table.num_relations:
            raise KeyError(f"unknown relation id {r}")
        out.append(table.relations[r].copy())
    return out


def pack_symbols(x, mode: str = "real") -> np.ndarray:
    """Map a real vector to channel symbols.

    ``real`` keeps one real symbol per coordinate; ``complex`` pairs
    consecutive coordinates into ``x[2k] + 1j * x[2k + 1]``.
    """
    x = np.asarray(x, dtype=float)
    if mode == "real":
        return x.copy()
    if mode == "complex":
        if x.shape[-1] % 2:
            raise ValueError("complex packing needs an even dimension")
        return x[..., 0::2] + 1j * x[..., 1::2]
    raise ValueError(f"unknown packing mode {mode!r}")


def unpack_symbols(s, mode: str = "real") -> np.ndarray:
    s = np.asarray(s)
    if mode == "real":
        return np.real(s).astype(float)
    if mode == "complex":
        out = np.empty(s.shape[:-1] + (2 * s.shape[-1],), dtype=float)
        out[..., 0::2] = s.real
        out[..., 1::2] = s.imag
        return out
    raise ValueError(f"unknown packing mode {mode!r}")
