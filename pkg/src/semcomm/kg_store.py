"""Knowledge-graph storage, sub-graph sampling and expert path generation."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)


class TripleParseError(ValueError):
    """Raised for a malformed line in a triple file."""

    def __init__(self, line_no: int, line: str):
        super().__init__(f"line {line_no}: expected 'head<TAB>relation<TAB>tail', got {line!r}")
        self.line_no = line_no


@dataclass(frozen=True)
class ExplicitSemantics:
    """Entities and relations directly observed in the source signal."""

    entities: tuple[int, ...]
    relations: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(int(e) for e in self.entities))
        object.__setattr__(self, "relations", tuple(int(r) for r in self.relations))
        if not self.entities:
            raise ValueError("explicit semantics need at least one entity")


@dataclass(frozen=True)
class SemanticPath:
    """Alternating entity/relation sequence ``e0, r0, e1, r1, ...``."""

    start: int
    steps: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "start", int(self.start))
        object.__setattr__(self, "steps", tuple((int(r), int(e)) for r, e in self.steps))

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def entities(self) -> tuple[int, ...]:
        return (self.start,) + tuple(e for _, e in self.steps)

    @property
    def relations(self) -> tuple[int, ...]:
        return tuple(r for r, _ in self.steps)

    @property
    def end(self) -> int:
        return self.steps[-1][1] if self.steps else self.start

    def key(self) -> tuple[int, ...]:
        """Flat id sequence used to key paths in distributions."""
        out = [self.start]
        for r, e in self.steps:
            out.extend((r, e))
        return tuple(out)

    @classmethod
    def from_key(cls, key: Sequence[int]) -> "SemanticPath":
        if len(key) % 2 != 1:
            raise ValueError(f"path key must have odd length, got {len(key)}")
        return cls(key[0], tuple(zip(key[1::2], key[2::2])))

    def extend(self, relation: int, entity: int) -> "SemanticPath":
        return SemanticPath(self.start, self.steps + ((relation, entity),))

    def is_valid(self, kg: "KnowledgeGraph", max_length: int | None = None) -> bool:
        """Replay the path against the adjacency of ``kg``."""
        if not 0 <= self.start < kg.num_entities:
            return False
        if max_length is not None and self.length > max_length:
            return False
        current = self.start
        for r, e in self.steps:
            if not kg.has_edge(current, r, e):
                return False
            current = e
        return True


@dataclass(frozen=True)
class ExpertPathSet:
    paths: tuple[SemanticPath, ...]
    max_length: int
    requested: int = 0
    # set when fewer than ``requested`` paths could be generated
    incomplete: bool = False

    @property
    def count(self) -> int:
        return len(self.paths)

    def starts(self) -> list[ExplicitSemantics]:
        return [ExplicitSemantics((p.start,)) for p in self.paths]


class KnowledgeGraph:
    """Immutable knowledge graph with dense integer ids.

    Entities and relations carry string labels; ``label -> id`` is a
    bijection in each namespace. Duplicate triples are not stored.
    """

    def __init__(self, entity_labels: Sequence[str], relation_labels: Sequence[str],
                 triples: Iterable[tuple[int, int, int]] | np.ndarray):
        self.entity_labels: tuple[str, ...] = tuple(entity_labels)
        self.relation_labels: tuple[str, ...] = tuple(relation_labels)
        for kind, labels in (("entity", self.entity_labels), ("relation", self.relation_labels)):
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate {kind} labels")
        self.entity_index = {lab: i for i, lab in enumerate(self.entity_labels)}
        self.relation_index = {lab: i for i, lab in enumerate(self.relation_labels)}

        arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples,
                         dtype=np.int64).reshape(-1, 3)
        ne, nr = len(self.entity_labels), len(self.relation_labels)
        if arr.size:
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= ne:
                raise ValueError("triple references an unknown entity")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= nr:
                raise ValueError("triple references an unknown relation")
        # dedupe while keeping first-appearance order
        seen: set[tuple[int, int, int]] = set()
        keep = []
        for i, t in enumerate(map(tuple, arr.tolist())):
            if t not in seen:
                seen.add(t)
                keep.append(i)
        arr = arr[keep] if keep else np.zeros((0, 3), dtype=np.int64)
        arr.setflags(write=False)
        self.triples = arr
        self._triple_set = frozenset(seen)

        adj: list[list[tuple[int, int]]] = [[] for _ in range(ne)]
        for h, r, t in arr.tolist():
            adj[h].append((r, t))
        self._adjacency = tuple(tuple(sorted(a)) for a in adj)

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def __repr__(self):
        return (f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
                f"triples={self.num_triples})")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entity_labels == other.entity_labels
                and self.relation_labels == other.relation_labels
                and np.array_equal(self.triples, other.triples))

    def __hash__(self):
        return hash((self.entity_labels, self.relation_labels, self.triples.tobytes()))

    def has_triple(self, h: int, r: int, t: int) -> bool:
        return (h, r, t) in self._triple_set

    def has_edge(self, h: int, r: int, t: int) -> bool:
        return (int(h), int(r), int(t)) in self._triple_set

    def neighbors(self, e: int) -> tuple[tuple[int, int], ...]:
        """Forward adjacency of ``e`` sorted by ``(relation, tail)``."""
        if not 0 <= e < self.num_entities:
            raise KeyError(f"unknown entity id {e}")
        return self._adjacency[e]

    def out_degree(self) -> np.ndarray:
        return np.array([len(a) for a in self._adjacency], dtype=np.int64)

    def triple_keys(self) -> np.ndarray:
        """Sorted int64 encoding ``(h * R + r) * E + t`` of all triples."""
        t = self.triples
        keys = (t[:, 0] * self.num_relations + t[:, 1]) * self.num_entities + t[:, 2]
        return np.sort(keys)

    def in_edges(self) -> list[list[tuple[int, int]]]:
        """Inverted adjacency ``tail -> [(relation, head)]``; built on demand, never cached."""
        inv: list[list[tuple[int, int]]] = [[] for _ in range(self.num_entities)]
        for h, r, t in self.triples.tolist():
            inv[t].append((r, h))
        for lst in inv:
            lst.sort()
        return inv

    def undirected_neighbors(self) -> list[list[int]]:
        nb: list[set[int]] = [set() for _ in range(self.num_entities)]
        for h, _, t in self.triples.tolist():
            if h != t:
                nb[h].add(t)
                nb[t].add(h)
        return [sorted(s) for s in nb]

    def connected_components(self) -> int:
        """Number of weakly connected components."""
        nb = self.undirected_neighbors()
        seen = np.zeros(self.num_entities, dtype=bool)
        count = 0
        for s in range(self.num_entities):
            if seen[s]:
                continue
            count += 1
            seen[s] = True
            stack = [s]
            while stack:
                u = stack.pop()
                for v in nb[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
        return count

    def density(self) -> float:
        """Triples per entity, the ranking key for sub-graph density."""
        return self.num_triples / max(self.num_entities, 1)


def neighbors(kg: KnowledgeGraph, e: int) -> list[tuple[int, int]]:
    return list(kg.neighbors(e))


# ---------------------------------------------------------------------------
# text I/O


def _iter_lines(source: TextIO | str | Iterable[str]) -> Iterator[str]:
    if isinstance(source, str):
        yield from io.StringIO(source)
    else:
        yield from source


def load_triples(source: TextIO | str | Iterable[str]) -> KnowledgeGraph:
    """Parse ``head<TAB>relation<TAB>tail`` lines into a graph.

    Ids are assigned by first appearance. ``#entity<TAB>label`` and
    ``#relation<TAB>label`` directives written by :func:`serialize` pin ids
    (and keep isolated entities); every other ``#`` line is a comment.
    """
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []

    def eid(label):
        return ent.setdefault(label, len(ent))

    def rid(label):
        return rel.setdefault(label, len(rel))

    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line.split("\t")
            if len(parts) == 2 and parts[0] == "#entity":
                eid(parts[1])
            elif len(parts) == 2 and parts[0] == "#relation":
                rid(parts[1])
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise TripleParseError(line_no, line)
        h, r, t = parts
        triples.append((eid(h), rid(r), eid(t)))
    return KnowledgeGraph(list(ent), list(rel), triples)


def load_triples_file(path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return load_triples(fh)


def serialize(kg: KnowledgeGraph) -> str:
    buf = io.StringIO()
    buf.write(f"#entities={kg.num_entities} relations={kg.num_relations}\n")
    for lab in kg.entity_labels:
        buf.write(f"#entity\t{lab}\n")
    for lab in kg.relation_labels:
        buf.write(f"#relation\t{lab}\n")
    E, R = kg.entity_labels, kg.relation_labels
    for h, r, t in kg.triples.tolist():
        buf.write(f"{E[h]}\t{R[r]}\t{E[t]}\n")
    return buf.getvalue()


def save_triples_file(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(kg))


# ---------------------------------------------------------------------------
# sub-graph sampling


def induced_subgraph(kg: KnowledgeGraph, entities: Iterable[int]) -> KnowledgeGraph:
    """Subgraph on ``entities`` keeping every triple among them.

    Entities and used relations are renumbered in increasing original-id order.
    """
    keep = np.array(sorted(set(int(e) for e in entities)), dtype=np.int64)
    remap = np.full(kg.num_entities, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    t = kg.triples
    mask = (remap[t[:, 0]] >= 0) & (remap[t[:, 2]] >= 0) if len(t) else np.zeros(0, dtype=bool)
    sub = t[mask]
    used_rel = np.unique(sub[:, 1]) if len(sub) else np.zeros(0, dtype=np.int64)
    rel_remap = np.full(kg.num_relations, -1, dtype=np.int64)
    rel_remap[used_rel] = np.arange(len(used_rel))
    new = np.stack([remap[sub[:, 0]], rel_remap[sub[:, 1]], remap[sub[:, 2]]], axis=1) \
        if len(sub) else np.zeros((0, 3), dtype=np.int64)
    return KnowledgeGraph([kg.entity_labels[i] for i in keep],
                          [kg.relation_labels[i] for i in used_rel], new)


def sample_skg(kg: KnowledgeGraph, entity_budget: int, seed: int,
               restart_prob: float = 0.15) -> KnowledgeGraph:
    """Sample a sub-knowledge graph by seeded random walks.

    The walk moves over undirected adjacency, jumps back to an already
    selected entity with probability ``restart_prob`` and teleports to a fresh
    unselected entity when it stalls. Collection stops once
    ``entity_budget`` distinct entities are selected.
    """
    if entity_budget < 1 or entity_budget > kg.num_entities:
        raise ValueError(f"entity_budget must be in [1, {kg.num_entities}], got {entity_budget}")
    rng = np.random.default_rng(seed)
    if entity_budget == kg.num_entities:
        return induced_subgraph(kg, range(kg.num_entities))
    nb = kg.undirected_neighbors()
    selected: list[int] = []
    in_sel = np.zeros(kg.num_entities, dtype=bool)

    def add(e):
        if not in_sel[e]:
            in_sel[e] = True
            selected.append(e)

    current = int(rng.integers(kg.num_entities))
    add(current)
    stall = 0
    stall_limit = 10 * entity_budget + 100
    while len(selected) < entity_budget:
        before = len(selected)
        if not nb[current] or stall > stall_limit:
            free = np.flatnonzero(~in_sel)
            current = int(free[rng.integers(len(free))])
            stall = 0
        elif rng.random() < restart_prob:
            current = selected[int(rng.integers(len(selected)))]
        else:
            options = nb[current]
            current = options[int(rng.integers(len(options)))]
        add(current)
        stall = 0 if len(selected) > before else stall + 1
    return induced_subgraph(kg, selected)


# ---------------------------------------------------------------------------
# expert paths via two-sided breadth first search


def _bfs_layers(adj: Sequence[Sequence[tuple[int, int]]], root: int, depth: int):
    """Breadth-first parents from ``root`` up to ``depth`` hops.

    Returns ``{entity: (dist, parent, relation)}``; parents are the first
    discoverer in sorted adjacency order.
    """
    info = {root: (0, -1, -1)}
    frontier = [root]
    for d in range(1, depth + 1):
        nxt = []
        for u in frontier:
            for r, v in adj[u]:
                if v not in info:
                    info[v] = (d, u, r)
                    nxt.append(v)
        frontier = nxt
        if not frontier:
            break
    return info


def _splice_candidates(kg: KnowledgeGraph, inv, start: int, goal: int, max_length: int):
    """All shortest start->goal paths obtainable by splicing at a meeting entity."""
    if start == goal:
        return []
    fwd_depth = (max_length + 1) // 2
    bwd_depth = max_length // 2
    fwd = _bfs_layers(_AdjView(kg), start, fwd_depth)
    bwd = _bfs_layers(inv, goal, bwd_depth)
    meets = [(fwd[m][0] + bwd[m][0], m) for m in fwd.keys() & bwd.keys()]
    if not meets:
        return []
    best = min(total for total, _ in meets)
    if best > max_length or best == 0:
        return []
    paths = []
    for total, m in sorted(meets):
        if total != best:
            continue
        head = []
        u = m
        while u != start:
            _, parent, r = fwd[u]
            head.append((r, u))
            u = parent
        head.reverse()
        tail = []
        u = m
        while u != goal:
            _, child, r = bwd[u]
            tail.append((r, child))
            u = child
        path = SemanticPath(start, tuple(head + tail))
        if len(set(path.entities)) == len(path.entities):
            paths.append(path)
    return paths


class _AdjView:
    __slots__ = ("kg",)

    def __init__(self, kg):
        self.kg = kg

    def __getitem__(self, e):
        return self.kg.neighbors(e)


def bidirectional_bfs_path(kg: KnowledgeGraph, start: int, goal: int, max_length: int,
                           rng: np.random.Generator | None = None,
                           inv=None) -> SemanticPath | None:
    """Shortest path from ``start`` to ``goal`` with at most ``max_length`` hops.

    Forward BFS from ``start`` and backward BFS from ``goal`` over inverted
    edges meet in the middle. When several meeting entities give a shortest
    path one is chosen uniformly with ``rng`` (lowest id if ``rng`` is None).
    """
    if inv is None:
        inv = kg.in_edges()
    cands = _splice_candidates(kg, inv, start, goal, max_length)
    if not cands:
        return None
    if rng is None or len(cands) == 1:
        return cands[0]
    return cands[int(rng.integers(len(cands)))]


def generate_expert_paths(kg: KnowledgeGraph, max_length: int, count: int, seed: int,
                          max_attempts: int | None = None) -> ExpertPathSet:
    """Draw ``count`` expert paths from uniformly seeded (start, goal) pairs."""
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    if kg.num_triples == 0:
        raise ValueError("graph has no edges")
    rng = np.random.default_rng(seed)
    inv = kg.in_edges()
    attempts = max_attempts if max_attempts is not None else 200 * count
    paths: list[SemanticPath] = []
    tries = 0
    while len(paths) < count and tries < attempts:
        tries += 1
        start, goal = (int(x) for x in rng.integers(kg.num_entities, size=2))
        path = bidirectional_bfs_path(kg, start, goal, max_length, rng=rng, inv=inv)
        if path is not None:
            paths.append(path)
    incomplete = len(paths) < count
    if incomplete:
        logger.warning("generated %d of %d expert paths after %d attempts",
                       len(paths), count, tries)
    return ExpertPathSet(tuple(paths), max_length, count, incomplete)


def expert_mechanism_distribution(kg: KnowledgeGraph, max_length: int) -> dict[tuple[int, ...], float]:
    """Exact path distribution of the expert generator.

    Enumerates every ordered (start, goal) pair, keeps those with a path and
    splits each pair's mass uniformly across its meeting-entity choices,
    mirroring the rejection sampling in :func:`generate_expert_paths`.
    """
    inv = kg.in_edges()
    mass: dict[tuple[int, ...], float] = {}
    pairs = 0
    for s in range(kg.num_entities):
        for g in range(kg.num_entities):
            cands = _splice_candidates(kg, inv, s, g, max_length)
            if not cands:
                continue
            pairs += 1
            for p in cands:
                mass[p.key()] = mass.get(p.key(), 0.0) + 1.0 / len(cands)
    if not pairs:
        return {}
    return {k: v / pairs for k, v in mass.items()}


# ---------------------------------------------------------------------------
# built-in graphs


def chain_graph(length: int = 3, relation: str = "r") -> KnowledgeGraph:
    """Chain ``e0 -r-> e1 -r-> ... -r-> e{length}``."""
    ents = [f"e{i}" for i in range(length + 1)]
    return KnowledgeGraph(ents, [relation], [(i, 0, i + 1) for i in range(length)])


def random_toy_graph(num_entities: int = 20, num_relations: int = 6, out_degree: int = 3,
                     seed: int = 0) -> KnowledgeGraph:
    """Small graph where every (head, relation) has a single tail.

    Each entity gets ``out_degree`` edges with distinct relations, so a
    relation choice fully determines the next entity.
    """
    if out_degree > num_relations:
        raise ValueError("out_degree cannot exceed num_relations")
    rng = np.random.default_rng(seed)
    triples = []
    for h in range(num_entities):
        rels = rng.choice(num_relations, size=out_degree, replace=False)
        others = np.array([e for e in range(num_entities) if e != h])
        tails = rng.choice(others, size=out_degree, replace=False)
        triples.extend((h, int(r), int(t)) for r, t in zip(rels, tails))
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)],
                          [f"r{j}" for j in range(num_relations)], triples)


def hard_toy_graph(num_forks: int = 4, num_entities: int = 20) -> KnowledgeGraph:
    """Forks ``c -r0-> a``, ``c -r1-> b`` plus isolated entities.

    The expert generator's distribution is uniform over ``2 * num_forks``
    one-hop paths, so a handful of samples cannot describe it while a few
    dozen can.
    """
    if 3 * num_forks > num_entities:
        raise ValueError("not enough entities for the requested forks")
    triples = []
    for k in range(num_forks):
        c = 3 * k
        triples.append((c, 0, c + 1))
        triples.append((c, 1, c + 2))
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)], ["r0", "r1"], triples)


def synthetic_typed_graph(num_entities: int = 14541, num_relations: int = 237,
                          num_triples: int = 272115, num_types: int = 40,
                          seed: int = 0) -> KnowledgeGraph:
    """Typed random graph with the size profile of FB15k-237.

    Entities get Zipf-sized types and heavy-tailed popularity; each relation
    links a domain type to a range type and draws heads/tails by popularity
    within those types. Relations have Zipf frequencies.
    """
    rng = np.random.default_rng(seed)
    type_w = 1.0 / np.arange(1, num_types + 1) ** 0.8
    types = rng.choice(num_types, size=num_entities, p=type_w / type_w.sum())
    types[:num_types] = np.arange(num_types)  # no empty type
    pop = rng.pareto(1.5, size=num_entities) + 1.0
    members = [np.flatnonzero(types == k) for k in range(num_types)]
    probs = [pop[m] / pop[m].sum() for m in members]

    rel_w = 1.0 / np.arange(1, num_relations + 1) ** 1.1
    rel_w /= rel_w.sum()
    dom = rng.integers(num_types, size=num_relations)
    rng_t = rng.integers(num_types, size=num_relations)
    # oversample; duplicates and self-loops are dropped before trimming to size
    per_rel = rng.multinomial(int(num_triples * 1.8), rel_w)
    per_rel = np.maximum(per_rel, 1)

    chunks = []
    for r in range(num_relations):
        k = int(per_rel[r])
        hm, tm = members[dom[r]], members[rng_t[r]]
        h = rng.choice(hm, size=k, p=probs[dom[r]])
        t = rng.choice(tm, size=k, p=probs[rng_t[r]])
        chunks.append(np.stack([h, np.full(k, r), t], axis=1))
    trip = np.concatenate(chunks)
    trip = trip[trip[:, 0] != trip[:, 2]]
    # unique triples in a seeded order
    _, idx = np.unique(trip, axis=0, return_index=True)
    trip = trip[np.sort(idx)]
    trip = trip[rng.permutation(len(trip))][:num_triples]
    return KnowledgeGraph([f"/m/ent{i:05d}" for i in range(num_entities)],
                          [f"/rel/type{j:03d}" for j in range(num_relations)], trip)


def builtin_graph(name: str, seed: int = 0) -> KnowledgeGraph:
    """Resolve a ``toy:*`` / ``synthetic:*`` dataset name."""
    table = {
        "toy:chain": lambda: chain_graph(3),
        "toy:random20": lambda: random_toy_graph(20, 6, 3, seed=seed),
        "toy:hard": lambda: hard_toy_graph(),
        "synthetic:fb15k237": lambda: synthetic_typed_graph(seed=seed),
    }
    if name not in table:
        raise KeyError(f"unknown built-in dataset {name!r}; choose from {sorted(table)}")
    return table[name]()

