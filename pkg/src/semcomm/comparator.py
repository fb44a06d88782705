"""Path comparator (expert vs generated classifier) and path-distribution distances."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import nn
from .encoder import EmbeddingTable
from .kg_store import SemanticPath

LOG4 = math.log(4.0)


class ComparatorNetwork:
    """One ReLU hidden layer and a sigmoid unit scoring how expert-like a path is."""

    def __init__(self, n: int, n_rel: int, max_length: int, hidden: int = 64, seed: int = 0,
                 layers=None):
        self.n = n
        self.n_rel = n_rel
        self.max_length = max_length
        self.hidden = hidden
        if layers is None:
            layers = nn.init_layers([self.input_dim, hidden, 1], np.random.default_rng(seed),
                                    out_scale=0.1)
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.n + self.max_length * (self.n_rel + self.n)

    def copy(self) -> "ComparatorNetwork":
        layers = [[w.copy(), b.copy()] for w, b in self.layers]
        return ComparatorNetwork(self.n, self.n_rel, self.max_length, self.hidden, layers=layers)

    def dumps(self) -> str:
        buf = io.StringIO()
        # the last header field is the number of outputs
        header = [len(self.layers), self.input_dim, self.hidden, 1, self.n, self.n_rel,
                  self.max_length]
        nn.write_layers(buf, header, self.layers)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "ComparatorNetwork":
        lines = text.splitlines()
        m, input_dim, hidden, _, n, n_rel, max_length = (int(v) for v in lines[0].split())
        if m != 2:
            raise ValueError(f"comparator has 2 layers, header says {m}")
        net = cls(n, n_rel, max_length, hidden, layers=[])
        if net.input_dim != input_dim:
            raise ValueError("comparator header dimensions are inconsistent")
        shapes = [(hidden, input_dim), (hidden,), (1, hidden), (1,)]
        net.layers = nn.read_layers(lines[1:], shapes)
        return net

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ComparatorNetwork":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


@dataclass
class PathDistribution:
    """Finite distribution over semantic paths."""

    support: list[SemanticPath]
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if len(self.support) != len(self.probabilities):
            raise ValueError("support and probabilities differ in length")
        if np.any(self.probabilities < 0):
            raise ValueError("probabilities must be non-negative")
        total = self.probabilities.sum()
        if len(self.support) and abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @classmethod
    def from_mapping(cls, probs: Mapping[tuple[int, ...], float]) -> "PathDistribution":
        keys = sorted(probs)
        p = np.array([probs[k] for k in keys], dtype=float)
        return cls([SemanticPath.from_key(k) for k in keys], p / p.sum())

    @classmethod
    def from_paths(cls, paths: Iterable[SemanticPath]) -> "PathDistribution":
        counts: dict[tuple[int, ...], float] = {}
        for p in paths:
            counts[p.key()] = counts.get(p.key(), 0.0) + 1.0
        if not counts:
            raise ValueError("no paths given")
        return cls.from_mapping(counts)

    def as_mapping(self) -> dict[tuple[int, ...], float]:
        out: dict[tuple[int, ...], float] = {}
        for path, p in zip(self.support, self.probabilities):
            out[path.key()] = out.get(path.key(), 0.0) + float(p)
        return out


def featurize_path(path: SemanticPath, table: EmbeddingTable, max_length: int) -> np.ndarray:
    """Start embedding followed by (relation, entity) blocks, zero-padded."""
    if path.length > max_length:
        raise ValueError(f"path of length {path.length} exceeds max length {max_length}")
    n, n_rel = table.n, table.n_rel
    out = np.zeros(n + max_length * (n_rel + n))
    out[:n] = table.entities[path.start]
    for i, (r, e) in enumerate(path.steps):
        base = n + i * (n_rel + n)
        out[base:base + n_rel] = table.relations[r]
        out[base + n_rel:base + n_rel + n] = table.entities[e]
    return out


def featurize_paths(paths, table: EmbeddingTable, max_length: int) -> np.ndarray:
    return np.array([featurize_path(p, table, max_length) for p in paths]).reshape(
        len(paths), table.n + max_length * (table.n_rel + table.n))


def comparator_logits(net: ComparatorNetwork, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != comparator input {net.input_dim}")
    out, _ = nn.mlp_forward(net.layers, x)
    return out[:, 0]


def comparator_forward(net: ComparatorNetwork, features) -> np.ndarray | float:
    """Probability that each path came from the expert."""
    out = nn.sigmoid(comparator_logits(net, features))
    return float(out[0]) if np.ndim(features) == 1 else out


def comparator_objective(net: ComparatorNetwork, expert, generated,
                         expert_weights=None, generated_weights=None) -> float:
    """``E_expert[log D] + E_generated[log(1 - D)]``; uniform weights by default."""
    ze = comparator_logits(net, expert)
    zg = comparator_logits(net, generated)
    we = _weights(expert_weights, len(ze))
    wg = _weights(generated_weights, len(zg))
    return float(-(we @ nn.softplus(-ze)) - wg @ nn.softplus(zg))


def _weights(w, k: int) -> np.ndarray:
    if w is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(w, dtype=float)
    if w.shape != (k,):
        raise ValueError(f"expected {k} weights, got shape {w.shape}")
    return w


def comparator_grad(net: ComparatorNetwork, expert, generated,
                    expert_weights=None, generated_weights=None):
    """Ascent direction of :func:`comparator_objective`; returns (objective, grads)."""
    expert = np.atleast_2d(np.asarray(expert, dtype=float))
    generated = np.atleast_2d(np.asarray(generated, dtype=float))
    if expert.shape[0] == 0 or generated.size == 0 or generated.shape[0] == 0:
        raise ValueError("comparator batches must be non-empty")
    we = _weights(expert_weights, len(expert))
    wg = _weights(generated_weights, len(generated))
    x = np.vstack([expert, generated])
    if x.shape[1] != net.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != comparator input {net.input_dim}")
    out, cache = nn.mlp_forward(net.layers, x)
    z = out[:, 0]
    d = nn.sigmoid(z)
    k = len(expert)
    # d/dz log D = 1 - D ; d/dz log(1 - D) = -D
    dz = np.concatenate([we * (1.0 - d[:k]), -wg * d[k:]])
    grads = nn.mlp_backward(net.layers, cache, dz[:, None])
    value = float(-(we @ nn.softplus(-z[:k])) - wg @ nn.softplus(z[k:]))
    return value, grads


def optimal_comparator_value(rho_expert: float, rho_generated: float) -> float:
    if rho_expert < 0 or rho_generated < 0:
        raise ValueError("densities must be non-negative")
    total = rho_expert + rho_generated
    if total == 0:
        raise ValueError("optimal comparator is undefined where both densities vanish")
    return rho_expert / total


def _aligned(p: PathDistribution | Mapping, q: PathDistribution | Mapping):
    pm = p.as_mapping() if isinstance(p, PathDistribution) else dict(p)
    qm = q.as_mapping() if isinstance(q, PathDistribution) else dict(q)
    keys = sorted(set(pm) | set(qm))
    if not keys:
        raise ValueError("both distributions are empty")
    pv = np.array([pm.get(k, 0.0) for k in keys], dtype=float)
    qv = np.array([qm.get(k, 0.0) for k in keys], dtype=float)
    if np.any(pv < 0) or np.any(qv < 0):
        raise ValueError("probabilities must be non-negative")
    return pv, qv


def semantic_distance(p, q) -> tuple[float, float]:
    """Return ``(gamma, d_js)`` over the union support of ``p`` and ``q``.

    ``gamma = sum p log(p/(p+q)) + sum q log(q/(p+q))`` with zero terms
    dropped, and ``d_js = (gamma + log 4) / 2``. Accepts
    :class:`PathDistribution` objects or mappings from path keys.
    """
    pv, qv = _aligned(p, q)
    s = pv + qv
    gamma = 0.0
    for v in (pv, qv):
        nz = v > 0
        gamma += float(np.sum(v[nz] * np.log(v[nz] / s[nz])))
    d_js = (gamma + LOG4) / 2.0
    # clamp rounding noise to the valid range
    d_js = min(max(d_js, 0.0), math.log(2.0))
    gamma = min(max(gamma, -LOG4), 0.0)
    return gamma, d_js


def value_estimate(net: ComparatorNetwork, expert_features, generated_features) -> float:
    """Sample estimate of the comparator objective."""
    return comparator_objective(net, expert_features, generated_features)
