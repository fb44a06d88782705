"""Destination-side reasoning policy: states, action masks, rollouts, gradients.

The policy picks a relation at each step from the current entity; the next
entity is drawn uniformly among the unvisited tails reached through that
relation. An optional stop action (the last logit) lets paths end before the
maximum length.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .encoder import EmbeddingTable
from .kg_store import ExplicitSemantics, KnowledgeGraph, SemanticPath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class State:
    """A partial path; ``vector`` replaces the current entity in soft mode."""

    path: SemanticPath
    vector: np.ndarray | None = field(default=None, compare=False)

    @property
    def t(self) -> int:
        return self.path.length

    @property
    def current(self) -> int:
        return self.path.end


@dataclass(frozen=True)
class RolloutConfig:
    max_length: int = 3
    rollouts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_length < 0:
            raise ValueError("max_length must be non-negative")
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")


class PolicyNetwork:
    """MLP over ``[current; start; t/L]`` with a softmax over relations.

    ``stop=True`` appends one extra output for ending the path early.
    """

    def __init__(self, n: int, num_relations: int, hidden: int = 64, num_hidden: int = 2,
                 stop: bool = True, seed: int = 0, layers=None):
        self.n = n
        self.num_relations = num_relations
        self.hidden = hidden
        self.stop = stop
        sizes = [2 * n + 1] + [hidden] * num_hidden + [self.num_outputs]
        if layers is None:
            layers = nn.init_layers(sizes, np.random.default_rng(seed), out_scale=0.1)
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return 2 * self.n + 1

    @property
    def num_outputs(self) -> int:
        return self.num_relations + int(self.stop)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "PolicyNetwork":
        layers = [[w.copy(), b.copy()] for w, b in self.layers]
        return PolicyNetwork(self.n, self.num_relations, self.hidden, self.num_layers - 1,
                             self.stop, layers=layers)

    def shapes(self) -> list[tuple]:
        return [p.shape for layer in self.layers for p in layer]

    def dumps(self) -> str:
        buf = io.StringIO()
        header = [self.num_layers, self.input_dim, self.hidden, self.num_relations]
        if self.stop:
            header.append("stop")
        nn.write_layers(buf, header, self.layers)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "PolicyNetwork":
        lines = text.splitlines()
        head = lines[0].split()
        m, input_dim, hidden, num_rel = (int(v) for v in head[:4])
        stop = len(head) > 4 and head[4] == "stop"
        if (input_dim - 1) % 2:
            raise ValueError(f"policy input dimension {input_dim} is not 2n+1")
        net = cls((input_dim - 1) // 2, num_rel, hidden, m - 1, stop, layers=[])
        sizes = [input_dim] + [hidden] * (m - 1) + [net.num_outputs]
        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(fan_out, fan_in), (fan_out,)]
        net.layers = nn.read_layers(lines[1:], shapes)
        return net

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "PolicyNetwork":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


# ---------------------------------------------------------------------------
# states and masks


def featurize_state(s: State, table: EmbeddingTable, max_length: int) -> np.ndarray:
    cur = table.entities[s.current] if s.vector is None else np.asarray(s.vector, dtype=float)
    frac = s.t / max_length if max_length > 0 else 0.0
    return np.concatenate([cur, table.entities[s.path.start], [frac]])


def valid_actions(s: State, kg: KnowledgeGraph) -> np.ndarray:
    """Relations with at least one edge to an entity not yet on the path."""
    mask = np.zeros(kg.num_relations, dtype=bool)
    seen = set(s.path.entities)
    for r, e in kg.neighbors(s.current):
        if e not in seen:
            mask[r] = True
    return mask


def action_mask(net: PolicyNetwork, s: State, kg: KnowledgeGraph, max_length: int) -> np.ndarray:
    """Relation mask extended with the stop action when the net has one.

    No action is allowed once the path has reached ``max_length``. Stopping
    is allowed from the first step on, but only while some relation is also
    valid; a dead end terminates the path on its own.
    """
    rel = valid_actions(s, kg) if s.t < max_length else np.zeros(kg.num_relations, dtype=bool)
    if not net.stop:
        return rel
    return np.append(rel, bool(rel.any()) and s.t >= 1)


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def _full_mask(net: PolicyNetwork, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] == net.num_outputs:
        return mask
    if net.stop and mask.shape[-1] == net.num_relations:
        pad = np.zeros(mask.shape[:-1] + (1,), dtype=bool)
        return np.concatenate([mask, pad], axis=-1)
    raise ValueError(f"mask has {mask.shape[-1]} entries, policy has {net.num_outputs} outputs")


def policy_logits(net: PolicyNetwork, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != policy input {net.input_dim}")
    out, _ = nn.mlp_forward(net.layers, x)
    return out


def policy_forward(net: PolicyNetwork, features, mask) -> np.ndarray | None:
    """Masked action distribution, or ``None`` when no action is allowed.

    Accepts a single feature vector or a batch; a batch must have at least
    one allowed action per row.
    """
    mask = _full_mask(net, mask)
    single = np.ndim(features) == 1
    if single and not mask.any():
        return None
    if not single and not mask.any(axis=-1).all():
        raise ValueError("every row of a batched mask needs an allowed action")
    p = _masked_softmax(policy_logits(net, features), np.atleast_2d(mask))
    return p[0] if single else p


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Rollout:
    """A generated path plus what is needed to differentiate its log-prob."""

    path: SemanticPath
    features: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)


def _tails(kg: KnowledgeGraph, e: int, r: int, seen) -> list[int]:
    return [t for rr, t in kg.neighbors(e) if rr == r and t not in seen]


def rollout_batch(net: PolicyNetwork, kg: KnowledgeGraph, table: EmbeddingTable,
                  starts: list[ExplicitSemantics | int], max_length: int,
                  rng: np.random.Generator) -> list[Rollout]:
    """Roll out one path per start, evaluating the policy on all live paths at once."""
    outs = [Rollout(SemanticPath(s.entities[0] if isinstance(s, ExplicitSemantics) else int(s)))
            for s in starts]
    live = list(range(len(outs)))
    while live:
        feats, masks, keep = [], [], []
        for i in live:
            s = State(outs[i].path)
            m = action_mask(net, s, kg, max_length)
            if m.any():
                keep.append(i)
                feats.append(featurize_state(s, table, max_length))
                masks.append(m)
        if not keep:
            break
        probs = policy_forward(net, np.array(feats), np.array(masks))
        u = rng.random(len(keep))
        cum = np.cumsum(probs, axis=1)
        actions = np.minimum((cum < (u * cum[:, -1])[:, None]).sum(axis=1), probs.shape[1] - 1)
        live = []
        for i, f, m, a in zip(keep, feats, masks, actions):
            a = int(a)
            ro = outs[i]
            ro.features.append(f)
            ro.masks.append(m)
            ro.actions.append(a)
            if a == net.num_relations:
                continue
            tails = _tails(kg, ro.path.end, a, set(ro.path.entities))
            ro.path = ro.path.extend(a, tails[int(rng.integers(len(tails)))])
            live.append(i)
    return outs


def rollout(net: PolicyNetwork, kg: KnowledgeGraph, table: EmbeddingTable,
            v: ExplicitSemantics, cfg: RolloutConfig, rng: np.random.Generator) -> SemanticPath:
    """Sample one reasoning path from the explicit semantics ``v``."""
    return rollout_batch(net, kg, table, [v], cfg.max_length, rng)[0].path


def path_distribution(net: PolicyNetwork, kg: KnowledgeGraph, table: EmbeddingTable,
                      start: int, max_length: int) -> dict[tuple[int, ...], float]:
    """Exact probability of every path the policy can generate from ``start``."""
    out: dict[tuple[int, ...], float] = {}

    def visit(path: SemanticPath, prob: float):
        s = State(path)
        m = action_mask(net, s, kg, max_length)
        if not m.any():
            out[path.key()] = out.get(path.key(), 0.0) + prob
            return
        p = policy_forward(net, featurize_state(s, table, max_length), m)
        seen = set(path.entities)
        for a in np.flatnonzero(p > 0):
            a = int(a)
            if a == net.num_relations:
                out[path.key()] = out.get(path.key(), 0.0) + prob * p[a]
                continue
            tails = _tails(kg, path.end, a, seen)
            for t in tails:
                visit(path.extend(a, t), prob * p[a] / len(tails))

    visit(SemanticPath(start), 1.0)
    return out


# ---------------------------------------------------------------------------
# gradients


def log_prob_and_grad(net: PolicyNetwork, features, masks, actions, weights,
                      entropy_coef: float = 0.0):
    """Weighted sum of log-probabilities of ``actions`` and its gradient.

    ``entropy_coef`` adds that multiple of the summed action entropy of the
    visited states to the objective.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    masks = np.atleast_2d(_full_mask(net, masks))
    actions = np.asarray(actions, dtype=int)
    weights = np.asarray(weights, dtype=float)
    out, cache = nn.mlp_forward(net.layers, x)
    p = _masked_softmax(out, masks)
    rows = np.arange(len(actions))
    logp = np.log(p[rows, actions])
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    dout = weights[:, None] * (onehot - p)
    value = float(weights @ logp)
    if entropy_coef:
        logs = np.log(np.where(p > 0, p, 1.0))
        ent = -(p * logs).sum(axis=1)
        # dH/dz_j = -p_j (log p_j + H)
        dout += entropy_coef * (-p * (logs + ent[:, None]))
        value += entropy_coef * float(ent.sum())
    grads = nn.mlp_backward(net.layers, cache, dout)
    return value, grads


def policy_grad(net: PolicyNetwork, trajectory, reward: float, baseline: float = 0.0):
    """REINFORCE gradient of one trajectory.

    ``trajectory`` is a :class:`Rollout` or a list of ``(features, mask,
    action)`` triples. Returns ``sum_t grad log pi(a_t | s_t) * (reward -
    baseline)`` shaped like ``net.layers``.
    """
    if not np.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    if isinstance(trajectory, Rollout):
        steps = list(zip(trajectory.features, trajectory.masks, trajectory.actions))
    else:
        steps = list(trajectory)
    if not steps:
        raise ValueError("trajectory is empty")
    feats, masks, acts = zip(*steps)
    adv = np.full(len(acts), reward - baseline)
    return log_prob_and_grad(net, np.array(feats), np.array([_full_mask(net, m) for m in masks]),
                             acts, adv)[1]


def batch_policy_grad(net: PolicyNetwork, rollouts: list[Rollout], advantages,
                      entropy_coef: float = 0.0) -> list:
    """Mean over rollouts of the REINFORCE gradient with per-path advantages.

    Paths that never chose an action contribute nothing. ``entropy_coef``
    adds the gradient of the visited states' action entropy.
    """
    feats, masks, acts, w = [], [], [], []
    for ro, adv in zip(rollouts, advantages):
        for f, m, a in zip(ro.features, ro.masks, ro.actions):
            feats.append(f)
            masks.append(m)
            acts.append(a)
            w.append(adv)
    if not feats:
        return [[np.zeros_like(p) for p in layer] for layer in net.layers]
    grads = log_prob_and_grad(net, np.array(feats), np.array(masks), acts, w, entropy_coef)[1]
    scale = 1.0 / len(rollouts)
    return [[g * scale for g in layer] for layer in grads]
