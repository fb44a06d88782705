"""Adversarial imitation of expert reasoning paths.

Each iteration rolls out the policy from the starts of sampled expert
paths, takes one ascent step on the comparator and one REINFORCE step on the
policy with reward ``log D(path)``.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .comparator import (ComparatorNetwork, PathDistribution, comparator_grad,
                         comparator_logits, featurize_paths, semantic_distance)
from .encoder import EmbeddingTable
from .interpreter import PolicyNetwork, batch_policy_grad, path_distribution, rollout_batch
from .kg_store import ExpertPathSet, KnowledgeGraph

logger = logging.getLogger(__name__)

METRICS = ("exact_match", "terminal_hit")
LOG_COLUMNS = ("iter", "comp_loss", "interp_loss", "gamma", "d_js", "accuracy", "seconds")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"{what} became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    """Settings for :func:`train`.

    ``distance`` selects how the logged path distance and accuracy are
    computed: ``exact`` enumerates every path the policy can generate (toy
    graphs), ``sampled`` uses ``eval_samples`` fresh rollouts.

    ``entropy_coef`` weights a per-step policy entropy bonus that decays
    linearly to zero over the first ``entropy_anneal`` fraction of the run
    (1.0 means over the whole run). Without it the policy collapses onto a
    few expert paths early.
    """

    iterations: int = 500
    rollouts: int = 256
    comparator_lr: float = 3e-2
    policy_lr: float = 1e-2
    baseline_decay: float = 0.9
    max_length: int = 3
    seed: int = 0
    hidden: int = 64
    stop_action: bool = True
    early_stop_djs: float = 0.02
    early_stop_patience: int = 20
    distance: str = "exact"
    eval_samples: int = 512
    metric: str = "exact_match"
    policy_optimizer: str = "adam"
    entropy_coef: float = 0.3
    entropy_anneal: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.rollouts < 1 or self.max_length < 1 or self.hidden < 1:
            raise ValueError("rollouts, max_length and hidden must be >= 1")
        if self.comparator_lr <= 0 or self.policy_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.baseline_decay < 1:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if self.distance not in ("exact", "sampled"):
            raise ValueError("distance must be 'exact' or 'sampled'")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, include_time: bool = True) -> str:
        cols = LOG_COLUMNS if include_time else LOG_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["iter"]] + [repr(float(r[c])) for c in cols[1:]])
        return buf.getvalue()

    def save(self, path, include_time: bool = True) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv(include_time))

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        log = cls()
        for r in csv.DictReader(io.StringIO(text)):
            log.append(**{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()})
        return log


# ---------------------------------------------------------------------------
# distributions and accuracy


def expert_distribution(experts: ExpertPathSet) -> PathDistribution:
    return PathDistribution.from_paths(experts.paths)


def start_weights(experts: ExpertPathSet) -> dict[int, float]:
    counts = Counter(p.start for p in experts.paths)
    return {s: c / experts.count for s, c in sorted(counts.items())}


def policy_distribution(net: PolicyNetwork, kg: KnowledgeGraph, table: EmbeddingTable,
                        weights: dict[int, float], max_length: int) -> PathDistribution:
    """Exact generated distribution with starts drawn from ``weights``."""
    out: dict[tuple[int, ...], float] = {}
    for s, w in weights.items():
        for k, p in path_distribution(net, kg, table, s, max_length).items():
            out[k] = out.get(k, 0.0) + w * p
    return PathDistribution.from_mapping(out)


def empirical_path_distribution(net: PolicyNetwork, starts, samples: int, kg: KnowledgeGraph,
                                table: EmbeddingTable, max_length: int,
                                seed: int | np.random.Generator = 0) -> PathDistribution:
    """Frequencies of ``samples`` rollouts, cycling through ``starts``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    starts = list(starts)
    rng = np.random.default_rng(seed)
    chosen = [starts[i % len(starts)] for i in range(samples)]
    ros = rollout_batch(net, kg, table, chosen, max_length, rng)
    return PathDistribution.from_paths(r.path for r in ros)


def _expert_targets(experts: ExpertPathSet, metric: str) -> dict[int, set]:
    targets: dict[int, set] = {}
    for p in experts.paths:
        targets.setdefault(p.start, set()).add(p.key() if metric == "exact_match" else p.end)
    return targets


def _hit(key: tuple[int, ...], targets: dict[int, set], metric: str) -> bool:
    wanted = targets.get(key[0], set())
    return (key in wanted) if metric == "exact_match" else (key[-1] in wanted)


def evaluate_accuracy(net: PolicyNetwork, experts: ExpertPathSet, metric: str, samples: int,
                      kg: KnowledgeGraph, table: EmbeddingTable, max_length: int,
                      seed: int | np.random.Generator = 0, exact: bool = False) -> float:
    """Share of generated paths that match the experts of their start.

    ``exact_match`` needs the whole id sequence to be one of the expert paths
    for that start; ``terminal_hit`` only needs the final entity to match.
    Starts follow the expert start frequencies. With ``exact=True`` the
    expectation is computed by enumeration instead of ``samples`` rollouts.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if experts.count == 0:
        raise ValueError("expert set is empty")
    targets = _expert_targets(experts, metric)
    if exact:
        dist = policy_distribution(net, kg, table, start_weights(experts), max_length)
        return float(sum(p for path, p in zip(dist.support, dist.probabilities)
                         if _hit(path.key(), targets, metric)))
    dist = empirical_path_distribution(net, [p.start for p in experts.paths], samples, kg, table,
                                       max_length, seed)
    return float(sum(p for path, p in zip(dist.support, dist.probabilities)
                     if _hit(path.key(), targets, metric)))


# ---------------------------------------------------------------------------
# training


def _check_experts(kg: KnowledgeGraph, experts: ExpertPathSet, max_length: int) -> None:
    if experts.count == 0:
        raise ValueError("expert set is empty")
    for p in experts.paths:
        if not p.is_valid(kg, max_length):
            raise ValueError(f"expert path {p.key()} is not valid in the graph")


def train(kg: KnowledgeGraph, experts: ExpertPathSet, table: EmbeddingTable,
          cfg: TrainConfig, reference=None, policy: PolicyNetwork | None = None):
    """Fit a policy to the expert paths; returns ``(policy, comparator, log)``.

    ``reference`` optionally replaces the expert-set distribution as the
    target of the logged path distance (for example the exact distribution
    of the expert mechanism).
    """
    _check_experts(kg, experts, cfg.max_length)
    L = cfg.max_length
    rng = np.random.default_rng(cfg.seed)
    if policy is None:
        policy = PolicyNetwork(table.n, kg.num_relations, cfg.hidden, stop=cfg.stop_action,
                               seed=cfg.seed)
    comp = ComparatorNetwork(table.n, table.n_rel, L, cfg.hidden, seed=cfg.seed + 1)
    log = TrainLog()
    if cfg.iterations == 0:
        return policy, comp, log

    pol_opt = (nn.Adam if cfg.policy_optimizer == "adam" else nn.SGD)(policy.layers, cfg.policy_lr)
    comp_opt = nn.Adam(comp.layers, cfg.comparator_lr)
    expert_feats = featurize_paths(experts.paths, table, L)
    target = expert_distribution(experts) if reference is None else reference
    weights = start_weights(experts)
    all_starts = [p.start for p in experts.paths]
    baseline = None
    streak = 0
    t0 = time.perf_counter()

    for it in range(cfg.iterations):
        idx = rng.integers(experts.count, size=cfg.rollouts)
        ros = rollout_batch(policy, kg, table, [experts.paths[i].start for i in idx], L, rng)
        gen_feats = featurize_paths([r.path for r in ros], table, L)

        value, grads = comparator_grad(comp, expert_feats[idx], gen_feats)
        comp_opt.step(grads, ascent=True)
        if not np.isfinite(value):
            raise TrainingDivergedError(it, "comparator loss")

        # log D, computed stably from the updated comparator
        reward = -nn.softplus(-comparator_logits(comp, gen_feats))
        interp_loss = -float(reward.mean())
        if baseline is None:
            baseline = float(reward.mean())
        ent = cfg.entropy_coef * max(0.0, 1.0 - it / (cfg.entropy_anneal * cfg.iterations))
        grads = batch_policy_grad(policy, ros, reward - baseline, ent)
        pol_opt.step(grads, ascent=True)
        baseline = cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * float(reward.mean())
        if not np.isfinite(interp_loss):
            raise TrainingDivergedError(it, "interpreter loss")

        if cfg.distance == "exact":
            gen = policy_distribution(policy, kg, table, weights, L)
            accuracy = evaluate_accuracy(policy, experts, cfg.metric, 0, kg, table, L, exact=True)
        else:
            gen = empirical_path_distribution(policy, all_starts, cfg.eval_samples, kg, table, L, rng)
            accuracy = evaluate_accuracy(policy, experts, cfg.metric, cfg.eval_samples, kg, table,
                                         L, rng)
        gamma, d_js = semantic_distance(target, gen)
        log.append(iter=it, comp_loss=-value, interp_loss=interp_loss, gamma=gamma, d_js=d_js,
                   accuracy=accuracy, seconds=time.perf_counter() - t0)

        streak = streak + 1 if d_js < cfg.early_stop_djs else 0
        if streak >= cfg.early_stop_patience:
            logger.info("early stop at iteration %d (d_js %.4f)", it, d_js)
            break
    logger.debug("trained %d iterations, final d_js %.4f", len(log), log.rows[-1]["d_js"])
    return policy, comp, log
