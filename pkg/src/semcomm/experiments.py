"""Desk-scale experiment runners; each returns a :class:`Table` ready for CSV."""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import io
import json
import logging
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np

from .channel import ChannelConfig, measure_signal_power, transmit
from .comparator import PathDistribution
from .decoder import (constrained_sequence_recover, entity_prefix, nearest_entities,
                      reachable_entities, soft_constrained_recover)
from .encoder import EmbeddingTable, EncoderConfig, train_encoder
from .interpreter import PolicyNetwork
from .kg_store import (ExpertPathSet, KnowledgeGraph, builtin_graph, expert_mechanism_distribution,
                       generate_expert_paths, load_triples_file, sample_skg)
from .trainer import METRICS, TrainConfig, TrainingDivergedError, evaluate_accuracy, train

logger = logging.getLogger(__name__)

MODES = ("none", "hard", "soft")
CHANNELS = ("awgn", "rayleigh")
# graphs up to this many entities use exact path enumeration when training
EXACT_ENTITY_LIMIT = 50


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    out: str = "results"
    skg_budget: int = 200
    n: int = 50
    n_rel: int | None = None
    margin: float = 1.0
    norm: str = "l1"
    encoder_epochs: int = 1500
    max_length: int = 3
    lengths: tuple[int, ...] = (1, 2, 3, 4, 5)
    experts: int = 50
    expert_counts: tuple[int, ...] = (5, 10, 20, 50)
    convergence_tau: float = 0.1
    iterations: int = 300
    rollouts: int = 256
    hidden: int = 64
    policy_lr: float = 1e-2
    comparator_lr: float = 3e-2
    entropy_coef: float = 0.3
    decoder_entropy_coef: float = 3.0
    eval_samples: int = 2000
    log_samples: int = 128
    metrics: tuple[str, ...] = METRICS
    snr_list: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    channels: tuple[str, ...] = ("awgn",)
    packing: str = "real"
    modes: tuple[str, ...] = MODES
    ser_symbols: int = 10_000
    top_p: float = 0.95
    candidates: int = 3
    beam: int = 8
    dims: tuple[int, ...] = (2, 4, 8, 16, 32, 64, 128)
    dim_snr: float = 20.0
    dim_tolerance: float = 0.005
    dim_epochs: int = 300
    timing_sizes: tuple[int, ...] = (50, 100, 200, 400)
    timing_epochs: int = 50
    timing_batch: int = 4
    timing_repeats: int = 3
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        for name in ("lengths", "expert_counts", "metrics", "snr_list", "channels", "modes", "dims",
                     "timing_sizes", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if min(self.lengths) < 1 or self.max_length < 1:
            raise ConfigError("path lengths must be >= 1")
        if min(self.expert_counts) < 1 or self.experts < 1:
            raise ConfigError("expert counts must be >= 1")
        if min(self.dims) < 1 or self.n < 1:
            raise ConfigError("dimensions must be >= 1")
        if min(self.timing_sizes) < 1:
            raise ConfigError("timing sizes must be >= 1")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; choose from {MODES}")
        for c in self.channels:
            if c not in CHANNELS:
                raise ConfigError(f"unknown channel {c!r}; choose from {CHANNELS}")
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r}; choose from {METRICS}")
        if self.packing not in ("real", "complex"):
            raise ConfigError("packing must be 'real' or 'complex'")
        if self.norm not in ("l1", "l2"):
            raise ConfigError("norm must be 'l1' or 'l2'")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must lie in (0, 1]")
        if any(math.isnan(s) for s in self.snr_list):
            raise ConfigError("SNR values must not be NaN")

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, v in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, kinds[key], v)
        return cls(**kwargs)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key: str, kind: str, v: Any) -> Any:
    try:
        if kind.startswith("tuple"):
            items = v.split(",") if isinstance(v, str) else list(v)
            inner = int if "int" in kind else float if "float" in kind else str
            return tuple(inner(str(x).strip()) for x in items if str(x).strip() != "")
        if kind.startswith("int"):
            if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
                if "None" in kind:
                    return None
            return int(v)
        if kind == "float":
            return float(v)
        if kind.startswith("str"):
            if v is None or (isinstance(v, str) and v.strip().lower() == "none" and "None" in kind):
                return None
            return str(v).strip()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {v!r}") from exc
    return v


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_config_file(path) -> dict[str, Any]:
    """Read a ``key = value`` file or a JSON run manifest (its ``config`` block)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return dict(data.get("config", data))
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# tables


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def save(self, directory) -> str:
        path = os.path.join(directory, f"{self.name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        return path

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    @classmethod
    def from_csv(cls, name: str, text: str) -> "Table":
        """Parse a table written by :meth:`to_csv` using the schema for ``name``."""
        schema = SCHEMAS[name]
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != tuple(c for c, _ in schema):
            raise ValueError(f"{name}: header {header} does not match schema")
        kinds = dict(schema)
        rows = [{c: _parse(kinds[c], v) for c, v in zip(header, line)} for line in reader]
        return cls(name, header, rows)


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(kind: type, v: str) -> Any:
    if kind is bool:
        return v == "1"
    return kind(v)


SCHEMAS: dict[str, tuple[tuple[str, type], ...]] = {
    "accuracy_vs_length": (("dataset", str), ("max_length", int), ("metric", str),
                           ("accuracy_mean", float), ("accuracy_std", float), ("runs", int),
                           ("failures", int)),
    "expert_count_sweep": (("expert_count", int), ("final_djs", float), ("final_djs_std", float),
                           ("iterations", float), ("converged_runs", int), ("runs", int),
                           ("converged", bool)),
    "ser_vs_snr": (("snr_db", float), ("mode", str), ("decoder", str), ("channel", str),
                   ("dimension", int), ("ser", float), ("errors", int), ("symbols", int), ("skg_density", float)),
    "dimension_sweep": (("dimension", int), ("channel", str), ("snr_db", float), ("accuracy", float),
                        ("symbols", int), ("best", bool)),
    "encoder_timing": (("K", int), ("n", int), ("seconds", float), ("r2", float)),
    "encoder_loss": (("epoch", int), ("loss", float)),
    "encoder_summary": (("entities", int), ("relations", int), ("triples", int), ("n", int),
                        ("norm", str), ("margin", float), ("margin_fraction", float)),
}


def new_table(name: str) -> Table:
    return Table(name, tuple(c for c, _ in SCHEMAS[name]))


# ---------------------------------------------------------------------------
# data and model preparation


@functools.lru_cache(maxsize=4)
def _builtin(name: str) -> KnowledgeGraph:
    return builtin_graph(name)


def load_dataset(dataset: str | None) -> KnowledgeGraph:
    """A built-in name (``toy:*``, ``synthetic:*``) or a triples file path."""
    if not dataset:
        raise ConfigError("no dataset given (--dataset)")
    if dataset.startswith(("toy:", "synthetic:")):
        try:
            return _builtin(dataset)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    if not os.path.isfile(dataset):
        raise ConfigError(f"dataset file not found: {dataset} (--dataset)")
    return load_triples_file(dataset)


def desk_graph(cfg: ExperimentConfig, seed: int) -> KnowledgeGraph:
    """The dataset itself when small enough, otherwise a seeded SKG sample."""
    kg = load_dataset(cfg.dataset)
    if kg.num_entities <= cfg.skg_budget:
        return kg
    return sample_skg(kg, cfg.skg_budget, seed)


def fit_encoder(kg: KnowledgeGraph, cfg: ExperimentConfig, seed: int, n: int | None = None,
                epochs: int | None = None):
    ecfg = EncoderConfig(n=n or cfg.n, n_rel=None if n else cfg.n_rel, margin=cfg.margin,
                         norm=cfg.norm, epochs=cfg.encoder_epochs if epochs is None else epochs,
                         seed=seed)
    return train_encoder(kg, ecfg)


def train_config(cfg: ExperimentConfig, kg: KnowledgeGraph, max_length: int, seed: int,
                 entropy_coef: float | None = None) -> TrainConfig:
    exact = kg.num_entities <= EXACT_ENTITY_LIMIT
    return TrainConfig(iterations=cfg.iterations, rollouts=cfg.rollouts,
                       comparator_lr=cfg.comparator_lr, policy_lr=cfg.policy_lr,
                       max_length=max_length, seed=seed, hidden=cfg.hidden,
                       distance="exact" if exact else "sampled", eval_samples=cfg.log_samples,
                       entropy_coef=cfg.entropy_coef if entropy_coef is None else entropy_coef)


def fit_policy(kg: KnowledgeGraph, table: EmbeddingTable, cfg: ExperimentConfig, seed: int,
               max_length: int | None = None, count: int | None = None, reference=None):
    L = cfg.max_length if max_length is None else max_length
    experts = generate_expert_paths(kg, L, cfg.experts if count is None else count, seed)
    policy, comp, log = train(kg, experts, table, train_config(cfg, kg, L, seed), reference)
    return experts, policy, comp, log


# ---------------------------------------------------------------------------
# accuracy vs path length


def run_accuracy_vs_length(cfg: ExperimentConfig) -> Table:
    """Mean and spread over seeds of interpreter accuracy for each max length."""
    scores: dict[tuple[int, str], list[float]] = {}
    failures: dict[int, int] = {L: 0 for L in cfg.lengths}
    for seed in cfg.seeds:
        kg = desk_graph(cfg, seed)
        table, _ = fit_encoder(kg, cfg, seed)
        exact = kg.num_entities <= EXACT_ENTITY_LIMIT
        for L in cfg.lengths:
            try:
                experts, policy, _, _ = fit_policy(kg, table, cfg, seed, max_length=L)
            except (TrainingDivergedError, ValueError) as exc:
                logger.warning("length %d seed %d failed: %s", L, seed, exc)
                failures[L] += 1
                continue
            for metric in cfg.metrics:
                acc = evaluate_accuracy(policy, experts, metric, cfg.eval_samples, kg, table, L,
                                        seed=seed, exact=exact)
                scores.setdefault((L, metric), []).append(acc)
    out = new_table("accuracy_vs_length")
    for L in cfg.lengths:
        for metric in cfg.metrics:
            vals = np.array(scores.get((L, metric), []))
            out.rows.append(dict(dataset=cfg.dataset, max_length=L, metric=metric,
                                 accuracy_mean=float(vals.mean()) if len(vals) else float("nan"),
                                 accuracy_std=float(vals.std()) if len(vals) else float("nan"),
                                 runs=len(vals), failures=failures[L]))
    return out


# ---------------------------------------------------------------------------
# expert-count sweep


def mechanism_reference(kg: KnowledgeGraph, max_length: int, seed: int) -> PathDistribution:
    """Exact expert-mechanism distribution on small graphs, a large sample otherwise."""
    if kg.num_entities <= EXACT_ENTITY_LIMIT:
        return PathDistribution.from_mapping(expert_mechanism_distribution(kg, max_length))
    return PathDistribution.from_paths(generate_expert_paths(kg, max_length, 5000, seed + 10_000).paths)


def run_expert_count_sweep(cfg: ExperimentConfig) -> Table:
    """Final distance to the expert mechanism and run length per expert count.

    A run counts as converged when its final distance to the mechanism is
    below ``convergence_tau``; a count is flagged converged when most seeds
    converge.
    """
    finals: dict[int, list[float]] = {c: [] for c in cfg.expert_counts}
    iters: dict[int, list[int]] = {c: [] for c in cfg.expert_counts}
    for seed in cfg.seeds:
        kg = desk_graph(cfg, seed)
        table, _ = fit_encoder(kg, cfg, seed)
        ref = mechanism_reference(kg, cfg.max_length, seed)
        for count in cfg.expert_counts:
            try:
                _, _, _, log = fit_policy(kg, table, cfg, seed, count=count, reference=ref)
            except (TrainingDivergedError, ValueError) as exc:
                logger.warning("count %d seed %d failed: %s", count, seed, exc)
                continue
            finals[count].append(float(log.rows[-1]["d_js"]))
            iters[count].append(len(log))
    out = new_table("expert_count_sweep")
    for count in cfg.expert_counts:
        d = np.array(finals[count])
        ok = int(np.sum(d < cfg.convergence_tau))
        out.rows.append(dict(expert_count=count,
                             final_djs=float(d.mean()) if len(d) else float("nan"),
                             final_djs_std=float(d.std()) if len(d) else float("nan"),
                             iterations=float(np.mean(iters[count])) if iters[count] else float("nan"),
                             converged_runs=ok, runs=len(d), converged=2 * ok > len(d)))
    return out


# ---------------------------------------------------------------------------
# symbol error rate


@dataclass
class SerInputs:
    """Graph, trained models and the source's expert paths for one seed."""

    kg: KnowledgeGraph
    table: EmbeddingTable | None
    policy: PolicyNetwork | None
    seed: int
    experts: ExpertPathSet | None = None


def source_paths(cfg: ExperimentConfig, kg: KnowledgeGraph, seed: int) -> ExpertPathSet:
    """The expert paths known to the source, identical to those used for training."""
    return generate_expert_paths(kg, cfg.max_length, cfg.experts, seed)


def prepare_ser_inputs(cfg: ExperimentConfig, seed: int) -> SerInputs:
    """Train the table and the decoding policy for one seed.

    The decoding policy only has to keep the true next relation inside its
    top-p mass, so it is trained with the stronger ``decoder_entropy_coef``.
    """
    kg = desk_graph(cfg, seed)
    table, _ = fit_encoder(kg, cfg, seed)
    experts = source_paths(cfg, kg, seed)
    policy = None
    if any(m != "none" for m in cfg.modes):
        tcfg = train_config(cfg, kg, cfg.max_length, seed, cfg.decoder_entropy_coef)
        policy = train(kg, experts, table, tcfg)[0]
    return SerInputs(kg, table, policy, seed, experts)


def transmitted_paths(experts: ExpertPathSet, symbols: int, seed: int) -> list[list[int]]:
    """Expert entity sequences drawn with replacement until ``symbols`` entities are reached."""
    if experts.count == 0:
        raise ValueError("no expert paths to transmit")
    rng = np.random.default_rng(seed + 20_000)
    chosen, total = [], 0
    while total < symbols:
        p = experts.paths[int(rng.integers(experts.count))]
        chosen.append(list(p.entities))
        total += len(p.entities)
    return chosen


def decode_paths(mode: str, vectors: np.ndarray, lengths: list[int], inputs: SerInputs,
                 cfg: ExperimentConfig, reachable=None) -> np.ndarray:
    """Decoded entity id per received vector.

    ``hard`` runs the graph- and policy-constrained beam decoder over each
    path; ``soft`` keeps the start's nearest entity and grounds later hops on
    the candidates of the raw previous vector.
    """
    table, kg = inputs.table, inputs.kg
    plain, _ = nearest_entities(vectors, table)
    if mode == "none":
        return plain
    out = plain.copy()
    L = cfg.max_length
    pos = 0
    for length in lengths:
        ys = vectors[pos:pos + length]
        if mode == "hard":
            seq = constrained_sequence_recover(ys, table, inputs.policy, kg, cfg.top_p, L, cfg.beam,
                                               reachable)
        else:
            seq = [int(plain[pos])]
            for i in range(1, length):
                seq.append(soft_constrained_recover(ys[i], table, inputs.policy, ys[i - 1], kg,
                                                    seq[0], i, cfg.top_p, cfg.candidates, L))
        out[pos:pos + length] = seq
        pos += length
    return out


def ser_rows(inputs: SerInputs, cfg: ExperimentConfig, channel: str) -> dict[tuple[float, str], tuple[int, int]]:
    """(errors, symbols) per (snr, mode); all modes see the same channel draws."""
    if inputs.table is None:
        raise ValueError("SER evaluation needs a trained embedding table")
    if inputs.policy is None and any(m != "none" for m in cfg.modes):
        raise ValueError("hard and soft decoding need a trained policy")
    table = inputs.table
    experts = inputs.experts or source_paths(cfg, inputs.kg, inputs.seed)
    paths = transmitted_paths(experts, cfg.ser_symbols, inputs.seed)
    ids = np.array([e for p in paths for e in p])
    lengths = [len(p) for p in paths]
    power = measure_signal_power(table)
    cache: dict[tuple[int, ...], set[int]] = {}

    def reachable(prefix):
        if prefix not in cache:
            cache[prefix] = reachable_entities(inputs.kg, inputs.policy, table,
                                               entity_prefix(list(prefix)), cfg.top_p, cfg.max_length)
        return cache[prefix]

    out = {}
    for k, snr in enumerate(cfg.snr_list):
        ccfg = ChannelConfig(channel, snr, cfg.packing, seed=inputs.seed * 1000 + k)
        rec = transmit(table.entities[ids], ccfg, power)
        vectors = rec.received_vectors()
        for mode in cfg.modes:
            got = decode_paths(mode, vectors, lengths, inputs, cfg, reachable)
            out[(snr, mode)] = (int(np.sum(got != ids)), len(ids))
    return out


def decoder_label(mode: str, cfg: ExperimentConfig) -> str:
    """How the policy is coupled to decoding in ``mode``, recorded with every SER row."""
    if mode == "none":
        return "nearest"
    if mode == "hard":
        return f"beam{cfg.beam}-top_p{cfg.top_p:g}"
    return f"candidates{cfg.candidates}-top_p{cfg.top_p:g}"


def run_ser_vs_snr(cfg: ExperimentConfig, inputs: list[SerInputs] | None = None) -> Table:
    """Entity symbol error rate per SNR and decoding mode, pooled over seeds."""
    if inputs is None:
        inputs = [prepare_ser_inputs(cfg, s) for s in cfg.seeds]
    out = new_table("ser_vs_snr")
    density = float(np.mean([x.kg.num_triples / x.kg.num_entities for x in inputs]))
    for channel in cfg.channels:
        pooled: dict[tuple[float, str], list[int]] = {}
        for x in inputs:
            for key, (err, tot) in ser_rows(x, cfg, channel).items():
                acc = pooled.setdefault(key, [0, 0])
                acc[0] += err
                acc[1] += tot
        for snr in cfg.snr_list:
            for mode in cfg.modes:
                err, tot = pooled[(snr, mode)]
                out.rows.append(dict(snr_db=float(snr), mode=mode, decoder=decoder_label(mode, cfg),
                                     channel=channel, dimension=inputs[0].table.n, ser=err / tot, errors=err,
                                     symbols=tot, skg_density=density))
    return out


# ---------------------------------------------------------------------------
# dimension sweep


def run_dimension_sweep(cfg: ExperimentConfig) -> Table:
    """Nearest-neighbour entity accuracy per constellation dimension.

    Each entity vector carries a fixed energy budget, so the noise variance
    per coordinate is ``E / 10^(snr/10)`` with ``E`` the mean squared norm
    of the entity rows; larger dimensions therefore spread the same energy
    over more channel uses. Accuracy then saturates rather than peaking, so
    the row flagged ``best`` is the smallest dimension within
    ``dim_tolerance`` of the channel's maximum accuracy.
    """
    out = new_table("dimension_sweep")
    for channel in cfg.channels:
        rows = []
        for dim in cfg.dims:
            errors = total = 0
            for seed in cfg.seeds:
                kg = desk_graph(cfg, seed)
                table, _ = fit_encoder(kg, cfg, seed, n=dim, epochs=cfg.dim_epochs)
                ids = np.random.default_rng(seed).integers(kg.num_entities, size=cfg.ser_symbols)
                packing = cfg.packing if dim % 2 == 0 else "real"
                ccfg = ChannelConfig(channel, cfg.dim_snr, packing, seed=seed * 1000 + dim)
                energy = measure_signal_power(table) * dim
                rec = transmit(table.entities[ids], ccfg, energy)
                got, _ = nearest_entities(rec.received_vectors(), table)
                errors += int(np.sum(got != ids))
                total += len(ids)
            rows.append(dict(dimension=dim, channel=channel, snr_db=float(cfg.dim_snr),
                             accuracy=1.0 - errors / total, symbols=total, best=False))
        top = max(r["accuracy"] for r in rows)
        best = min((r for r in rows if r["accuracy"] >= top - cfg.dim_tolerance),
                   key=lambda r: r["dimension"])
        best["best"] = True
        out.rows.extend(rows)
    return out


def best_dimensions(table: Table) -> dict[str, int]:
    return {r["channel"]: r["dimension"] for r in table.rows if r["best"]}


# ---------------------------------------------------------------------------
# encoder timing


def linear_r2(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0


def run_encoder_timing(cfg: ExperimentConfig, clock: Callable[[], float] = time.perf_counter) -> Table:
    """Best-of-``timing_repeats`` encoder training time for ``K`` triples.

    A small fixed minibatch makes the number of updates per epoch grow with
    ``K``, which is the quantity the linear cost model describes.
    """
    seed = cfg.seeds[0]
    kg = desk_graph(cfg, seed)
    all_triples = kg.triples
    if max(cfg.timing_sizes) > len(all_triples):
        raise ValueError(f"graph has {len(all_triples)} triples, timing needs {max(cfg.timing_sizes)}")
    order = np.random.default_rng(seed).permutation(len(all_triples))
    ecfg = EncoderConfig(n=cfg.n, norm=cfg.norm, margin=cfg.margin, epochs=cfg.timing_epochs,
                         batch_size=cfg.timing_batch, seed=seed)
    seconds = []
    for K in cfg.timing_sizes:
        subset = all_triples[order[:K]]
        best = math.inf
        for _ in range(cfg.timing_repeats):
            t0 = clock()
            train_encoder(kg, ecfg, triples=subset)
            best = min(best, clock() - t0)
        seconds.append(best)
        logger.info("timing K=%d: %.3fs", K, best)
    r2 = linear_r2(cfg.timing_sizes, seconds)
    out = new_table("encoder_timing")
    for K, s in zip(cfg.timing_sizes, seconds):
        out.rows.append(dict(K=K, n=cfg.n, seconds=s, r2=r2))
    return out


# ---------------------------------------------------------------------------
# manifests


def _version() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=os.path.dirname(__file__))
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(directory, command: str, cfg: ExperimentConfig, outputs: list[str],
                   started_at: datetime | None = None, inputs: list[str] | None = None) -> str:
    """Write ``manifest_<command>.json`` next to the outputs and return its path.

    Passing the manifest back through ``--config`` reruns the command with the
    same configuration and seeds.
    """
    started_at = started_at or datetime.now(timezone.utc)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "version": _version(),
        "started_at": started_at.isoformat(),
        "inputs": {p: sha256_file(p) for p in inputs or []},
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    path = os.path.join(directory, f"manifest_{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
