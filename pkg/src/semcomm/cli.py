"""Command line entry point: ``semcomm <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone

from . import experiments as X
from .encoder import EmbeddingTable, margin_audit
from .interpreter import PolicyNetwork
from .kg_store import save_triples_file

logger = logging.getLogger("semcomm")

COMMANDS = {
    "make-dataset": "write the desk-scale graph used by the other commands",
    "train-encoder": "train the constellation encoder",
    "train-grml": "train the reasoning policy by adversarial imitation",
    "eval-accuracy": "interpreter accuracy against maximum path length",
    "eval-ser": "entity symbol error rate against SNR",
    "sweep-dim": "decoding accuracy against constellation dimension",
    "sweep-experts": "convergence against number of expert paths",
    "timing": "encoder training time against number of triples",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dataset", help="triples file or built-in name (toy:chain, toy:random20, "
                        "toy:hard, synthetic:fb15k237)")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--seed", help="seed or comma-separated seeds")
    common.add_argument("--snr-list", help="comma-separated SNR values in dB")
    common.add_argument("--dims", help="comma-separated constellation dimensions")
    common.add_argument("--max-length", type=int, help="maximum path length")
    common.add_argument("--channel", help="awgn or rayleigh (comma-separated for several)")
    common.add_argument("--mode", help="hard, soft or none (comma-separated for several)")
    common.add_argument("--config", help="key = value file or a JSON run manifest")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("--encoder", help="embedding table file (default: OUT/encoder.txt if present)")
    common.add_argument("--policy", help="policy file (default: OUT/policy.txt if present)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="semcomm", description="Knowledge-graph semantic communication experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve_config(args) -> X.ExperimentConfig:
    values: dict = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise X.ConfigError(f"config file not found: {args.config} (--config)")
        values.update(X.load_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise X.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    flags = {"dataset": args.dataset, "out": args.out, "seeds": args.seed, "snr_list": args.snr_list,
             "dims": args.dims, "channels": args.channel, "modes": args.mode}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.max_length is not None:
        values["max_length"] = args.max_length
        values["lengths"] = list(range(1, args.max_length + 1))
    cfg = X.ExperimentConfig.from_dict(values)
    if not cfg.dataset:
        raise X.ConfigError("missing dataset: pass --dataset PATH_OR_NAME")
    return cfg


def _artifact(explicit: str | None, out: str, name: str) -> str | None:
    if explicit:
        if not os.path.isfile(explicit):
            raise X.ConfigError(f"file not found: {explicit}")
        return explicit
    path = os.path.join(out, name)
    return path if os.path.isfile(path) else None


def _load_table(path: str | None, kg, cfg, seed) -> EmbeddingTable:
    if path is None:
        return X.fit_encoder(kg, cfg, seed)[0]
    table = EmbeddingTable.load(path)
    if table.num_entities != kg.num_entities or table.num_relations != kg.num_relations:
        raise X.ConfigError(f"{path} does not match the dataset's entity/relation counts")
    if table.n != cfg.n:
        raise X.ConfigError(f"{path} has dimension {table.n} but the config asks for n={cfg.n}")
    return table


def _load_policy(path: str, kg, table) -> PolicyNetwork:
    policy = PolicyNetwork.load(path)
    if policy.n != table.n or policy.num_relations != kg.num_relations:
        raise X.ConfigError(f"{path} does not match the embedding table or dataset")
    return policy


def run_command(command: str, cfg: X.ExperimentConfig, args) -> tuple[list[str], list[str]]:
    """Run one command; returns (written files, input files)."""
    out = cfg.out
    seed = cfg.seeds[0]
    written: list[str] = []
    inputs: list[str] = []

    if command == "make-dataset":
        path = os.path.join(out, "skg.txt")
        save_triples_file(X.desk_graph(cfg, seed), path)
        written.append(path)

    elif command == "train-encoder":
        kg = X.desk_graph(cfg, seed)
        table, losses = X.fit_encoder(kg, cfg, seed)
        path = os.path.join(out, "encoder.txt")
        table.save(path)
        loss = X.new_table("encoder_loss")
        loss.rows = [dict(epoch=i, loss=float(v)) for i, v in enumerate(losses)]
        summary = X.new_table("encoder_summary")
        summary.rows = [dict(entities=kg.num_entities, relations=kg.num_relations,
                             triples=kg.num_triples, n=table.n, norm=table.norm, margin=cfg.margin,
                             margin_fraction=margin_audit(kg, table, cfg.margin, seed))]
        written += [path, loss.save(out), summary.save(out)]

    elif command == "train-grml":
        kg = X.desk_graph(cfg, seed)
        enc = _artifact(args.encoder, out, "encoder.txt")
        inputs += [enc] if enc else []
        table = _load_table(enc, kg, cfg, seed)
        _, policy, comp, log = X.fit_policy(kg, table, cfg, seed)
        paths = [os.path.join(out, f) for f in ("policy.txt", "comparator.txt", "train_log.csv")]
        policy.save(paths[0])
        comp.save(paths[1])
        log.save(paths[2])
        written += paths

    elif command == "eval-accuracy":
        written.append(X.run_accuracy_vs_length(cfg).save(out))

    elif command == "eval-ser":
        enc = _artifact(args.encoder, out, "encoder.txt")
        if enc:
            kg = X.desk_graph(cfg, seed)
            table = _load_table(enc, kg, cfg, seed)
            pol_path = _artifact(args.policy, out, "policy.txt")
            if pol_path is None and any(m != "none" for m in cfg.modes):
                raise X.ConfigError("hard/soft decoding needs a trained policy: run train-grml "
                                    "or pass --policy")
            policy = _load_policy(pol_path, kg, table) if pol_path else None
            inputs += [p for p in (enc, pol_path) if p]
            ser_inputs = [X.SerInputs(kg, table, policy, seed)]
        else:
            ser_inputs = None
        written.append(X.run_ser_vs_snr(cfg, ser_inputs).save(out))

    elif command == "sweep-dim":
        written.append(X.run_dimension_sweep(cfg).save(out))

    elif command == "sweep-experts":
        written.append(X.run_expert_count_sweep(cfg).save(out))

    elif command == "timing":
        written.append(X.run_encoder_timing(cfg).save(out))

    return written, inputs


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc)
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        written, inputs = run_command(args.command, cfg, args)
    except X.ConfigError as exc:
        print(f"semcomm {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"semcomm {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    manifest = X.write_manifest(cfg.out, args.command, cfg, written, started, inputs)
    for path in written + [manifest]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
