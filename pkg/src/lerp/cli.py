"""Command-line driver: ``lerp generate | train | eval | explain``.

Settings resolve in three layers: built-in defaults, then a flat JSON
``--config`` file, then command-line flags. Every config key has a
same-named flag (underscores become dashes). The resolved settings are
written to ``resolved_config.json`` in the output directory, and passing
that file back as ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import generate_synthetic, load_catalog, load_dataset, save_catalog, save_dataset
from .estimator import LERPClassifier
from .exceptions import ConfigurationError, DataError, LerpError
from .explain import write_reports
from .metrics import PredictionSet, report
from .model import Network
from .training import format_log

log = logging.getLogger("lerp")

COMMON = {"seed": 0, "out": "."}

DEFAULTS = {
    "generate": {
        **COMMON,
        "n_records": 1000,
        "n_labels": 4,
        "vocab_size": 200,
        "signal_strength": 0.95,
        "event_only_labels": 0,
    },
    "train": {
        **COMMON,
        "dataset": None,
        "catalog": None,
        "variant": "lerp",
        "embeddings": None,
        "trainable_embeddings": None,
        "embedding_dim": 64,
        "projection_dim": 32,
        "conv_width": 3,
        "pool_width": 2,
        "hidden_dim": 64,
        "learning_rate": 1e-3,
        "batch_size": 16,
        "max_epochs": 100,
        "patience": 5,
        "optimizer": "adam",
        "max_note_len": 256,
        "train_fraction": 0.8,
    },
    "eval": {**COMMON, "checkpoint": None, "dataset": None, "catalog": None, "threshold": 0.5},
    "explain": {**COMMON, "checkpoint": None, "dataset": None, "catalog": None, "ids": []},
}

_TYPES = {
    "seed": int,
    "out": str,
    "n_records": int,
    "n_labels": int,
    "vocab_size": int,
    "signal_strength": float,
    "event_only_labels": int,
    "dataset": str,
    "catalog": str,
    "variant": str,
    "embeddings": str,
    "embedding_dim": int,
    "projection_dim": int,
    "conv_width": int,
    "pool_width": int,
    "hidden_dim": int,
    "learning_rate": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "optimizer": str,
    "max_note_len": int,
    "train_fraction": float,
    "checkpoint": str,
    "threshold": float,
}

_CHOICES = {"variant": ["lerp", "lerp-minus", "ts"], "optimizer": ["adam", "sgd"]}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lerp", description="Train, evaluate and explain event- and label-guided attention models.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic dataset with planted trigger words and events",
        "train": "train a model and write checkpoint, log and validation metrics",
        "eval": "print metrics of a checkpoint on a dataset as JSON",
        "explain": "write per-word attention reports (JSON and HTML)",
    }
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="flat JSON file of settings")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key in defaults:
            flag = "--" + key.replace("_", "-")
            if key == "ids":
                p.add_argument(flag, nargs="+", default=argparse.SUPPRESS, help="record ids to explain")
            elif key == "trainable_embeddings":
                p.add_argument(flag, type=_bool, default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, type=_TYPES[key], choices=_CHOICES.get(key), default=argparse.SUPPRESS)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigurationError(f"{path}: unknown keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS[command]:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    return cfg


def _require_file(cfg: dict, key: str) -> Path:
    if not cfg.get(key):
        raise ConfigurationError(f"--{key.replace('_', '-')} is required")
    path = Path(cfg[key])
    if not path.is_file():
        raise DataError(f"{key} not found: {path}")
    return path


def _write_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_data(cfg: dict):
    dataset = _require_file(cfg, "dataset")
    catalog = load_catalog(_require_file(cfg, "catalog"))
    return load_dataset(dataset, catalog), catalog


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    syn = generate_synthetic(
        cfg["n_records"],
        cfg["n_labels"],
        cfg["vocab_size"],
        cfg["signal_strength"],
        seed=cfg["seed"],
        event_only_labels=cfg["event_only_labels"],
    )
    _write_config(out, cfg)
    save_dataset(out / "records.jsonl", syn.records)
    save_catalog(out / "catalog.json", syn.catalog)
    triggers = {r.id: {str(j): p for j, p in t.items()} for r, t in zip(syn.records, syn.triggers)}
    (out / "triggers.json").write_text(json.dumps(triggers, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote %d records to %s", len(syn.records), out)
    return 0


def cmd_train(cfg: dict) -> int:
    records, catalog = _load_data(cfg)
    if cfg["embeddings"]:
        _require_file(cfg, "embeddings")
    est = LERPClassifier(
        label_names=list(catalog.names),
        variant=cfg["variant"],
        embedding_dim=cfg["embedding_dim"],
        projection_dim=cfg["projection_dim"],
        conv_width=cfg["conv_width"],
        pool_width=cfg["pool_width"],
        hidden_dim=cfg["hidden_dim"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        optimizer=cfg["optimizer"],
        max_note_len=cfg["max_note_len"],
        validation_fraction=1.0 - cfg["train_fraction"],
        embeddings=cfg["embeddings"],
        trainable_embeddings=cfg["trainable_embeddings"],
        random_state=cfg["seed"],
    )
    est.fit(records)
    net = est.network_
    cfg = {**cfg, "embedding_dim": net.config.embedding_dim, "trainable_embeddings": net.table.trainable}
    out = Path(cfg["out"])
    _write_config(out, cfg)
    net.save(out / "checkpoint.bin")
    (out / "train_log.txt").write_text(format_log(est.history_), encoding="utf-8")
    metrics = est.evaluate(est.validation_records_).to_dict()
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("best epoch %d; validation %s", est.best_epoch_, metrics)
    return 0


def _load_checkpoint(cfg: dict):
    net = Network.load(_require_file(cfg, "checkpoint"))
    records, catalog = _load_data(cfg)
    if len(catalog) != net.config.n_labels:
        raise ConfigurationError(
            f"checkpoint predicts {net.config.n_labels} labels but the catalog has {len(catalog)}"
        )
    return net, records


def cmd_eval(cfg: dict) -> int:
    net, records = _load_checkpoint(cfg)
    if not records:
        raise DataError("dataset is empty")
    scores, _, _ = net.predict(records)
    targets = np.array([r.labels for r in records])
    metrics = report(PredictionSet(scores, targets, cfg["threshold"])).to_dict()
    print(json.dumps(metrics, indent=2, sort_keys=True))
    if metrics["micro_roc_auc"] is None:
        print("error: micro ROC AUC is undefined (targets hold a single class)", file=sys.stderr)
        return 1
    return 0


def cmd_explain(cfg: dict) -> int:
    net, records = _load_checkpoint(cfg)
    by_id = {r.id: r for r in records}
    ids = cfg["ids"] or [r.id for r in records]
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"unknown record id(s): {', '.join(missing)}")
    out = Path(cfg["out"])
    _write_config(out, cfg)
    est = LERPClassifier.from_network(net)
    for path in write_reports(est.explain([by_id[i] for i in ids]), out):
        log.info("wrote %s", path)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (LerpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
