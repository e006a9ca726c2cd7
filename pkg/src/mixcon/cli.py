"""Command-line interface.

Commands: synth, train, invert, sweep, reduce, report. Every command
reads an optional JSON config file (one flat object of the keys listed
in DEFAULTS below); command-line flags override file values, file
values override defaults. Outputs are plain CSV/JSON files whose bytes
depend only on the resolved config, so reruns are byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import experiments
from .data import Dataset, gen_synthetic, load_idx, save_idx
from .errors import AttackError, ConfigError, ContractError, FormatError, TrainingError
from .hardness import parse_dimacs, verification_report
from .invert import InversionConfig, attack_dataset, recovered_pairs
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import MixConParams
from .metrics import aggregate, cosine_similarity, mse, report_csv_rows, ssim
from .network import Network, lenet5_network_spec, synthetic_network_spec
from .train import (
    SweepGrid,
    TrainConfig,
    build_network,
    make_variant,
    run_sweep,
    sweep_csv,
    train,
)

DEFAULTS = {
    "synth": {
        "seed": 2,
        "out": "results/synth",
        "attack_samples": 200,
    },
    "train": {
        "seed": 0,
        "out": "results/train",
        "dataset": "synthetic",  # or {"images": ..., "labels": ...}
        "test_dataset": None,
        "arch": "synthetic",  # synthetic | lenet5
        "variant": "default",  # default | deeper | wider
        "in_channels": 1,
        "epochs": 20,
        "learning_rate": 0.1,
        "batch_size": 32,
        "consistency": "none",  # none | mixcon | unicon
        "lambda": 0.1,
        "beta": 0.01,
        "eps": 1e-2,
        "label_flip_fraction": 0.0,
        "init_alpha": 0.0,
        "init_scale": 0.7,
        "init_glorot": True,
        "consistency_scale": 16.0,
        "normalize_consistency": False,
        "limit_train": None,
        "limit_test": None,
    },
    "invert": {
        "seed": 0,
        "out": "results/invert",
        "checkpoint": None,
        "dataset": None,
        "test_dataset": None,
        "arch": "lenet5",
        "variant": "default",
        "in_channels": 1,
        "samples": 100,
        "loss_kind": "l2",
        "tv_weight": 1e-5,
        "weight_decay": 1e-4,
        "learning_rate": 1.0,
        "iterations": 500,
        "init": "uniform_random",
        "clamp_lo": 0.0,
        "clamp_hi": 1.0,
    },
    "sweep": {
        "seed": 0,
        "out": "results/sweep",
        "dataset": "synthetic",
        "test_dataset": None,
        "arch": "synthetic",
        "in_channels": 1,
        "lambdas": [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0],
        "betas": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
        "seeds": None,  # defaults to [seed]
        "epochs": 20,
        "learning_rate": 0.1,
        "batch_size": 32,
        "eps": 1e-2,
        "label_flip_fraction": 0.0,
        "init_alpha": 0.0,
        "init_scale": 0.7,
        "init_glorot": True,
        "consistency_scale": 16.0,
        "normalize_consistency": False,
        "limit_train": None,
        "limit_test": None,
        "threads": 1,
    },
    "reduce": {
        "seed": 0,
        "out": "results/reduce",
        "cnf": None,
        "k": None,  # default 100 * B^2
        "samples": 10000,
        "trials": 1000,
    },
    "report": {
        "out": "results/report",
        "originals": None,
        "recovered": None,
        "metrics": None,  # default by data kind
    },
}


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        with open(args.config) as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(
                f"unknown config keys for {command}: {sorted(unknown)}"
            )
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        key = key.replace("_flag", "")
        if key in cfg:
            cfg[key] = value
    return cfg


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _load_dataset(entry, limit=None):
    if entry == "synthetic":
        raise ConfigError("synthetic datasets are resolved by the caller")
    ds = load_idx(entry["images"], entry["labels"])
    if limit is not None and limit < len(ds):
        ds = Dataset(ds.inputs[:limit], ds.labels[:limit], ds.num_classes)
    return ds


def _datasets(cfg):
    if cfg["dataset"] == "synthetic":
        train_ds, test_ds = gen_synthetic(seed=cfg["seed"])
        return train_ds, test_ds
    train_ds = _load_dataset(cfg["dataset"], cfg.get("limit_train"))
    if not cfg.get("test_dataset"):
        raise ConfigError("test_dataset is required with file-based datasets")
    test_ds = _load_dataset(cfg["test_dataset"], cfg.get("limit_test"))
    return train_ds, test_ds


def _spec(cfg):
    if cfg["arch"] == "synthetic":
        spec = synthetic_network_spec()
    elif cfg["arch"] == "lenet5":
        spec = lenet5_network_spec(cfg.get("in_channels", 1))
    else:
        raise ConfigError(f"unknown arch {cfg['arch']!r}")
    variant = cfg.get("variant", "default")
    if variant != "default":
        spec = make_variant(spec, variant)
    return spec


def _train_config(cfg) -> TrainConfig:
    kind = cfg["consistency"]
    mix = None
    if kind in ("mixcon", "unicon"):
        mix = MixConParams(cfg["lambda"], cfg["beta"], cfg["eps"])
    return TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        mixcon=mix,
        consistency_kind=kind,
        label_flip_fraction=cfg["label_flip_fraction"],
        seed=cfg["seed"],
        init_alpha=cfg["init_alpha"],
        init_scale=cfg["init_scale"],
        init_glorot=cfg["init_glorot"],
        consistency_scale=cfg["consistency_scale"],
        normalize_consistency=cfg["normalize_consistency"],
    )


def _history_csv(history) -> str:
    lines = [
        "epoch,class_loss,consistency_loss,train_acc,test_acc,"
        "mean_pair_dist,delta_h,delta_H"
    ]
    for r in history.records:
        big = "" if r.delta_big is None else repr(r.delta_big)
        lines.append(
            f"{r.epoch},{r.class_loss!r},{r.consistency_loss!r},"
            f"{r.train_acc!r},{r.test_acc!r},{r.mean_pair_dist!r},"
            f"{r.delta_h!r},{big}"
        )
    return "\n".join(lines) + "\n"


def _flat_csv(arrays) -> str:
    width = int(np.prod(arrays[0].shape)) if arrays else 0
    header = "index," + ",".join(f"x{i}" for i in range(width))
    lines = [header]
    for idx, arr in enumerate(arrays):
        flat = np.asarray(arr).ravel()
        lines.append(f"{idx}," + ",".join(repr(float(v)) for v in flat))
    return "\n".join(lines) + "\n"


def _read_flat_csv(path):
    with open(path) as f:
        header = f.readline()
        rows = [
            np.array([float(tok) for tok in line.strip().split(",")[1:]])
            for line in f
            if line.strip()
        ]
    del header
    return rows


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg) -> int:
    out = cfg["out"]
    outcome = experiments.run_synthetic_experiment(
        seed=cfg["seed"], attack_samples=cfg["attack_samples"]
    )
    _write(os.path.join(out, "utility.csv"), experiments.utility_csv(outcome))
    _write(os.path.join(out, "inversion.csv"), experiments.inversion_csv(outcome))
    for epoch, rows in sorted(outcome.hidden_dumps.items()):
        _write(
            os.path.join(out, f"hidden_epoch_{epoch}.csv"),
            experiments.hidden_dump_csv(rows),
        )
    return 0


def cmd_train(cfg) -> int:
    train_ds, test_ds = _datasets(cfg)
    spec = _spec(cfg)
    tcfg = _train_config(cfg)
    net = build_network(spec, tcfg)
    net, history = train(net, train_ds, test_ds, tcfg)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    save_checkpoint(net, os.path.join(out, "checkpoint.mxcn"))
    _write(os.path.join(out, "history.csv"), _history_csv(history))
    return 0


def cmd_invert(cfg) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("invert needs a checkpoint path")
    spec = _spec(cfg)
    net = load_checkpoint(cfg["checkpoint"], spec)
    if cfg["dataset"] == "synthetic":
        _, ds = gen_synthetic(seed=cfg["seed"])
    else:
        ds = _load_dataset(cfg["dataset"])
    clamp = None
    if cfg["clamp_lo"] is not None and cfg["clamp_hi"] is not None:
        clamp = (cfg["clamp_lo"], cfg["clamp_hi"])
    icfg = InversionConfig(
        loss_kind=cfg["loss_kind"],
        tv_weight=cfg["tv_weight"],
        reg_weight_decay=cfg["weight_decay"],
        learning_rate=cfg["learning_rate"],
        iterations=cfg["iterations"],
        init=cfg["init"],
        clamp_range=clamp,
        seed=cfg["seed"],
    )
    records = attack_dataset(net, ds, icfg, cfg["samples"])
    pairs = recovered_pairs(records)
    if not pairs:
        raise AttackError("every per-sample inversion failed")
    image_data = ds.inputs.ndim == 4
    reports = [
        aggregate(pairs, mse, "mse"),
        aggregate(pairs, cosine_similarity, "mcs"),
    ]
    if image_data:
        reports.append(aggregate(pairs, ssim, "ssim"))
    out = cfg["out"]
    _write(os.path.join(out, "report.csv"), report_csv_rows(reports))
    recovered = [r.recovered for r in records if r.recovered is not None]
    _write(os.path.join(out, "recovered.csv"), _flat_csv(recovered))
    _write(
        os.path.join(out, "originals.csv"),
        _flat_csv([r.original for r in records if r.recovered is not None]),
    )
    if image_data:
        kept = [r.index for r in records if r.recovered is not None]
        rec_ds = Dataset(
            np.clip(np.stack(recovered), 0.0, 1.0),
            ds.labels[kept],
            ds.num_classes,
        )
        save_idx(
            rec_ds,
            os.path.join(out, "recovered-images.idx"),
            os.path.join(out, "recovered-labels.idx"),
        )
    return 0


def cmd_sweep(cfg) -> int:
    train_ds, test_ds = _datasets(cfg)
    spec = _spec({**cfg, "variant": "default"})
    base = _train_config(
        {**cfg, "consistency": "mixcon", "lambda": 0.0, "beta": 0.0}
    )
    grid = SweepGrid(
        lambdas=tuple(cfg["lambdas"]),
        betas=tuple(cfg["betas"]),
        base=base,
        seeds=tuple(cfg["seeds"] or [cfg["seed"]]),
    )
    rows = run_sweep(grid, (train_ds, test_ds), spec, threads=cfg["threads"])
    _write(os.path.join(cfg["out"], "sweep.csv"), sweep_csv(rows))
    return 0


def cmd_reduce(cfg) -> int:
    if not cfg["cnf"]:
        raise ConfigError("reduce needs a DIMACS file path")
    with open(cfg["cnf"]) as f:
        phi = parse_dimacs(f.read())
    k = cfg["k"] if cfg["k"] is not None else 100 * phi.B * phi.B
    report = verification_report(
        phi, k, samples=cfg["samples"], trials=cfg["trials"], seed=cfg["seed"]
    )
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    _write(os.path.join(cfg["out"], "reduce.json"), text)
    sys.stdout.write(text)
    return 0


def cmd_report(cfg) -> int:
    if not cfg["originals"] or not cfg["recovered"]:
        raise ConfigError("report needs originals and recovered paths")

    def load_any(path):
        if path.endswith(".csv"):
            return _read_flat_csv(path), False
        base, _ = os.path.splitext(path)
        ds = load_idx(path, base.replace("images", "labels") + ".idx")
        return list(ds.inputs), True

    originals, img_a = load_any(cfg["originals"])
    recovered, img_b = load_any(cfg["recovered"])
    if len(originals) != len(recovered):
        raise ContractError(
            f"{len(originals)} originals vs {len(recovered)} recovered"
        )
    pairs = list(zip(originals, recovered))
    names = cfg["metrics"] or (
        ["mse", "mcs", "ssim"] if (img_a and img_b) else ["mse", "mcs"]
    )
    fns = {"mse": mse, "mcs": cosine_similarity, "ssim": ssim}
    reports = []
    for name in names:
        if name not in fns:
            raise ConfigError(f"unknown metric {name!r}")
        if name == "ssim" and not (img_a and img_b):
            side = int(round(np.sqrt(originals[0].size)))
            if side * side != originals[0].size:
                raise ConfigError("ssim needs square image data")
            pairs_img = [
                (a.reshape(1, side, side), b.reshape(1, side, side))
                for a, b in pairs
            ]
            reports.append(aggregate(pairs_img, fns[name], name))
        else:
            reports.append(aggregate(pairs, fns[name], name))
    _write(os.path.join(cfg["out"], "report.csv"), report_csv_rows(reports))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "invert": cmd_invert,
    "sweep": cmd_sweep,
    "reduce": cmd_reduce,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixcon",
        description="Separability-adjusting training, inversion attacks, "
        "and the CNF hardness gadget",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads")

    p = sub.add_parser("synth", help="small-scale two-Gaussian study")
    common(p)
    p.add_argument("--attack-samples", dest="attack_samples", type=int)

    p = sub.add_parser("train", help="train one model, save checkpoint")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = sub.add_parser("invert", help="attack a checkpoint's features")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("sweep", help="train a (lambda, beta) grid")
    common(p)

    p = sub.add_parser("reduce", help="verify the CNF network encoding")
    common(p)
    p.add_argument("--cnf", help="DIMACS CNF path")
    p.add_argument("--k", type=int, help="copies per variable")
    p.add_argument("--samples", type=int)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("report", help="similarity report for saved pairs")
    common(p)
    p.add_argument("--originals")
    p.add_argument("--recovered")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ContractError, FormatError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, AttackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
