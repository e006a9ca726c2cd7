"""Canned experiment recipes shared by the CLI and the acceptance suite.

The synthetic recipe trains the 10-d two-Gaussian task with the 4-layer
MLP for 20 epochs of lr-0.1 SGD with 5% training-label noise, under
seven settings: plain training, the consistency loss at (0.1, 0.01) and
(0.1, 0) on the default head, and both settings on the deeper and wider
heads. It then runs the L1 feature-matching attack on every test sample
of three of those models.

Hyperparameters the tables leave open are pinned here: batch size 32,
layer-mean variance 0, Glorot-shaped init at gain 0.7, consistency
gradient scaled 16x against the per-sample-mean classification
gradient, and a distance clamp of 1e-2 when the balance term is active
(1e-6 otherwise). The calibration story lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Dataset, gen_synthetic
from .invert import InversionConfig, attack_dataset, recovered_pairs
from .losses import MixConParams
from .metrics import cosine_similarity, mse
from .network import Network, NetworkSpec, hidden, synthetic_network_spec
from .train import TrainConfig, TrainHistory, build_network, make_variant, train_with_callback

SYNTH_EPS_BALANCED = 1e-2  # clamp when beta > 0; bounds the repulsive slope
SYNTH_EPS_DEFAULT = 1e-6


def synthetic_train_config(seed: int = 0, lam: Optional[float] = None,
                           beta: float = 0.0) -> TrainConfig:
    mixcon = None
    kind = "none"
    if lam is not None:
        eps = SYNTH_EPS_BALANCED if beta > 0 else SYNTH_EPS_DEFAULT
        mixcon = MixConParams(lam=lam, beta=beta, eps=eps)
        kind = "mixcon"
    return TrainConfig(
        epochs=20,
        learning_rate=0.1,
        batch_size=32,
        mixcon=mixcon,
        consistency_kind=kind,
        label_flip_fraction=0.05,
        seed=seed,
        init_alpha=0.0,
        init_scale=0.7,
        init_glorot=True,
        consistency_scale=16.0,
    )


def synthetic_attack_config(seed: int = 0) -> InversionConfig:
    return InversionConfig(
        loss_kind="l1",
        tv_weight=0.0,
        reg_weight_decay=1e-4,
        learning_rate=0.01,
        iterations=500,
        init="normal",
        seed=seed,
    )


@dataclass
class SyntheticRun:
    setting: str
    lam: Optional[float]
    beta: Optional[float]
    variant: str  # default | deeper | wider
    net: Network
    history: TrainHistory


@dataclass
class SyntheticOutcome:
    runs: list
    inversion: list  # (setting, metric, value) rows
    hidden_dumps: dict  # epoch -> list of (setting, label, h0, h1)


SYNTH_SETTINGS = (
    ("vanilla", None, None, "default"),
    ("mixcon_0.1_0.01", 0.1, 0.01, "default"),
    ("mixcon_0.1_0.01_deeper", 0.1, 0.01, "deeper"),
    ("mixcon_0.1_0.01_wider", 0.1, 0.01, "wider"),
    ("mixcon_0.1_0", 0.1, 0.0, "default"),
    ("mixcon_0.1_0_deeper", 0.1, 0.0, "deeper"),
    ("mixcon_0.1_0_wider", 0.1, 0.0, "wider"),
)

ATTACKED_SETTINGS = ("vanilla", "mixcon_0.1_0.01", "mixcon_0.1_0")


def run_synthetic_experiment(seed: int = 0, attack_samples: int = 200,
                             dump_settings=ATTACKED_SETTINGS) -> SyntheticOutcome:
    """The full small-scale study: utility table, feature dumps, attack."""
    train_ds, test_ds = gen_synthetic(seed=seed)
    base_spec = synthetic_network_spec()
    runs = []
    dumps = {}
    for setting, lam, beta, variant in SYNTH_SETTINGS:
        spec = base_spec if variant == "default" else make_variant(base_spec, variant)
        cfg = synthetic_train_config(seed=seed, lam=lam, beta=beta or 0.0)
        net = build_network(spec, cfg)

        def snapshot(epoch, current, _setting=setting):
            if _setting not in dump_settings:
                return
            feats = hidden(current, train_ds.inputs)
            rows = dumps.setdefault(epoch, [])
            for label, (h0, h1) in zip(train_ds.labels, feats):
                rows.append((_setting, int(label), float(h0), float(h1)))

        net, history = train_with_callback(net, train_ds, test_ds, cfg, snapshot)
        runs.append(SyntheticRun(setting, lam, beta, variant, net, history))

    by_name = {r.setting: r for r in runs}
    inversion = []
    for setting in ATTACKED_SETTINGS:
        net = by_name[setting].net
        records = attack_dataset(
            net, test_ds, synthetic_attack_config(seed=seed * 7919 + 1000),
            attack_samples,
        )
        pairs = recovered_pairs(records)
        inversion.append(
            (setting, "mse", float(np.mean([mse(a, b) for a, b in pairs])))
        )
        inversion.append(
            (setting, "mcs",
             float(np.mean([cosine_similarity(a, b) for a, b in pairs])))
        )
    return SyntheticOutcome(runs=runs, inversion=inversion, hidden_dumps=dumps)


def utility_csv(outcome: SyntheticOutcome) -> str:
    lines = ["setting,lambda,beta,variant,train_acc,test_acc,mean_pair_dist,delta_h"]
    for r in outcome.runs:
        last = r.history.final()
        lam = "" if r.lam is None else repr(float(r.lam))
        beta = "" if r.beta is None else repr(float(r.beta))
        lines.append(
            f"{r.setting},{lam},{beta},{r.variant},{last.train_acc!r},"
            f"{last.test_acc!r},{last.mean_pair_dist!r},{last.delta_h!r}"
        )
    return "\n".join(lines) + "\n"


def inversion_csv(outcome: SyntheticOutcome) -> str:
    lines = ["setting,metric,value"]
    for setting, metric, value in outcome.inversion:
        lines.append(f"{setting},{metric},{value!r}")
    return "\n".join(lines) + "\n"


def hidden_dump_csv(rows) -> str:
    lines = ["setting,label,h0,h1"]
    for setting, label, h0, h1 in rows:
        lines.append(f"{setting},{label},{h0!r},{h1!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Image-scale recipe (LeNet on 28x28 digit images)


def image_train_config(seed: int = 0, lam: Optional[float] = None,
                       beta: float = 1e-4, epochs: int = 20,
                       batch_size: int = 64) -> TrainConfig:
    mixcon = None
    kind = "none"
    if lam is not None:
        mixcon = MixConParams(lam=lam, beta=beta, eps=SYNTH_EPS_BALANCED
                              if beta > 0 else SYNTH_EPS_DEFAULT)
        kind = "mixcon"
    return TrainConfig(
        epochs=epochs,
        learning_rate=0.01,
        batch_size=batch_size,
        mixcon=mixcon,
        consistency_kind=kind,
        label_flip_fraction=0.0,
        seed=seed,
        init_alpha=0.0,
        init_scale=0.7,
        init_glorot=True,
        consistency_scale=16.0,
    )


def image_attack_config(seed: int = 0, tv_weight: float = 1e-5,
                        learning_rate: float = 10.0) -> InversionConfig:
    return InversionConfig(
        loss_kind="l2",
        tv_weight=tv_weight,
        reg_weight_decay=1e-4,
        learning_rate=learning_rate,
        iterations=500,
        init="uniform_random",
        clamp_range=(0.0, 1.0),
        seed=seed,
    )
