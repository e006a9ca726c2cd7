"""SGD training with an optional consistency penalty at the cut layer.

The loop is plain SGD without momentum or weight decay. Per batch it
runs a full forward pass, evaluates the classification loss on the
output scores and (when enabled) the consistency loss on the normalized
cut-layer features, and injects the weighted consistency gradient into
the backward stream at the cut. Everything is deterministic for a fixed
seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import BatchPlan, Dataset, batches, flip_labels
from .errors import ConfigError, TrainingError
from .losses import (
    MixConParams,
    cross_entropy,
    mixcon_loss,
    normalize_features,
    normalize_features_backward,
    one_hot,
    rank_pair_set,
    softmax_rows,
    unicon_loss,
)
from .metrics import separability
from .network import (
    Linear,
    Network,
    NetworkSpec,
    ReLU,
    backward,
    forward,
    hidden,
    hidden_from_tape,
    init_params,
    predict_classes,
    synthetic_network_spec,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    mixcon: Optional[MixConParams] = None
    consistency_kind: str = "none"  # mixcon | unicon | none
    label_flip_fraction: float = 0.0
    seed: int = 0
    init_alpha: float = 0.1
    # multiplier on the whole parameter-init distribution; the
    # unit-variance draw is untrainable at the stated learning rates
    init_scale: float = 1.0
    # shape the init per layer as init_scale * sqrt(2/(fan_in+fan_out));
    # equalizes the feature-layer force across classifier-head widths
    init_glorot: bool = False
    # extra weight on the consistency gradient relative to the batch-mean
    # classification gradient (recipes calibrate this per experiment)
    consistency_scale: float = 1.0
    # feed unit-normalized features to the consistency loss
    normalize_consistency: bool = False
    # separability history over cross-class pairs only, instead of all pairs
    cross_class_distance: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")
        if self.consistency_kind not in ("mixcon", "unicon", "none"):
            raise ConfigError(f"unknown consistency kind {self.consistency_kind!r}")
        if self.consistency_kind == "mixcon" and self.mixcon is None:
            raise ConfigError("consistency_kind 'mixcon' needs mixcon parameters")


@dataclass
class EpochRecord:
    epoch: int
    class_loss: float  # mean summed cross-entropy per batch
    consistency_loss: float  # unweighted consistency value, mean per batch
    train_acc: float
    test_acc: float
    mean_pair_dist: float
    delta_h: float
    delta_big: Optional[float]  # max distance over the rank pair set


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def final(self) -> EpochRecord:
        return self.records[-1]


def build_network(spec: NetworkSpec, cfg: TrainConfig) -> Network:
    """Initialize a network the way a training config asks for."""
    from .network import glorot_scales

    scale = (
        glorot_scales(spec, cfg.init_scale) if cfg.init_glorot else cfg.init_scale
    )
    return init_params(spec, cfg.init_alpha, cfg.seed, scale)


def evaluate_accuracy(net: Network, ds: Dataset, chunk: int = 512) -> float:
    """Fraction of samples whose predicted class matches the label.

    Prediction composes softmax with the largest-|score| rule, so it is
    a plain argmax over scores; on raw scores alone the |.| rule can
    invert decisions when every score is negative.
    """
    hits = 0
    for start in range(0, len(ds), chunk):
        x = ds.inputs[start : start + chunk]
        scores, _ = forward(net, x)
        pred = predict_classes(softmax_rows(scores))
        hits += int(np.sum(pred == ds.labels[start : start + chunk]))
    return hits / len(ds)


def _consistency_weight(cfg: TrainConfig) -> float:
    if cfg.consistency_kind == "none" or cfg.mixcon is None:
        return 0.0
    return cfg.mixcon.lam


def _consistency_terms(cfg: TrainConfig, feats, labels):
    """(value, grad wrt raw features, pair set) for the configured loss."""
    if cfg.consistency_kind == "none":
        return 0.0, None, []
    flat = feats.reshape(feats.shape[0], -1)
    target = normalize_features(flat) if cfg.normalize_consistency else flat
    if cfg.consistency_kind == "mixcon":
        loss, pairs = mixcon_loss(target, labels, cfg.mixcon)
    else:
        loss = unicon_loss(target, labels)
        pairs = rank_pair_set(labels)
    grad = loss.grad
    if cfg.normalize_consistency:
        grad = normalize_features_backward(flat, grad)
    return loss.value, grad.reshape(feats.shape), pairs


def hidden_features(net: Network, inputs, chunk: int = 512) -> np.ndarray:
    """Cut-layer features for a full dataset, flattened per sample."""
    out = []
    for start in range(0, inputs.shape[0], chunk):
        h = hidden(net, inputs[start : start + chunk])
        out.append(h.reshape(h.shape[0], -1))
    return np.concatenate(out)


def _epoch_stats(net, train_ds, cfg):
    flat = hidden_features(net, train_ds.inputs)
    pairs = rank_pair_set(train_ds.labels)
    delta_h, delta_big, mean_pair = separability(flat, pairs)
    if cfg.cross_class_distance:
        labels = train_ds.labels
        total = 0.0
        count = 0
        for i in range(len(labels) - 1):
            mask = labels[i + 1 :] != labels[i]
            if not mask.any():
                continue
            diffs = flat[i + 1 :][mask] - flat[i]
            total += float(np.sqrt(np.sum(diffs * diffs, axis=1)).sum())
            count += int(mask.sum())
        mean_pair = total / count if count else 0.0
    return delta_h, delta_big, mean_pair


def train(net: Network, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig):
    """Run the SGD loop; returns (trained network, per-epoch history).

    ``epoch_callback(epoch, net)`` is invoked with the initial network
    at epoch 0 and after each epoch, which is how feature snapshots for
    plotting are collected.
    """
    return _train_impl(net, train_ds, test_ds, cfg, None)


def train_with_callback(net, train_ds, test_ds, cfg, epoch_callback):
    return _train_impl(net, train_ds, test_ds, cfg, epoch_callback)


def _train_impl(net, train_ds, test_ds, cfg, epoch_callback):
    if cfg.label_flip_fraction > 0.0:
        train_ds = flip_labels(train_ds, cfg.label_flip_fraction, cfg.seed)
    params = [None if p is None else (p[0].copy(), p[1].copy()) for p in net.params]
    net = Network(net.spec, params)
    lam = _consistency_weight(cfg)
    lr = cfg.learning_rate
    num_classes = train_ds.num_classes
    history = TrainHistory()
    if epoch_callback is not None:
        epoch_callback(0, net)
    for epoch in range(1, cfg.epochs + 1):
        plan = BatchPlan(seed=cfg.seed * 100003 + epoch, batch_size=cfg.batch_size)
        class_losses = []
        con_losses = []
        for b, (xb, yb) in enumerate(batches(train_ds, plan)):
            scores, tape = forward(net, xb)
            cls = cross_entropy(scores, one_hot(yb, num_classes))
            con_value, con_grad, _ = _consistency_terms(
                cfg, hidden_from_tape(net, tape), yb
            )
            if not np.isfinite(cls.value) or not np.isfinite(con_value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {b}"
                )
            # the SGD step uses the per-sample mean of the summed
            # cross-entropy; lam == 0 skips injection entirely so
            # Vanilla runs are bit-identical with and without a
            # consistency config
            weight = lam * cfg.consistency_scale
            grad_hidden = (
                weight * con_grad if (weight > 0.0 and con_grad is not None) else None
            )
            param_grads, _ = backward(net, tape, cls.grad / len(xb), grad_hidden)
            for p, g in zip(net.params, param_grads):
                if p is None:
                    continue
                p[0][...] -= lr * g[0]
                p[1][...] -= lr * g[1]
            class_losses.append(cls.value)
            con_losses.append(con_value)
        delta_h, delta_big, mean_pair = _epoch_stats(net, train_ds, cfg)
        record = EpochRecord(
            epoch=epoch,
            class_loss=float(np.mean(class_losses)),
            consistency_loss=float(np.mean(con_losses)),
            train_acc=evaluate_accuracy(net, train_ds),
            test_acc=evaluate_accuracy(net, test_ds),
            mean_pair_dist=mean_pair,
            delta_h=delta_h,
            delta_big=delta_big,
        )
        history.records.append(record)
        if epoch_callback is not None:
            epoch_callback(epoch, net)
    return net, history


# ---------------------------------------------------------------------------
# Architecture variants


def make_variant(spec: NetworkSpec, kind: str) -> NetworkSpec:
    """Deeper or wider classifier head for the synthetic architecture."""
    base = synthetic_network_spec()
    if spec != base:
        raise ConfigError("variants are defined for the synthetic network only")
    layers = list(spec.layers)
    if kind == "deeper":
        # two extra 100-unit blocks after the third Linear's ReLU
        layers[6:6] = [Linear(100, 100), ReLU(), Linear(100, 100), ReLU()]
    elif kind == "wider":
        layers[4] = Linear(2, 2048)
        layers[6] = Linear(2048, 2)
    else:
        raise ConfigError(f"unknown variant kind {kind!r}")
    return NetworkSpec(layers=tuple(layers), cut_index=spec.cut_index)


# ---------------------------------------------------------------------------
# Hyperparameter sweep


@dataclass(frozen=True)
class SweepGrid:
    lambdas: tuple
    betas: tuple
    base: TrainConfig
    seeds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(self.lambdas))
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "seeds", tuple(self.seeds) or (self.base.seed,))
        if not self.lambdas or not self.betas:
            raise ConfigError("sweep grid must list at least one lambda and beta")


@dataclass
class SweepRow:
    lam: float
    beta: float
    seed: int
    train_acc: Optional[float]
    test_acc: Optional[float]
    mean_pair_dist: Optional[float]
    delta_h: Optional[float]
    status: str


def _sweep_cell(spec, datasets, base, lam, beta, seed):
    train_ds, test_ds = datasets
    eps = base.mixcon.eps if base.mixcon is not None else 1e-6
    cfg = replace(
        base,
        seed=seed,
        mixcon=MixConParams(lam=lam, beta=beta, eps=eps),
        consistency_kind="mixcon",
    )
    net = build_network(spec, cfg)
    try:
        _, history = train(net, train_ds, test_ds, cfg)
    except TrainingError as exc:
        return SweepRow(lam, beta, seed, None, None, None, None, f"error: {exc}")
    last = history.final()
    return SweepRow(
        lam,
        beta,
        seed,
        last.train_acc,
        last.test_acc,
        last.mean_pair_dist,
        last.delta_h,
        "ok",
    )


def run_sweep(grid: SweepGrid, datasets, spec: NetworkSpec, threads: int = 1):
    """Train one model per (lambda, beta, seed) cell; rows in grid order.

    Cell failures are recorded in the row status and do not stop the
    sweep. Cells are independent, so they may be dispatched to a thread
    pool; rows are always assembled in grid order regardless of
    completion order.
    """
    cells = [
        (lam, beta, seed)
        for lam in grid.lambdas
        for beta in grid.betas
        for seed in grid.seeds
    ]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(
                pool.map(
                    lambda c: _sweep_cell(spec, datasets, grid.base, *c), cells
                )
            )
    else:
        rows = [_sweep_cell(spec, datasets, grid.base, *c) for c in cells]
    return rows


def sweep_csv(rows) -> str:
    """Serialize sweep rows with the pinned header."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["lambda", "beta", "seed", "train_acc", "test_acc", "mean_pair_dist",
         "delta_h", "status"]
    )
    for r in rows:
        writer.writerow(
            [
                repr(float(r.lam)),
                repr(float(r.beta)),
                r.seed,
                "" if r.train_acc is None else repr(r.train_acc),
                "" if r.test_acc is None else repr(r.test_acc),
                "" if r.mean_pair_dist is None else repr(r.mean_pair_dist),
                "" if r.delta_h is None else repr(r.delta_h),
                r.status,
            ]
        )
    return buf.getvalue()
