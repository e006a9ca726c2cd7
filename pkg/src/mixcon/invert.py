"""White-box reconstruction of inputs from cut-layer features.

Given a trained network and a feature vector z, gradient descent over
the input space minimizes a feature-matching loss plus optional total
variation, with L2 weight decay on the candidate input folded into the
update step. Two loss flavors are provided: ``l1`` is the absolute
coordinate-wise mismatch; ``l2`` is half the squared euclidean
mismatch, whose gradient is the plain residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import AttackError, ConfigError, ContractError
from .network import Network, hidden, hidden_backward, hidden_forward


@dataclass(frozen=True)
class InversionConfig:
    loss_kind: str = "l2"  # l1 | l2
    tv_weight: float = 0.0
    reg_weight_decay: float = 0.0
    learning_rate: float = 0.1
    iterations: int = 500
    init: str = "normal"  # normal | uniform_random | constant
    init_constant: float = 0.0
    clamp_range: Optional[tuple] = None
    seed: int = 0
    input_shape: Optional[tuple] = None  # needed when the net starts with a conv

    def __post_init__(self):
        if self.loss_kind not in ("l1", "l2"):
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        if self.init not in ("normal", "uniform_random", "constant"):
            raise ConfigError(f"unknown init kind {self.init!r}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.tv_weight < 0 or self.reg_weight_decay < 0:
            raise ConfigError("tv_weight and reg_weight_decay must be >= 0")
        if self.clamp_range is not None:
            lo, hi = self.clamp_range
            if not lo < hi:
                raise ConfigError(f"clamp range [{lo}, {hi}] is empty")
        if self.init == "uniform_random" and self.clamp_range is None:
            raise ConfigError("uniform_random init needs a clamp range")


@dataclass
class InversionResult:
    recovered: np.ndarray
    final_objective: float
    trajectory: np.ndarray  # objective after each update, length = iterations


def tv(image):
    """Total variation of a (C, H, W) image and its subgradient.

    Each position where both the down and the right neighbor exist
    contributes sqrt(d_down^2 + d_right^2); positions with zero local
    difference get subgradient zero.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ContractError(f"tv expects a (C, H, W) image, got shape {image.shape}")
    c, h, w = img.shape
    if h < 2 or w < 2:
        raise ContractError(f"tv needs height and width >= 2, got {h}x{w}")
    dd = img[:, 1:, : w - 1] - img[:, : h - 1, : w - 1]
    dr = img[:, : h - 1, 1:] - img[:, : h - 1, : w - 1]
    mag = np.sqrt(dd * dd + dr * dr)
    value = float(mag.sum())
    grad = np.zeros_like(img)
    nz = mag > 0.0
    sdd = np.where(nz, dd / np.where(nz, mag, 1.0), 0.0)
    sdr = np.where(nz, dr / np.where(nz, mag, 1.0), 0.0)
    grad[:, : h - 1, : w - 1] -= sdd + sdr
    grad[:, 1:, : w - 1] += sdd
    grad[:, : h - 1, 1:] += sdr
    if np.asarray(image).ndim == 2:
        return value, grad[0]
    return value, grad


def _feature_loss(kind, h_val, z):
    diff = h_val - z
    if kind == "l1":
        return float(np.abs(diff).sum()), np.sign(diff)
    return 0.5 * float(np.sum(diff * diff)), diff


def _initial_point(net, cfg):
    shape = cfg.input_shape
    if shape is None:
        first = net.spec.layers[0]
        if not hasattr(first, "in_dim"):
            raise ConfigError(
                "input_shape must be set when the first layer is not Linear"
            )
        shape = (first.in_dim,)
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "constant":
        return np.full(shape, float(cfg.init_constant))
    if cfg.init == "uniform_random":
        lo, hi = cfg.clamp_range
        return rng.uniform(lo, hi, size=shape)
    return rng.standard_normal(shape)


def invert(net: Network, z, cfg: InversionConfig, s0=None) -> InversionResult:
    """Gradient-descent reconstruction of an input matching features z.

    Per step: s <- s - lr * (d(loss + tv_weight * TV)/ds + weight_decay * s),
    then projection onto the clamp range when one is set. ``s0``
    overrides the configured initialization (used by sanity checks that
    start the descent at a known input).
    """
    z = np.asarray(z, dtype=np.float64)
    s = np.array(s0, dtype=np.float64) if s0 is not None else _initial_point(net, cfg)
    ref = hidden(net, s)
    if ref.shape != z.shape:
        raise ContractError(
            f"target features {z.shape} do not match cut-layer shape {ref.shape}"
        )
    use_tv = cfg.tv_weight > 0.0
    trajectory = np.empty(cfg.iterations)
    h_cur, tape = hidden_forward(net, s[None, ...])
    for t in range(cfg.iterations):
        _, gh = _feature_loss(cfg.loss_kind, h_cur[0], z)
        grad = hidden_backward(net, tape, gh[None, ...])[0]
        if use_tv:
            grad = grad + cfg.tv_weight * tv(s)[1]
        s = s - cfg.learning_rate * (grad + cfg.reg_weight_decay * s)
        if cfg.clamp_range is not None:
            s = np.clip(s, cfg.clamp_range[0], cfg.clamp_range[1])
        h_cur, tape = hidden_forward(net, s[None, ...])
        obj, _ = _feature_loss(cfg.loss_kind, h_cur[0], z)
        if use_tv:
            obj += cfg.tv_weight * tv(s)[0]
        if not np.isfinite(obj):
            raise AttackError(f"non-finite objective at iteration {t}")
        trajectory[t] = obj
    return InversionResult(
        recovered=s,
        final_objective=float(trajectory[-1]),
        trajectory=trajectory,
    )


@dataclass
class AttackRecord:
    index: int
    original: np.ndarray
    recovered: Optional[np.ndarray]
    error: Optional[str] = None


def attack_dataset(net: Network, ds: Dataset, cfg: InversionConfig, n: int):
    """Invert the features of the first n samples; one record each.

    Sample i runs with seed ``cfg.seed + i`` so records are independent
    and reproducible; per-sample failures are recorded, not raised.
    """
    if n > len(ds):
        raise ContractError(f"n={n} exceeds dataset size {len(ds)}")
    records = []
    for i in range(n):
        x = ds.inputs[i]
        z = hidden(net, x)
        run_cfg = InversionConfig(
            loss_kind=cfg.loss_kind,
            tv_weight=cfg.tv_weight,
            reg_weight_decay=cfg.reg_weight_decay,
            learning_rate=cfg.learning_rate,
            iterations=cfg.iterations,
            init=cfg.init,
            init_constant=cfg.init_constant,
            clamp_range=cfg.clamp_range,
            seed=cfg.seed + i,
            input_shape=x.shape,
        )
        try:
            result = invert(net, z, run_cfg)
            records.append(AttackRecord(index=i, original=x, recovered=result.recovered))
        except AttackError as exc:
            records.append(
                AttackRecord(index=i, original=x, recovered=None, error=str(exc))
            )
    return records


def recovered_pairs(records):
    """(original, recovered) pairs for the records that succeeded."""
    return [(r.original, r.recovered) for r in records if r.recovered is not None]
