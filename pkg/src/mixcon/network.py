"""Dense feed-forward networks with hand-derived gradients.

All tensors are numpy float64 arrays; public operations accept batched
inputs (leading sample axis) and also single samples, which are promoted
to a batch of one. A network is split by ``cut_index`` into a feature
extractor (layers ``[0, cut_index)``) and a classifier head (the rest),
and the full forward pass is the composition of the two parts.

Randomness: every stochastic operation takes an explicit seed and uses
numpy's PCG64 generator (``np.random.default_rng``). The draw order for
parameter initialization is documented on :func:`init_params`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, ContractError, ShapeError


# ---------------------------------------------------------------------------
# Layer specifications


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kh: int
    kw: int


@dataclass(frozen=True)
class MaxPool2d:
    kh: int
    kw: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Linear, ReLU, Conv2d, MaxPool2d, Flatten, Softmax]


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus the index that separates h from g."""

    layers: tuple
    cut_index: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not (0 <= self.cut_index <= len(self.layers)):
            raise ConfigError(
                f"cut_index {self.cut_index} outside [0, {len(self.layers)}]"
            )
        validate_spec(self)


def validate_spec(spec: NetworkSpec) -> None:
    """Static shape check of consecutive layers.

    Spatial extents are unknown until an input arrives, so only feature
    and channel counts are verified here; full checking happens inside
    :func:`forward`.
    """
    width = None  # known feature count, or None
    channels = None  # known channel count, or None
    spatial_known = False
    for k, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            if layer.in_dim <= 0 or layer.out_dim <= 0:
                raise ConfigError(f"layer {k}: non-positive Linear dims")
            if width is not None and width != layer.in_dim:
                raise ConfigError(
                    f"layer {k}: Linear expects {layer.in_dim} features, "
                    f"previous layer provides {width}"
                )
            if channels is not None:
                raise ConfigError(f"layer {k}: Linear applied to image data")
            width = layer.out_dim
        elif isinstance(layer, Conv2d):
            if min(layer.in_ch, layer.out_ch, layer.kh, layer.kw) <= 0:
                raise ConfigError(f"layer {k}: non-positive Conv2d dims")
            if width is not None:
                raise ConfigError(f"layer {k}: Conv2d applied to flat data")
            if channels is not None and channels != layer.in_ch:
                raise ConfigError(
                    f"layer {k}: Conv2d expects {layer.in_ch} channels, "
                    f"previous layer provides {channels}"
                )
            channels = layer.out_ch
            spatial_known = False
        elif isinstance(layer, MaxPool2d):
            if min(layer.kh, layer.kw) <= 0:
                raise ConfigError(f"layer {k}: non-positive MaxPool2d dims")
            if width is not None:
                raise ConfigError(f"layer {k}: MaxPool2d applied to flat data")
        elif isinstance(layer, Flatten):
            if channels is not None:
                width = None if not spatial_known else width
                channels = None
            # flat input stays flat
        elif isinstance(layer, (ReLU, Softmax)):
            pass
        else:
            raise ConfigError(f"layer {k}: unknown layer kind {layer!r}")


class Network:
    """A spec together with parameter arrays, immutable by convention.

    ``params`` is a list aligned with ``spec.layers``; entries are
    ``(weight, bias)`` tuples for Linear/Conv2d layers and None otherwise.
    """

    def __init__(self, spec: NetworkSpec, params):
        if len(params) != len(spec.layers):
            raise ConfigError(
                f"{len(params)} parameter entries for {len(spec.layers)} layers"
            )
        for k, (layer, p) in enumerate(zip(spec.layers, params)):
            want = _param_shapes(layer)
            if want is None:
                if p is not None:
                    raise ConfigError(f"layer {k}: unexpected parameters")
            else:
                w, b = p
                if w.shape != want[0] or b.shape != want[1]:
                    raise ConfigError(
                        f"layer {k}: parameter shapes {w.shape}/{b.shape} "
                        f"do not match spec {want[0]}/{want[1]}"
                    )
        self.spec = spec
        self.params = list(params)

    @property
    def cut_index(self) -> int:
        return self.spec.cut_index


def _param_shapes(layer):
    if isinstance(layer, Linear):
        return (layer.out_dim, layer.in_dim), (layer.out_dim,)
    if isinstance(layer, Conv2d):
        return (layer.out_ch, layer.in_ch, layer.kh, layer.kw), (layer.out_ch,)
    return None


# ---------------------------------------------------------------------------
# Reference architectures


def synthetic_network_spec() -> NetworkSpec:
    """Four-Linear MLP on 10-d inputs with a 2-d feature layer.

    The cut sits after the second Linear + ReLU pair, so the extracted
    features live in R^2.
    """
    return NetworkSpec(
        layers=(
            Linear(10, 500),
            ReLU(),
            Linear(500, 2),
            ReLU(),
            Linear(2, 100),
            ReLU(),
            Linear(100, 2),
        ),
        cut_index=4,
    )


def lenet5_network_spec(in_channels: int = 1) -> NetworkSpec:
    """LeNet5 variant for 28x28 inputs, cut after the second pooling."""
    return NetworkSpec(
        layers=(
            Conv2d(in_channels, 6, 5, 5),
            ReLU(),
            MaxPool2d(2, 2),
            Conv2d(6, 16, 5, 5),
            ReLU(),
            MaxPool2d(2, 2),
            Flatten(),
            Linear(256, 120),
            ReLU(),
            Linear(120, 84),
            ReLU(),
            Linear(84, 10),
        ),
        cut_index=6,
    )


# ---------------------------------------------------------------------------
# Initialization


def layer_fans(layer):
    """(fan_in, fan_out) of a parameterized layer, else None."""
    if isinstance(layer, Linear):
        return layer.in_dim, layer.out_dim
    if isinstance(layer, Conv2d):
        k = layer.kh * layer.kw
        return layer.in_ch * k, layer.out_ch * k
    return None


def glorot_scales(spec: NetworkSpec, gain: float) -> list:
    """Per-layer multipliers gain * sqrt(2 / (fan_in + fan_out)).

    Keeps forward and backward signal magnitudes comparable across
    layer widths; entries for parameter-free layers are None.
    """
    out = []
    for layer in spec.layers:
        fans = layer_fans(layer)
        if fans is None:
            out.append(None)
        else:
            out.append(gain * np.sqrt(2.0 / (fans[0] + fans[1])))
    return out


def init_params(spec: NetworkSpec, alpha: float, seed: int,
                scale=1.0) -> Network:
    """Draw parameters layer by layer from a seeded PCG64 generator.

    For each parameterized layer, in order: a layer mean
    ``u ~ Normal(0, sqrt(alpha))`` is drawn first, then every weight
    entry and every bias entry i.i.d. ``Normal(u, 1)``, weights before
    biases. ``alpha`` is the variance of the layer-mean distribution.

    ``scale`` multiplies the drawn parameters: either one float for all
    layers or a per-layer sequence as produced by :func:`glorot_scales`.
    The default 1.0 is the unscaled distribution above; training recipes
    shrink it (unit-variance entries saturate every layer and are
    untrainable at the experiment learning rates).
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    if np.isscalar(scale):
        scales = [scale] * len(spec.layers)
    else:
        scales = list(scale)
        if len(scales) != len(spec.layers):
            raise ConfigError(
                f"{len(scales)} scale entries for {len(spec.layers)} layers"
            )
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    params = []
    for layer, s in zip(spec.layers, scales):
        shapes = _param_shapes(layer)
        if shapes is None:
            params.append(None)
            continue
        if s is None or not s > 0:
            raise ConfigError(f"invalid init scale {s!r} for layer {layer!r}")
        u = rng.normal(0.0, np.sqrt(alpha))
        w = s * rng.normal(u, 1.0, size=shapes[0])
        b = s * rng.normal(u, 1.0, size=shapes[1])
        params.append((w, b))
    return Network(spec, params)


# ---------------------------------------------------------------------------
# Forward / backward


@dataclass
class ActivationTape:
    """Per-layer inputs, outputs and backward caches from one forward pass."""

    inputs: list
    outputs: list
    aux: list

    def __len__(self):
        return len(self.inputs)


def _sample_rank(layer_or_none, spec):
    # rank of a single (unbatched) input to the first layer
    first = spec.layers[0] if spec.layers else None
    if isinstance(first, (Conv2d, MaxPool2d)):
        return 3
    return 1


def _promote_batch(spec: NetworkSpec, x):
    x = np.asarray(x, dtype=np.float64)
    rank = _sample_rank(None, spec)
    if x.ndim == rank:
        return x[None, ...], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(
        f"input rank {x.ndim} incompatible with network expecting "
        f"samples of rank {rank}"
    )


def _layer_forward(layer, p, x, k):
    if isinstance(layer, Linear):
        if x.ndim != 2:
            raise ShapeError(f"layer {k}: Linear expects 2-d input, got {x.shape}")
        if x.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {k}: Linear expects {layer.in_dim} features, got {x.shape[1]}"
            )
        w, b = p
        return x @ w.T + b, None
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0), None
    if isinstance(layer, Conv2d):
        if x.ndim != 4:
            raise ShapeError(f"layer {k}: Conv2d expects 4-d input, got {x.shape}")
        n, c, h, w_ = x.shape
        if c != layer.in_ch:
            raise ShapeError(
                f"layer {k}: Conv2d expects {layer.in_ch} channels, got {c}"
            )
        if h < layer.kh or w_ < layer.kw:
            raise ShapeError(
                f"layer {k}: input {h}x{w_} smaller than kernel "
                f"{layer.kh}x{layer.kw}"
            )
        cols, oh, ow = _im2col(x, layer.kh, layer.kw)
        wmat = p[0].reshape(layer.out_ch, -1)
        y = wmat @ cols  # (n, out_ch, oh*ow) by broadcasting
        y = y + p[1][:, None]
        y = y.reshape(n, layer.out_ch, oh, ow)
        return y, cols
    if isinstance(layer, MaxPool2d):
        if x.ndim != 4:
            raise ShapeError(f"layer {k}: MaxPool2d expects 4-d input, got {x.shape}")
        n, c, h, w_ = x.shape
        ph, pw = h // layer.kh, w_ // layer.kw
        if ph == 0 or pw == 0:
            raise ShapeError(
                f"layer {k}: input {h}x{w_} smaller than pool {layer.kh}x{layer.kw}"
            )
        crop = x[:, :, : ph * layer.kh, : pw * layer.kw]
        windows = crop.reshape(n, c, ph, layer.kh, pw, layer.kw)
        windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, ph, pw, layer.kh * layer.kw
        )
        idx = np.argmax(windows, axis=-1)  # ties resolved to the first entry
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, idx
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    if isinstance(layer, Softmax):
        if x.ndim != 2:
            raise ShapeError(f"layer {k}: Softmax expects 2-d input, got {x.shape}")
        shifted = x - np.max(x, axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / np.sum(e, axis=1, keepdims=True)
        return y, y
    raise ConfigError(f"layer {k}: unknown layer kind {layer!r}")


def _layer_backward(layer, p, x, aux, g, k, with_params=True):
    if isinstance(layer, Linear):
        w, _ = p
        gx = g @ w
        if not with_params:
            return gx, None
        gw = g.T @ x
        gb = g.sum(axis=0)
        return gx, (gw, gb)
    if isinstance(layer, ReLU):
        return g * (x > 0.0), None
    if isinstance(layer, Conv2d):
        n = x.shape[0]
        oh = x.shape[2] - layer.kh + 1
        ow = x.shape[3] - layer.kw + 1
        cols = aux  # (n, c*kh*kw, oh*ow)
        gm = g.reshape(n, layer.out_ch, oh * ow)
        wmat = p[0].reshape(layer.out_ch, -1)
        dcols = wmat.T @ gm  # (n, c*kh*kw, oh*ow)
        gx = _col2im(dcols, x.shape, layer.kh, layer.kw, oh, ow)
        if not with_params:
            return gx, None
        gw = np.einsum("nop,nkp->ok", gm, cols).reshape(p[0].shape)
        gb = g.sum(axis=(0, 2, 3))
        return gx, (gw, gb)
    if isinstance(layer, MaxPool2d):
        n, c, h, w_ = x.shape
        ph, pw = h // layer.kh, w_ // layer.kw
        idx = aux
        flat = np.zeros((n, c, ph, pw, layer.kh * layer.kw))
        np.put_along_axis(flat, idx[..., None], g[..., None], axis=-1)
        flat = flat.reshape(n, c, ph, pw, layer.kh, layer.kw)
        flat = flat.transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, ph * layer.kh, pw * layer.kw
        )
        gx = np.zeros_like(x)
        gx[:, :, : ph * layer.kh, : pw * layer.kw] = flat
        return gx, None
    if isinstance(layer, Flatten):
        return g.reshape(aux), None
    if isinstance(layer, Softmax):
        y = aux
        gx = y * (g - np.sum(g * y, axis=1, keepdims=True))
        return gx, None
    raise ConfigError(f"layer {k}: unknown layer kind {layer!r}")


def _im2col(x, kh, kw):
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + oh, j : j + ow]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(dcols, x_shape, kh, kw, oh, ow):
    n, c, _, _ = x_shape
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    gx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + oh, j : j + ow] += dcols[:, :, i, j]
    return gx


def _run_forward(net: Network, x, lo: int, hi: int) -> ActivationTape:
    tape = ActivationTape(inputs=[], outputs=[], aux=[])
    cur = x
    for k in range(lo, hi):
        layer = net.spec.layers[k]
        y, aux = _layer_forward(layer, net.params[k], cur, k)
        tape.inputs.append(cur)
        tape.outputs.append(y)
        tape.aux.append(aux)
        cur = y
    return tape


def forward(net: Network, x):
    """Full forward pass; returns (output, tape).

    The tape keeps every layer's input, output and backward cache so
    that :func:`backward` can run without recomputation.
    """
    xb, squeeze = _promote_batch(net.spec, x)
    tape = _run_forward(net, xb, 0, len(net.spec.layers))
    y = tape.outputs[-1] if tape.outputs else xb
    if squeeze:
        return y[0], tape
    return y, tape


def hidden(net: Network, x):
    """Feature-extractor output: activations after layer cut_index - 1.

    With ``cut_index == 0`` this returns the input unchanged.
    """
    xb, squeeze = _promote_batch(net.spec, x)
    tape = _run_forward(net, xb, 0, net.cut_index)
    h = tape.outputs[-1] if tape.outputs else xb
    if squeeze:
        return h[0]
    return h


def hidden_from_tape(net: Network, tape: ActivationTape):
    """The cut-layer activation recorded on a full-forward tape."""
    cut = net.cut_index
    if cut == 0:
        return tape.inputs[0] if tape.inputs else None
    return tape.outputs[cut - 1]


def backward(net: Network, tape: ActivationTape, grad_y, grad_hidden=None,
             with_params=True):
    """Reverse pass over a recorded tape.

    Computes gradients of ``<grad_y, f(x)> + <grad_hidden, h(x)>`` with
    respect to every parameter and the input; ``grad_hidden`` (when
    given) is accumulated into the stream at the cut layer. Returns
    ``(param_grads, grad_x)`` with ``param_grads`` aligned to
    ``spec.layers``.
    """
    nlayers = len(net.spec.layers)
    if len(tape) != nlayers:
        raise ContractError(
            f"tape has {len(tape)} entries for a {nlayers}-layer network"
        )
    g = np.asarray(grad_y, dtype=np.float64)
    out_shape = tape.outputs[-1].shape if nlayers else None
    if nlayers and g.shape != out_shape:
        if g.shape == out_shape[1:] and out_shape[0] == 1:
            g = g[None, ...]
        else:
            raise ShapeError(
                f"grad_y shape {g.shape} does not match output {out_shape}"
            )
    cut = net.cut_index
    gh = None
    if grad_hidden is not None:
        gh = np.asarray(grad_hidden, dtype=np.float64)
        href = tape.outputs[cut - 1] if cut > 0 else tape.inputs[0]
        if gh.shape != href.shape:
            if gh.shape == href.shape[1:] and href.shape[0] == 1:
                gh = gh[None, ...]
            else:
                raise ShapeError(
                    f"grad_hidden shape {gh.shape} does not match cut "
                    f"activation {href.shape}"
                )
    if gh is not None and cut == nlayers:
        g = g + gh
    param_grads = [None] * nlayers
    for k in range(nlayers - 1, -1, -1):
        layer = net.spec.layers[k]
        g, pg = _layer_backward(
            layer, net.params[k], tape.inputs[k], tape.aux[k], g, k,
            with_params=with_params,
        )
        param_grads[k] = pg
        if gh is not None and k == cut:
            g = g + gh
    return param_grads, g


def hidden_forward(net: Network, x):
    """Forward through the feature extractor only; returns (h, tape)."""
    xb, squeeze = _promote_batch(net.spec, x)
    tape = _run_forward(net, xb, 0, net.cut_index)
    h = tape.outputs[-1] if tape.outputs else xb
    return (h[0] if squeeze else h), tape


def hidden_backward(net: Network, tape: ActivationTape, grad_h):
    """Gradient of ``<grad_h, h(x)>`` with respect to x; no param grads."""
    g = np.asarray(grad_h, dtype=np.float64)
    for k in range(net.cut_index - 1, -1, -1):
        layer = net.spec.layers[k]
        g, _ = _layer_backward(
            layer, net.params[k], tape.inputs[k], tape.aux[k], g, k,
            with_params=False,
        )
    return g


# ---------------------------------------------------------------------------
# Prediction and spectral norm


def predict_class(y) -> int:
    """Index of the largest-magnitude score; ties go to the lowest index."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ContractError(f"expected a non-empty score vector, got shape {y.shape}")
    return int(np.argmax(np.abs(y)))


def predict_classes(scores) -> np.ndarray:
    """Batched :func:`predict_class` over rows of an (N, C) array."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise ContractError(f"expected an (N, C) score array, got {scores.shape}")
    return np.argmax(np.abs(scores), axis=1)


def power_iteration(matvec, rmatvec, dim: int, iters: int, seed: int) -> float:
    """Largest singular value of an implicit linear map via power iteration."""
    if iters < 1:
        raise ContractError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = np.ones(dim)
        nv = np.sqrt(float(dim))
    v = v / nv
    for _ in range(iters):
        u = matvec(v)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = rmatvec(u)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v = v / nv
    return float(np.linalg.norm(matvec(v)))


def spectral_norm(w, iters: int, seed: int) -> float:
    """Power-iteration estimate of the largest singular value of a matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ContractError(f"expected a matrix, got shape {w.shape}")
    return power_iteration(
        lambda v: w @ v, lambda u: w.T @ u, w.shape[1], iters, seed
    )
