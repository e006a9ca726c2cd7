"""Training losses: cross-entropy plus the two consistency penalties.

The consistency losses operate on cut-layer feature rows. Both expect
features that were already normalized with :func:`normalize_features`;
the training loop owns that composition and chains gradients back to
the raw features with :func:`normalize_features_backward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class LossValue:
    value: float
    grad: np.ndarray  # gradient with respect to the loss's direct input


@dataclass(frozen=True)
class MixConParams:
    """Penalty weight, separability balance, and the distance clamp."""

    lam: float
    beta: float
    eps: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not (0.0 < self.eps < 1.0):
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")


@dataclass
class CombinedLoss:
    """Classification plus weighted consistency, with both gradients.

    The gradients are kept at their injection points: ``score_grad``
    feeds the output layer, ``hidden_grad`` feeds the cut layer.
    """

    value: float
    score_grad: np.ndarray
    hidden_grad: np.ndarray


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def cross_entropy(scores, labels) -> LossValue:
    """Summed (not averaged) cross-entropy over the batch.

    ``labels`` must be one-hot rows; the gradient with respect to the
    scores is ``softmax(scores) - labels`` per sample.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ContractError(
            f"scores {scores.shape} and one-hot labels {labels.shape} must "
            "share an (N, C) shape"
        )
    is_binary = np.all((labels == 0.0) | (labels == 1.0))
    if not is_binary or not np.all(labels.sum(axis=1) == 1.0):
        raise ContractError("labels rows must be one-hot")
    # log-softmax computed stably; value = -sum y * logp
    shifted = scores - np.max(scores, axis=1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    value = float(-np.sum(labels * logp))
    grad = softmax_rows(scores) - labels
    return LossValue(value=value, grad=grad)


def normalize_features(h: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; zero rows are left untouched."""
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return h / safe


def normalize_features_backward(h: np.ndarray, grad_norm: np.ndarray) -> np.ndarray:
    """Chain a gradient on normalized rows back to the raw rows.

    For a row with norm r and direction u the Jacobian action is
    ``(g - (u . g) u) / r``; zero rows pass the gradient through
    unchanged since normalization left them alone.
    """
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    u = h / safe
    proj = np.sum(u * grad_norm, axis=1, keepdims=True)
    out = (grad_norm - proj * u) / safe
    return np.where(zero, grad_norm, out)


def _group_by_class(labels):
    """Batch indices per class, classes ordered by first appearance."""
    labels = np.asarray(labels)
    order = []
    groups = {}
    for i, c in enumerate(labels):
        c = int(c)
        if c not in groups:
            groups[c] = []
            order.append(c)
        groups[c].append(i)
    return order, groups


def rank_pair_set(labels):
    """Same-rank cross-class index pairs, each unordered pair once.

    Samples are grouped by class in order of appearance; rank i of one
    class is paired with rank i of every other class, up to the minimum
    class size present.
    """
    order, groups = _group_by_class(labels)
    if len(order) < 2:
        return []
    p = min(len(groups[c]) for c in order)
    pairs = []
    for i in range(p):
        for a in range(len(order)):
            for b in range(a + 1, len(order)):
                pairs.append((groups[order[a]][i], groups[order[b]][i]))
    return pairs


def mixcon_loss(h_norm, labels, params: MixConParams):
    """Consistency penalty over same-rank cross-class feature pairs.

    Each pair contributes ``d + beta / d`` where d is the squared L2
    distance clamped to ``[eps, 1/eps]``; the mean is taken over ranks
    and ordered class pairs. Clamped pairs contribute a constant, so
    their gradient is zero. Returns ``(LossValue, pair_set)`` where the
    pair set lists each unordered index pair used once.
    """
    h_norm = np.asarray(h_norm, dtype=np.float64)
    if h_norm.ndim != 2 or h_norm.shape[0] == 0:
        raise ContractError(f"expected a non-empty (N, m) feature array, got {h_norm.shape}")
    order, groups = _group_by_class(labels)
    grad = np.zeros_like(h_norm)
    if len(order) < 2:
        return LossValue(value=0.0, grad=grad), []
    p = min(len(groups[c]) for c in order)
    ncls = len(order)
    scale = 1.0 / (p * ncls * (ncls - 1))
    lo, hi = params.eps, 1.0 / params.eps
    total = 0.0
    pairs = []
    for i in range(p):
        for a in range(ncls):
            ia = groups[order[a]][i]
            for b in range(a + 1, ncls):
                ib = groups[order[b]][i]
                pairs.append((ia, ib))
                diff = h_norm[ia] - h_norm[ib]
                d_raw = float(np.dot(diff, diff))
                d = min(max(d_raw, lo), hi)
                total += 2.0 * (d + params.beta / d)  # both orderings contribute
                if lo <= d_raw <= hi:
                    w = 2.0 * scale * (1.0 - params.beta / (d * d))
                    g = (2.0 * w) * diff
                    grad[ia] += g
                    grad[ib] -= g
    return LossValue(value=scale * total, grad=grad), pairs


def unicon_loss(h_norm, labels) -> LossValue:
    """Within-class pairwise squared-distance penalty.

    Averaged per class over ordered pairs, then over the classes that
    appear; classes with fewer than two samples contribute zero.
    """
    h_norm = np.asarray(h_norm, dtype=np.float64)
    if h_norm.ndim != 2 or h_norm.shape[0] == 0:
        raise ContractError(f"expected a non-empty (N, m) feature array, got {h_norm.shape}")
    order, groups = _group_by_class(labels)
    grad = np.zeros_like(h_norm)
    ncls = len(order)
    total = 0.0
    for c in order:
        idx = groups[c]
        nc = len(idx)
        if nc < 2:
            continue
        cls_scale = 1.0 / (nc * (nc - 1))
        rows = h_norm[idx]
        for a in range(nc):
            for b in range(a + 1, nc):
                diff = rows[a] - rows[b]
                d = float(np.dot(diff, diff))
                total += 2.0 * d * cls_scale
                g = (4.0 * cls_scale / ncls) * diff
                grad[idx[a]] += g
                grad[idx[b]] -= g
    return LossValue(value=total / ncls, grad=grad)


def combined_objective(class_loss: LossValue, con_loss: LossValue,
                       lam: float) -> CombinedLoss:
    """Linear combination of classification and consistency losses."""
    return CombinedLoss(
        value=class_loss.value + lam * con_loss.value,
        score_grad=class_loss.grad,
        hidden_grad=lam * con_loss.grad,
    )
