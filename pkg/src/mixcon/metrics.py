"""Recovery-quality and separability metrics.

SSIM uses the standard 11x11 Gaussian window with sigma 1.5,
K1 = 0.01, K2 = 0.03 and dynamic range 1, then maps the raw value from
[-1, 1] to [0, 1]. Reported standard deviations are population (not
sample) deviations throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mse(x, x_star) -> float:
    """Mean over coordinates of the squared difference."""
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x.shape != x_star.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {x_star.shape}")
    return float(np.mean((x - x_star) ** 2))


def cosine_similarity(x, x_star) -> float:
    """Cosine of the angle between flattened tensors; 0 if either is zero."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(x_star, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def mcs(originals, recovered) -> float:
    """Mean cosine similarity over a list of (x, x*) sample pairs."""
    vals = [cosine_similarity(a, b) for a, b in zip(originals, recovered)]
    if not vals:
        raise ContractError("mcs over an empty pair list")
    return float(np.mean(vals))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _ssim_raw_channel(a, b):
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        # too small for the sliding window: single global window
        mu_a, mu_b = a.mean(), b.mean()
        var_a, var_b = a.var(), b.var()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        c1 = SSIM_K1 ** 2
        c2 = SSIM_K2 ** 2
        return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
            (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    pad = SSIM_WINDOW // 2

    def smooth(img):
        out = correlate1d(img, win, axis=0, mode="constant")
        out = correlate1d(out, win, axis=1, mode="constant")
        return out[pad : h - pad, pad : w - pad]  # valid region only

    mu_a = smooth(a)
    mu_b = smooth(b)
    mu_aa = smooth(a * a)
    mu_bb = smooth(b * b)
    mu_ab = smooth(a * b)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(img, img_star) -> float:
    """Normalized windowed SSIM of two (C, H, W) images in [0, 1]."""
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(img_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ContractError(f"expected (C, H, W) images, got shape {a.shape}")
    raw = float(np.mean([_ssim_raw_channel(a[c], b[c]) for c in range(a.shape[0])]))
    return (raw + 1.0) / 2.0


def pairwise_distances(h) -> np.ndarray:
    """All N*(N-1)/2 distinct-pair L2 distances of feature rows.

    Differences are formed explicitly per pair (one anchor row at a
    time) so the result matches a naive double loop bit for bit.
    """
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    out = []
    for i in range(n - 1):
        diffs = h[i + 1 :] - h[i]
        out.append(np.sqrt(np.sum(diffs * diffs, axis=1)))
    return np.concatenate(out) if out else np.empty(0)


def separability(h, pair_set):
    """(delta_h, delta_H, mean_pair) over feature rows.

    delta_h is the minimum distance over all distinct pairs, delta_H the
    maximum over the designated pair set (None when the set is empty),
    and mean_pair the mean over all distinct unordered pairs.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ContractError(f"separability needs at least 2 rows, got {h.shape}")
    dists = pairwise_distances(h)
    delta_h = float(dists.min())
    mean_pair = float(dists.mean())
    if pair_set:
        i_idx = np.fromiter((p[0] for p in pair_set), dtype=np.int64)
        j_idx = np.fromiter((p[1] for p in pair_set), dtype=np.int64)
        diffs = h[i_idx] - h[j_idx]
        delta_big = float(np.sqrt(np.sum(diffs * diffs, axis=1)).max())
    else:
        delta_big = None
    return delta_h, delta_big, mean_pair


@dataclass
class SimilarityReport:
    metric: str
    mean: float
    std: float  # population standard deviation
    worst: float  # the best-recovered sample, i.e. the maximum similarity
    count: int


def aggregate(pairs, metric_fn, name: str = "") -> SimilarityReport:
    """Mean, population std, and max of a per-pair metric."""
    vals = [float(metric_fn(a, b)) for a, b in pairs]
    if not vals:
        raise ContractError("aggregate over an empty pair list")
    arr = np.asarray(vals)
    return SimilarityReport(
        metric=name or getattr(metric_fn, "__name__", "metric"),
        mean=float(arr.mean()),
        std=float(arr.std()),
        worst=float(arr.max()),
        count=len(vals),
    )


def report_csv_rows(reports) -> str:
    """Serialize reports as 'metric,mean,std,worst,count' CSV text."""
    lines = ["metric,mean,std,worst,count"]
    for r in reports:
        lines.append(f"{r.metric},{r.mean!r},{r.std!r},{r.worst!r},{r.count}")
    return "\n".join(lines) + "\n"
