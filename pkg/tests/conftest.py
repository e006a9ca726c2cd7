import numpy as np
import pytest
from scipy.ndimage import zoom

from mixcon.data import Dataset


def upscaled_digits():
    """Bundled 8x8 handwritten digits upscaled to 28x28, split 1297/500."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = np.clip(zoom(digits.images / 16.0, (1, 3.5, 3.5), order=1), 0.0, 1.0)
    imgs = imgs[:, None, :, :]
    perm = np.random.default_rng(0).permutation(len(imgs))
    tr, te = perm[:1297], perm[1297:]
    train_ds = Dataset(imgs[tr], digits.target[tr], 10)
    test_ds = Dataset(imgs[te], digits.target[te], 10)
    return train_ds, test_ds


@pytest.fixture(scope="session")
def digits_datasets():
    return upscaled_digits()


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom
