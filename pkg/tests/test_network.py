import numpy as np
import pytest

from mixcon.errors import ConfigError, ContractError, ShapeError
from mixcon.network import (
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    Network,
    NetworkSpec,
    ReLU,
    Softmax,
    backward,
    forward,
    glorot_scales,
    hidden,
    hidden_from_tape,
    init_params,
    predict_class,
    predict_classes,
    spectral_norm,
    synthetic_network_spec,
    lenet5_network_spec,
)

from conftest import numeric_grad, rel_err


def identity_linear(n):
    spec = NetworkSpec(layers=(Linear(n, n),), cut_index=1)
    return Network(spec, [(np.eye(n), np.zeros(n))])


# ---------------------------------------------------------------------------
# forward


def test_linear_identity_forward():
    net = identity_linear(2)
    y, _ = forward(net, np.array([1.0, 2.0]))
    assert np.array_equal(y, [1.0, 2.0])


def test_relu_forward():
    spec = NetworkSpec(layers=(ReLU(),), cut_index=0)
    net = Network(spec, [None])
    y, _ = forward(net, np.array([-3.0, 5.0]))
    assert np.array_equal(y, [0.0, 5.0])


def test_conv_forward_matches_naive_loop():
    spec = NetworkSpec(layers=(Conv2d(1, 1, 2, 2),), cut_index=0)
    w = np.ones((1, 1, 2, 2))
    net = Network(spec, [(w, np.zeros(1))])
    ramp = np.fromfunction(lambda i, j: i + j, (3, 3))
    y, _ = forward(net, ramp[None])
    # independent direct convolution
    expect = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            acc = 0.0
            for a in range(2):
                for b in range(2):
                    acc += ramp[i + a, j + b]
            expect[i, j] = acc
    assert np.array_equal(y[0], expect)
    assert np.array_equal(expect, [[2.0, 4.0], [4.0, 6.0]])


def test_conv_forward_random_vs_naive():
    rng = np.random.default_rng(3)
    spec = NetworkSpec(layers=(Conv2d(2, 3, 3, 2),), cut_index=0)
    w = rng.standard_normal((3, 2, 3, 2))
    b = rng.standard_normal(3)
    net = Network(spec, [(w, b)])
    x = rng.standard_normal((2, 2, 5, 6))
    y, _ = forward(net, x)
    for n in range(2):
        for oc in range(3):
            for i in range(3):
                for j in range(5):
                    acc = b[oc]
                    for ic in range(2):
                        for a in range(3):
                            for c in range(2):
                                acc += w[oc, ic, a, c] * x[n, ic, i + a, j + c]
                    assert abs(y[n, oc, i, j] - acc) < 1e-9


def test_maxpool_forward():
    spec = NetworkSpec(layers=(MaxPool2d(2, 2),), cut_index=0)
    net = Network(spec, [None])
    x = np.array([[1.0, 2.0, 5.0, 1.0], [3.0, 4.0, 0.0, 0.0],
                  [9.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 2.0]])
    y, _ = forward(net, x[None])
    assert np.array_equal(y[0], [[4.0, 5.0], [9.0, 2.0]])


def test_softmax_rows_sum_to_one_and_positive():
    spec = NetworkSpec(layers=(Softmax(),), cut_index=0)
    net = Network(spec, [None])
    x = np.random.default_rng(0).standard_normal((20, 7)) * 30
    y, _ = forward(net, x)
    assert np.all(y > 0)
    assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-12


def test_forward_shape_error_names_layer():
    spec = NetworkSpec(layers=(Linear(3, 2), ReLU(), Linear(2, 2)), cut_index=1)
    net = init_params(spec, 0.0, 0)
    with pytest.raises(ShapeError, match="layer 0"):
        forward(net, np.ones(4))


def test_tape_replays_bit_exactly():
    spec = lenet5_network_spec()
    net = init_params(spec, 0.0, 1, scale=glorot_scales(spec, 0.7))
    x = np.random.default_rng(5).uniform(0, 1, (2, 1, 28, 28))
    y, tape = forward(net, x)
    from mixcon.network import _layer_forward

    for k, layer in enumerate(spec.layers):
        out, _ = _layer_forward(layer, net.params[k], tape.inputs[k], k)
        assert np.array_equal(out, tape.outputs[k])
    assert np.array_equal(tape.outputs[-1], y)


# ---------------------------------------------------------------------------
# hidden / cut behavior


def test_hidden_equals_tape_entry_and_degenerate_cases():
    spec = synthetic_network_spec()
    net = init_params(spec, 0.0, 2, scale=0.1)
    x = np.random.default_rng(0).standard_normal((4, 10))
    y, tape = forward(net, x)
    h = hidden(net, x)
    assert h.shape == (4, 2)
    assert np.array_equal(h, hidden_from_tape(net, tape))

    all_layers = NetworkSpec(layers=spec.layers, cut_index=len(spec.layers))
    net2 = Network(all_layers, net.params)
    assert np.array_equal(hidden(net2, x), forward(net2, x)[0])

    at_zero = NetworkSpec(layers=spec.layers, cut_index=0)
    net3 = Network(at_zero, net.params)
    assert np.array_equal(hidden(net3, x), x)


def test_cut_consistency_forward_equals_g_of_h():
    spec = synthetic_network_spec()
    net = init_params(spec, 0.1, 7, scale=0.1)
    x = np.random.default_rng(1).standard_normal((3, 10))
    y, _ = forward(net, x)
    h = hidden(net, x)
    from mixcon.network import _layer_forward

    cur = h
    for k in range(spec.cut_index, len(spec.layers)):
        cur, _ = _layer_forward(spec.layers[k], net.params[k], cur, k)
    assert np.array_equal(cur, y)


# ---------------------------------------------------------------------------
# backward


def test_linear_backward_adjoint():
    net = identity_linear(2)
    x = np.array([[3.0, 4.0]])
    _, tape = forward(net, x)
    grads, gx = backward(net, tape, np.array([[1.0, 0.0]]))
    assert np.array_equal(gx, [[1.0, 0.0]])
    assert np.array_equal(grads[0][0], np.outer([1.0, 0.0], [3.0, 4.0]))


def test_relu_backward_subgradient_zero_at_negative():
    spec = NetworkSpec(layers=(ReLU(),), cut_index=0)
    net = Network(spec, [None])
    _, tape = forward(net, np.array([[-3.0, 5.0]]))
    _, gx = backward(net, tape, np.array([[1.0, 1.0]]))
    assert np.array_equal(gx, [[0.0, 1.0]])


LAYER_CASES = [
    ("linear", NetworkSpec(layers=(Linear(4, 3),), cut_index=0), (4,)),
    ("relu_mlp", NetworkSpec(layers=(Linear(4, 6), ReLU(), Linear(6, 2)), cut_index=2), (4,)),
    ("conv", NetworkSpec(layers=(Conv2d(2, 3, 3, 3), ReLU()), cut_index=1), (2, 6, 6)),
    ("pool", NetworkSpec(layers=(Conv2d(1, 2, 2, 2), MaxPool2d(2, 2)), cut_index=1), (1, 5, 5)),
    ("flatten", NetworkSpec(layers=(Conv2d(1, 2, 3, 3), Flatten(), Linear(32, 3)), cut_index=2), (1, 6, 6)),
    ("softmax", NetworkSpec(layers=(Linear(3, 4), Softmax()), cut_index=1), (3,)),
]


@pytest.mark.parametrize("name,spec,in_shape", LAYER_CASES)
@pytest.mark.parametrize("trial", range(4))
def test_backward_matches_finite_differences(name, spec, in_shape, trial):
    rng = np.random.default_rng(hash((name, trial)) % (2**32))
    net = init_params(spec, 0.05, int(rng.integers(10000)), scale=0.4)
    x = rng.standard_normal((2,) + in_shape)
    gy_shape = forward(net, x)[0].shape
    gy = rng.standard_normal(gy_shape)
    gh_shape = hidden(net, x).shape
    gh = rng.standard_normal(gh_shape)

    y, tape = forward(net, x)
    grads, gx = backward(net, tape, gy, gh)

    def objective():
        y2, t2 = forward(net, x)
        return float(np.sum(gy * y2) + np.sum(gh * hidden_from_tape(net, t2)))

    assert rel_err(gx, numeric_grad(objective, x)) < 1e-4
    for k, p in enumerate(net.params):
        if p is None:
            continue
        assert rel_err(grads[k][0], numeric_grad(objective, p[0])) < 1e-4
        assert rel_err(grads[k][1], numeric_grad(objective, p[1])) < 1e-4


def test_backward_grad_hidden_at_cut_zero_and_full():
    # cut at 0 adds grad_hidden to grad_x; cut at L adds it to grad_y
    spec0 = NetworkSpec(layers=(Linear(3, 3),), cut_index=0)
    net0 = Network(spec0, [(np.eye(3) * 2.0, np.zeros(3))])
    x = np.array([[1.0, -1.0, 2.0]])
    _, tape = forward(net0, x)
    gy = np.array([[1.0, 1.0, 1.0]])
    gh = np.array([[0.5, 0.5, 0.5]])
    _, gx = backward(net0, tape, gy, gh)
    assert np.array_equal(gx, 2.0 * gy + gh)

    specL = NetworkSpec(layers=(Linear(3, 3),), cut_index=1)
    netL = Network(specL, [(np.eye(3) * 2.0, np.zeros(3))])
    _, tapeL = forward(netL, x)
    _, gxL = backward(netL, tapeL, gy, gh)
    assert np.array_equal(gxL, 2.0 * (gy + gh))


def test_backward_tape_mismatch_raises():
    spec = NetworkSpec(layers=(Linear(2, 2), ReLU()), cut_index=1)
    net = init_params(spec, 0.0, 0)
    _, tape = forward(net, np.ones((1, 2)))
    tape.inputs.pop()
    tape.outputs.pop()
    tape.aux.pop()
    with pytest.raises(ContractError):
        backward(net, tape, np.ones((1, 2)))


# ---------------------------------------------------------------------------
# init_params


def test_init_alpha_zero_entry_statistics():
    spec = NetworkSpec(layers=(Linear(100, 1000),), cut_index=1)
    net = init_params(spec, 0.0, 123)
    w = net.params[0][0]
    assert abs(w.mean()) < 0.02  # 1e5 entries, sd 1/sqrt(1e5) ~ 0.003
    assert abs(w.std() - 1.0) < 0.02


def test_init_deterministic_bit_identical():
    spec = synthetic_network_spec()
    a = init_params(spec, 0.5, 42)
    b = init_params(spec, 0.5, 42)
    for pa, pb in zip(a.params, b.params):
        if pa is None:
            continue
        assert np.array_equal(pa[0], pb[0])
        assert np.array_equal(pa[1], pb[1])


def test_init_matches_independent_generator_reimplementation():
    # same documented draw sequence, written out by hand against PCG64
    spec = NetworkSpec(layers=(Linear(10, 500), ReLU(), Linear(500, 3)), cut_index=1)
    alpha, seed = 0.5, 7
    net = init_params(spec, alpha, seed)

    rng = np.random.default_rng(seed)
    u1 = rng.normal(0.0, np.sqrt(alpha))
    w1 = rng.normal(u1, 1.0, size=(500, 10))
    b1 = rng.normal(u1, 1.0, size=(500,))
    u2 = rng.normal(0.0, np.sqrt(alpha))
    w2 = rng.normal(u2, 1.0, size=(3, 500))
    b2 = rng.normal(u2, 1.0, size=(3,))
    assert np.array_equal(net.params[0][0], w1)
    assert np.array_equal(net.params[0][1], b1)
    assert np.array_equal(net.params[2][0], w2)
    assert np.array_equal(net.params[2][1], b2)
    # per-layer empirical mean within 3 sigma of the recorded layer mean
    assert abs(w1.mean() - u1) < 3.0 / np.sqrt(w1.size)


def test_init_rejects_bad_args():
    spec = synthetic_network_spec()
    with pytest.raises(ConfigError):
        init_params(spec, -1.0, 0)
    with pytest.raises(ConfigError):
        init_params(spec, 0.0, 0, scale=[0.1, 0.2])  # wrong length
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(Linear(3, 4), Linear(5, 2)), cut_index=0)


# ---------------------------------------------------------------------------
# predict_class


def test_predict_class_basic_and_absolute_rule():
    assert predict_class(np.array([0.2, 0.8])) == 1
    assert predict_class(np.array([-0.9, 0.1])) == 0
    assert predict_class(np.array([0.5, 0.5])) == 0  # tie -> lowest index
    with pytest.raises(ContractError):
        predict_class(np.array([]))


def test_predict_classes_batch():
    scores = np.array([[0.2, 0.8], [-0.9, 0.1], [0.5, 0.5]])
    assert np.array_equal(predict_classes(scores), [1, 0, 0])


# ---------------------------------------------------------------------------
# spectral_norm


def jacobi_svd_max(a, sweeps=60):
    """One-sided Jacobi SVD largest singular value; independent oracle."""
    a = np.array(a, dtype=np.float64)
    m, n = a.shape
    if m < n:
        a = a.T
        m, n = a.shape
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p] @ a[:, q]
                app = a[:, p] @ a[:, p]
                aqq = a[:, q] @ a[:, q]
                off = max(off, abs(apq))
                if abs(apq) < 1e-15:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
        if off < 1e-14:
            break
    return float(np.sqrt(max((a[:, j] @ a[:, j]) for j in range(n))))


def test_spectral_norm_identity_and_diag():
    assert abs(spectral_norm(np.eye(3), 50, 0) - 1.0) < 1e-9
    assert abs(spectral_norm(np.diag([3.0, 1.0]), 100, 0) - 3.0) < 1e-6


def test_spectral_norm_zero_matrix():
    assert spectral_norm(np.zeros((4, 4)), 10, 0) == 0.0


def test_spectral_norm_vs_jacobi_oracle():
    rng = np.random.default_rng(9)
    for _ in range(5):
        w = rng.standard_normal((5, 5))
        est = spectral_norm(w, 300, 1)
        ref = jacobi_svd_max(w)
        assert abs(est - ref) / ref < 1e-4


def test_spectral_norm_monotone_in_iters():
    w = np.random.default_rng(11).standard_normal((8, 6))
    vals = [spectral_norm(w, k, 3) for k in (1, 2, 4, 8, 16, 32)]
    for a, b in zip(vals, vals[1:]):
        assert b >= a - 1e-12
