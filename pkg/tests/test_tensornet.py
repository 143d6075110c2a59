import numpy as np
import pytest

from acegan import tensornet as tn
from acegan.errors import NoForwardCache, ShapeMismatch

from . import oracles


def check_layer(layer, x, training=False, tol=1e-5):
    """Gradcheck a single-input layer against a fixed random projection of its output."""
    rng = np.random.default_rng(0)
    y = layer.forward(x, training)
    proj = rng.normal(size=y.shape)

    def loss():
        return float(np.sum(layer.forward(x, training) * proj))

    loss()
    dx = layer.backward(proj)
    arrays = {k: p.data for k, p in layer.params().items()}
    grads = {k: p.grad for k, p in layer.params().items()}
    if dx is not None:
        arrays["input"], grads["input"] = x, dx
    report = tn.gradcheck(loss, arrays, grads, tolerance=tol)
    assert report.passed, str(report)
    return report


def test_dense_activations():
    rng = np.random.default_rng(1)
    for act in ("linear", "relu", "softmax"):
        check_layer(tn.Dense(5, 4, act, rng, std=0.5), rng.normal(size=(3, 5)))


def test_conv_patch_and_fft_routes_match_loops():
    rng = np.random.default_rng(2)
    conv = tn.Conv2d(2, 3, 4, rng, std=0.3)
    conv.b.data[:] = rng.normal(size=3)
    for size in (9, 20):
        x = rng.normal(size=(2, 2, size, size))
        ref = oracles.conv2d_valid(x, conv.W.data, conv.b.data)
        assert np.allclose(conv.forward(x), ref, atol=1e-11)


@pytest.mark.parametrize("size", [10, 18])
def test_conv_gradients(size):
    rng = np.random.default_rng(3)
    check_layer(tn.Conv2d(2, 3, 3, rng, std=0.3), rng.normal(size=(2, 2, size, size)))


def test_conv_skip_input_grad():
    rng = np.random.default_rng(4)
    conv = tn.Conv2d(1, 2, 3, rng)
    conv.skip_input_grad = True
    conv.forward(rng.normal(size=(1, 1, 20, 20)))
    assert conv.backward(np.ones((1, 2, 18, 18))) is None
    assert conv.W.grad.shape == (2, 1, 3, 3)


def test_pools_and_flatten():
    rng = np.random.default_rng(5)
    check_layer(tn.MaxPool(2), rng.normal(size=(2, 2, 6, 6)))
    check_layer(tn.AvgPool(3), rng.normal(size=(2, 2, 7, 7)))
    check_layer(tn.Flatten(), rng.normal(size=(2, 3, 2, 2)))
    check_layer(tn.ReLU(), rng.normal(size=(4, 6)))


def test_maxpool_values_and_floor():
    x = np.arange(25.0).reshape(1, 1, 5, 5)
    assert tn.MaxPool(2).forward(x)[0, 0].tolist() == [[6, 8], [16, 18]]
    assert tn.AvgPool(2).forward(x)[0, 0].tolist() == [[3, 5], [13, 15]]


def test_batchnorm_train_and_eval_gradients():
    rng = np.random.default_rng(6)
    bn = tn.BatchNorm(4)
    bn.gamma.data[:] = rng.normal(size=4)
    check_layer(bn, rng.normal(size=(6, 4)), training=True)
    check_layer(bn, rng.normal(size=(6, 4)), training=False)


def test_batchnorm_running_stats():
    bn = tn.BatchNorm(2, momentum=0.8)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    bn.forward(x, training=True)
    assert np.allclose(bn.running_mean, 0.2 * x.mean(0))
    assert np.allclose(bn.running_var, 0.8 + 0.2 * x.var(0))


def test_dropout_inverted_scaling_and_gradient():
    rng = np.random.default_rng(7)
    d = tn.Dropout(0.5, rng)
    y = d.forward(np.ones((1000, 10)), training=True)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    assert np.array_equal(d.backward(np.ones_like(y)), y)
    assert np.array_equal(d.forward(np.ones(3), training=False), np.ones(3))


def test_embedding_and_multiply():
    rng = np.random.default_rng(8)
    emb = tn.Embedding(4, 3, rng, std=1.0)
    idx = np.array([0, 2, 2, 1])
    proj = rng.normal(size=(4, 3))

    def loss():
        return float(np.sum(emb.forward(idx) * proj))

    loss()
    emb.backward(proj)
    assert tn.gradcheck(loss, {"W": emb.W.data}, {"W": emb.W.grad}).passed
    mul = tn.ElementwiseMultiply()
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    mul.forward(a, b)
    da, db = mul.backward(np.ones((2, 3)))
    assert np.array_equal(da, b) and np.array_equal(db, a)
    with pytest.raises(ShapeMismatch):
        mul.forward(a, b[:1])
    with pytest.raises(ShapeMismatch):
        emb.forward(np.array([4]))


@pytest.mark.parametrize("loss_name", ["mse", "cross_entropy"])
def test_loss_heads(loss_name):
    rng = np.random.default_rng(9)
    if loss_name == "mse":
        pred, target = rng.normal(size=7), rng.normal(size=7)
        fn = lambda: tn.mse(pred, target)[0]  # noqa: E731
        g = tn.mse(pred, target)[1]
    else:
        pred = tn.softmax(rng.normal(size=(5, 4)))
        target = rng.integers(0, 4, size=5)
        fn = lambda: tn.cross_entropy(pred, target)[0]  # noqa: E731
        g = tn.cross_entropy(pred, target)[1]
    assert tn.gradcheck(fn, {"pred": pred}, {"pred": g}).passed


def test_sequential_and_shapes():
    rng = np.random.default_rng(10)
    net = tn.Sequential([tn.Conv2d(1, 2, 3, rng, 0.3), tn.ReLU(), tn.MaxPool(2), tn.Flatten(), tn.Dense(8, 3, "softmax", rng, 0.3)])
    assert net.output_shapes((1, 1, 6, 6))[-1] == (1, 3)
    check_layer(net, rng.normal(size=(2, 1, 6, 6)))


def test_backward_without_forward():
    with pytest.raises(NoForwardCache):
        tn.Dense(2, 2).backward(np.ones((1, 2)))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        tn.Dense(3, 2).forward(np.ones((1, 4)))


def test_adam_first_step_and_state():
    p = tn.Parameter(np.array([1.0, -1.0]))
    opt = tn.Adam({"p": p}, lr=0.1)
    p.grad = np.array([0.5, -2.0])
    opt.step()
    # bias-corrected first step moves each coordinate by lr * sign(g)
    assert np.allclose(p.data, [0.9, -0.9], atol=1e-6)
    state = opt.state_dict()
    opt2 = tn.Adam({"p": tn.Parameter(p.data.copy())}, lr=0.1)
    opt2.load_state_dict(state)
    assert opt2.t == 1 and np.array_equal(opt2.m["p"], opt.m["p"])


def test_adam_minimises_quadratic():
    p = tn.Parameter(np.array([3.0, -2.0]))
    opt = tn.Adam({"p": p}, lr=0.05, beta1=0.9)
    for _ in range(2000):
        p.grad = 2 * p.data
        opt.step()
    assert np.all(np.abs(p.data) < 1e-2)


def test_container_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    tn.save(tmp_path / "x.tnet", arrays)
    back = tn.load(tmp_path / "x.tnet")
    assert back.keys() == arrays.keys() and all(np.array_equal(back[k], arrays[k]) for k in arrays)
    assert tn.loads(tn.dumps(arrays))["a"].dtype == np.float64
