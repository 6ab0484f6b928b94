import numpy as np
import pytest

from gradcheck import net_grad_error
from safeq.core import ValidationError
from safeq.neural import SGD, Adam, DenseNet, load_checkpoint, make_optimizer, save_checkpoint


def _np_act(name, z):
    return {"tanh": np.tanh, "relu": lambda v: np.maximum(v, 0), "identity": lambda v: v}[name](z)


def test_identity_linear_layer():
    net = DenseNet([3, 3])
    net.weights[0][...] = np.eye(3)
    net.biases[0][...] = 0
    x = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(net.forward(x), x)


def test_zero_weights_give_activated_bias():
    net = DenseNet([2, 3], activations=["tanh"])
    net.weights[0][...] = 0
    net.biases[0][...] = [0.1, -0.3, 2.0]
    assert np.allclose(net.forward(np.ones((1, 2))), np.tanh([[0.1, -0.3, 2.0]]), atol=0, rtol=0)


def test_forward_matches_straight_line_evaluation(rng):
    for k in range(10):
        net = DenseNet([5, 7, 4, 2], activations=["tanh", "relu", "identity"], rng=np.random.default_rng(k))
        x = rng.normal(size=(3, 5))
        ref = np.empty((3, 2))
        for r in range(3):
            h = list(x[r])
            for W, b, act in zip(net.weights, net.biases, net.activations):
                z = [sum(h[i] * W[i, j] for i in range(len(h))) + b[j] for j in range(W.shape[1])]
                h = list(_np_act(act, np.array(z)))
            ref[r] = h
        assert np.max(np.abs(net.forward(x) - ref)) <= 1e-12


def test_shape_mismatch():
    with pytest.raises(ValidationError):
        DenseNet([3, 2]).forward(np.ones((1, 4)))


def test_backward_needs_cache():
    net = DenseNet([2, 2])
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))
    net.forward(np.ones((1, 2)))
    net.backward(np.ones((1, 2)))
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))
    net.predict(np.ones((1, 2)))
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))


def test_backward_matches_finite_differences(rng):
    for k in range(20):
        acts = [rng.choice(["tanh", "identity"]) for _ in range(2)] + ["identity"]
        net = DenseNet([3, 5, 4, 2], activations=acts, rng=np.random.default_rng(k))
        x = rng.normal(size=(6, 3))
        w = rng.normal(size=(6, 2))

        def loss():
            return float((net.predict(x) * w).sum())

        def grads():
            net.forward(x)
            return net.backward(w)[0]

        assert net_grad_error(net, loss, grads) <= 1e-4


def test_input_gradient(rng):
    net = DenseNet([3, 6, 1], rng=rng)
    x = rng.normal(size=(1, 3))
    net.forward(x)
    _, gx = net.backward(np.ones((1, 1)))
    h = 1e-6
    num = [(net.predict(x + h * e) - net.predict(x - h * e))[0, 0] / (2 * h) for e in np.eye(3)]
    assert np.allclose(gx[0], num, rtol=1e-6, atol=1e-9)


def test_zero_output_gradient():
    net = DenseNet([3, 4, 2])
    net.forward(np.ones((2, 3)))
    grads, gx = net.backward(np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_linear_weight_gradient_is_input():
    net = DenseNet([3, 1])
    x = np.array([[0.5, -1.0, 2.0]])
    net.forward(x)
    grads, _ = net.backward(np.ones((1, 1)))
    assert np.array_equal(grads[0][:, 0], x[0])


def test_forward_is_pure(rng):
    net = DenseNet([4, 8, 2], rng=rng)
    x = rng.normal(size=(5, 4))
    assert np.array_equal(net.predict(x), net.predict(x))
    assert np.array_equal(net.forward(x), net.predict(x))


def test_sgd_zero_rate():
    p = [np.array([1.0, 2.0])]
    SGD(0.0).step(p, [np.array([3.0, 4.0])])
    assert np.array_equal(p[0], [1.0, 2.0])


def test_sgd_arithmetic():
    p = [np.array([1.0])]
    SGD(0.1).step(p, [np.array([2.0])])
    assert p[0][0] == pytest.approx(0.8)


def test_adam_quadratic_bowl():
    p = [np.array([3.0, -2.0])]
    opt = Adam(0.05)
    losses = []
    for _ in range(100):
        losses.append(float(p[0] @ p[0]))
        opt.step(p, [2 * p[0]])
    assert np.all(np.diff(losses) < 0)


def test_non_finite_gradient_aborts():
    for opt in (SGD(0.1), Adam(0.1)):
        with pytest.raises(FloatingPointError):
            opt.step([np.zeros(2)], [np.array([np.nan, 0.0])])


def test_unknown_optimizer():
    with pytest.raises(ValidationError):
        make_optimizer("rmsprop", 0.1)


def test_checkpoint_roundtrip(tmp_path, rng):
    net = DenseNet([4, 6, 2], rng=rng)
    path = tmp_path / "ck.txt"
    save_checkpoint(path, {"kind": "test", "spec": net.spec()}, net.tensors("q"))
    meta, tensors = load_checkpoint(path)
    back = DenseNet.from_tensors(meta["spec"], tensors, "q")
    assert np.array_equal(back.get_flat(), net.get_flat())
    assert path.read_text().splitlines()[0] == "safeq-checkpoint 1"


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("hello\n{}\n")
    with pytest.raises(ValidationError):
        load_checkpoint(p)


def test_copy_is_independent(rng):
    net = DenseNet([2, 3, 1], rng=rng)
    c = net.copy()
    c.weights[0] += 1
    assert not np.array_equal(c.weights[0], net.weights[0])
    c.load_from(net)
    assert np.array_equal(c.get_flat(), net.get_flat())
