import numpy as np
import pytest
from oracles import central_difference_grad

from triplethash import encoder
from triplethash.linalg import ShapeError

FD_TOL = 1e-5


def random_params(config, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    dims = config.dims
    weights = [rng.normal(0, scale, size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0, scale, size=o) for o in dims[1:]]
    return encoder.EncoderParams(config, weights, biases)


def test_config_validation():
    with pytest.raises(ValueError):
        encoder.EncoderConfig(0, (4,), 2)
    with pytest.raises(ValueError):
        encoder.EncoderConfig(3, (4,), 0)
    with pytest.raises(ValueError):
        encoder.EncoderConfig(3, (4,), 2, activation="sigmoid")
    cfg = encoder.EncoderConfig(3, (4, 5), 2, activation="tanh")
    assert cfg.dims == (3, 4, 5, 2)


def test_forward_zero_params():
    cfg = encoder.EncoderConfig(3, (4,), 2)
    params = encoder.EncoderParams(
        cfg, [np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)]
    )
    out, _ = encoder.forward(params, np.random.default_rng(0).normal(size=(3, 5)))
    assert np.array_equal(out, np.zeros((2, 5)))


def test_forward_identity_layer():
    cfg = encoder.EncoderConfig(3, (), 3)
    params = encoder.EncoderParams(cfg, [np.eye(3)], [np.zeros(3)])
    batch = np.random.default_rng(1).normal(size=(3, 4))
    out, _ = encoder.forward(params, batch)
    assert np.array_equal(out, batch)


def test_forward_deterministic():
    cfg = encoder.EncoderConfig(5, (7, 6), 3)
    params = random_params(cfg, seed=2)
    batch = np.random.default_rng(3).normal(size=(5, 8))
    out1, _ = encoder.forward(params, batch)
    out2, _ = encoder.forward(params, batch)
    assert out1.tobytes() == out2.tobytes()


def test_forward_shape_errors():
    cfg = encoder.EncoderConfig(4, (3,), 2)
    params = random_params(cfg, seed=4)
    with pytest.raises(ShapeError):
        encoder.forward(params, np.ones((5, 2)))
    with pytest.raises(ValueError):
        encoder.forward(params, np.ones((4, 0)))


def test_backward_zero_upstream():
    cfg = encoder.EncoderConfig(4, (3,), 2)
    params = random_params(cfg, seed=5)
    out, tape = encoder.forward(params, np.random.default_rng(6).normal(size=(4, 5)))
    grads, input_grad = encoder.backward(params, tape, np.zeros_like(out))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.weights)
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.biases)
    assert np.array_equal(input_grad, np.zeros((4, 5)))


def test_backward_single_linear_layer():
    cfg = encoder.EncoderConfig(3, (), 2)
    params = random_params(cfg, seed=7)
    rng = np.random.default_rng(8)
    batch = rng.normal(size=(3, 6))
    upstream = rng.normal(size=(2, 6))
    _, tape = encoder.forward(params, batch)
    grads, input_grad = encoder.backward(params, tape, upstream)
    assert np.allclose(grads.weights[0], upstream @ batch.T, atol=1e-14)
    assert np.allclose(grads.biases[0], upstream.sum(axis=1), atol=1e-14)
    assert np.allclose(input_grad, params.weights[0].T @ upstream, atol=1e-14)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_backward_matches_finite_differences(activation):
    cfg = encoder.EncoderConfig(5, (7, 4), 3, activation=activation)
    params = random_params(cfg, seed=9)
    rng = np.random.default_rng(10)
    batch = rng.normal(size=(5, 10))
    upstream = rng.normal(size=(3, 10))
    _, tape = encoder.forward(params, batch)
    grads, _ = encoder.backward(params, tape, upstream)

    for layer in range(len(params.weights)):
        for attr in ("weights", "biases"):
            def objective(values, layer=layer, attr=attr):
                trial = params.copy()
                getattr(trial, attr)[layer] = values
                out, _ = encoder.forward(trial, batch)
                return float((upstream * out).sum())

            fd = central_difference_grad(objective, getattr(params, attr)[layer])
            got = getattr(grads, attr)[layer]
            err = np.abs(got - fd).max() / max(1.0, np.abs(fd).max())
            assert err < FD_TOL, f"layer {layer} {attr}: rel err {err:.2e}"


def test_backward_input_grad_finite_differences():
    cfg = encoder.EncoderConfig(4, (6,), 2, activation="tanh")
    params = random_params(cfg, seed=11)
    rng = np.random.default_rng(12)
    batch = rng.normal(size=(4, 3))
    upstream = rng.normal(size=(2, 3))
    _, tape = encoder.forward(params, batch)
    _, input_grad = encoder.backward(params, tape, upstream)

    def objective(values):
        out, _ = encoder.forward(params, values)
        return float((upstream * out).sum())

    fd = central_difference_grad(objective, batch)
    assert np.abs(input_grad - fd).max() / max(1.0, np.abs(fd).max()) < FD_TOL


def test_backward_tape_mismatch():
    cfg_a = encoder.EncoderConfig(3, (4,), 2)
    cfg_b = encoder.EncoderConfig(3, (5,), 2)
    params_a = random_params(cfg_a, seed=13)
    params_b = random_params(cfg_b, seed=14)
    out, tape = encoder.forward(params_a, np.ones((3, 2)))
    with pytest.raises(ValueError, match="tape"):
        encoder.backward(params_b, tape, np.zeros_like(out))


def test_sgd_step_zero_grads():
    cfg = encoder.EncoderConfig(3, (4,), 2)
    params = random_params(cfg, seed=15)
    zeros = encoder.EncoderParams(
        cfg,
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )
    stepped = encoder.sgd_step(params, zeros, 0.1)
    for old, new in zip(params.weights, stepped.weights):
        assert np.array_equal(old, new)


def test_sgd_step_cancels_params():
    cfg = encoder.EncoderConfig(2, (), 2)
    params = random_params(cfg, seed=16)
    stepped = encoder.sgd_step(params, params, 1.0)
    assert all(np.array_equal(w, np.zeros_like(w)) for w in stepped.weights)
    assert all(np.array_equal(b, np.zeros_like(b)) for b in stepped.biases)


def test_sgd_step_deterministic():
    cfg = encoder.EncoderConfig(3, (4,), 2)
    params = random_params(cfg, seed=17)
    grads = random_params(cfg, seed=18)
    a = encoder.sgd_step(params, grads, 0.05)
    b = encoder.sgd_step(params, grads, 0.05)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()


def test_init_params_shapes_and_determinism():
    cfg = encoder.EncoderConfig(10, (8,), 4)
    a = encoder.init_params(cfg, seed=19)
    b = encoder.init_params(cfg, seed=19)
    assert [w.shape for w in a.weights] == [(8, 10), (4, 8)]
    assert all(np.array_equal(x, np.zeros_like(x)) for x in a.biases)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_checkpoint_roundtrip(tmp_path):
    cfg = encoder.EncoderConfig(6, (5, 4), 3, activation="tanh")
    params = random_params(cfg, seed=20)
    path = tmp_path / "enc.tdh"
    encoder.save_params(params, path, "text")
    loaded, modality = encoder.load_params(path)
    assert modality == "text"
    assert loaded.config == cfg
    for w1, w2 in zip(params.weights, loaded.weights):
        assert w1.tobytes() == w2.tobytes()
    for b1, b2 in zip(params.biases, loaded.biases):
        assert b1.tobytes() == b2.tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.tdh"
    path.write_bytes(b"NOPEx" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        encoder.load_params(path)
