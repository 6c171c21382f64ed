import numpy as np
import pytest

from lmdkit.graph import DataSet
from lmdkit.mlp import (
    ConvergenceCertificate,
    MLPModel,
    NotConvergedError,
    TrainConfig,
    TrainingDivergedError,
    encoding_check,
    forward,
    forward_batch,
    gradient_check,
    init_model,
    loss_and_gradients,
    train,
)


def linear_model(w, activation="tanh"):
    return MLPModel([np.asarray(w, dtype=float)], activation, "linear",
                    ConvergenceCertificate(0.0, 0.0, 0, True, 1e-4))


def test_forward_zero_weights():
    for act in ("tanh", "relu"):
        m = MLPModel([np.zeros((3, 4)), np.zeros((5, 2))], act, "same")
        np.testing.assert_array_equal(forward(m, [0.3, -2.0]), [0.0, 0.0])


def test_forward_identity_layer():
    w = np.vstack([np.eye(3), np.zeros((1, 3))])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(forward(linear_model(w), x), x)


def test_forward_scalar_tanh_chain():
    # 1-1-1 tanh hidden, linear head, every weight and bias equal to 1
    m = MLPModel([np.ones((2, 1)), np.ones((2, 1))], "tanh", "linear")
    assert forward(m, [0.0])[0] == pytest.approx(np.tanh(1.0) + 1.0, abs=1e-15)
    assert forward(m, [0.0])[0] == pytest.approx(1.7616, abs=1e-4)


def test_forward_shape_errors():
    m = init_model([2, 3, 1])
    with pytest.raises(ValueError):
        forward(m, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        forward(m, [[1.0, 2.0]])


def test_init_bounds_and_determinism():
    a, b = init_model([4, 6, 2], seed=3), init_model([4, 6, 2], seed=3)
    for wa, wb, fan_in in zip(a.layers, b.layers, (4, 6)):
        assert wa.tobytes() == wb.tobytes()
        assert np.max(np.abs(wa)) <= 1 / np.sqrt(fan_in)


def test_train_already_converged():
    m = init_model([2, 3, 1], seed=1)
    x = np.random.default_rng(0).standard_normal((5, 2))
    data = DataSet(x, forward_batch(m, x))
    cert = train(m, data, TrainConfig())
    assert cert.epochs_used == 0 and cert.stable
    assert cert.grad_norm <= cert.grad_tol


def test_train_zero_learning_rate(xor_data):
    m = init_model([2, 4, 1], seed=2)
    before = [w.copy() for w in m.layers]
    _, grads = loss_and_gradients(m, xor_data.points, xor_data.targets)
    g0 = np.linalg.norm(np.concatenate([g.ravel() for g in grads]))
    cert = train(m, xor_data, TrainConfig(learning_rate=0.0, max_epochs=25))
    for w, w0 in zip(m.layers, before):
        assert w.tobytes() == w0.tobytes()
    assert cert.grad_norm == g0
    assert cert.epochs_used == 25


@pytest.mark.parametrize("batch", [0, 2])
def test_train_is_bit_reproducible(xor_data, batch):
    runs = []
    for _ in range(2):
        m = init_model([2, 8, 1], seed=5)
        train(m, xor_data, TrainConfig(max_epochs=300, batch=batch, seed=9))
        runs.append(b"".join(w.tobytes() for w in m.layers))
    assert runs[0] == runs[1]


def test_train_xor_converges(xor_data):
    m = init_model([2, 8, 1], "tanh", seed=42)
    cert = train(m, xor_data, TrainConfig(learning_rate=0.1, max_epochs=20000, seed=42))
    assert cert.final_loss < 0.01 and cert.stable
    assert m.certificate is cert
    assert cert.stability_constant_estimate is None or cert.stability_constant_estimate > 0


def test_train_divergence_reports_epoch():
    x = np.array([[1e3], [2e3]])
    data = DataSet(x, np.array([[1.0], [-1.0]]))
    with pytest.raises(TrainingDivergedError) as info:
        train(init_model([1, 1], seed=0), data, TrainConfig(learning_rate=10.0, max_epochs=1000, grad_tol=1e-8))
    assert info.value.epoch > 0


def test_linear_gradient_matches_closed_form():
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    w = rng.standard_normal((4, 2))
    m = linear_model(w)
    _, grads = loss_and_gradients(m, x, y)
    xa = np.hstack([x, np.ones((7, 1))])
    oracle = 2.0 / 7 * xa.T @ (xa @ w - y)
    assert np.max(np.abs(grads[0] - oracle)) <= 1e-12
    rep = gradient_check(m, DataSet(x, y))
    assert rep.checked == 100 and rep.max_rel_error <= 1e-6


def test_gradient_check_zero_residual():
    m = init_model([3, 1], seed=0)
    x = np.random.default_rng(2).standard_normal((4, 3))
    data = DataSet(x, forward_batch(m, x))
    _, grads = loss_and_gradients(m, data.points, data.targets)
    assert np.linalg.norm(np.concatenate([g.ravel() for g in grads])) <= 1e-10
    assert gradient_check(m, data).max_rel_error <= 1e-4


def test_gradient_check_deep_tanh():
    rng = np.random.default_rng(8)
    m = init_model([3, 5, 4, 2], "tanh", "same", seed=8)
    data = DataSet(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
    rep = gradient_check(m, data, samples=100)
    assert rep.checked == 100 and rep.max_rel_error <= 1e-4


def test_gradient_check_relu_kink_excluded():
    rng = np.random.default_rng(3)
    m = init_model([3, 6, 1], "relu", seed=3)
    data = DataSet(rng.standard_normal((8, 3)), rng.standard_normal((8, 1)))
    rep = gradient_check(m, data)
    assert rep.checked == 100 and rep.max_rel_error <= 1e-4


def test_encoding_zero_delta(xor_data):
    m = init_model([2, 3, 1], seed=0)
    rep = encoding_check(m, xor_data, 0.0, force=True)
    assert rep.epsilon_perturbed == 0.0
    assert rep.epsilon_train >= 0


def test_encoding_linear_bound():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((5, 3))
    m = linear_model(rng.standard_normal((4, 2)))
    data = DataSet(x, forward_batch(m, x))
    bound_norm = np.max(np.linalg.norm(np.hstack([x, np.ones((5, 1))]), axis=1))
    for d in (1e-3, 0.1, 2.0):
        rep = encoding_check(m, data, d, trials=50, seed=1)
        assert rep.epsilon_perturbed <= d * bound_norm
        assert rep.epsilon_train <= 1e-15


def test_encoding_monotone_in_delta(xor_data):
    m = init_model([2, 8, 1], seed=42)
    train(m, xor_data, TrainConfig(max_epochs=20000))
    reps = [encoding_check(m, xor_data, d, seed=42) for d in (0.0, 1e-3, 1e-2, 1e-1)]
    values = [r.epsilon_perturbed for r in reps]
    assert values == sorted(values)
    assert reps[0].epsilon_train < 0.1


def test_encoding_rejects_unconverged(xor_data):
    with pytest.raises(NotConvergedError):
        encoding_check(init_model([2, 2, 1]), xor_data, 0.1)
    with pytest.raises(ValueError):
        encoding_check(init_model([2, 2, 1]), xor_data, -1.0, force=True)
