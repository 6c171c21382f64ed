"""Small feedforward networks with absorbed bias rows, trained by plain SGD.

A layer is stored as a ``(fan_in + 1, fan_out)`` matrix whose last row holds
the bias, so a layer maps an activation row vector ``a`` to ``[a, 1] @ W``.
The linear map analysed by :mod:`lmdkit.lmd` is therefore ``W.T``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .graph import DataSet


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class FinalActivation(str, Enum):
    LINEAR = "linear"
    SAME = "same"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss}")
        self.epoch = epoch


class NotConvergedError(RuntimeError):
    pass


@dataclass
class ConvergenceCertificate:
    final_loss: float
    grad_norm: float
    epochs_used: int
    stable: bool
    grad_tol: float
    stability_constant_estimate: float | None = None


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 20000
    batch: int = 0  # 0 means full batch
    seed: int = 0
    grad_tol: float | None = None  # None -> 1e-4 * (1 + loss)
    loss: str = "mse"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class MLPModel:
    layers: list[np.ndarray]
    activation: Activation = Activation.TANH
    final_activation: FinalActivation = FinalActivation.LINEAR
    certificate: ConvergenceCertificate | None = None

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.final_activation = FinalActivation(self.final_activation)
        self.layers = [np.array(w, dtype=np.float64) for w in self.layers]
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for i, w in enumerate(self.layers):
            if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] < 1:
                raise ValueError(f"layer {i} has invalid shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {i} has non-finite weights")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[0] != self.layers[i - 1].shape[1] + 1:
                raise ValueError(
                    f"layer {i} expects {self.layers[i].shape[0] - 1} inputs "
                    f"but layer {i - 1} produces {self.layers[i - 1].shape[1]}"
                )

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].shape[0] - 1] + [w.shape[1] for w in self.layers]

    def copy(self) -> "MLPModel":
        return MLPModel([w.copy() for w in self.layers], self.activation,
                        self.final_activation, self.certificate)


def init_model(widths, activation=Activation.TANH,
               final_activation=FinalActivation.LINEAR, seed: int = 0) -> MLPModel:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], bias row included."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(rng.uniform(-bound, bound, size=(fan_in + 1, fan_out)))
    return MLPModel(layers, activation, final_activation)


def _act(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return 1.0 - a * a
    # subgradient at 0 is 0
    return (z > 0).astype(np.float64)


def augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _applies_activation(model: MLPModel, layer: int) -> bool:
    last = layer == len(model.layers) - 1
    return not last or model.final_activation is FinalActivation.SAME


def _forward_cache(model: MLPModel, x: np.ndarray):
    inputs, pre, post = [], [], []
    a = x
    for i, w in enumerate(model.layers):
        xa = augment(a)
        z = xa @ w
        a = _act(model.activation, z) if _applies_activation(model, i) else z
        inputs.append(xa)
        pre.append(z)
        post.append(a)
    return inputs, pre, post


def _check_inputs(model: MLPModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.widths[0]:
        raise ValueError(f"input has length {x.shape[1]}, model expects {model.widths[0]}")
    return x


def forward_batch(model: MLPModel, x) -> np.ndarray:
    x = _check_inputs(model, x)
    return _forward_cache(model, x)[2][-1]


def forward(model: MLPModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector")
    return forward_batch(model, x)[0]


def layer_inputs(model: MLPModel, x) -> list[np.ndarray]:
    """Activations entering each layer (without the bias column)."""
    x = _check_inputs(model, x)
    inputs, _, _ = _forward_cache(model, x)
    return [xa[:, :-1] for xa in inputs]


def layer_outputs(model: MLPModel, x) -> list[np.ndarray]:
    """Pre-activation outputs of each layer's linear map."""
    x = _check_inputs(model, x)
    return _forward_cache(model, x)[1]


def loss_and_gradients(model: MLPModel, x: np.ndarray, y: np.ndarray):
    """MSE loss ``mean_i ||f(x_i) - y_i||^2`` and its gradient per layer."""
    inputs, pre, post = _forward_cache(model, x)
    p = x.shape[0]
    err = post[-1] - y
    with np.errstate(over="ignore", invalid="ignore"):
        # divergence is reported by the caller as a non-finite loss
        loss = float(np.sum(err * err) / p)
    delta = 2.0 * err / p
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        if _applies_activation(model, i):
            delta = delta * _act_grad(model.activation, pre[i], post[i])
        grads[i] = inputs[i].T @ delta
        if i:
            delta = (delta @ model.layers[i].T)[:, :-1]
    return loss, grads


def _flat(arrays) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def _require_targets(data: DataSet) -> np.ndarray:
    if data.targets is None:
        raise ValueError("dataset has no targets")
    return data.targets


def train(model: MLPModel, data: DataSet, cfg: TrainConfig) -> ConvergenceCertificate:
    """Train in place with fixed-step SGD until the gradient certificate holds.

    Each epoch first evaluates the full-batch gradient; training stops as
    soon as its norm drops to the tolerance, otherwise one pass of
    (shuffled, seeded) minibatch updates follows.
    """
    x = _check_inputs(model, data.points)
    y = _require_targets(data)
    if y.shape[1] != model.widths[-1]:
        raise ValueError(f"targets have width {y.shape[1]}, model outputs {model.widths[-1]}")
    p = x.shape[0]
    batch = p if cfg.batch <= 0 or cfg.batch >= p else cfg.batch
    rng = np.random.default_rng(cfg.seed)
    history: deque = deque(maxlen=11)

    epoch = 0
    while True:
        loss, grads = loss_and_gradients(model, x, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        gnorm = float(np.linalg.norm(_flat(grads)))
        tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-4 * (1.0 + loss)
        history.append((_flat(model.layers), _flat(grads)))
        if gnorm <= tol or epoch >= cfg.max_epochs:
            break
        if batch == p:
            for w, g in zip(model.layers, grads):
                w -= cfg.learning_rate * g
        else:
            order = rng.permutation(p)
            for start in range(0, p, batch):
                idx = order[start:start + batch]
                _, bgrads = loss_and_gradients(model, x[idx], y[idx])
                for w, g in zip(model.layers, bgrads):
                    w -= cfg.learning_rate * g
        epoch += 1

    m_star = None
    if len(history) >= 2:
        (w0, g0), (w1, g1) = history[0], history[-1]
        dg = np.linalg.norm(g1 - g0)
        if dg > 0:
            m_star = float(np.linalg.norm(w1 - w0) / dg)
    cert = ConvergenceCertificate(
        final_loss=loss, grad_norm=gnorm, epochs_used=epoch,
        stable=gnorm <= tol, grad_tol=tol, stability_constant_estimate=m_star,
    )
    model.certificate = cert
    return cert


@dataclass
class GradientCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    errors: list[float] = field(default_factory=list, repr=False)


def gradient_check(model: MLPModel, data: DataSet, samples: int = 100,
                   step: float = 1e-5, seed: int = 0) -> GradientCheckReport:
    """Compare backprop against central differences on sampled weights.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``. For ReLU models a
    sample is skipped when the probe changes any unit's on/off pattern or
    any pre-activation sits within 1e-6 of the kink.
    """
    x = _check_inputs(model, data.points)
    y = _require_targets(data)
    _, grads = loss_and_gradients(model, x, y)
    sizes = [w.size for w in model.layers]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    probe = model.copy()

    def pattern(m):
        return [z > 0 for z in _forward_cache(m, x)[1]]

    relu = model.activation is Activation.RELU
    if relu and any(np.any(np.abs(z) < 1e-6) for z in _forward_cache(model, x)[1]):
        return GradientCheckReport(float("nan"), 0, samples)
    base_pattern = pattern(model) if relu else None

    errors, skipped = [], 0
    attempts = 0
    while len(errors) < samples and attempts < 20 * samples:
        attempts += 1
        flat = int(rng.integers(total))
        layer = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[layer], model.layers[layer].shape)
        w = probe.layers[layer]
        orig = w[idx]
        w[idx] = orig + step
        plus, _ = loss_and_gradients(probe, x, y)
        pat_plus = pattern(probe) if relu else None
        w[idx] = orig - step
        minus, _ = loss_and_gradients(probe, x, y)
        pat_minus = pattern(probe) if relu else None
        w[idx] = orig
        if relu and not all(
            np.array_equal(a, b) and np.array_equal(a, c)
            for a, b, c in zip(base_pattern, pat_plus, pat_minus)
        ):
            skipped += 1
            continue
        numeric = (plus - minus) / (2.0 * step)
        analytic = grads[layer][idx]
        scale = max(abs(analytic), abs(numeric), 1e-6)
        errors.append(abs(analytic - numeric) / scale)
    return GradientCheckReport(max(errors) if errors else float("nan"),
                               len(errors), skipped, errors)


@dataclass
class EncodingCheckReport:
    epsilon_train: float
    delta_probe: float
    epsilon_perturbed: float
    passed: bool
    trials: int


def _ensure_converged(model: MLPModel, force: bool):
    if force:
        return
    if model.certificate is None or not model.certificate.stable:
        raise NotConvergedError(
            "model has no stable convergence certificate (pass force=True to override)"
        )


def encoding_check(model: MLPModel, data: DataSet, delta: float, trials: int = 20,
                   seed: int = 0, force: bool = False, epsilon_bound: float = 0.1,
                   perturbed_bound: float = 0.1) -> EncodingCheckReport:
    """Training-set fit and sensitivity to weight perturbations of norm ``delta``.

    Perturbation directions are drawn from ``seed`` and normalised jointly
    over all layers, so calls that share a seed probe the same directions at
    different radii.
    """
    _ensure_converged(model, force)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    x = _check_inputs(model, data.points)
    y = _require_targets(data)
    base = forward_batch(model, x)
    eps_train = float(np.max(np.abs(base - y)))

    rng = np.random.default_rng(seed)
    eps_pert = 0.0
    for _ in range(trials):
        dirs = [rng.standard_normal(w.shape) for w in model.layers]
        scale = delta / np.linalg.norm(_flat(dirs))
        moved = MLPModel([w + scale * d for w, d in zip(model.layers, dirs)],
                         model.activation, model.final_activation)
        change = float(np.max(np.abs(forward_batch(moved, x) - base)))
        eps_pert = max(eps_pert, change)
    passed = eps_train <= epsilon_bound and eps_pert <= perturbed_bound
    return EncodingCheckReport(eps_train, float(delta), eps_pert, passed, trials)
