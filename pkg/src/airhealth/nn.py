"""Trainable multilayer perceptron built from scratch.

Layer vocabulary: dense (affine), batch normalization, inverted
dropout, ReLU. The regressor stacks five dense layers; each hidden
dense is followed by batch-norm, ReLU, then dropout, and the final
dense layer is linear with exactly 7 outputs
(AQI, PM2.5, PM10, O3, CO, SO2, NO2).

Backpropagation is exact and hand-derived per layer; `grad_check`
audits it against central finite differences.
"""

from __future__ import annotations

import copy
import enum
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError
from .tensor import Tensor, as_array, seeded_rng

__all__ = [
    "Mode",
    "DenseLayer",
    "BatchNormLayer",
    "DropoutLayer",
    "ReluLayer",
    "MlpRegressor",
    "OUTPUT_NAMES",
    "dense_forward",
    "batchnorm_forward",
    "dropout_forward",
    "mse_loss",
    "mse_loss_grad",
    "backprop_gradients",
    "grad_check",
    "r2_score",
]

OUTPUT_NAMES = ("AQI", "PM2.5", "PM10", "O3", "CO", "SO2", "NO2")


class Mode(enum.Enum):
    """Train mode consumes randomness and updates running statistics;
    Eval mode does neither."""

    TRAIN = "train"
    EVAL = "eval"


class DenseLayer:
    """Affine map y = x @ W + b with W of shape [in_dim, out_dim]."""

    def __init__(self, weights: Tensor, bias: Tensor):
        weights = weights if isinstance(weights, Tensor) else Tensor(weights)
        bias = bias if isinstance(bias, Tensor) else Tensor(bias)
        if weights.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got {weights.shape}")
        if bias.shape != (weights.shape[1],):
            raise DimensionError(
                "bias length must match output width", bias.shape, weights.shape
            )
        self.weights = weights
        self.bias = bias

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        """Uniform init in +/- sqrt(6/(fan_in+fan_out)); zero bias."""
        if in_dim < 1 or out_dim < 1:
            raise DomainError(f"layer dims must be >= 1, got {in_dim}x{out_dim}")
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(Tensor(w), Tensor.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                "dense input width mismatch", x.shape, self.weights.shape
            )
        y = x @ self.weights.array + self.bias.array
        return y, (x,)

    def backward(self, dy: np.ndarray, cache):
        (x,) = cache
        dw = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.weights.array.T
        return dx, {"weights": dw, "bias": db}

    def parameters(self):
        return {"weights": self.weights.array, "bias": self.bias.array}


class BatchNormLayer:
    """Per-feature batch normalization with affine output.

    Train: normalize by batch mean and (biased) batch variance, then
    update running stats as running <- (1-momentum)*running + momentum*batch.
    Eval: normalize by the running stats; nothing mutates.
    """

    def __init__(
        self,
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor | None = None,
        running_var: Tensor | None = None,
        epsilon: float = 1e-5,
        momentum: float = 0.1,
    ):
        if epsilon <= 0:
            raise DomainError(f"epsilon must be > 0, got {epsilon}")
        if not 0 < momentum <= 1:
            raise DomainError(f"momentum must be in (0,1], got {momentum}")
        self.gamma = gamma if isinstance(gamma, Tensor) else Tensor(gamma)
        self.beta = beta if isinstance(beta, Tensor) else Tensor(beta)
        d = self.gamma.shape[0]
        if self.beta.shape != (d,):
            raise DimensionError("gamma/beta shapes differ", self.gamma.shape, self.beta.shape)
        self.running_mean = running_mean or Tensor.zeros(d)
        self.running_var = running_var or Tensor.ones(d)
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)

    @classmethod
    def create(cls, dim: int, epsilon: float = 1e-5, momentum: float = 0.1) -> "BatchNormLayer":
        return cls(Tensor.ones(dim), Tensor.zeros(dim), epsilon=epsilon, momentum=momentum)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def _check_input(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError("batch-norm input width mismatch", x.shape, (self.dim,))

    def forward_train(self, x: np.ndarray, update_running: bool = True):
        self._check_input(x)
        n = x.shape[0]
        if n < 2:
            raise DomainError(
                f"batch normalization in Train mode needs a batch of >= 2 rows, got {n}"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # biased; same statistic feeds the running update
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean) * inv_std
        y = self.gamma.array * x_hat + self.beta.array
        if update_running:
            m = self.momentum
            self.running_mean.array[:] = (1 - m) * self.running_mean.array + m * mean
            self.running_var.array[:] = (1 - m) * self.running_var.array + m * var
        return y, (x_hat, inv_std, n)

    def forward_eval(self, x: np.ndarray):
        self._check_input(x)
        inv_std = 1.0 / np.sqrt(self.running_var.array + self.epsilon)
        y = self.gamma.array * (x - self.running_mean.array) * inv_std + self.beta.array
        return y, None

    def backward(self, dy: np.ndarray, cache):
        x_hat, inv_std, n = cache
        dgamma = (dy * x_hat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dx_hat = dy * self.gamma.array
        # Gradient through the batch statistics (mean and variance).
        dx = (inv_std / n) * (
            n * dx_hat
            - dx_hat.sum(axis=0)
            - x_hat * (dx_hat * x_hat).sum(axis=0)
        )
        return dx, {"gamma": dgamma, "beta": dbeta}

    def parameters(self):
        return {"gamma": self.gamma.array, "beta": self.beta.array}


class DropoutLayer:
    """Inverted dropout: zero each element with probability `rate` in
    Train mode and scale survivors by 1/(1-rate); identity in Eval."""

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise DomainError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = float(rate)

    def make_mask(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.rate == 0:
            return np.ones(shape)
        keep = rng.random(shape) >= self.rate
        return keep / (1.0 - self.rate)

    def forward_train(self, x: np.ndarray, mask: np.ndarray):
        return x * mask, (mask,)

    def backward(self, dy: np.ndarray, cache):
        (mask,) = cache
        return dy * mask, {}

    def parameters(self):
        return {}


class ReluLayer:
    def forward(self, x: np.ndarray):
        return np.maximum(x, 0.0), (x > 0,)

    def backward(self, dy: np.ndarray, cache):
        (active,) = cache
        return dy * active, {}

    def parameters(self):
        return {}


# ---------------------------------------------------------------------------
# Stand-alone forward operations (the layer methods, Tensor-in/Tensor-out).


def dense_forward(x, layer: DenseLayer) -> Tensor:
    y, _ = layer.forward(as_array(x, ndim=2, name="dense input"))
    return Tensor(y)


def batchnorm_forward(x, layer: BatchNormLayer, mode: Mode) -> Tensor:
    arr = as_array(x, ndim=2, name="batch-norm input")
    if mode is Mode.TRAIN:
        y, _ = layer.forward_train(arr)
    else:
        y, _ = layer.forward_eval(arr)
    return Tensor(y)


def dropout_forward(x, layer: DropoutLayer, mode: Mode, rng: np.random.Generator | None = None):
    """Returns (output, mask); the mask is what backward must reuse."""
    arr = as_array(x, name="dropout input")
    if mode is Mode.EVAL or layer.rate == 0:
        return Tensor(arr), np.ones(arr.shape)
    if rng is None:
        raise DomainError("dropout in Train mode needs an rng")
    mask = layer.make_mask(arr.shape, rng)
    y, _ = layer.forward_train(arr, mask)
    return Tensor(y), mask


# ---------------------------------------------------------------------------
# Losses and metrics.


def mse_loss(pred, target) -> float:
    """Mean of squared residuals over every entry."""
    p = as_array(pred, name="pred")
    t = as_array(target, name="target")
    if p.shape != t.shape:
        raise DimensionError("mse_loss shapes differ", p.shape, t.shape)
    diff = p - t
    return float(np.mean(diff * diff))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


def r2_score(pred, target) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot."""
    p = as_array(pred, name="pred").reshape(-1)
    t = as_array(target, name="target").reshape(-1)
    if p.shape != t.shape:
        raise DimensionError("r2_score shapes differ", p.shape, t.shape)
    if t.size < 2:
        raise DomainError("r2_score needs at least 2 samples")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("r2_score undefined for a constant target")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# The regressor.


class MlpRegressor:
    """A validated stack of layers ending in a linear dense layer of
    width 7. `create` builds the canonical architecture: five dense
    layers with batch-norm, ReLU and dropout after each hidden one."""

    OUTPUT_DIM = 7

    def __init__(self, layers: Sequence, input_dim: int):
        layers = list(layers)
        if not layers:
            raise DomainError("model needs at least one layer")
        dense = [l for l in layers if isinstance(l, DenseLayer)]
        if not dense or not isinstance(layers[-1], DenseLayer):
            raise DomainError("model must end with a dense layer")
        if dense[-1].out_dim != self.OUTPUT_DIM:
            raise DimensionError(
                f"final dense layer must have width {self.OUTPUT_DIM}",
                (dense[-1].out_dim,),
                (self.OUTPUT_DIM,),
            )
        width = input_dim
        for l in layers:
            if isinstance(l, DenseLayer):
                if l.in_dim != width:
                    raise DimensionError("layer widths do not chain", (width,), (l.in_dim,))
                width = l.out_dim
            elif isinstance(l, BatchNormLayer) and l.dim != width:
                raise DimensionError("batch-norm width does not chain", (width,), (l.dim,))
        self.layers = layers
        self.input_dim = int(input_dim)

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden_widths: Sequence[int] = (512, 256, 128, 64),
        dropout_rate: float = 0.3,
        bn_epsilon: float = 1e-5,
        bn_momentum: float = 0.1,
        seed: int = 0,
    ) -> "MlpRegressor":
        if len(hidden_widths) != 4:
            raise DomainError(
                f"canonical architecture has 4 hidden dense layers, got {len(hidden_widths)}"
            )
        rng = seeded_rng(seed)
        layers: list = []
        width = input_dim
        for h in hidden_widths:
            layers.append(DenseLayer.create(width, h, rng))
            layers.append(BatchNormLayer.create(h, epsilon=bn_epsilon, momentum=bn_momentum))
            layers.append(ReluLayer())
            layers.append(DropoutLayer(dropout_rate))
            width = h
        layers.append(DenseLayer.create(width, cls.OUTPUT_DIM, rng))
        return cls(layers, input_dim)

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat view of every trainable array, keyed `<idx>.<name>`.
        The arrays are the live ones; writing through them updates the
        model."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.parameters().items():
                out[f"{i}.{name}"] = arr
        return out

    def set_parameters(self, values: dict[str, np.ndarray]):
        params = self.parameters()
        for key, arr in values.items():
            params[key][...] = arr

    def forward(
        self,
        x,
        mode: Mode = Mode.EVAL,
        rng: np.random.Generator | None = None,
        masks: list | None = None,
        update_running: bool = True,
    ):
        """Run the stack. Returns (pred, caches, masks_used).

        In Train mode, dropout masks are drawn from `rng` unless
        `masks` (one entry per dropout layer, in order) pins them.
        """
        arr = as_array(x, ndim=2, name="model input")
        if arr.shape[1] != self.input_dim:
            raise DimensionError("model input width mismatch", arr.shape, (self.input_dim,))
        caches = []
        masks_used = []
        mask_iter = iter(masks) if masks is not None else None
        h = arr
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                h, cache = layer.forward(h)
            elif isinstance(layer, BatchNormLayer):
                if mode is Mode.TRAIN:
                    h, cache = layer.forward_train(h, update_running=update_running)
                else:
                    h, cache = layer.forward_eval(h)
            elif isinstance(layer, DropoutLayer):
                if mode is Mode.EVAL or layer.rate == 0:
                    cache = (np.ones(h.shape),)
                else:
                    if mask_iter is not None:
                        mask = next(mask_iter)
                    elif rng is not None:
                        mask = layer.make_mask(h.shape, rng)
                    else:
                        raise DomainError("Train-mode forward needs an rng or pinned masks")
                    h = h * mask
                    cache = (mask,)
                masks_used.append(cache[0])
            else:
                h, cache = layer.forward(h)
            caches.append(cache)
        return h, caches, masks_used

    def predict(self, x) -> Tensor:
        """Eval-mode forward: deterministic, no mutation."""
        pred, _, _ = self.forward(x, mode=Mode.EVAL)
        return Tensor(pred)

    def backward(self, dpred: np.ndarray, caches) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        d = dpred
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            d, layer_grads = layer.backward(d, caches[i])
            if not np.isfinite(d).all():
                raise NumericError(
                    f"non-finite gradient after layer {i} ({type(layer).__name__})",
                    where=f"layer {i}",
                )
            for name, g in layer_grads.items():
                grads[f"{i}.{name}"] = g
        return grads

    def clone(self) -> "MlpRegressor":
        return copy.deepcopy(self)


def backprop_gradients(
    model: MlpRegressor,
    x,
    target,
    mode: Mode = Mode.TRAIN,
    rng: np.random.Generator | None = None,
    masks: list | None = None,
    update_running: bool = True,
):
    """Exact gradients of mse_loss w.r.t. every parameter.

    Returns (grads, loss, masks_used); the dropout masks used forward
    are the ones differentiated through.
    """
    if mode is not Mode.TRAIN:
        raise DomainError("backprop_gradients requires Train mode")
    t = as_array(target, ndim=2, name="target")
    pred, caches, masks_used = model.forward(
        x, mode=mode, rng=rng, masks=masks, update_running=update_running
    )
    if pred.shape != t.shape:
        raise DimensionError("prediction/target shapes differ", pred.shape, t.shape)
    loss = mse_loss(pred, t)
    grads = model.backward(mse_loss_grad(pred, t), caches)
    return grads, loss, masks_used


def grad_check(model: MlpRegressor, x, target, eps: float, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference
    gradients: |a - n| / max(1, |a|, |n|), over every parameter entry.

    Dropout masks are frozen for the whole check; running statistics
    are left untouched.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise DomainError(f"grad_check eps must be in [1e-7, 1e-3], got {eps}")
    arr = as_array(x, ndim=2, name="x")
    t = as_array(target, ndim=2, name="target")
    rng = seeded_rng(seed)
    grads, _, masks = backprop_gradients(
        model, arr, t, mode=Mode.TRAIN, rng=rng, update_running=False
    )

    def loss_at() -> float:
        pred, _, _ = model.forward(
            arr, mode=Mode.TRAIN, masks=masks, update_running=False
        )
        return mse_loss(pred, t)

    worst = 0.0
    for key, param in model.parameters().items():
        analytic = grads[key]
        flat = param.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_at()
            flat[i] = orig - eps
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
