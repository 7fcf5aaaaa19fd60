"""Small dense feed-forward networks trained with MSE.

Parameters of a network live in one flat float64 buffer; the per-layer weight
matrices (``fan_out x fan_in``, row-major) and bias vectors are views into it.
That keeps optimizer updates to a handful of vector operations per step, which
is what dominates the cost for networks this small.

Layers may carry a boolean connectivity mask. Masked weights are held at zero
and receive no gradient; :func:`block_diagonal` uses this to run several
independent sub-networks side by side as one network.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .exceptions import (
    ConfigurationError,
    DomainError,
    EmptyInputError,
    InputShapeError,
    TrainingDivergedError,
)

FORMAT_NAME = "uwauth-mlp"
FORMAT_VERSION = 1


RELU_BIAS_INIT = 0.1


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    LINEAR = "linear"


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise ConfigurationError(f"layer width must be a positive integer, got {self.width!r}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "activation", Activation(self.activation))


def _as_layers(layers) -> tuple[LayerSpec, ...]:
    out = []
    for spec in layers:
        if isinstance(spec, LayerSpec):
            out.append(spec)
        else:
            width, act = spec
            out.append(LayerSpec(width, act))
    if not out:
        raise ConfigurationError("a network needs at least one layer")
    return tuple(out)


class MlpNetwork:
    """Dense layers applied as ``activation(W @ a + b)``.

    Instances are treated as values: training functions return new networks
    and never modify their inputs.
    """

    def __init__(self, input_dim, layers, params=None, masks=None):
        if int(input_dim) != input_dim or input_dim < 1:
            raise ConfigurationError(f"input_dim must be a positive integer, got {input_dim!r}")
        self.input_dim = int(input_dim)
        self.layers = _as_layers(layers)
        fan_in = [self.input_dim] + [s.width for s in self.layers[:-1]]
        self.shapes = [(s.width, f) for s, f in zip(self.layers, fan_in)]
        self.size = sum(o * i + o for o, i in self.shapes)

        if masks is None:
            masks = [None] * len(self.layers)
        if len(masks) != len(self.layers):
            raise ConfigurationError("one mask entry per layer is required")
        self.masks = []
        for m, shape in zip(masks, self.shapes):
            if m is not None:
                m = np.asarray(m, dtype=bool)
                if m.shape != shape:
                    raise ConfigurationError(f"mask shape {m.shape} does not match layer {shape}")
            self.masks.append(m)

        if params is None:
            buf = np.zeros(self.size)
        else:
            buf = np.array(params, dtype=float).ravel()
            if buf.size != self.size:
                raise ConfigurationError(f"expected {self.size} parameters, got {buf.size}")
        self._bind(buf)
        for W, m in zip(self.weights, self.masks):
            if m is not None:
                W[~m] = 0.0

    def _bind(self, buf):
        self.params = buf
        self.weights, self.biases = self.views(buf)

    def views(self, buf):
        """Split a flat buffer laid out like ``params`` into (weights, biases) views."""
        weights, biases = [], []
        pos = 0
        for o, i in self.shapes:
            weights.append(buf[pos:pos + o * i].reshape(o, i))
            pos += o * i
            biases.append(buf[pos:pos + o])
            pos += o
        return weights, biases

    @property
    def output_dim(self):
        return self.layers[-1].width

    @property
    def widths(self):
        return tuple(s.width for s in self.layers)

    @property
    def n_parameters(self):
        """Number of trainable (unmasked) parameters."""
        total = 0
        for (o, i), m in zip(self.shapes, self.masks):
            total += (int(m.sum()) if m is not None else o * i) + o
        return total

    @property
    def n_neurons(self):
        return sum(self.widths)

    def copy(self):
        return MlpNetwork(self.input_dim, self.layers, self.params.copy(), self.masks)

    @classmethod
    def initialize(cls, input_dim, layers, rng, relu_bias=RELU_BIAS_INIT):
        """Random initialization: He-uniform for ReLU layers, Xavier-uniform otherwise.

        ReLU biases start at ``relu_bias``. With layers this narrow a zero
        start leaves a whole layer dead often enough to matter.
        """
        net = cls(input_dim, layers)
        for W, b, spec in zip(net.weights, net.biases, net.layers):
            fan_out, fan_in = W.shape
            if spec.activation is Activation.RELU:
                limit = np.sqrt(6.0 / fan_in)
                b[...] = relu_bias
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        return net

    def __call__(self, x):
        return forward(self, x)

    def __repr__(self):
        arch = "-".join(f"{s.width}{s.activation.value[0]}" for s in self.layers)
        return f"MlpNetwork(input_dim={self.input_dim}, layers={arch})"

    # serialization -------------------------------------------------------

    def to_dict(self):
        layers = []
        for spec, W, b, m in zip(self.layers, self.weights, self.biases, self.masks):
            layers.append({
                "width": spec.width,
                "activation": spec.activation.value,
                "weights": W.tolist(),
                "bias": b.tolist(),
                "mask": None if m is None else m.astype(int).tolist(),
            })
        return {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                "input_dim": self.input_dim, "layers": layers}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME:
            raise ConfigurationError(f"not a {FORMAT_NAME} document")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported {FORMAT_NAME} version {d.get('version')!r}")
        specs, params, masks = [], [], []
        for layer in d["layers"]:
            specs.append(LayerSpec(layer["width"], layer["activation"]))
            params.append(np.asarray(layer["weights"], dtype=float).ravel())
            params.append(np.asarray(layer["bias"], dtype=float).ravel())
            masks.append(None if layer.get("mask") is None else np.asarray(layer["mask"], dtype=bool))
        return cls(d["input_dim"], specs, np.concatenate(params), masks)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class GradientSet:
    weights: list
    biases: list

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])


# forward / backward ------------------------------------------------------

def _activate(kind, z):
    if kind is Activation.RELU:
        np.maximum(z, 0.0, out=z)
    elif kind is Activation.SIGMOID:
        expit(z, out=z)
    return z


def _forward_all(net, X):
    acts = [X]
    a = X
    for W, b, spec in zip(net.weights, net.biases, net.layers):
        z = a @ W.T
        z += b
        a = _activate(spec.activation, z)
        acts.append(a)
    return acts


def _backprop(net, acts, delta, grad_w, grad_b, input_grad=False):
    """Accumulate parameter gradients given dL/d(output); ``delta`` is overwritten.

    Returns dL/d(input) when ``input_grad`` is set, else None.
    """
    last = len(net.layers) - 1
    for p in range(last, -1, -1):
        kind = net.layers[p].activation
        a_out = acts[p + 1]
        if kind is Activation.RELU:
            delta *= a_out > 0
        elif kind is Activation.SIGMOID:
            delta *= a_out * (1.0 - a_out)
        np.dot(delta.T, acts[p], out=grad_w[p])
        if net.masks[p] is not None:
            grad_w[p] *= net.masks[p]
        np.sum(delta, axis=0, out=grad_b[p])
        if p > 0 or input_grad:
            delta = delta @ net.weights[p]
    return delta if input_grad else None


def _check_input(net, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise InputShapeError(f"expected input of dimension {net.input_dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(X)):
        raise DomainError("input contains non-finite values")
    return X, single


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Evaluate the network on one vector or a batch of row vectors."""
    X, single = _check_input(net, x)
    out = _forward_all(net, X)[-1]
    return out[0] if single else out


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise InputShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise EmptyInputError("mse of empty vectors")
    diff = pred - target
    return float(np.mean(diff * diff))


def _as_batch(net, batch):
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X, T = batch
    else:
        batch = list(batch)
        if not batch:
            raise EmptyInputError("empty batch")
        X = np.array([b[0] for b in batch], dtype=float)
        T = np.array([b[1] for b in batch], dtype=float)
    X, _ = _check_input(net, X)
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if len(X) == 0:
        raise EmptyInputError("empty batch")
    if T.shape != (len(X), net.output_dim):
        raise InputShapeError(f"targets must have shape {(len(X), net.output_dim)}, got {T.shape}")
    return X, T


def backward(net: MlpNetwork, batch) -> GradientSet:
    """Gradient of the batch-average MSE with respect to every parameter.

    ``batch`` is either a list of ``(x, target)`` pairs or an ``(X, T)`` tuple
    of stacked arrays.
    """
    X, T = _as_batch(net, batch)
    acts = _forward_all(net, X)
    delta = (acts[-1] - T) * (2.0 / T.size)
    grad = np.zeros(net.size)
    gw, gb = net.views(grad)
    _backprop(net, acts, delta, gw, gb)
    return GradientSet(gw, gb)


# composition ---------------------------------------------------------------

def block_diagonal(nets: Sequence[MlpNetwork]) -> MlpNetwork:
    """Run independent networks of identical architecture side by side.

    The input is the concatenation of the sub-network inputs and the output
    the concatenation of their outputs, in the order given.
    """
    first = nets[0]
    for net in nets[1:]:
        if net.input_dim != first.input_dim or net.layers != first.layers:
            raise ConfigurationError("block_diagonal requires identical architectures")
    n = len(nets)
    layers = [LayerSpec(s.width * n, s.activation) for s in first.layers]
    out = MlpNetwork(first.input_dim * n, layers,
                     masks=[np.kron(np.eye(n, dtype=bool), np.ones(shape, dtype=bool)) for shape in first.shapes])
    for p, (o, i) in enumerate(first.shapes):
        for j, net in enumerate(nets):
            out.weights[p][j * o:(j + 1) * o, j * i:(j + 1) * i] = net.weights[p]
            out.biases[p][j * o:(j + 1) * o] = net.biases[p]
    return out


def split_block_diagonal(net: MlpNetwork, n_blocks: int, n_layers=None) -> list[MlpNetwork]:
    """Inverse of :func:`block_diagonal` over the first ``n_layers`` layers."""
    n_layers = len(net.layers) if n_layers is None else n_layers
    if net.input_dim % n_blocks:
        raise ConfigurationError("input dimension is not divisible by the block count")
    specs = []
    for s in net.layers[:n_layers]:
        if s.width % n_blocks:
            raise ConfigurationError("layer width is not divisible by the block count")
        specs.append(LayerSpec(s.width // n_blocks, s.activation))
    subs = [MlpNetwork(net.input_dim // n_blocks, specs) for _ in range(n_blocks)]
    for p in range(n_layers):
        o, i = subs[0].shapes[p]
        for j, sub in enumerate(subs):
            sub.weights[p][...] = net.weights[p][j * o:(j + 1) * o, j * i:(j + 1) * i]
            sub.biases[p][...] = net.biases[p][j * o:(j + 1) * o]
    return subs


def chain(first: MlpNetwork, second: MlpNetwork) -> MlpNetwork:
    """Feed the output of ``first`` into ``second`` as one network."""
    if first.output_dim != second.input_dim:
        raise ConfigurationError(f"cannot chain output {first.output_dim} into input {second.input_dim}")
    return MlpNetwork(first.input_dim, first.layers + second.layers,
                      np.concatenate([first.params, second.params]), first.masks + second.masks)


def truncate(net: MlpNetwork, start: int, stop: int) -> MlpNetwork:
    """Sub-network made of layers ``start:stop``."""
    layers = net.layers[start:stop]
    input_dim = net.shapes[start][1]
    params = np.concatenate([np.concatenate([W.ravel(), b])
                             for W, b in zip(net.weights[start:stop], net.biases[start:stop])])
    return MlpNetwork(input_dim, layers, params, net.masks[start:stop])


# training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 128
    optimizer: str = "adam"
    seed: int = 0
    early_stop_patience: int = 25
    restarts: int = 3

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigurationError("epochs must be a non-negative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigurationError("batch_size must be a positive integer")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r} (use 'adam' or 'sgd')")
        if int(self.early_stop_patience) != self.early_stop_patience or self.early_stop_patience < 0:
            raise ConfigurationError("early_stop_patience must be a non-negative integer")
        if int(self.restarts) != self.restarts or self.restarts < 0:
            raise ConfigurationError("restarts must be a non-negative integer")

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update(changes)
        return TrainConfig(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    restarts: int = 0

    def __len__(self):
        return len(self.train_loss)

    def pairs(self):
        return list(zip(self.train_loss, self.val_loss))


class _Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.tmp = np.empty(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        np.multiply(grad, grad, out=self.tmp)
        self.tmp *= 1.0 - b2
        self.v += self.tmp
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        np.sqrt(self.v, out=self.tmp)
        self.tmp += self.eps
        np.divide(self.m, self.tmp, out=self.tmp)
        self.tmp *= lr_t
        params -= self.tmp


class _Sgd:
    def __init__(self, size, lr):
        self.lr = lr

    def step(self, params, grad):
        params -= self.lr * grad


def fit_parameters(
    params: np.ndarray,
    grad: np.ndarray,
    loss_grad: Callable[[np.ndarray], float],
    epoch_losses: Callable[[], tuple],
    n_train: int,
    cfg: TrainConfig,
) -> TrainHistory:
    """Minibatch optimization loop with checkpoint-best early stopping.

    ``loss_grad(idx)`` evaluates the loss on training rows ``idx`` and writes
    its gradient into ``grad``; ``epoch_losses()`` returns the full
    ``(train_loss, val_loss)`` pair at the current parameters. On return
    ``params`` holds the values with the lowest validation loss seen,
    including the starting point.
    """
    if n_train < 1:
        raise EmptyInputError("empty training set")
    if cfg.batch_size > n_train:
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds training set size {n_train}")
    history = TrainHistory()
    if cfg.epochs == 0:
        return history

    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(params.size, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(params.size, cfg.learning_rate)
    best_val = epoch_losses()[1]
    best = params.copy()
    stale = 0
    bs = cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, bs):
            loss = loss_grad(perm[start:start + bs])
            if not np.isfinite(loss):
                params[...] = best
                raise TrainingDivergedError(f"loss became non-finite in epoch {epoch}", epoch - 1)
            opt.step(params, grad)
        tr, va = epoch_losses()
        if not (np.isfinite(tr) and np.isfinite(va)):
            params[...] = best
            raise TrainingDivergedError(f"loss became non-finite in epoch {epoch}", epoch - 1)
        history.train_loss.append(float(tr))
        history.val_loss.append(float(va))
        if va < best_val:
            best_val = va
            best[...] = params
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                break
    params[...] = best
    history.best_val = float(best_val)
    return history


def _as_xy(net, data, what):
    X, T = data
    X, _ = _check_input(net, X)
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if len(X) == 0:
        raise EmptyInputError(f"empty {what} set")
    if T.shape != (len(X), net.output_dim):
        raise InputShapeError(f"{what} targets must have shape {(len(X), net.output_dim)}, got {T.shape}")
    return X, T


def trainable_mask(net: MlpNetwork, trainable=None) -> np.ndarray:
    """Flat 0/1 gradient mask: connectivity masks combined with an optional freeze mask."""
    gmask = np.ones(net.size) if trainable is None else np.asarray(trainable, dtype=float).ravel().copy()
    if gmask.size != net.size:
        raise ConfigurationError(f"trainable mask needs {net.size} entries, got {gmask.size}")
    gw, _ = net.views(gmask)
    for W, m in zip(gw, net.masks):
        if m is not None:
            W *= m
    return gmask


def dead_units(net: MlpNetwork, X) -> int:
    """Hidden ReLU units that never activate on ``X``, plus 1 if the output is constant."""
    acts = _forward_all(net, X)
    count = 0
    for a, spec in zip(acts[1:-1], net.layers[:-1]):
        if spec.activation is Activation.RELU:
            count += int(np.sum(np.all(a <= 0, axis=0)))
    if np.all(np.ptp(acts[-1], axis=0) <= 1e-12):
        count += 1
    return count


def _reinitialize(net, gmask, rng):
    fresh = MlpNetwork.initialize(net.input_dim, net.layers, rng)
    return np.where(gmask != 0, fresh.params, net.params)


def train(net: MlpNetwork, train_set, val_set, cfg: TrainConfig | None = None, trainable=None):
    """Fit ``net`` to ``(X, T)`` pairs by minimizing MSE.

    Returns ``(trained_net, history)``; the input network is left untouched.
    ``trainable`` optionally freezes parameters (flat 0/1 array in ``params``
    layout); frozen entries keep their values bit for bit.

    Narrow ReLU networks regularly lose units for good during training. When
    the trained network has hidden units that are silent on every validation
    row, the trainable parameters are redrawn and training starts over, up to
    ``cfg.restarts`` times; the first attempt without dead units is kept, or
    else the attempt with the lowest validation loss. The history describes
    the attempt returned.
    """
    cfg = cfg or TrainConfig()
    X, T = _as_xy(net, train_set, "training")
    Xv, Tv = _as_xy(net, val_set, "validation")
    net = net.copy()
    if cfg.batch_size > len(X):
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds training set size {len(X)}")
    if cfg.epochs == 0:
        return net, TrainHistory()
    X, T = np.ascontiguousarray(X), np.ascontiguousarray(T)
    Xv, Tv = np.ascontiguousarray(Xv), np.ascontiguousarray(Tv)
    gmask = trainable_mask(net, trainable)
    start = net.params.copy()
    restart_rng = np.random.default_rng([cfg.seed, 1])
    best = None
    for attempt in range(cfg.restarts + 1):
        if attempt:
            net.params[...] = _reinitialize(net, gmask, restart_rng)
        history = _train_once(net, X, T, Xv, Tv, cfg, gmask, attempt)
        history.restarts = attempt
        if dead_units(net, Xv) == 0:
            return net, history
        if best is None or history.best_val < best[1].best_val:
            best = (net.params.copy(), history)
        net.params[...] = start
    net.params[...] = best[0]
    return net, best[1]


def _train_once(net, X, T, Xv, Tv, cfg, gmask, attempt):
    history = TrainHistory()
    lay, n_acts, width = _kernels.layout(net)
    bs = cfg.batch_size
    acts = np.zeros((bs, n_acts))
    d_a = np.zeros((bs, width))
    d_b = np.zeros((bs, width))
    grad = np.zeros(net.size)
    m = np.zeros(net.size)
    v = np.zeros(net.size)
    use_adam = cfg.optimizer == "adam"
    rng = np.random.default_rng(cfg.seed if attempt == 0 else [cfg.seed, 0, attempt])
    params = net.params

    def losses():
        return (_kernels.dataset_loss(params, lay, X, T, acts),
                _kernels.dataset_loss(params, lay, Xv, Tv, acts))

    best_val = losses()[1]
    best = params.copy()
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(X))
        batch_loss, step = _kernels.run_epoch(
            params, gmask, lay, X, T, perm, cfg.batch_size, use_adam, cfg.learning_rate,
            0.9, 0.999, 1e-8, m, v, step, acts, d_a, d_b, grad)
        tr, va = losses() if np.isfinite(batch_loss) else (np.nan, np.nan)
        if not (np.isfinite(tr) and np.isfinite(va)):
            params[...] = best
            raise TrainingDivergedError(f"loss became non-finite in epoch {epoch}", epoch - 1)
        history.train_loss.append(tr)
        history.val_loss.append(va)
        if va < best_val:
            best_val = va
            best[...] = params
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                break
    params[...] = best
    history.best_val = float(best_val)
    return history


def kernel_gradient(net: MlpNetwork, X, T) -> np.ndarray:
    """Flat batch-average MSE gradient computed by the compiled training kernel."""
    X = np.ascontiguousarray(X, dtype=float)
    T = np.ascontiguousarray(np.asarray(T, dtype=float).reshape(len(X), -1))
    lay, n_acts, width = _kernels.layout(net)
    grad = np.zeros(net.size)
    n = len(X)
    _kernels.batch_gradient(net.params, lay, X, T, np.arange(n), np.zeros((n, n_acts)),
                            np.zeros((n, width)), np.zeros((n, width)), grad)
    return grad * trainable_mask(net)
