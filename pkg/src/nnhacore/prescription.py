"""Prescription network: band levels in, band gains out.

The network is a plain multilayer perceptron held as lists of numpy arrays.
Inputs are levels in dB SPL and outputs are gains in dB; the affine
normalisations on either side are part of the model so that a saved file
fully describes the level-to-gain mapping.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity",)

DEFAULT_INPUT_NORM = (60.0, 40.0)
DEFAULT_OUTPUT_NORM = (0.0, 40.0)


@dataclass(eq=False)
class Mlp:
    """Fully connected network; ``weights[i]`` has shape ``(out, in)``."""

    weights: list
    biases: list
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    input_norm: tuple = DEFAULT_INPUT_NORM
    output_norm: tuple = DEFAULT_OUTPUT_NORM

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        self.input_norm = tuple(float(v) for v in self.input_norm)
        self.output_norm = tuple(float(v) for v in self.output_norm)
        self.validate()

    def validate(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("network needs at least one layer and one bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2:
                raise ShapeError(f"layer {i}: weight matrix must be 2-D, got shape {w.shape}")
            if b.shape != (w.shape[0],):
                raise ShapeError(
                    f"layer {i}: bias length {b.size} does not match {w.shape[0]} outputs"
                )
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: expects {w.shape[1]} inputs but layer {i - 1} "
                    f"has {self.weights[i - 1].shape[0]} outputs"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: parameters must be finite")
        if self.layer_sizes[0] != self.layer_sizes[-1]:
            raise ShapeError(
                f"input width {self.layer_sizes[0]} must equal output width {self.layer_sizes[-1]}"
            )
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")
        if self.input_norm[1] == 0 or self.output_norm[1] == 0:
            raise ValueError("normalisation scales must be non-zero")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_bands(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def parameters(self) -> np.ndarray:
        """All weights then biases of each layer, flattened row-major."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_parameters(self, theta) -> "Mlp":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.num_parameters:
            raise ShapeError(f"expected {self.num_parameters} parameters, got {theta.size}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return Mlp(weights, biases, self.hidden_activation, self.output_activation,
                   self.input_norm, self.output_norm)

    @classmethod
    def initialize(cls, layer_sizes, seed: int, **kwargs) -> "Mlp":
        """Uniform in ``+-1/sqrt(fan_in)`` for weights and biases, from ``seed``."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, **kwargs)

    @classmethod
    def zeros(cls, layer_sizes, **kwargs) -> "Mlp":
        weights = [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(o) for o in layer_sizes[1:]]
        return cls(weights, biases, **kwargs)


def _as_batch(levels, num_bands: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(levels, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != num_bands:
        raise ShapeError(f"expected {num_bands} band levels, got shape {np.shape(levels)}")
    return x, single


def _forward_cache(mlp: Mlp, x: np.ndarray):
    off, scale = mlp.input_norm
    a = (x - off) / scale
    acts = [a]
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    out_off, out_scale = mlp.output_norm
    return out_off + out_scale * a, acts


def forward(mlp: Mlp, levels) -> np.ndarray:
    """Gains in dB for one level vector ``(M,)`` or a batch ``(B, M)``."""
    x, single = _as_batch(levels, mlp.num_bands)
    gains, _ = _forward_cache(mlp, x)
    return gains[0] if single else gains


@dataclass(frozen=True)
class CompressorRule:
    """Per-band wide dynamic range compression law.

    Below the knee the gain is ``insertion_gain_db``; above it the gain
    falls by ``1 - 1/ratio`` dB per dB of input.
    """

    insertion_gain_db: tuple
    knee_db_spl: tuple
    compression_ratio: tuple

    def __post_init__(self):
        ig = tuple(float(v) for v in np.atleast_1d(self.insertion_gain_db))
        knee = tuple(float(v) for v in np.atleast_1d(self.knee_db_spl))
        cr = tuple(float(v) for v in np.atleast_1d(self.compression_ratio))
        if not len(ig) == len(knee) == len(cr):
            raise ShapeError("rule vectors must all have one entry per band")
        if any(not np.isfinite(v) for v in ig + knee + cr):
            raise ValueError("rule values must be finite")
        if any(r < 1 for r in cr):
            raise ValueError(f"compression ratios must be >= 1, got {cr}")
        if any(not 0 <= k <= 120 for k in knee):
            raise ValueError(f"knees must lie in [0, 120] dB SPL, got {knee}")
        object.__setattr__(self, "insertion_gain_db", ig)
        object.__setattr__(self, "knee_db_spl", knee)
        object.__setattr__(self, "compression_ratio", cr)

    @property
    def num_bands(self) -> int:
        return len(self.insertion_gain_db)


def default_rule(num_bands: int = 6) -> CompressorRule:
    """A mild sloping-loss fitting used as the stand-in prescription."""
    ig = np.interp(np.arange(num_bands), [0, 5], [10.0, 30.0])
    cr = np.interp(np.arange(num_bands), [0, 5], [1.5, 2.5])
    return CompressorRule(
        insertion_gain_db=np.round(ig, 6),
        knee_db_spl=np.full(num_bands, 50.0),
        compression_ratio=np.round(cr, 6),
    )


def reference_gain(rule: CompressorRule, levels) -> np.ndarray:
    """Gain in dB from the compressor law; accepts ``(M,)`` or ``(B, M)`` levels."""
    x = np.asarray(levels, dtype=np.float64)
    if x.shape[-1] != rule.num_bands:
        raise ShapeError(f"expected {rule.num_bands} band levels, got shape {x.shape}")
    ig = np.asarray(rule.insertion_gain_db)
    knee = np.asarray(rule.knee_db_spl)
    slope = 1.0 - 1.0 / np.asarray(rule.compression_ratio)
    return ig - slope * np.maximum(x - knee, 0.0)


@dataclass(eq=False)
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.array(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.array(self.targets, dtype=np.float64))
        if self.inputs.size == 0 and self.targets.size == 0:
            self.inputs = self.inputs.reshape(0, self.inputs.shape[-1])
            self.targets = self.targets.reshape(0, self.targets.shape[-1])
        if self.inputs.shape != self.targets.shape:
            raise ShapeError(
                f"inputs {self.inputs.shape} and targets {self.targets.shape} differ in shape"
            )
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("training data must be finite")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, index) -> "TrainingSet":
        return TrainingSet(self.inputs[index], self.targets[index])


def oracle_grid(rule: CompressorRule, levels) -> TrainingSet:
    """Inputs with every band at one of ``levels``, targets from the rule."""
    lv = np.asarray(levels, dtype=np.float64)
    inputs = np.repeat(lv[:, None], rule.num_bands, axis=1)
    return TrainingSet(inputs, reference_gain(rule, inputs))


def grid_levels(start: float = 20.0, stop: float = 100.0, step: float = 5.0) -> np.ndarray:
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def midpoint_levels(start: float = 20.0, stop: float = 100.0, step: float = 5.0) -> np.ndarray:
    return grid_levels(start, stop, step)[:-1] + step / 2


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 5000
    batch_size: int = 32
    seed: int = 0
    anchor_weight: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.seed) != self.seed or not -2**63 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit integer, got {self.seed}")
        if not self.anchor_weight >= 0:
            raise ValueError(f"anchor_weight must be non-negative, got {self.anchor_weight}")


@dataclass
class Gradient:
    weights: list
    biases: list

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)


def data_loss_and_gradient(mlp: Mlp, batch: TrainingSet) -> tuple[float, Gradient]:
    """Mean squared gain error (dB^2) over batch and bands, with its gradient."""
    if len(batch) == 0:
        raise ValueError("cannot evaluate the loss on an empty batch")
    x, _ = _as_batch(batch.inputs, mlp.num_bands)
    gains, acts = _forward_cache(mlp, x)
    err = gains - batch.targets
    loss = float(np.mean(err * err))

    delta = (2.0 / err.size) * err * mlp.output_norm[1]
    grad_w = [None] * len(mlp.weights)
    grad_b = [None] * len(mlp.weights)
    for i in range(len(mlp.weights) - 1, -1, -1):
        grad_w[i] = delta.T @ acts[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ mlp.weights[i]) * (1.0 - acts[i] ** 2)
    return loss, Gradient(grad_w, grad_b)


def loss_and_gradient(mlp: Mlp, batch: TrainingSet, anchor: Mlp | None = None,
                      anchor_weight: float = 0.0) -> tuple[float, Gradient]:
    """Data loss plus ``anchor_weight * ||theta - theta_anchor||^2``."""
    loss, grad = data_loss_and_gradient(mlp, batch)
    if anchor is not None and anchor_weight:
        if anchor.layer_sizes != mlp.layer_sizes:
            raise ShapeError(
                f"anchor layer sizes {anchor.layer_sizes} differ from {mlp.layer_sizes}"
            )
        for i in range(len(mlp.weights)):
            dw = mlp.weights[i] - anchor.weights[i]
            db = mlp.biases[i] - anchor.biases[i]
            loss += anchor_weight * float(np.sum(dw * dw) + np.sum(db * db))
            grad.weights[i] = grad.weights[i] + 2.0 * anchor_weight * dw
            grad.biases[i] = grad.biases[i] + 2.0 * anchor_weight * db
    return loss, grad


@dataclass
class TrainResult:
    model: Mlp
    loss_history: list = field(default_factory=list)


def train(mlp: Mlp, data: TrainingSet, cfg: TrainerConfig,
          anchor: Mlp | None = None) -> TrainResult:
    """Mini-batch momentum SGD on a private copy of ``mlp``.

    The shuffle order of every epoch comes from ``cfg.seed`` only. When an
    anchor is given the penalty ``anchor_weight * ||theta - theta_anchor||^2``
    is applied as an exact proximal step after each data step, which keeps
    the update stable however large the weight is.

    Returns:
        The trained copy and the full-data loss recorded after every epoch.

    Raises:
        TrainingError: the loss or parameters became non-finite.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.inputs.shape[1] != mlp.num_bands:
        raise ShapeError(f"training data has {data.inputs.shape[1]} bands, model has {mlp.num_bands}")
    rng = np.random.default_rng(cfg.seed)
    theta = mlp.parameters()
    velocity = np.zeros_like(theta)
    lam = cfg.anchor_weight if anchor is not None else 0.0
    theta0 = anchor.parameters() if lam else None
    shrink = 1.0 / (1.0 + 2.0 * cfg.learning_rate * lam)
    model = mlp.copy()
    history = []
    n = len(data)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                batch = data.subset(order[start:start + cfg.batch_size])
                _, grad = data_loss_and_gradient(model, batch)
                velocity = cfg.momentum * velocity - cfg.learning_rate * grad.flat()
                if lam:
                    # carry the shrunk step forward so the fixed point is the anchored optimum
                    moved = theta0 + (theta + velocity - theta0) * shrink
                    velocity = moved - theta
                    theta = moved
                else:
                    theta = theta + velocity
                if not np.all(np.isfinite(theta)):
                    raise TrainingError(f"parameters became non-finite in epoch {epoch}", epoch)
                model = _replace_parameters(model, theta)
            loss, _ = loss_and_gradient(model, data, anchor, lam)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}", epoch)
            history.append(loss)
    return TrainResult(model, history)


def _replace_parameters(model: Mlp, theta: np.ndarray) -> Mlp:
    # in-place refill avoids re-validating on every step
    pos = 0
    for w, b in zip(model.weights, model.biases):
        w[...] = theta[pos:pos + w.size].reshape(w.shape)
        pos += w.size
        b[...] = theta[pos:pos + b.size]
        pos += b.size
    return model


def widen(mlp: Mlp, layer: int, extra_units: int, seed: int, split: str = "random") -> Mlp:
    """Add ``extra_units`` to hidden layer ``layer`` without changing the function.

    ``layer`` indexes :attr:`Mlp.layer_sizes`, so hidden layers are
    ``1 .. len(layer_sizes) - 2``. Each new unit copies the incoming weights
    and bias of a seeded random existing unit, and that unit's outgoing
    weights are shared between original and copy. With ``split="half"`` the
    share is exactly one half each; the default ``"random"`` draws the copy's
    share from [0.25, 0.75] so the two units receive different gradients and
    can diverge during later training.
    """
    sizes = mlp.layer_sizes
    if not 0 < layer < len(sizes) - 1:
        raise ValueError(
            f"only hidden layers 1..{len(sizes) - 2} can be widened, got layer {layer}"
        )
    if int(extra_units) != extra_units or extra_units < 1:
        raise ValueError(f"extra_units must be a positive integer, got {extra_units}")
    if split not in ("random", "half"):
        raise ValueError(f"split must be 'random' or 'half', got {split!r}")
    out = mlp.copy()
    w_in, b_in, w_out = out.weights[layer - 1], out.biases[layer - 1], out.weights[layer]
    rng = np.random.default_rng(seed)
    for _ in range(int(extra_units)):
        j = int(rng.integers(w_in.shape[0]))
        share = 0.5 if split == "half" else rng.uniform(0.25, 0.75)
        w_in = np.vstack([w_in, w_in[j]])
        b_in = np.append(b_in, b_in[j])
        moved = share * w_out[:, j]
        w_out = np.column_stack([w_out, moved])
        w_out[:, j] = w_out[:, j] - moved
    out.weights[layer - 1], out.biases[layer - 1], out.weights[layer] = w_in, b_in, w_out
    out.validate()
    return out


def personalize(mlp: Mlp, prefs: TrainingSet, cfg: TrainerConfig) -> TrainResult:
    """Fine-tune toward user-adjusted gains, anchored to the starting network."""
    if len(prefs) == 0:
        raise ValueError("empty preference set")
    if not cfg.anchor_weight > 0:
        raise ValueError("personalisation needs anchor_weight > 0")
    return train(mlp, prefs, cfg, anchor=mlp.copy())
