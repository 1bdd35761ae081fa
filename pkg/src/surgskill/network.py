"""The fixed 10-layer skill classifier.

Layer order: three conv-pool stages, flatten, two hidden fully-connected
layers and a softmax output layer.  Within a stage the order is
conv -> ReLU -> max-pool -> dropout; each hidden dense layer is
affine -> ReLU -> dropout.  Dropout is inverted (kept activations are scaled
by ``1 / keep_prob``) so inference is the identity.
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor_core as tc
from .archive import read_archive, write_archive
from .errors import ConfigurationError, InternalStateError

CLASS_NAMES = ("Novice", "Intermediate", "Expert")

LAYER_SEQUENCE = (
    "conv1", "pool1", "conv2", "pool2", "conv3", "pool3",
    "flatten", "fc1", "fc2", "softmax",
)

CONV_CHANNELS = (38, 76, 152)
IN_CHANNELS = 38
KERNEL_WIDTH = 2
LOG_CLAMP = 1e-12


def stage_lengths(window_width, stages=3, kernel_width=KERNEL_WIDTH):
    """Time lengths after each conv and pool, starting from ``window_width``."""
    lengths = [window_width]
    n = window_width
    for _ in range(stages):
        n = n - kernel_width + 1
        lengths.append(n)
        n = n // 2
        lengths.append(n)
    return lengths


@dataclass(frozen=True)
class ArchitectureSpec:
    window_width: int = 60
    in_channels: int = IN_CHANNELS
    conv_channels: tuple = CONV_CHANNELS
    hidden_widths: tuple = (256, 128)
    class_count: int = 3
    kernel_width: int = KERNEL_WIDTH
    maxpool_dropout_rate: float = 0.2
    fc_dropout_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.in_channels != IN_CHANNELS or self.conv_channels != CONV_CHANNELS:
            raise ConfigurationError(
                f"conv stages are fixed at {IN_CHANNELS} -> {CONV_CHANNELS}, got "
                f"{self.in_channels} -> {self.conv_channels}")
        if self.kernel_width != KERNEL_WIDTH:
            raise ConfigurationError(f"kernel width is fixed at {KERNEL_WIDTH}")
        if len(self.hidden_widths) != 2 or min(self.hidden_widths) < 1:
            raise ConfigurationError(
                f"exactly two positive hidden widths are required, got {self.hidden_widths}")
        if self.class_count != 3:
            raise ConfigurationError("the classifier has exactly three classes")
        for name in ("maxpool_dropout_rate", "fc_dropout_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {rate}")
        if stage_lengths(self.window_width)[-1] < 1:
            raise ConfigurationError(
                f"window width {self.window_width} is too short for three conv-pool stages")

    @property
    def flatten_width(self):
        return stage_lengths(self.window_width)[-1] * self.conv_channels[-1]

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(spec):
    shapes = {}
    c_in = spec.in_channels
    for i, c_out in enumerate(spec.conv_channels, start=1):
        shapes[f"conv{i}.kernels"] = (c_out, spec.kernel_width, c_in)
        shapes[f"conv{i}.biases"] = (c_out,)
        c_in = c_out
    widths = [spec.flatten_width, *spec.hidden_widths, spec.class_count]
    for name, (a, b) in zip(("fc1", "fc2", "out"), zip(widths[:-1], widths[1:])):
        shapes[f"{name}.weights"] = (a, b)
        shapes[f"{name}.biases"] = (b,)
    return shapes


@dataclass
class ModelParams:
    """Weights and biases plus the Adam moment accumulators and step counter."""

    spec: ArchitectureSpec
    values: dict
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step: int = 0
    seed: int = None

    def __post_init__(self):
        expected = param_shapes(self.spec)
        if set(self.values) != set(expected):
            raise ConfigurationError("parameter names do not match the architecture")
        for name, shape in expected.items():
            if self.values[name].shape != shape:
                raise ConfigurationError(f"{name}: shape {self.values[name].shape} != {shape}")
        if not self.first_moment:
            self.first_moment = {k: np.zeros_like(v) for k, v in self.values.items()}
            self.second_moment = {k: np.zeros_like(v) for k, v in self.values.items()}

    def conv(self, i):
        return tc.ConvLayerParams(self.values[f"conv{i}.kernels"], self.values[f"conv{i}.biases"], f"conv{i}")

    def dense(self, name):
        return tc.DenseLayerParams(self.values[f"{name}.weights"], self.values[f"{name}.biases"], name)

    def copy(self):
        return ModelParams(
            self.spec,
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.first_moment.items()},
            {k: v.copy() for k, v in self.second_moment.items()},
            self.step,
            self.seed,
        )

    def equals(self, other):
        """Bit-exact comparison of parameters, moments and step counter."""
        if self.spec != other.spec or self.step != other.step:
            return False
        for mine, theirs in ((self.values, other.values),
                             (self.first_moment, other.first_moment),
                             (self.second_moment, other.second_moment)):
            if mine.keys() != theirs.keys():
                return False
            if any(not np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


def init_params(spec, seed, dtype=np.float64):
    """Zero biases; weights ~ N(0, 1/fan_in) with fan_in = kernel_width*in_channels or in_features."""
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith("biases"):
            values[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] if len(shape) == 3 else shape[0]
            values[name] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape).astype(dtype)
    return ModelParams(spec, values, seed=seed)


@dataclass
class DropoutMask:
    keep: np.ndarray
    keep_prob: float
    mode: str = "training"

    @classmethod
    def draw(cls, shape, rate, rng, mode):
        if mode != "training" or rate == 0.0:
            return cls(None, 1.0, "inference" if mode != "training" else mode)
        return cls(rng.random(shape) >= rate, 1.0 - rate, mode)

    def apply(self, x):
        if self.keep is None:
            return x
        return np.where(self.keep, x / self.keep_prob, 0.0).astype(x.dtype, copy=False)

    backward = apply


@dataclass
class ForwardCache:
    mode: str
    inputs: np.ndarray
    stages: list
    dense: list
    logits: np.ndarray
    probabilities: np.ndarray


def _check_mode(mode):
    if mode not in ("training", "inference"):
        raise ConfigurationError(f"mode must be 'training' or 'inference', got {mode!r}")


def forward(params, inputs, mode="inference", seed=None):
    """Return ``(probabilities, cache)`` for a ``(m, W, 38)`` batch.

    In training mode ``seed`` fixes the dropout masks.
    """
    _check_mode(mode)
    spec = params.spec
    x = tc.check_tensor3(inputs)
    if x.shape[1:] != (spec.window_width, spec.in_channels):
        raise ConfigurationError(
            f"batch of shape {x.shape} does not match window {spec.window_width} x {spec.in_channels}")
    rng = np.random.default_rng(seed) if mode == "training" else None

    stages = []
    h = x
    for i in (1, 2, 3):
        conv_in = h
        pre = tc.conv1d_forward(conv_in, params.conv(i))
        act = tc.relu(pre)
        pool = tc.PoolSpec()
        pooled = tc.maxpool_forward(act, pool)
        mask = DropoutMask.draw(pooled.shape, spec.maxpool_dropout_rate, rng, mode)
        h = mask.apply(pooled)
        stages.append({"input": conv_in, "pre": pre, "pool": pool, "mask": mask})

    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    dense = []
    for name in ("fc1", "fc2"):
        layer_in = h
        pre = tc.dense_forward(layer_in, params.dense(name))
        mask = DropoutMask.draw(pre.shape, spec.fc_dropout_rate, rng, mode)
        h = mask.apply(tc.relu(pre))
        dense.append({"input": layer_in, "pre": pre, "mask": mask})
    dense.append({"input": h, "flat_shape": flat_shape})
    logits = tc.dense_forward(h, params.dense("out"))
    probs = tc.softmax(logits)
    return probs, ForwardCache(mode, x, stages, dense, logits, probs)


def cross_entropy_loss(probabilities, labels, reduction="mean"):
    """Multinomial cross-entropy of integer ``labels`` (0..2); ``reduction`` is 'mean' or 'sum'."""
    p = np.asarray(probabilities)
    labels = np.asarray(labels, dtype=int)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise InternalStateError(f"labels of shape {labels.shape} do not match probabilities {p.shape}")
    picked = np.maximum(p[np.arange(len(labels)), labels], LOG_CLAMP)
    total = -np.sum(np.log(picked))
    if reduction == "sum":
        return float(total)
    if reduction == "mean":
        return float(total / len(labels))
    raise ConfigurationError(f"unknown reduction {reduction!r}")


def one_hot(labels, class_count=3):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def to_class_index(labels):
    """Map 1-based labels {1: Novice, 2: Intermediate, 3: Expert} to 0-based indices."""
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 1 or labels.max() > 3):
        raise ConfigurationError("1-based labels must lie in {1, 2, 3}")
    return labels - 1


def logits_gradient(probabilities, labels):
    """Gradient of the mean cross-entropy with respect to the logits: ``(p - y) / m``."""
    p = np.asarray(probabilities)
    return (p - one_hot(labels, p.shape[1])) / p.shape[0]


def backward(params, cache, labels):
    """Gradients of the mean cross-entropy with respect to every parameter, keyed like ``params.values``."""
    labels = np.asarray(labels, dtype=int)
    m = cache.probabilities.shape[0]
    if labels.shape != (m,):
        raise InternalStateError(f"{labels.shape[0] if labels.ndim else 0} labels for a cached batch of {m}")
    grads = {}
    g = logits_gradient(cache.probabilities, labels)

    out_entry = cache.dense[2]
    g, gp = tc.dense_backward(g, out_entry["input"], params.dense("out"))
    grads["out.weights"], grads["out.biases"] = gp.weights, gp.biases
    for name, entry in zip(("fc2", "fc1"), (cache.dense[1], cache.dense[0])):
        g = tc.relu_backward(entry["mask"].backward(g), entry["pre"])
        g, gp = tc.dense_backward(g, entry["input"], params.dense(name))
        grads[f"{name}.weights"], grads[f"{name}.biases"] = gp.weights, gp.biases

    g = g.reshape(out_entry["flat_shape"])
    for i in (3, 2, 1):
        st = cache.stages[i - 1]
        g = st["mask"].backward(g)
        g = tc.maxpool_backward(g, st["pool"])
        g = tc.relu_backward(g, st["pre"])
        g, gp = tc.conv1d_backward(g, st["input"], params.conv(i))
        grads[f"conv{i}.kernels"], grads[f"conv{i}.biases"] = gp.kernels, gp.biases
    grads["input"] = g
    return grads


def predict_proba(params, inputs, chunk=1024):
    inputs = tc.check_tensor3(inputs)
    if len(inputs) == 0:
        return np.zeros((0, params.spec.class_count))
    parts = [forward(params, inputs[i:i + chunk], "inference")[0] for i in range(0, len(inputs), chunk)]
    return np.concatenate(parts, axis=0)


def predict(params, inputs, chunk=1024):
    """Argmax class indices (ties go to the lowest index)."""
    return np.argmax(predict_proba(params, inputs, chunk), axis=1)


def save_checkpoint(path, params, extra=None):
    """Write parameters, Adam moments, step counter, seeds and ``extra`` metadata."""
    arrays = {}
    for k, v in params.values.items():
        arrays["param/" + k] = v
        arrays["m/" + k] = params.first_moment[k]
        arrays["v/" + k] = params.second_moment[k]
    meta = {"spec": params.spec.to_dict(), "step": params.step, "seed": params.seed, "extra": extra or {}}
    write_archive(path, arrays, meta, kind="checkpoint")


def load_checkpoint(path):
    """Return ``(ModelParams, extra)``."""
    arrays, meta = read_archive(path, kind="checkpoint")
    spec = ArchitectureSpec.from_dict(meta["spec"])

    def group(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    params = ModelParams(spec, group("param/"), group("m/"), group("v/"), meta["step"], meta["seed"])
    return params, meta["extra"]
