"""Adam, the mini-batch training loop and validation-based model selection."""
import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as nw
from .errors import ConfigurationError, DivergenceError, InputError, InternalStateError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    batch_size: int = 600
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam decay rates must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch size must be >= 1 and epochs >= 0")

    @classmethod
    def preset(cls, name, **overrides):
        """``"paper"``: 300 epochs of 600-crop batches.  ``"desk"``: a CI-sized run."""
        try:
            base = PRESETS[name]
        except KeyError:
            raise ConfigurationError(f"unknown optimizer preset {name!r}") from None
        return replace(base, **overrides)


PRESETS = {
    "paper": OptimizerConfig(),
    "desk": OptimizerConfig(learning_rate=1e-3, batch_size=64, epochs=50),
}


def adam_step(params, grads, config):
    """One bias-corrected Adam update of ``params`` in place; returns ``params``."""
    missing = set(params.values) - set(grads)
    if missing:
        raise InternalStateError(f"no gradient for {sorted(missing)}")
    params.step += 1
    t = params.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.values.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InternalStateError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = params.first_moment[name]
        v = params.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon_hat)
    return params


def _quota(counts, n_total):
    # largest-remainder apportionment of n_total across strata
    counts = np.asarray(counts, dtype=float)
    exact = counts * n_total / counts.sum()
    q = np.floor(exact).astype(int)
    order = np.argsort(-(exact - q), kind="stable")
    q[order[: n_total - q.sum()]] += 1
    return q


def split_validation(labels, fraction, rng, groups=None):
    """Stratified ``(train_index, val_index)``, both sorted.

    With ``groups`` the split is made over whole groups (e.g. trials), each
    stratified by its first member's label.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if not 0 <= fraction < 1:
        raise ConfigurationError(f"validation fraction must lie in [0, 1), got {fraction}")
    if groups is None:
        units = np.arange(n)
        unit_labels = labels
    else:
        groups = np.asarray(groups)
        units, first = np.unique(groups, return_index=True)
        unit_labels = labels[first]
    n_val = int(round(fraction * len(units)))
    if n_val == 0:
        return np.arange(n), np.zeros(0, dtype=int)
    classes = np.unique(unit_labels)
    members = [np.flatnonzero(unit_labels == c) for c in classes]
    quotas = _quota([len(m) for m in members], n_val)
    chosen = np.concatenate([rng.choice(m, size=q, replace=False) for m, q in zip(members, quotas)])
    val_units = units[chosen]
    if groups is None:
        val_mask = np.zeros(n, dtype=bool)
        val_mask[val_units] = True
    else:
        val_mask = np.isin(groups, val_units)
    return np.flatnonzero(~val_mask), np.flatnonzero(val_mask)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainState:
    params: nw.ModelParams
    best_params: nw.ModelParams
    best_val_accuracy: float = float("nan")
    best_epoch: int = -1
    epoch: int = 0
    history: list = field(default_factory=list)
    train_index: np.ndarray = None
    val_index: np.ndarray = None

    @property
    def model(self):
        return self.best_params


def evaluate_loss_accuracy(params, values, labels):
    probs = nw.predict_proba(params, values)
    loss = nw.cross_entropy_loss(probs, labels)
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc


def train(crops, spec, config, validation_fraction=0.1, split="crop", init_seed=None):
    """Train from scratch on a :class:`~surgskill.datapipe.CropSet`.

    ``split`` is ``"crop"`` or ``"trial"`` (validation made of whole trials).
    The returned state's :attr:`TrainState.model` is the parameter snapshot with
    the best validation accuracy (earliest epoch on ties); without a
    validation split it is the final parameters.
    """
    values, labels = crops.values, np.asarray(crops.labels, dtype=int)
    if len(labels) == 0:
        raise InputError("training set is empty")
    if values.shape[1] != spec.window_width:
        raise ConfigurationError(
            f"crops have width {values.shape[1]} but the architecture expects {spec.window_width}")
    if split not in ("crop", "trial"):
        raise ConfigurationError(f"validation split must be 'crop' or 'trial', got {split!r}")

    rng = np.random.default_rng(config.seed)
    groups = crops.trial_ids if split == "trial" else None
    train_idx, val_idx = split_validation(labels, validation_fraction, rng, groups)
    if len(train_idx) == 0:
        raise InputError("no training crops left after the validation split")

    params = nw.init_params(spec, config.seed if init_seed is None else init_seed, dtype=values.dtype)
    state = TrainState(params, params.copy(), train_index=train_idx, val_index=val_idx)
    x_val, y_val = values[val_idx], labels[val_idx]

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            probs, cache = nw.forward(params, values[idx], "training", seed=int(rng.integers(2**63)))
            loss = nw.cross_entropy_loss(probs, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            total += loss * len(idx)
            adam_step(params, nw.backward(params, cache, labels[idx]), config)
        train_loss = total / len(order)

        if len(val_idx):
            val_loss, val_acc = evaluate_loss_accuracy(params, x_val, y_val)
            if not state.best_epoch >= 0 or val_acc > state.best_val_accuracy:
                state.best_val_accuracy = val_acc
                state.best_epoch = epoch
                state.best_params = params.copy()
        else:
            val_loss = val_acc = float("nan")
            state.best_epoch = epoch
            state.best_params = params
        state.history.append(EpochRecord(epoch, train_loss, val_loss, val_acc))
        state.epoch = epoch + 1
        log.debug("epoch %d train_loss %.5f val_loss %.5f val_acc %.4f", epoch, train_loss, val_loss, val_acc)

    if not len(val_idx):
        state.best_params = params.copy()
    return state


def write_learning_curve(history, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy)])
