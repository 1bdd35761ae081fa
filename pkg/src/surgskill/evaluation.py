"""Fold plans, classification metrics, timing and experiment orchestration."""
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network as nw
from . import optim
from .datapipe import CLASS_NAMES, build_crops
from .errors import DivergenceError, InputError

log = logging.getLogger(__name__)

N_CLASSES = 3


# -- fold plans ----------------------------------------------------------------

@dataclass
class Fold:
    train: list
    test: list


@dataclass
class FoldPlan:
    scheme: str
    folds: list
    seed: int = None

    def check_hygiene(self):
        """Raise if any fold shares a trial between its train and test sides."""
        for i, f in enumerate(self.folds):
            shared = set(map(tuple, f.train)) & set(map(tuple, f.test))
            if shared:
                raise InputError(f"fold {i}: trials on both sides: {sorted(shared)}")


def _trials_by_subject(keys, n_repeats, allow_missing):
    by_subject = {}
    for k in keys:
        by_subject.setdefault(k[1], {})[k[2]] = tuple(k)
    if not by_subject:
        raise InputError("no trials to plan folds over")
    gaps = {s: sorted(set(range(1, n_repeats + 1)) - set(t)) for s, t in by_subject.items()}
    gaps = {s: g for s, g in gaps.items() if g}
    extra = {s: sorted(set(t) - set(range(1, n_repeats + 1))) for s, t in by_subject.items()}
    extra = {s: e for s, e in extra.items() if e}
    if extra:
        raise InputError(f"trial indices outside 1..{n_repeats}: {extra}")
    if gaps and not allow_missing:
        raise InputError(f"missing trial indices per subject: {gaps}")
    return by_subject


def _keys(trials):
    return [tuple(t.key) if hasattr(t, "key") else tuple(t) for t in trials]


def make_loso_plan(trials, n_repeats=5, allow_missing=False):
    """Leave-one-supertrial-out: fold ``i`` tests on the ``i``-th trial of every subject.

    ``trials`` are trial objects or ``(task, subject, index)`` keys of one task.
    With ``allow_missing`` subjects may lack some repetitions (as in the public
    release); a supertrial is then whatever trials carry that index.
    """
    keys = _keys(trials)
    _trials_by_subject(keys, n_repeats, allow_missing)
    folds = []
    for i in range(1, n_repeats + 1):
        test = [k for k in keys if k[2] == i]
        train = [k for k in keys if k[2] != i]
        folds.append(Fold(train, test))
    return FoldPlan("loso", folds)


def make_holdout_plan(trials, seed, n_repeats=5, allow_missing=False):
    """A single split holding out one uniformly chosen trial per subject."""
    keys = _keys(trials)
    by_subject = _trials_by_subject(keys, n_repeats, allow_missing)
    rng = np.random.default_rng(seed)
    held = set()
    for subject in sorted(by_subject):
        available = sorted(by_subject[subject])
        held.add(by_subject[subject][available[rng.integers(len(available))]])
    test = [k for k in keys if k in held]
    train = [k for k in keys if k not in held]
    return FoldPlan("holdout", [Fold(train, test)], seed)


# -- metrics ---------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: ground truth, columns: prediction

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def zero_support(self):
        return self.counts.sum(axis=1) == 0

    def normalized(self):
        """Row-normalised matrix; rows without support stay all-zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


def confusion_matrix(truth, predicted, n_classes=N_CLASSES):
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(truth, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


@dataclass
class Metrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    confusion: ConfusionMatrix

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class": {
                name: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                       "f1": float(self.f1[i]), "support": int(self.support[i]),
                       "zero_support": bool(self.support[i] == 0)}
                for i, name in enumerate(CLASS_NAMES)
            },
            "confusion_counts": self.confusion.counts.tolist(),
        }


def compute_metrics(truth, predicted, n_classes=N_CLASSES):
    """One-vs-rest precision, recall and f1 per class plus overall accuracy.

    A ratio with a zero denominator is reported as 0.
    """
    truth = np.asarray(truth, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise InputError(f"label vectors differ in shape: {truth.shape} vs {predicted.shape}")
    if len(truth) == 0:
        raise InputError("cannot score an empty label vector")
    cm = confusion_matrix(truth, predicted, n_classes)
    tp = np.diag(cm.counts).astype(float)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return Metrics(precision, recall, f1, cm.counts.sum(axis=1), float(tp.sum() / len(truth)), cm)


# -- timing ----------------------------------------------------------------------

@dataclass
class Timing:
    mean_ms: float
    std_ms: float
    n_samples: int
    repeats: int
    empty: bool = False


def measure_running_time(params, values, repeats=1):
    """Wall-clock milliseconds to classify every crop in ``values``."""
    n = len(values)
    if n == 0:
        return Timing(0.0, 0.0, 0, repeats, empty=True)
    samples = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        nw.predict(params, values)
        samples.append((time.perf_counter() - t0) * 1e3)
    return Timing(float(np.mean(samples)), float(np.std(samples)), n, len(samples))


# -- experiments -----------------------------------------------------------------

@dataclass
class FoldResult:
    index: int
    train_trials: list
    test_trials: list
    metrics: Metrics = None
    timing: Timing = None
    best_epoch: int = None
    best_val_accuracy: float = None
    trial_metrics: Metrics = None
    history: list = field(default_factory=list)
    params: object = None
    warnings: list = field(default_factory=list)
    failed: str = None

    def to_dict(self):
        d = {
            "fold": self.index,
            "train_trials": [list(k) for k in self.train_trials],
            "test_trials": [list(k) for k in self.test_trials],
            "warnings": list(self.warnings),
            "failed": self.failed,
        }
        if self.metrics is not None:
            d["metrics"] = self.metrics.to_dict()
            d["test_crops"] = self.metrics.confusion.total
            d["best_epoch"] = self.best_epoch
            d["best_val_accuracy"] = self.best_val_accuracy
        if self.trial_metrics is not None:
            d["per_trial_majority_vote"] = self.trial_metrics.to_dict()
        return d


@dataclass
class ExperimentReport:
    scheme: str
    task: str
    window: int
    labeling: str
    seed: int
    folds: list
    accuracy: float = float("nan")
    precision: np.ndarray = None
    recall: np.ndarray = None
    f1: np.ndarray = None
    confusion: ConfusionMatrix = None

    @property
    def succeeded(self):
        return [f for f in self.folds if f.failed is None]

    @property
    def mean_running_time_ms(self):
        times = [f.timing.mean_ms for f in self.succeeded if f.timing is not None]
        return float(np.mean(times)) if times else float("nan")

    @property
    def stem(self):
        return f"{self.task.lower()}_{self.scheme}_w{self.window}_{self.labeling}_seed{self.seed}"

    def to_dict(self):
        """Machine-readable report; wall-clock timing is kept out so reruns are byte-identical."""
        agg = {"accuracy": self.accuracy, "folds_failed": [f.index for f in self.folds if f.failed]}
        if self.confusion is not None:
            agg["per_class"] = {
                name: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                       "f1": float(self.f1[i])}
                for i, name in enumerate(CLASS_NAMES)
            }
            agg["confusion_counts"] = self.confusion.counts.tolist()
            agg["confusion_normalized"] = self.confusion.normalized().tolist()
        return {
            "task": self.task, "scheme": self.scheme, "window": self.window,
            "labeling": self.labeling, "seed": self.seed, "basis": "per-window",
            "aggregate": agg, "folds": [f.to_dict() for f in self.folds],
        }


def aggregate(report):
    """Unweighted mean of fold metrics plus summed confusion counts."""
    ok = [f for f in report.succeeded if f.metrics is not None]
    if not ok:
        return report
    report.accuracy = float(np.mean([f.metrics.accuracy for f in ok]))
    report.precision = np.mean([f.metrics.precision for f in ok], axis=0)
    report.recall = np.mean([f.metrics.recall for f in ok], axis=0)
    report.f1 = np.mean([f.metrics.f1 for f in ok], axis=0)
    report.confusion = sum((f.metrics.confusion for f in ok[1:]), ok[0].metrics.confusion)
    return report


def majority_vote(crops, predicted):
    """Per-trial labels by majority over that trial's crop predictions (ties -> lowest class)."""
    truth, votes = [], []
    for t_id in np.unique(crops.trial_ids):
        sel = crops.trial_ids == t_id
        truth.append(int(crops.labels[sel][0]))
        votes.append(int(np.argmax(np.bincount(predicted[sel], minlength=N_CLASSES))))
    return np.array(truth), np.array(votes)


def run_fold(index, fold, crops, spec, opt_config, validation_fraction=0.1, split="crop",
             timing_repeats=1, per_trial=False, keep_params=True):
    """Train on the fold's training trials and score every crop of its test trials."""
    result = FoldResult(index, fold.train, fold.test)
    train = crops.select_trials(fold.train)
    test = crops.select_trials(fold.test)
    present = set(np.unique(train.labels).tolist())
    absent = [CLASS_NAMES[c] for c in range(N_CLASSES) if c not in present]
    if absent:
        msg = f"fold {index}: classes absent from training: {', '.join(absent)}"
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    try:
        state = optim.train(train, spec, opt_config, validation_fraction, split)
    except (DivergenceError, InputError) as exc:
        result.failed = str(exc)
        return result
    result.history = state.history
    result.best_epoch = state.best_epoch
    result.best_val_accuracy = state.best_val_accuracy
    if keep_params:
        result.params = state.model
    result.timing = measure_running_time(state.model, test.values, timing_repeats)
    if len(test) == 0:
        result.warnings.append(f"fold {index}: no test crops")
        return result
    predicted = nw.predict(state.model, test.values)
    result.metrics = compute_metrics(test.labels, predicted)
    if per_trial:
        result.trial_metrics = compute_metrics(*majority_vote(test, predicted))
    return result


def _run_fold_job(args):
    return run_fold(*args[0], **args[1])


def run_experiment(trials, plan, spec, opt_config, policy, window=None, seed=None,
                   validation_fraction=0.1, split="crop", jobs=1, timing_repeats=1,
                   per_trial=False, crops=None):
    """Run every fold of ``plan`` and aggregate.

    Fold ``i`` trains with seed ``opt_config.seed + i``.  ``crops`` may be
    supplied pre-built (e.g. from a cache); otherwise they are built from
    ``trials`` with ``window``.
    """
    plan.check_hygiene()
    if crops is None:
        crops = build_crops(trials, policy, window)
    known = set(map(tuple, crops.trial_keys))
    for f in plan.folds:
        unknown = [k for k in list(f.train) + list(f.test) if tuple(k) not in known]
        if unknown:
            raise InputError(f"plan refers to trials missing from the corpus: {unknown[:5]}")
    tasks = sorted({k[0] for k in crops.trial_keys})
    jobs_args = []
    for i, fold in enumerate(plan.folds):
        cfg = replace(opt_config, seed=opt_config.seed + i)
        jobs_args.append(((i, fold, crops, spec, cfg),
                          dict(validation_fraction=validation_fraction, split=split,
                               timing_repeats=timing_repeats, per_trial=per_trial)))
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold_job, jobs_args))
    else:
        results = [_run_fold_job(a) for a in jobs_args]
    report = ExperimentReport(plan.scheme, "+".join(tasks), spec.window_width, policy.mode,
                              opt_config.seed if seed is None else seed, results)
    return aggregate(report)


def write_report(report, out_dir):
    """Write ``<stem>.json`` plus delimited confusion matrices per fold and aggregated."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{report.stem}.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for f in report.folds:
        if f.metrics is not None:
            write_confusion(f.metrics.confusion, out_dir / f"{report.stem}_fold{f.index}_confusion.csv")
    if report.confusion is not None:
        write_confusion(report.confusion, out_dir / f"{report.stem}_confusion.csv")
    return path


def write_confusion(cm, path):
    norm = cm.normalized()
    lines = ["truth\\pred," + ",".join(CLASS_NAMES) + ",support"]
    for i, name in enumerate(CLASS_NAMES):
        lines.append(name + "," + ",".join(f"{v:.6f}" for v in norm[i]) + f",{int(cm.counts[i].sum())}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
