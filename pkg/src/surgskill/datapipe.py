"""Kinematics ingestion, normalisation, manipulator split, window cropping and labels.

A trial is a ``(T, 76)`` matrix sampled at 30 Hz.  Columns come in four
19-channel blocks (MTM1, MTM2, PSM1, PSM2), each ordered as position (3),
row-major rotation matrix (9), linear velocity (3), angular velocity (3) and
gripper angle (1).
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .errors import ConfigurationError, InputError, ParseError

TASKS = ("SU", "NP", "KT")
TASK_DIRS = {"SU": "Suturing", "NP": "Needle_Passing", "KT": "Knot_Tying"}
CLASS_NAMES = ("Novice", "Intermediate", "Expert")
SIDES = ("MTM", "PSM")

N_CHANNELS = 76
BLOCK = 19
PAIR_CHANNELS = 2 * BLOCK
SAMPLE_RATE_HZ = 30
GRS_RANGE = (6, 30)
SIGMA_GUARD = 1e-8

_BLOCK_FIELDS = (
    ["x", "y", "z"]
    + [f"R{r}{c}" for r in range(1, 4) for c in range(1, 4)]
    + ["vx", "vy", "vz", "wx", "wy", "wz", "gripper_angle"]
)
CHANNEL_NAMES = tuple(f"{arm}.{f}" for arm in ("MTM1", "MTM2", "PSM1", "PSM2") for f in _BLOCK_FIELDS)
ROTATION_OFFSET = 3

MANIFEST_FIELDS = ("task", "subject_id", "trial_index", "kinematics_path", "grs_score", "self_proclaimed")

_LEVEL_ALIASES = {
    "novice": 0, "n": 0, "1": 0,
    "intermediate": 1, "i": 1, "2": 1,
    "expert": 2, "e": 2, "3": 2,
}


def parse_level(text):
    try:
        return _LEVEL_ALIASES[str(text).strip().lower()]
    except KeyError:
        raise InputError(f"unknown skill level {text!r}") from None


def normalize_task(task):
    t = str(task).strip().upper()
    if t not in TASKS:
        raise InputError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    return t


@dataclass
class TrialRecording:
    task: str
    subject_id: str
    trial_index: int
    frames: np.ndarray

    @property
    def key(self):
        return (self.task, self.subject_id, self.trial_index)

    def validate(self, check_rotation=False):
        f = self.frames
        if f.ndim != 2 or f.shape[1] != N_CHANNELS:
            raise InputError(f"{self.key}: expected {N_CHANNELS} columns, got shape {f.shape}")
        if f.shape[0] < 1:
            raise InputError(f"{self.key}: empty recording")
        if not np.all(np.isfinite(f)):
            raise InputError(f"{self.key}: non-finite kinematics")
        if check_rotation:
            for b in range(4):
                start = b * BLOCK + ROTATION_OFFSET
                rot = f[:, start:start + 9].reshape(-1, 3, 3)
                worst = np.max(np.abs(np.linalg.det(rot) - 1.0))
                if worst >= 0.05:
                    raise InputError(
                        f"{self.key}: rotation block {CHANNEL_NAMES[b * BLOCK][:4]} has |det(R) - 1| = {worst:.3f}")
        return self


@dataclass(frozen=True)
class LabelRecord:
    self_proclaimed: int
    grs_score: int

    def __post_init__(self):
        if self.self_proclaimed not in (0, 1, 2):
            raise InputError(f"self-proclaimed level must be 0, 1 or 2, got {self.self_proclaimed}")


DEFAULT_THRESHOLDS = {"SU": (19, 24), "NP": (15, 20), "KT": (15, 20)}


@dataclass(frozen=True)
class LabelingPolicy:
    """``mode`` is ``"self"`` (self-proclaimed) or ``"grs"`` (thresholded rating).

    With ``inclusive=True`` a score equal to a threshold belongs to the higher class.
    """

    mode: str = "self"
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    inclusive: bool = True

    def __post_init__(self):
        if self.mode not in ("self", "grs"):
            raise ConfigurationError(f"labeling mode must be 'self' or 'grs', got {self.mode!r}")
        for task, (lo, hi) in self.thresholds.items():
            if not lo < hi:
                raise ConfigurationError(f"{task}: lower GRS threshold {lo} must be below upper {hi}")

    def __hash__(self):
        return hash((self.mode, tuple(sorted(self.thresholds.items())), self.inclusive))


def assign_label(record, policy, task):
    """Class index (0 Novice, 1 Intermediate, 2 Expert) for one trial."""
    lo, hi = GRS_RANGE
    if not lo <= record.grs_score <= hi:
        raise InputError(f"GRS score {record.grs_score} outside {lo}..{hi}")
    if policy.mode == "self":
        return record.self_proclaimed
    t_low, t_high = policy.thresholds[normalize_task(task)]
    s = record.grs_score
    if policy.inclusive:
        return 0 if s < t_low else (1 if s < t_high else 2)
    return 0 if s <= t_low else (1 if s <= t_high else 2)


def grs_band(task, level, policy=None):
    """Inclusive ``(low, high)`` GRS scores that map to ``level`` under a GRS policy."""
    policy = policy or LabelingPolicy("grs")
    t_low, t_high = policy.thresholds[normalize_task(task)]
    shift = 0 if policy.inclusive else 1
    bands = (
        (GRS_RANGE[0], t_low - 1 + shift),
        (t_low + shift, t_high - 1 + shift),
        (t_high + shift, GRS_RANGE[1]),
    )
    return bands[level]


@dataclass
class LabeledTrial:
    recording: TrialRecording
    labels: LabelRecord

    @property
    def key(self):
        return self.recording.key

    def label(self, policy):
        return assign_label(self.labels, policy, self.recording.task)


# -- files -------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    task: str
    subject_id: str
    trial_index: int
    kinematics_path: str
    grs_score: int
    self_proclaimed: int

    def row(self):
        return [self.task, self.subject_id, str(self.trial_index), self.kinematics_path,
                str(self.grs_score), CLASS_NAMES[self.self_proclaimed]]


def read_kinematics(path):
    """Parse a whitespace-delimited kinematics file into a ``(T, 76)`` float array."""
    path = Path(path)
    rows = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot open kinematics file ({exc.strerror})") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != N_CHANNELS:
                raise ParseError(f"expected {N_CHANNELS} columns, found {len(tokens)}", path, lineno)
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                bad = next(t for t in tokens if not _is_float(t))
                raise ParseError(f"non-numeric token {bad!r}", path, lineno) from None
    return np.array(rows, dtype=float).reshape(-1, N_CHANNELS)


def _is_float(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def write_kinematics(path, frames):
    np.savetxt(path, frames, fmt="%.7g", delimiter=" ")


def read_manifest(path):
    """Read a manifest; ``kinematics_path`` values are resolved relative to the manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read manifest ({exc.strerror})") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MANIFEST_FIELDS:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_FIELDS)}", path)
    entries = []
    for n, row in enumerate(reader, start=2):
        if len(row) != len(MANIFEST_FIELDS):
            raise ParseError(f"expected {len(MANIFEST_FIELDS)} fields, found {len(row)}", path, n)
        task, subject, idx, kpath, grs, level = (r.strip() for r in row)
        try:
            entries.append(ManifestEntry(
                normalize_task(task), subject, int(idx), str(path.parent / kpath), int(grs), parse_level(level)))
        except (ValueError, InputError) as exc:
            raise ParseError(str(exc), path, n) from None
    return entries


def write_manifest(entries, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            w.writerow(e.row())


def parse_trial(kinematics_path, entry, check_rotation=False):
    """Load one trial; ``entry`` must refer to ``kinematics_path``."""
    if Path(kinematics_path).resolve() != Path(entry.kinematics_path).resolve():
        raise InputError(f"manifest entry {entry.kinematics_path} does not describe {kinematics_path}")
    frames = read_kinematics(kinematics_path)
    rec = TrialRecording(entry.task, entry.subject_id, entry.trial_index, frames)
    rec.validate(check_rotation)
    return LabeledTrial(rec, LabelRecord(entry.self_proclaimed, entry.grs_score))


def load_corpus(manifest_path, tasks=None, check_rotation=False):
    """All trials of the manifest (optionally restricted to ``tasks``) in manifest order."""
    entries = read_manifest(manifest_path)
    if tasks is not None:
        wanted = {normalize_task(t) for t in tasks}
        entries = [e for e in entries if e.task in wanted]
    seen = set()
    trials = []
    for e in entries:
        key = (e.task, e.subject_id, e.trial_index)
        if key in seen:
            raise InputError(f"{manifest_path}: duplicate trial {key}")
        seen.add(key)
        trials.append(parse_trial(e.kinematics_path, e, check_rotation))
    return trials


def jigsaws_manifest(root):
    """Manifest entries for a JIGSAWS release laid out as ``<Task>/meta_file_<Task>.txt``.

    Kinematics are read from ``<Task>/kinematics/AllGestures/<trial>.txt``; paths
    in the returned entries are relative to ``root``.
    """
    root = Path(root)
    entries = []
    for task, dirname in TASK_DIRS.items():
        meta = root / dirname / f"meta_file_{dirname}.txt"
        if not meta.exists():
            continue
        for n, line in enumerate(meta.read_text(encoding="utf-8").splitlines(), start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ParseError("expected trial name, skill level and GRS score", meta, n)
            name, level, grs = tokens[:3]
            stem = name.rsplit("_", 1)[-1]
            subject, idx = stem[:-3], int(stem[-3:])
            rel = f"{dirname}/kinematics/AllGestures/{name}.txt"
            entries.append(ManifestEntry(task, subject, idx, rel, int(grs), parse_level(level)))
    if not entries:
        raise InputError(f"{root}: no manifest.csv and no JIGSAWS meta files found")
    return entries


# -- preprocessing -------------------------------------------------------------

@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    guarded: np.ndarray


def z_normalize(trial):
    """Per-channel z-score over the whole trial (population std, guarded at 1e-8).

    Accepts a :class:`TrialRecording` or :class:`LabeledTrial` and returns the
    same kind together with the :class:`ChannelStats`.
    """
    rec = trial.recording if isinstance(trial, LabeledTrial) else trial
    f = rec.frames
    if f.shape[0] < 2:
        raise InputError(f"{rec.key}: z-normalisation needs at least 2 frames, got {f.shape[0]}")
    mu = f.mean(axis=0)
    sigma = f.std(axis=0)
    guarded = sigma < SIGMA_GUARD
    scale = np.where(guarded, 1.0, sigma)
    out = TrialRecording(rec.task, rec.subject_id, rec.trial_index, (f - mu) / scale)
    stats = ChannelStats(mu, sigma, guarded)
    if isinstance(trial, LabeledTrial):
        return LabeledTrial(out, trial.labels), stats
    return out, stats


@dataclass
class ManipulatorInstance:
    trial_key: tuple
    side: str
    frames: np.ndarray
    label: int


def split_manipulators(trial, label):
    """Split a 76-channel trial into the MTM (cols 0-37) and PSM (cols 38-75) instances."""
    rec = trial.recording if isinstance(trial, LabeledTrial) else trial
    if rec.frames.shape[1] != N_CHANNELS:
        raise InputError(f"{rec.key}: expected {N_CHANNELS} columns")
    return (
        ManipulatorInstance(rec.key, "MTM", rec.frames[:, :PAIR_CHANNELS], label),
        ManipulatorInstance(rec.key, "PSM", rec.frames[:, PAIR_CHANNELS:], label),
    )


@dataclass(frozen=True)
class WindowConfig:
    width: int = 60
    step: int = 30

    def __post_init__(self):
        if self.width < 1 or self.step < 1:
            raise ConfigurationError(f"window width and step must be >= 1, got {self.width}, {self.step}")


@dataclass
class WindowCrop:
    values: np.ndarray
    trial_key: tuple
    side: str
    start: int
    label: int


def crop_starts(length, width, step):
    """Start frames ``0, L, 2L, ...`` while ``m + W <= length``."""
    if length < width:
        return np.zeros(0, dtype=int)
    return np.arange(0, length - width + 1, step)


def crop_count(length, width, step):
    return 0 if length < width else (length - width) // step + 1


def sliding_window_crop(instance, config):
    return [
        WindowCrop(instance.frames[m:m + config.width], instance.trial_key, instance.side, int(m), instance.label)
        for m in crop_starts(len(instance.frames), config.width, config.step)
    ]


@dataclass
class CropSet:
    """Stacked window crops with their provenance.

    ``trial_ids`` index into ``trial_keys``; ``sides`` is 0 for MTM, 1 for PSM.
    """

    values: np.ndarray
    labels: np.ndarray
    trial_ids: np.ndarray
    sides: np.ndarray
    starts: np.ndarray
    trial_keys: list
    window: WindowConfig = None

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        index = np.asarray(index)
        return CropSet(self.values[index], self.labels[index], self.trial_ids[index],
                       self.sides[index], self.starts[index], self.trial_keys, self.window)

    def trial_mask(self, keys):
        wanted = {tuple(k) for k in keys}
        ids = [i for i, k in enumerate(self.trial_keys) if tuple(k) in wanted]
        return np.isin(self.trial_ids, ids)

    def select_trials(self, keys):
        return self.subset(np.flatnonzero(self.trial_mask(keys)))

    def save(self, path, extra=None):
        arrays = {"values": self.values, "labels": self.labels, "trial_ids": self.trial_ids,
                  "sides": self.sides, "starts": self.starts}
        meta = {"trial_keys": [list(k) for k in self.trial_keys],
                "window": [self.window.width, self.window.step] if self.window else None,
                "extra": extra or {}}
        write_archive(path, arrays, meta, kind="crops")

    @classmethod
    def load(cls, path):
        arrays, meta = read_archive(path, kind="crops")
        window = WindowConfig(*meta["window"]) if meta["window"] else None
        keys = [(k[0], k[1], int(k[2])) for k in meta["trial_keys"]]
        return cls(arrays["values"], arrays["labels"], arrays["trial_ids"], arrays["sides"],
                   arrays["starts"], keys, window)


def build_crops(trials, policy, window, dtype=np.float64):
    """Normalise each trial, split it into MTM/PSM instances and crop both.

    Crops are ordered by trial (input order), then side, then start frame.
    """
    blocks, labels, ids, sides, starts = [], [], [], [], []
    keys = []
    for t_id, trial in enumerate(trials):
        keys.append(trial.key)
        label = trial.label(policy)
        normed, _ = z_normalize(trial)
        for s_id, inst in enumerate(split_manipulators(normed, label)):
            m = crop_starts(len(inst.frames), window.width, window.step)
            if len(m) == 0:
                continue
            idx = m[:, None] + np.arange(window.width)[None, :]
            blocks.append(inst.frames[idx])
            n = len(m)
            labels.append(np.full(n, label))
            ids.append(np.full(n, t_id))
            sides.append(np.full(n, s_id))
            starts.append(m)
    if blocks:
        values = np.concatenate(blocks).astype(dtype, copy=False)
        cat = lambda xs: np.concatenate(xs).astype(np.int64)  # noqa: E731
        return CropSet(values, cat(labels), cat(ids), cat(sides), cat(starts), keys, window)
    empty = np.zeros(0, dtype=np.int64)
    return CropSet(np.zeros((0, window.width, PAIR_CHANNELS), dtype=dtype), empty, empty.copy(),
                   empty.copy(), empty.copy(), keys, window)


# -- synthetic corpus ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and signal parameters of a generated corpus.

    Each subject is given one skill class.  A class sets the dominant motion
    frequency (Hz) and the strength of its second harmonic; every trial adds
    per-trial frequency jitter and AR(1) sensor noise.
    """

    n_subjects: int = 8
    trials_per_subject: int = 5
    length_range: tuple = (240, 420)
    tasks: tuple = TASKS
    class_frequencies: tuple = (2.4, 1.4, 0.7)
    class_harmonics: tuple = (0.5, 0.25, 0.05)
    frequency_jitter: float = 0.08
    noise_std: float = 0.3
    noise_ar: float = 0.7
    seed: int = 0

    def validate(self):
        if self.n_subjects < 2 or self.trials_per_subject < 2:
            raise InputError("a synthetic corpus needs at least 2 subjects with at least 2 trials each")
        lo, hi = self.length_range
        if not 2 <= lo <= hi:
            raise InputError(f"invalid trial length range {self.length_range}")
        if len(self.class_frequencies) != 3 or len(self.class_harmonics) != 3:
            raise InputError("three class frequencies and harmonics are required")
        if min(self.class_frequencies) <= 0 or self.noise_std < 0 or not 0 <= self.noise_ar < 1:
            raise InputError("frequencies must be positive, noise non-negative and AR coefficient in [0, 1)")
        for t in self.tasks:
            normalize_task(t)


_LAYOUT_SEED = 20180911


def _rotation(a, b, c):
    # Rz(a) @ Ry(b) @ Rx(c) for arrays of angles, returned row-major (T, 9)
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    return np.stack([
        ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc,
        sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc,
        -sb, cb * sc, cb * cc,
    ], axis=1)


def _ar_noise(rng, shape, std, phi):
    e = rng.normal(0.0, std, size=shape)
    out = np.empty(shape)
    out[0] = e[0]
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + e[t]
    return out


def _synthetic_frames(rng, level, length, spec):
    f0 = spec.class_frequencies[level] * (1.0 + rng.uniform(-spec.frequency_jitter, spec.frequency_jitter))
    harm = spec.class_harmonics[level]
    t = np.arange(length) / SAMPLE_RATE_HZ

    # channel coupling is fixed across trials; only a global phase varies
    layout = np.random.default_rng(_LAYOUT_SEED)
    phases = layout.uniform(0, 2 * np.pi, size=(2, 7))
    amps = layout.uniform(0.6, 1.4, size=(2, 7))
    w = 2 * np.pi * f0 * t[:, None] + rng.uniform(0, 2 * np.pi)

    def wave(hand, cols):
        ph, amp = phases[hand, cols], amps[hand, cols]
        return amp * (np.sin(w + ph) + harm * np.sin(2 * w + 2 * ph + 1.0))

    blocks = []
    for arm in range(4):
        hand = arm % 2
        scale = 1.0 if arm < 2 else 0.3
        pos = scale * wave(hand, slice(0, 3)) + rng.normal(0, 1, size=3)
        ang = 0.4 * wave(hand, slice(3, 6))
        rot = _rotation(ang[:, 0], ang[:, 1], ang[:, 2]) + rng.normal(0, 0.003, size=(length, 9))
        vel = np.gradient(pos, axis=0) * SAMPLE_RATE_HZ
        omega = np.gradient(ang, axis=0) * SAMPLE_RATE_HZ
        grip = 0.5 * wave(hand, slice(6, 7))
        noise = lambda k, s: _ar_noise(rng, (length, k), spec.noise_std * s, spec.noise_ar)  # noqa: E731
        blocks.append(np.hstack([
            pos + noise(3, scale), rot, vel + noise(3, scale * f0 * 2), omega + noise(3, f0), grip + noise(1, 0.5),
        ]))
    return np.hstack(blocks)


def generate_synthetic_corpus(spec=SyntheticSpec()):
    """Return ``(trials, manifest_entries)``; both policies give every trial the same class.

    Kinematics paths in the entries are relative (``kinematics/<task>/<file>``)
    and become real once the corpus is written with :func:`write_corpus`.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    levels = np.arange(spec.n_subjects) % 3
    rng.shuffle(levels)
    subjects = [f"S{i + 1:02d}" for i in range(spec.n_subjects)]
    trials, entries = [], []
    lo, hi = spec.length_range
    policy = LabelingPolicy("grs")
    for task in (normalize_task(t) for t in spec.tasks):
        for subject, level in zip(subjects, levels):
            level = int(level)
            g_lo, g_hi = grs_band(task, level, policy)
            for idx in range(1, spec.trials_per_subject + 1):
                length = int(rng.integers(lo, hi + 1))
                frames = _synthetic_frames(rng, level, length, spec)
                grs = int(rng.integers(g_lo, g_hi + 1))
                rec = TrialRecording(task, subject, idx, frames)
                trials.append(LabeledTrial(rec, LabelRecord(level, grs)))
                rel = f"kinematics/{task}/{subject}_{task}{idx:03d}.txt"
                entries.append(ManifestEntry(task, subject, idx, rel, grs, level))
    return trials, entries


def write_corpus(trials, entries, out_dir):
    """Write kinematics files and ``manifest.csv`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    for trial, entry in zip(trials, entries):
        path = out_dir / entry.kinematics_path
        path.parent.mkdir(parents=True, exist_ok=True)
        write_kinematics(path, trial.recording.frames)
    manifest = out_dir / "manifest.csv"
    write_manifest(entries, manifest)
    return manifest
