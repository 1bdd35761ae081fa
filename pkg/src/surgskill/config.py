"""Run configuration: defaults, INI-style config files and flag overrides.

Precedence is command-line flag > config file > built-in default.  Defaults
reproduce the published setting (W=60, L=30, lr 1e-4, batch 600, 300 epochs,
dropout 0.2/0.5).
"""
import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .datapipe import LabelingPolicy, SyntheticSpec, WindowConfig, normalize_task
from .errors import ConfigurationError
from .network import ArchitectureSpec
from .optim import OptimizerConfig


def _opt(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class RunConfig:
    task: str = _opt("run", "su")
    labeling: str = _opt("run", "self")
    scheme: str = _opt("run", "loso")
    seed: int = _opt("run", 0)
    jobs: int = _opt("run", 1)
    data: str = _opt("run", "data")
    out: str = _opt("run", "runs")

    window: int = _opt("window", 60)
    step: int = _opt("window", 30)

    hidden_widths: tuple = _opt("model", (256, 128))
    maxpool_dropout: float = _opt("model", 0.2)
    fc_dropout: float = _opt("model", 0.5)

    preset: str = _opt("optim", "paper")
    learning_rate: float = _opt("optim", None, type=float)
    batch_size: int = _opt("optim", None, type=int)
    epochs: int = _opt("optim", None, type=int)
    validation_fraction: float = _opt("optim", 0.1)
    validation_split: str = _opt("optim", "crop")

    allow_missing_trials: bool = _opt("eval", False)
    per_trial_vote: bool = _opt("eval", False)
    timing_repeats: int = _opt("eval", 3)

    subjects: int = _opt("synth", 8)
    trials: int = _opt("synth", 5)
    min_length: int = _opt("synth", 240)
    max_length: int = _opt("synth", 420)

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        choices = {"labeling": ("self", "grs"), "scheme": ("loso", "holdout"),
                   "preset": ("paper", "desk"), "validation_split": ("crop", "trial")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        normalize_task(self.task)
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")

    # -- derived objects

    def architecture(self, window=None):
        return ArchitectureSpec(window_width=window or self.window, hidden_widths=self.hidden_widths,
                                maxpool_dropout_rate=self.maxpool_dropout, fc_dropout_rate=self.fc_dropout)

    def optimizer(self):
        overrides = {"seed": self.seed}
        for name in ("learning_rate", "batch_size", "epochs"):
            if getattr(self, name) is not None:
                overrides[name] = getattr(self, name)
        return OptimizerConfig.preset(self.preset, **overrides)

    def window_config(self, window=None):
        return WindowConfig(window or self.window, self.step)

    def policy(self):
        return LabelingPolicy(self.labeling)

    def synthetic_spec(self):
        return SyntheticSpec(n_subjects=self.subjects, trials_per_subject=self.trials,
                             length_range=(self.min_length, self.max_length), seed=self.seed)

    # -- text form

    def emit(self, skip=()):
        cp = configparser.ConfigParser()
        for f in fields(self):
            if f.name in skip:
                continue
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            cp.set(sec, f.name, str(value))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def parse(cls, text, base=None):
        """Overlay the key = value settings in ``text`` onto ``base`` (defaults if omitted)."""
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config: {exc}") from None
        by_name = {f.name: f for f in fields(cls)}
        updates = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = by_name.get(key)
                if f is None or f.metadata["section"] != sec:
                    raise ConfigurationError(f"unknown setting [{sec}] {key}")
                updates[key] = _convert(f, raw)
        return replace(base or cls(), **updates)

    @classmethod
    def from_file(cls, path, base=None):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.parse(fh.read(), base)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None


def _convert(f, raw):
    kind = f.metadata.get("type") or type(f.default)
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.split(","))
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"invalid value for {f.name}: {raw!r}") from None
