"""Command-line entry point: ``surgskill {preprocess,synth,train,evaluate,benchmark}``.

Exit status: 0 success, 2 input/config error, 3 training divergence, 4 I/O error.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import datapipe as dp
from . import evaluation as ev
from . import network as nw
from . import optim
from .config import RunConfig
from .errors import DivergenceError, InputError, SkillError

log = logging.getLogger("surgskill")

BENCHMARK_WINDOWS = (30, 60, 90)


def build_parser():
    # SUPPRESS keeps subcommand defaults from clobbering flags given before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("run options")
    g.add_argument("--config", metavar="PATH", help="INI config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--task", choices=["su", "np", "kt"], type=str.lower)
    g.add_argument("--scheme", choices=["loso", "holdout"])
    g.add_argument("--window", type=int, choices=BENCHMARK_WINDOWS)
    g.add_argument("--step", type=int)
    g.add_argument("--labeling", choices=["self", "grs"])
    g.add_argument("--preset", choices=["paper", "desk"])
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--jobs", type=int)
    g.add_argument("--data", metavar="DIR", help="dataset root holding manifest.csv or a JIGSAWS release")
    g.add_argument("--out", metavar="DIR")
    g.add_argument("--allow-missing-trials", dest="allow_missing_trials", action="store_true")
    g.add_argument("--per-trial-vote", dest="per_trial_vote", action="store_true")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="surgskill", parents=[common],
                                     description="Surgical skill classification from robot kinematics.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common], help="parse, normalise, split and crop; write crop caches")
    sp = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    sp.add_argument("--subjects", type=int, default=argparse.SUPPRESS)
    sp.add_argument("--trials", type=int, default=argparse.SUPPRESS)
    sub.add_parser("train", parents=[common], help="train one model on every trial of a task")
    sub.add_parser("evaluate", parents=[common], help="run the LOSO or Hold-out protocol")
    sub.add_parser("benchmark", parents=[common], help="both schemes over W = 30, 60, 90")
    return parser


def resolve_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config, cfg)
    flags = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    return replace(cfg, **flags)


# -- helpers -----------------------------------------------------------------------

def load_trials(cfg, tasks=None):
    root = Path(cfg.data)
    manifest = root / "manifest.csv"
    if manifest.exists():
        return dp.load_corpus(manifest, tasks)
    entries = dp.jigsaws_manifest(root)
    if tasks is not None:
        wanted = {dp.normalize_task(t) for t in tasks}
        entries = [e for e in entries if e.task in wanted]
    return [dp.parse_trial(root / e.kinematics_path, replace(e, kinematics_path=str(root / e.kinematics_path)))
            for e in entries]


def crops_path(cfg, task, window):
    return Path(cfg.out) / "crops" / f"{task.lower()}_w{window}_l{cfg.step}_{cfg.labeling}.npz"


def task_crops(cfg, trials, task, window):
    """Crops for one task, reusing a matching cache written by ``preprocess``."""
    path = crops_path(cfg, task, window)
    wc = cfg.window_config(window)
    if path.exists():
        crops = dp.CropSet.load(path)
        if [tuple(k) for k in crops.trial_keys] == [t.key for t in trials] and crops.window == wc:
            return crops
    return dp.build_crops(trials, cfg.policy(), wc)


def _out(cfg, *parts):
    p = Path(cfg.out).joinpath(*parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _task_trials(cfg):
    task = dp.normalize_task(cfg.task)
    trials = load_trials(cfg, [task])
    if not trials:
        raise InputError(f"no {task} trials under {cfg.data}")
    return task, trials


# -- commands ---------------------------------------------------------------------

def cmd_synth(cfg):
    spec = cfg.synthetic_spec()
    trials, entries = dp.generate_synthetic_corpus(spec)
    manifest = dp.write_corpus(trials, entries, cfg.out)
    print(f"wrote {len(trials)} trials ({spec.n_subjects} subjects x {spec.trials_per_subject} trials"
          f" x {len(spec.tasks)} tasks) to {manifest.parent}")
    return 0


def cmd_preprocess(cfg):
    trials = load_trials(cfg)
    summary = {}
    print(f"{'task':<6}{'trials':>8}{'crops':>8}")
    for task in dp.TASKS:
        tt = [t for t in trials if t.recording.task == task]
        if not tt:
            continue
        crops = dp.build_crops(tt, cfg.policy(), cfg.window_config())
        crops.save(_out(cfg, "crops", crops_path(cfg, task, cfg.window).name),
                   extra={"labeling": cfg.labeling})
        summary[task] = {"trials": len(tt), "crops": len(crops)}
        print(f"{task:<6}{len(tt):>8}{len(crops):>8}")
    _out(cfg, "preprocess_summary.json").write_text(
        json.dumps({"window": cfg.window, "step": cfg.step, "tasks": summary}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_train(cfg):
    task, trials = _task_trials(cfg)
    crops = task_crops(cfg, trials, task, cfg.window)
    state = optim.train(crops, cfg.architecture(), cfg.optimizer(), cfg.validation_fraction, cfg.validation_split)
    stem = f"{task.lower()}_train_w{cfg.window}_{cfg.labeling}_seed{cfg.seed}"
    # paths stay out of the stored config so identical runs give identical bytes anywhere
    nw.save_checkpoint(_out(cfg, "checkpoints", stem + ".npz"), state.model,
                       {"task": task, "labeling": cfg.labeling, "best_epoch": state.best_epoch,
                        "best_val_accuracy": state.best_val_accuracy, "config": cfg.emit(skip=("data", "out"))})
    optim.write_learning_curve(state.history, _out(cfg, "curves", stem + ".csv"))
    print(f"{task}: {len(crops)} crops, best validation accuracy {state.best_val_accuracy:.4f}"
          f" at epoch {state.best_epoch}")
    return 0


def _run_scheme(cfg, task, trials, scheme, window):
    keys = [t.key for t in trials]
    if scheme == "loso":
        plan = ev.make_loso_plan(keys, allow_missing=cfg.allow_missing_trials)
    else:
        plan = ev.make_holdout_plan(keys, cfg.seed, allow_missing=cfg.allow_missing_trials)
    crops = task_crops(cfg, trials, task, window)
    report = ev.run_experiment(trials, plan, cfg.architecture(window), cfg.optimizer(), cfg.policy(),
                               seed=cfg.seed, validation_fraction=cfg.validation_fraction,
                               split=cfg.validation_split, jobs=cfg.jobs, timing_repeats=cfg.timing_repeats,
                               per_trial=cfg.per_trial_vote, crops=crops)
    ev.write_report(report, Path(cfg.out) / "reports")
    for f in report.folds:
        if f.params is not None:
            nw.save_checkpoint(_out(cfg, "checkpoints", f"{report.stem}_fold{f.index}.npz"), f.params,
                               {"fold": f.index, "best_epoch": f.best_epoch,
                                "best_val_accuracy": f.best_val_accuracy})
            optim.write_learning_curve(f.history, _out(cfg, "curves", f"{report.stem}_fold{f.index}.csv"))
    with open(_out(cfg, "timing", report.stem + ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "test_crops", "mean_ms", "std_ms", "repeats"])
        for f in report.folds:
            if f.timing is not None:
                w.writerow([f.index, f.timing.n_samples, f"{f.timing.mean_ms:.3f}",
                            f"{f.timing.std_ms:.3f}", f.timing.repeats])
    return report


def _print_report(report):
    print(f"{report.task} {report.scheme} W={report.window} labels={report.labeling}")
    for f in report.folds:
        status = f"accuracy {f.metrics.accuracy:.4f}" if f.metrics else f"FAILED: {f.failed}"
        print(f"  fold {f.index}: {status}")
    if report.confusion is not None:
        f1 = " ".join(f"{n[:6]}={v:.2f}" for n, v in zip(dp.CLASS_NAMES, report.f1))
        print(f"  aggregate accuracy {report.accuracy:.4f}  f1 {f1}  time {report.mean_running_time_ms:.2f} ms")


def _status(reports):
    failed = [f for r in reports for f in r.folds if f.failed]
    return 3 if failed else 0


def cmd_evaluate(cfg):
    task, trials = _task_trials(cfg)
    report = _run_scheme(cfg, task, trials, cfg.scheme, cfg.window)
    _print_report(report)
    return _status([report])


def cmd_benchmark(cfg):
    task, trials = _task_trials(cfg)
    rows, reports = [], []
    for scheme in ("loso", "holdout"):
        for window in BENCHMARK_WINDOWS:
            report = _run_scheme(cfg, task, trials, scheme, window)
            reports.append(report)
            f1 = report.f1 if report.f1 is not None else [float("nan")] * 3
            rows.append([task, scheme, window, *f1, report.accuracy, report.mean_running_time_ms])
    header = ["task", "scheme", "window", "f1_novice", "f1_intermediate", "f1_expert", "accuracy", "running_time_ms"]
    stem = f"{task.lower()}_benchmark_{cfg.labeling}_seed{cfg.seed}"
    with open(_out(cfg, "timing", stem + ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([r[:3] + [f"{v:.4f}" for v in r[3:7]] + [f"{r[7]:.2f}"] for r in rows])
    print(f"{'task':<5}{'scheme':<9}{'W':>4}{'Novice':>8}{'Interm.':>9}{'Expert':>8}{'Acc.':>8}{'Time ms':>10}")
    for r in rows:
        print(f"{r[0]:<5}{r[1]:<9}{r[2]:>4}{r[3]:>8.2f}{r[4]:>9.2f}{r[5]:>8.2f}{r[6]:>8.3f}{r[7]:>10.2f}")
    return _status(reports)


COMMANDS = {"preprocess": cmd_preprocess, "synth": cmd_synth, "train": cmd_train,
            "evaluate": cmd_evaluate, "benchmark": cmd_benchmark}


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SkillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if exc.exit_code == 1 else exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
