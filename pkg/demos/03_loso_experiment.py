# %% [markdown]
# # Leave-one-supertrial-out on the synthetic corpus
#
# Fold ``i`` holds out the ``i``-th trial of every subject, trains a fresh
# network on the rest and scores every test window.  The ``desk`` preset
# (lr 1e-3, batch 64) keeps this to a few minutes on one core; we cut the
# epochs further here.

# %%
import time

import numpy as np

from surgskill import datapipe as dp
from surgskill import evaluation as ev
from surgskill import network as nw
from surgskill import optim

trials, _ = dp.generate_synthetic_corpus(dp.SyntheticSpec(seed=0))
kt = [t for t in trials if t.recording.task == "KT"]
plan = ev.make_loso_plan(kt)
print([len(f.test) for f in plan.folds], "test trials per fold")

# %%
t0 = time.perf_counter()
report = ev.run_experiment(kt, plan, nw.ArchitectureSpec(window_width=60),
                           optim.OptimizerConfig.preset("desk", epochs=15), dp.LabelingPolicy(),
                           dp.WindowConfig(60, 30), timing_repeats=3)
print(f"{time.perf_counter() - t0:.0f} s")

for f in report.folds:
    print(f"fold {f.index}: accuracy {f.metrics.accuracy:.3f}, best epoch {f.best_epoch},"
          f" {f.timing.mean_ms:.1f} ms for {f.timing.n_samples} windows")

# %% [markdown]
# The aggregate is the plain mean over folds; confusion counts are summed.

# %%
print("accuracy", round(report.accuracy, 3))
print("f1", dict(zip(dp.CLASS_NAMES, np.round(report.f1, 3).tolist())))
print("row-normalised confusion (truth x prediction)\n", report.confusion.normalized().round(3))
