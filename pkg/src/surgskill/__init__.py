"""Surgical skill classification from robot kinematics with a 1-D convolutional network."""
from .datapipe import (
    CropSet, LabelingPolicy, SyntheticSpec, WindowConfig, build_crops, generate_synthetic_corpus, load_corpus,
)
from .evaluation import compute_metrics, make_holdout_plan, make_loso_plan, run_experiment
from .network import ArchitectureSpec, forward, init_params, predict
from .optim import OptimizerConfig, train

__version__ = "0.1.0"
