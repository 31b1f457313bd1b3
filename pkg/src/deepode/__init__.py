"""Evolutionary Monte Carlo sampling and large-step neural surrogates for
multiscale stiff ODE systems."""

from .dataset import Dataset, concat_datasets, load_dataset, save_dataset
from .emcs import (EmcsConfig, RangeEstimate, TauSchedule, build_emcs_dataset,
                   estimate_range, evolve_augment, filter_by_range, manifold_sample,
                   mc_sample)
from .csp import (CspReport, characteristic_time, eig_decompose, tau_csp,
                  timescale_histogram)
from .indicator import IndicatorModel, hybrid_rollout, indicator_fit, indicator_score
from .integrators import (IntegratorConfig, Trajectory, evolve_delta, integrate,
                          sample_at)
from .mlp import (MlpModel, Preprocessor, TrainConfig, forward, load_model,
                  preprocess_fit, rollout, save_model, train)
from .presets import get_preset, list_presets
from .systems import SystemSpec, get_system, list_systems, register_system

__version__ = "0.1.0"

__all__ = [
    "Dataset", "concat_datasets", "load_dataset", "save_dataset",
    "EmcsConfig", "RangeEstimate", "TauSchedule", "build_emcs_dataset",
    "estimate_range", "evolve_augment", "filter_by_range", "manifold_sample",
    "mc_sample",
    "CspReport", "characteristic_time", "eig_decompose", "tau_csp",
    "timescale_histogram",
    "IndicatorModel", "hybrid_rollout", "indicator_fit", "indicator_score",
    "IntegratorConfig", "Trajectory", "evolve_delta", "integrate", "sample_at",
    "MlpModel", "Preprocessor", "TrainConfig", "forward", "load_model",
    "preprocess_fit", "rollout", "save_model", "train",
    "get_preset", "list_presets",
    "SystemSpec", "get_system", "list_systems", "register_system",
]
