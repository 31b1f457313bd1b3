"""Solver-confidence indicator and the hybrid stepper built on it.

The score p(y, X) = prod_i exp(-z_i^2 / 2) with z_i = (y_i - mu_i)/sigma_i
approximates how close a query sits to the training inputs; the normal-pdf
prefactors of the defining formula cancel to exactly this product. Scores are
computed in preprocessed input space so multi-scale raw units do not distort
the Gaussian picture. When the score drops below the acceptance threshold the
hybrid stepper advances with the reference integrator instead of the
surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, InputError, StiffFailureError
from .integrators import IntegratorConfig, Trajectory, advance_batch
from .mlp import MlpModel, Preprocessor, forward
from .systems import SystemSpec

STD_FLOOR = 1e-12


@dataclass
class IndicatorModel:
    """Diagonal-Gaussian summary of the (preprocessed) training inputs."""

    mu: np.ndarray
    sigma: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ConfigError("mu and sigma must be matching vectors")
        if np.any(self.sigma <= 0):
            raise ConfigError("sigma must be positive")
        if not (0.0 < self.threshold <= 1.0):
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}")


def indicator_fit(ds: Dataset, pre: Preprocessor, threshold: float = 0.5) -> IndicatorModel:
    """Per-dimension mean/std of the preprocessed training inputs."""
    if len(ds) == 0:
        raise InputError("cannot fit the indicator on an empty dataset")
    Z = pre.transform_inputs(ds.inputs)
    return IndicatorModel(Z.mean(axis=0), np.maximum(Z.std(axis=0), STD_FLOOR), threshold)


def _zsq(m: IndicatorModel, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != m.mu.size:
        raise InputError(f"query has {y.shape[-1]} dims, indicator has {m.mu.size}")
    if not np.all(np.isfinite(y)):
        raise InputError("query contains non-finite values")
    z = (y - m.mu) / m.sigma
    return np.sum(z * z, axis=-1)


def indicator_score(m: IndicatorModel, y: np.ndarray) -> np.ndarray | float:
    """p(y, X) in (0, 1]; y must be in the same (preprocessed) space as mu/sigma."""
    s = np.exp(-0.5 * _zsq(m, y))
    return float(s) if np.ndim(s) == 0 else s


def neg_log_score(m: IndicatorModel, y: np.ndarray) -> np.ndarray | float:
    """-log p(y, X) = sum_i z_i^2 / 2, exact even where p underflows to zero."""
    s = 0.5 * _zsq(m, y)
    return float(s) if np.ndim(s) == 0 else s


def score_raw(m: IndicatorModel, pre: Preprocessor, x_raw: np.ndarray) -> np.ndarray | float:
    """Convenience: score a raw-unit input through the model's preprocessor."""
    return indicator_score(m, pre.transform_inputs(x_raw))


def hybrid_rollout(
    model: MlpModel,
    m: IndicatorModel,
    sys: SystemSpec,
    cfg: IntegratorConfig,
    x0,
    t0: float = 0.0,
    n_steps: int = 1,
    threshold: float | None = None,
) -> tuple[Trajectory, np.ndarray]:
    """Step with the surrogate while confident, else with the integrator.

    Returns the trajectory and a boolean mask, True where the integrator was
    used (low score, or a one-shot retry after a non-finite surrogate step).
    threshold=0 degenerates to a pure surrogate rollout; values above 1 are
    rejected.
    """
    th = m.threshold if threshold is None else threshold
    if not (0.0 <= th <= 1.0):
        raise ConfigError(f"threshold must lie in [0, 1], got {th}")
    if n_steps < 1:
        raise InputError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim,):
        raise InputError(f"x0 must have shape ({sys.dim},)")
    period = sys.period if not sys.autonomous else None
    states = np.empty((n_steps + 1, sys.dim))
    states[0] = x0
    fallback = np.zeros(n_steps, dtype=bool)
    x = x0.copy()
    for j in range(n_steps):
        t = t0 + j * model.dt
        feats = x if sys.autonomous else np.concatenate([x, [np.mod(t, period)]])
        score = indicator_score(m, model.pre.transform_inputs(feats))
        take_surrogate = score >= th
        if take_surrogate:
            u = forward(model, feats)
            x_new = x + u
            if not np.all(np.isfinite(x_new)):
                take_surrogate = False  # one-shot integrator retry for this step
        if not take_surrogate:
            x_new, ok = advance_batch(sys, x, t, model.dt, cfg)
            if not ok:
                raise StiffFailureError(f"integrator fallback failed at step {j}")
            fallback[j] = True
        x = x_new
        states[j + 1] = x
    times = t0 + model.dt * np.arange(n_steps + 1)
    return Trajectory(times, states), fallback
