"""Reproduction harness: sampling-method comparisons, tau-strategy sweeps,
rollout metrics and wall-clock speedups.

Every experiment is a pure function of its config (seed included); reports
embed a hash of the config they came from. Reference trajectories for rollout
comparison come from the preset's tighter reference integrator, evaluated by
dense integration at exactly the prediction times.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import Dataset
from .emcs import EmcsConfig, RangeEstimate, TauSchedule, build_emcs_dataset, manifold_sample, mc_sample
from .errors import AlignmentError, ConfigError, InputError
from .indicator import IndicatorModel, hybrid_rollout, indicator_fit
from .integrators import IntegratorConfig, Trajectory, advance_batch, evolve_delta_batch, sample_at
from .mlp import MlpModel, TrainConfig, TrainHistory, forward, rollout, train
from .presets import SystemPreset, get_preset
from .systems import get_system

REL_ERR_FLOOR = 1e-8
SAMPLING_METHODS = ("mc", "manifold", "emcs")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sample -> train -> rollout pipeline."""

    system_name: str
    sampling_method: str
    preset: str
    budget: int
    seed: int = 0
    tau: Optional[TauSchedule] = None
    epochs: Optional[int] = None
    rollout_x0: Optional[tuple] = None
    horizon: Optional[float] = None
    manifold_points_per_traj: int = 200
    one_step_probe: int = 1000

    def __post_init__(self):
        if self.sampling_method not in SAMPLING_METHODS:
            raise ConfigError(f"sampling_method must be one of {SAMPLING_METHODS}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.horizon is not None and self.horizon <= 0:
            raise ConfigError("horizon must be positive")


def config_hash(cfg) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.integer, np.floating)):
            return o.item()
        raise TypeError(f"unhashable config field {o!r}")

    payload = json.dumps(asdict(cfg), sort_keys=True, default=default)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class WallclockRecord:
    surrogate_step_s: float
    integrator_step_s: float
    repeats: int
    warmup: int

    @property
    def speedup(self) -> float:
        return self.integrator_step_s / self.surrogate_step_s


@dataclass
class MetricsReport:
    config_hash: str
    system_name: str
    sampling_method: str
    seed: int
    n_rows: int
    rollout_rmse_per_dim: np.ndarray
    rollout_rmse_scalar: float
    rollout_truncated_at: Optional[int]
    one_step_mae: Optional[float] = None
    rel_err_edges: Optional[np.ndarray] = None
    rel_err_fractions: Optional[np.ndarray] = None
    wallclock: Optional[WallclockRecord] = None
    final_train_mae: Optional[float] = None
    final_val_mae: Optional[float] = None
    error: Optional[str] = None

    def to_text(self) -> str:
        lines = [
            f"config_hash={self.config_hash}",
            f"system={self.system_name}",
            f"sampling_method={self.sampling_method}",
            f"seed={self.seed}",
            f"n_rows={self.n_rows}",
            f"rollout_rmse_scalar={self.rollout_rmse_scalar:.17g}",
            "rollout_rmse_per_dim=" + ",".join(f"{v:.17g}" for v in np.atleast_1d(self.rollout_rmse_per_dim)),
            f"rollout_truncated_at={self.rollout_truncated_at}",
        ]
        if self.one_step_mae is not None:
            lines.append(f"one_step_mae={self.one_step_mae:.17g}")
        if self.final_train_mae is not None:
            lines.append(f"final_train_mae={self.final_train_mae:.17g}")
        if self.final_val_mae is not None:
            lines.append(f"final_val_mae={self.final_val_mae:.17g}")
        if self.wallclock is not None:
            lines.append(f"surrogate_step_s={self.wallclock.surrogate_step_s:.6g}")
            lines.append(f"integrator_step_s={self.wallclock.integrator_step_s:.6g}")
            lines.append(f"speedup={self.wallclock.speedup:.6g}")
        if self.error is not None:
            lines.append(f"error={self.error}")
        return "\n".join(lines) + "\n"


def rollout_rmse(pred: Trajectory, ref: Trajectory):
    """Per-dimension RMSE over shared times plus a scalar: the mean over
    dimensions of RMSE normalized by the reference's per-dimension std."""
    if pred.times.shape != ref.times.shape or not np.allclose(
            pred.times, ref.times, rtol=1e-9, atol=1e-12):
        raise AlignmentError("trajectories are not on a common time grid")
    diff = pred.states - ref.states
    per_dim = np.sqrt(np.mean(diff * diff, axis=0))
    ref_std = np.maximum(ref.states.std(axis=0), 1e-12)
    scalar = float(np.mean(per_dim / ref_std))
    return per_dim, scalar


@dataclass
class ExperimentResult:
    report: MetricsReport
    model: Optional[MlpModel] = None
    history: Optional[TrainHistory] = None
    dataset: Optional[Dataset] = None
    pred: Optional[Trajectory] = None
    ref: Optional[Trajectory] = None


def build_dataset_for(cfg: ExperimentConfig, preset: SystemPreset) -> Dataset:
    """Dataset per sampling method at the configured row budget.

    mc: budget uniform draws, unfiltered. manifold: budget/points_per_traj
    seed trajectories. emcs: budget/(k+1) MC roots evolved and filtered, so
    the pre-filter candidate count equals the budget.
    """
    sys = get_system(cfg.system_name)
    tau = cfg.tau if cfg.tau is not None else preset.tau
    if cfg.sampling_method == "mc":
        emcs_cfg = EmcsConfig(n0=cfg.budget, tau=tau, dt=preset.dt, lambda1=None,
                              lambda2=None, seed=cfg.seed, mc_bounds=preset.mc_bounds)
        if preset.mc_bounds == "system":
            # The unfiltered baseline never reads the estimated ranges.
            range_est = RangeEstimate(sys.bounds[:, 0], sys.bounds[:, 1],
                                      np.zeros(sys.dim), np.zeros(sys.dim), 0, preset.dt)
        else:
            range_est, _ = preset.estimate_range(cfg.seed)
        return mc_sample(range_est, sys, emcs_cfg, preset.label_cfg)
    if cfg.sampling_method == "manifold":
        n_seeds = max(1, cfg.budget // cfg.manifold_points_per_traj)
        return manifold_sample(sys, n_seeds, cfg.manifold_points_per_traj,
                               preset.dt, preset.dt, preset.chain_cfg,
                               seed=cfg.seed, label_cfg=preset.label_cfg)
    n0 = max(1, cfg.budget // (tau.steps() + 1))
    emcs_cfg = EmcsConfig(n0=n0, tau=tau, dt=preset.dt, lambda1=preset.lambda1,
                          lambda2=preset.lambda2, seed=cfg.seed, mc_bounds=preset.mc_bounds)
    range_est, _ = preset.estimate_range(cfg.seed)
    return build_emcs_dataset(sys, emcs_cfg, range_est, preset.chain_cfg, preset.label_cfg)


def reference_trajectory(sys, preset: SystemPreset, x0, t0: float, n_steps: int) -> Trajectory:
    times = t0 + preset.dt * np.arange(n_steps + 1)
    states = sample_at(sys, x0, t0, times, preset.reference_cfg)
    return Trajectory(times, states)


def one_step_metrics(model: MlpModel, sys, preset: SystemPreset, seed: int, n_probe: int):
    """One-step MAE and the relative-error histogram on a fresh probe set."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    X = rng.uniform(sys.bounds[:, 0], sys.bounds[:, 1], size=(n_probe, sys.dim))
    T = np.zeros(n_probe) if sys.autonomous else rng.uniform(0, sys.period, n_probe)
    U, ok = evolve_delta_batch(sys, X, T, preset.dt, preset.label_cfg)
    X, T, U = X[ok], T[ok], U[ok]
    feats = X if sys.autonomous else np.column_stack([X, np.mod(T, sys.period)])
    U_hat = forward(model, feats)
    mae = float(np.mean(np.abs(U_hat - U)))
    rel = np.abs(U_hat - U) / (np.abs(U) + REL_ERR_FLOOR)
    edges = np.logspace(-8, 2, 41)
    hist, _ = np.histogram(np.clip(rel, edges[0], edges[-1]), bins=edges)
    return mae, edges, hist / max(rel.size, 1)


def run_experiment(cfg: ExperimentConfig, keep_artifacts: bool = False,
                   with_one_step: bool = True) -> ExperimentResult:
    preset = get_preset(cfg.preset)
    if preset.system_name != cfg.system_name:
        raise ConfigError(f"preset '{cfg.preset}' is for {preset.system_name}, not {cfg.system_name}")
    sys = get_system(cfg.system_name)
    ds = build_dataset_for(cfg, preset)
    train_cfg = replace(preset.train, seed=cfg.seed,
                        epochs=cfg.epochs if cfg.epochs is not None else preset.train.epochs)
    model, hist = train(ds, preset.layer_sizes(sys), train_cfg, system_name=cfg.system_name)

    x0 = np.asarray(cfg.rollout_x0 if cfg.rollout_x0 is not None else preset.rollout_x0, dtype=float)
    n_steps = preset.rollout_steps if cfg.horizon is None else int(round(cfg.horizon / preset.dt))
    pred = rollout(model, x0, 0.0, n_steps, period=sys.period)
    ref = None
    if pred.truncated_at is not None:
        # A rollout that blows up before the horizon failed outright.
        per_dim = np.full(sys.dim, np.inf)
        scalar = float("inf")
    else:
        ref = reference_trajectory(sys, preset, x0, 0.0, n_steps)
        per_dim, scalar = rollout_rmse(pred, ref)

    report = MetricsReport(
        config_hash=config_hash(cfg),
        system_name=cfg.system_name,
        sampling_method=cfg.sampling_method,
        seed=cfg.seed,
        n_rows=len(ds),
        rollout_rmse_per_dim=per_dim,
        rollout_rmse_scalar=scalar,
        rollout_truncated_at=pred.truncated_at,
        final_train_mae=hist.train_mae[-1],
        final_val_mae=hist.val_mae[-1],
    )
    if with_one_step:
        mae, edges, fracs = one_step_metrics(model, sys, preset, cfg.seed, cfg.one_step_probe)
        report.one_step_mae = mae
        report.rel_err_edges = edges
        report.rel_err_fractions = fracs
    return ExperimentResult(report, model=model if keep_artifacts else None,
                            history=hist if keep_artifacts else None,
                            dataset=ds if keep_artifacts else None,
                            pred=pred if keep_artifacts else None,
                            ref=ref if keep_artifacts else None)


def compare_sampling(cfgs: list[ExperimentConfig], keep_artifacts: bool = False) -> list[ExperimentResult]:
    """Run several pipelines under an enforced equal dataset budget."""
    budgets = {c.budget for c in cfgs}
    if len(budgets) != 1:
        raise ConfigError(f"sampling comparison requires identical budgets, got {sorted(budgets)}")
    results = []
    for cfg in cfgs:
        try:
            results.append(run_experiment(cfg, keep_artifacts=keep_artifacts))
        except Exception as exc:  # one failed pipeline must not abort the sweep
            results.append(ExperimentResult(MetricsReport(
                config_hash=config_hash(cfg), system_name=cfg.system_name,
                sampling_method=cfg.sampling_method, seed=cfg.seed, n_rows=0,
                rollout_rmse_per_dim=np.array([]), rollout_rmse_scalar=float("nan"),
                rollout_truncated_at=None, error=f"{type(exc).__name__}: {exc}")))
    return results


def compare_tau_strategies(base: ExperimentConfig, schedules: list[TauSchedule],
                           k_sweep: tuple = (), keep_artifacts: bool = False):
    """One report per schedule (all sharing the base seed, hence the same MC
    roots) plus a step-count sweep: the k=0 entry is literally the pure-MC
    pipeline, k>0 entries truncate the first schedule to its first k values."""
    named = []
    for sched in schedules:
        cfg = replace(base, sampling_method="emcs", tau=sched)
        named.append((sched.strategy, run_experiment(cfg, keep_artifacts=keep_artifacts)))
    sweep = []
    for k in k_sweep:
        if k == 0:
            cfg = replace(base, sampling_method="mc", tau=None,
                          budget=max(1, base.budget // (schedules[0].steps() + 1)))
        else:
            first = schedules[0]
            if first.strategy not in ("fixed", "increasing"):
                raise ConfigError("k sweep needs an explicit-value schedule first")
            trunc = TauSchedule(first.strategy, values=first.values[:k])
            n0 = max(1, base.budget // (schedules[0].steps() + 1))
            cfg = replace(base, sampling_method="emcs", tau=trunc, budget=n0 * (k + 1))
        sweep.append((k, run_experiment(cfg, keep_artifacts=keep_artifacts)))
    return named, sweep


def measure_speedup(model: MlpModel, sys, integ_cfg: IntegratorConfig,
                    n_states: int = 1, repeats: int = 20, warmup: int = 3,
                    seed: int = 0) -> WallclockRecord:
    """Median per-state wall time to advance n_states by the model's dt,
    surrogate versus reference integrator, on identical states."""
    if repeats < 20:
        raise ConfigError("need at least 20 repetitions for a stable median")
    rng = np.random.default_rng(seed)
    X = rng.uniform(sys.bounds[:, 0], sys.bounds[:, 1], size=(n_states, sys.dim))
    T = np.zeros(n_states) if sys.autonomous else rng.uniform(0, sys.period, n_states)
    feats = X if sys.autonomous else np.column_stack([X, np.mod(T, sys.period)])

    def time_fn(fn):
        for _ in range(warmup):
            fn()
        # Grow the inner loop until one repetition is far above timer resolution.
        inner = 1
        while True:
            t0 = time.perf_counter()
            for _ in range(inner):
                fn()
            elapsed = time.perf_counter() - t0
            if elapsed > 5e-4 or inner >= 4096:
                break
            inner *= 4
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(inner):
                fn()
            samples.append((time.perf_counter() - t0) / inner)
        return float(np.median(samples))

    t_sur = time_fn(lambda: X + forward(model, feats))
    t_int = time_fn(lambda: advance_batch(sys, X, T, model.dt, integ_cfg))
    return WallclockRecord(t_sur / n_states, t_int / n_states, repeats, warmup)
