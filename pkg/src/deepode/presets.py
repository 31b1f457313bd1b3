"""Named end-to-end configurations for the built-in systems.

Full-scale presets mirror the published experiment setups; ``*_desk``
variants shrink dataset sizes (roughly 10x) and epochs so a complete pipeline
runs on a laptop in minutes. Where a desk preset deviates beyond plain
downscaling (shorter evolution windows for the ring modulator, smaller batch
to keep the update count up), the deviation is stated on the preset.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .emcs import EmcsConfig, RangeEstimate, TauSchedule, build_emcs_dataset, estimate_range
from .errors import ConfigError
from .integrators import IntegratorConfig
from .mlp import TrainConfig
from .systems import get_system


@dataclass(frozen=True)
class SystemPreset:
    """Everything needed to run sample -> train -> rollout for one system."""

    name: str
    system_name: str
    dt: float
    # Step 1: seed trajectories for range estimation.
    n_seed_traj: int
    seed_t_end: float
    seed_sample_every: float
    seed_bounds: tuple  # ((lo, hi), ...) box the seeds are drawn from
    # Steps 2-3.
    n0: int
    tau: TauSchedule
    lambda1: float
    lambda2: float
    mc_bounds: str
    # Integration: chain moves points, label computes u, reference is the
    # tighter config used for evaluation trajectories.
    chain_cfg: IntegratorConfig
    label_cfg: IntegratorConfig
    reference_cfg: IntegratorConfig
    # Surrogate.
    hidden: tuple
    train: TrainConfig
    # Evaluation rollout.
    rollout_x0: tuple
    rollout_steps: int
    # CSP defaults.
    csp_tol_rel: float = 1e-4
    csp_tol_abs: float = 1e-10
    hist_bin_range: tuple = (1e-14, 1e2)

    def layer_sizes(self, sys=None) -> tuple:
        sys = sys or get_system(self.system_name)
        in_dim = sys.dim + (0 if sys.autonomous else 1)
        return (in_dim,) + tuple(self.hidden) + (sys.dim,)

    def emcs_config(self, seed: int = 0) -> EmcsConfig:
        return EmcsConfig(n0=self.n0, tau=self.tau, dt=self.dt,
                          lambda1=self.lambda1, lambda2=self.lambda2,
                          seed=seed, mc_bounds=self.mc_bounds)

    def draw_seed_states(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        box = np.asarray(self.seed_bounds, dtype=float)
        return rng.uniform(box[:, 0], box[:, 1], size=(self.n_seed_traj, box.shape[0]))

    def estimate_range(self, seed: int = 0) -> tuple[RangeEstimate, object]:
        sys = get_system(self.system_name)
        return estimate_range(sys, self.draw_seed_states(seed), self.seed_t_end,
                              self.seed_sample_every, self.dt, self.chain_cfg,
                              label_cfg=self.label_cfg)

    def build_dataset(self, seed: int = 0, range_est: RangeEstimate | None = None):
        sys = get_system(self.system_name)
        if range_est is None:
            range_est, _ = self.estimate_range(seed)
        return build_emcs_dataset(sys, self.emcs_config(seed), range_est,
                                  self.chain_cfg, self.label_cfg)


_LV_BOX = ((0.0, 5.0), (0.0, 5.0))


def lotka_volterra_full() -> SystemPreset:
    """Published predator-prey setup: 20k MC roots evolved through
    tau = [0.1, 0.2, 0.3, 0.4] s at dt = 0.1 s for a 100k-row dataset,
    3x200 hidden units. Epoch count is this artifact's choice."""
    return SystemPreset(
        name="lv-full",
        system_name="lotka_volterra",
        dt=0.1,
        n_seed_traj=32,
        seed_t_end=20.0,
        seed_sample_every=0.1,
        seed_bounds=_LV_BOX,
        n0=20000,
        tau=TauSchedule("increasing", values=(0.1, 0.2, 0.3, 0.4)),
        lambda1=0.5,
        lambda2=2.0,
        mc_bounds="system",
        chain_cfg=IntegratorConfig(method="bdf2", h_init=1e-3),
        label_cfg=IntegratorConfig(method="bdf2", h_init=1e-3),
        reference_cfg=IntegratorConfig(method="rkf45", h_init=1e-2, rtol=1e-10, atol=1e-12),
        hidden=(200, 200, 200),
        train=TrainConfig(batch_size=1024, learning_rate=1e-4, epochs=500, val_fraction=0.05),
        rollout_x0=(3.0, 2.0),
        rollout_steps=500,
        hist_bin_range=(1e-4, 1e3),
    )


def lotka_volterra_desk() -> SystemPreset:
    """10x-smaller predator-prey run (2k roots -> 10k rows). Batch drops to
    256 so the number of Adam updates per epoch matches the full preset."""
    full = lotka_volterra_full()
    return replace(
        full,
        name="lv-desk",
        n_seed_traj=16,
        n0=2000,
        train=TrainConfig(batch_size=256, learning_rate=1e-4, epochs=400, val_fraction=0.05),
    )


_RM_SEED_BOX = tuple((-1e-3, 1e-3) for _ in range(15))


def ring_modulator_full() -> SystemPreset:
    """Published ring-modulator setup: 800 seed trajectories of 1 ms sampled
    every 1e-6 s, 5k MC roots evolved k=30 steps with tau ~ U[0, 0.02] s,
    label filter multipliers 10, dt = 1e-6 s, hidden layers 800/400/200."""
    return SystemPreset(
        name="rm-full",
        system_name="ring_modulator",
        dt=1e-6,
        n_seed_traj=800,
        seed_t_end=1e-3,
        seed_sample_every=1e-6,
        seed_bounds=_RM_SEED_BOX,
        n0=5000,
        tau=TauSchedule("random_uniform", k=30, range=(0.0, 0.02)),
        lambda1=10.0,
        lambda2=10.0,
        mc_bounds="system",
        chain_cfg=IntegratorConfig(method="bdf2", h_init=1e-7),
        label_cfg=IntegratorConfig(method="bdf2", h_init=1e-8),
        reference_cfg=IntegratorConfig(method="bdf2", h_init=1e-8),
        hidden=(800, 400, 200),
        train=TrainConfig(batch_size=1024, learning_rate=1e-4, epochs=300, val_fraction=0.05),
        rollout_x0=tuple(0.0 for _ in range(15)),
        rollout_steps=1000,
        csp_tol_rel=1e-3,
        csp_tol_abs=1e-5,
        hist_bin_range=(1e-14, 1.0),
    )


def ring_modulator_desk() -> SystemPreset:
    """Shrunk modulator run: 8 seed trajectories, 6k roots, k=6 evolution
    steps with tau ~ U[0, 4e-4] s (the full preset's [0, 0.02] window scaled
    down 50x so chains stay integrable in minutes at h = 1e-7)."""
    full = ring_modulator_full()
    return replace(
        full,
        name="rm-desk",
        n_seed_traj=8,
        n0=6000,
        tau=TauSchedule("random_uniform", k=6, range=(0.0, 4e-4)),
        train=TrainConfig(batch_size=1024, learning_rate=1e-4, epochs=150, val_fraction=0.05),
    )


_PRESETS = {
    "lv-full": lotka_volterra_full,
    "lv-desk": lotka_volterra_desk,
    "rm-full": ring_modulator_full,
    "rm-desk": ring_modulator_desk,
}


def get_preset(name: str) -> SystemPreset:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset '{name}'; known: {sorted(_PRESETS)}") from None


def list_presets() -> list[str]:
    return sorted(_PRESETS)
