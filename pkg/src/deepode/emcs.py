"""Evolutionary Monte Carlo sampling.

Three-step dataset construction: (1) estimate feasible state/label ranges
from seed trajectories, (2) Monte Carlo sample the bounding hypercube with
per-dimension linear or log scaling and filter labels against the estimated
ranges, (3) evolve each sample along the dynamics under a tau schedule and
keep every chain member that survives the label filter. The pure-MC and
manifold baselines used for comparisons live here as well.

Everything is a pure function of (config, seed): repeated calls are
bit-identical, and chains are merged in (chain index, step index) order so
results do not depend on evaluation schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import PROV_MC, Dataset
from .errors import ConfigError, InputError, RangeError
from .integrators import IntegratorConfig, advance_batch, evolve_delta_batch, sample_at
from .systems import SystemSpec


@dataclass
class RangeEstimate:
    """Componentwise bounds on states (x) and labels (u) over seed trajectories."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    n_trajectories: int
    dt: float

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "u_lo", "u_hi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.x_lo > self.x_hi) or np.any(self.u_lo > self.u_hi):
            raise InputError("range estimate has lo > hi")

    def merge(self, other: "RangeEstimate") -> "RangeEstimate":
        """Union of two estimates; intervals only ever grow."""
        if other.dt != self.dt:
            raise InputError("cannot merge range estimates with different dt")
        return RangeEstimate(
            np.minimum(self.x_lo, other.x_lo),
            np.maximum(self.x_hi, other.x_hi),
            np.minimum(self.u_lo, other.u_lo),
            np.maximum(self.u_hi, other.u_hi),
            self.n_trajectories + other.n_trajectories,
            self.dt,
        )

    def with_x_bounds(self, bounds: np.ndarray) -> "RangeEstimate":
        """Replace the state box (used when sampling from prescribed system bounds)."""
        return RangeEstimate(bounds[:, 0].copy(), bounds[:, 1].copy(),
                             self.u_lo.copy(), self.u_hi.copy(),
                             self.n_trajectories, self.dt)


TAU_STRATEGIES = ("fixed", "increasing", "csp_adaptive", "random_uniform")


@dataclass(frozen=True)
class TauSchedule:
    """Evolution-time sequence for Step 3.

    fixed/increasing carry explicit values; random_uniform draws each tau
    per chain per step from ``range``; csp_adaptive sets each tau from the
    local decoupling timescale times ``csp_multiplier``.
    """

    strategy: str
    values: tuple = ()
    k: int = 0
    range: Optional[tuple] = None
    csp_tol_rel: float = 1e-4
    csp_tol_abs: float = 1e-10
    csp_multiplier: float = 1.0

    def __post_init__(self):
        if self.strategy not in TAU_STRATEGIES:
            raise ConfigError(f"unknown tau strategy '{self.strategy}'")
        if self.strategy in ("fixed", "increasing"):
            vals = tuple(float(v) for v in self.values)
            if any(v < 0 for v in vals):
                raise ConfigError("tau values must be nonnegative")
            if self.strategy == "increasing" and any(b < a for a, b in zip(vals, vals[1:])):
                raise ConfigError("increasing schedule requires tau_{i+1} >= tau_i")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "k", len(vals))
        else:
            if self.k < 0:
                raise ConfigError("k must be nonnegative")
            if self.strategy == "random_uniform":
                if self.range is None or not (0 <= self.range[0] <= self.range[1]):
                    raise ConfigError("random_uniform needs a valid [lo, hi] range")

    def steps(self) -> int:
        return self.k


@dataclass(frozen=True)
class EmcsConfig:
    """Inputs of the EMCS generator: MC budget, tau schedule, prediction step,
    label-filter multipliers and the RNG seed.

    ``lambda1``/``lambda2`` of None disables label filtering (used by
    timescale diagnostics). ``mc_bounds`` picks whether MC sampling uses the
    Step-1 estimated box or the system's prescribed bounds; ``filter_x``
    additionally filters on the state box (off by default).
    """

    n0: int
    tau: TauSchedule
    dt: float
    lambda1: Optional[float] = 0.5
    lambda2: Optional[float] = 2.0
    seed: int = 0
    mc_bounds: str = "estimated"
    filter_x: bool = False

    def __post_init__(self):
        if self.n0 < 1:
            raise ConfigError("n0 must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if (self.lambda1 is None) != (self.lambda2 is None):
            raise ConfigError("lambda1 and lambda2 must be set together")
        if self.mc_bounds not in ("estimated", "system"):
            raise ConfigError("mc_bounds must be 'estimated' or 'system'")


@dataclass
class SamplingStats:
    """Bookkeeping for dropped rows and truncated chains."""

    label_failures: int = 0
    chain_truncations: int = 0
    filtered_rows: int = 0
    skipped_trajectories: int = 0


def estimate_range(
    sys: SystemSpec,
    seeds: np.ndarray,
    t_end: float,
    sample_every: float,
    dt: float,
    cfg: IntegratorConfig,
    label_cfg: Optional[IntegratorConfig] = None,
) -> tuple[RangeEstimate, Dataset]:
    """Step 1: integrate each seed to t_end, sample states every sample_every,
    label each sampled state by evolving it dt, and return the componentwise
    min/max over all (x, u) pairs together with the seed-trajectory dataset.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[1] != sys.dim:
        raise InputError(f"seeds must have {sys.dim} columns")
    if seeds.shape[0] < 1 or t_end <= 0 or sample_every <= 0:
        raise InputError("need at least one seed, t_end > 0 and sample_every > 0")
    label_cfg = label_cfg or cfg
    n_samples = max(1, int(round(t_end / sample_every)))
    m = seeds.shape[0]

    states = np.empty((n_samples, m, sys.dim))
    alive = np.ones(m, dtype=bool)
    X = seeds.copy()
    T = np.zeros(m)
    for i in range(n_samples):
        states[i] = X
        if i < n_samples - 1:
            X, ok = advance_batch(sys, X, T, sample_every, cfg)
            T = T + sample_every
            alive &= ok
    # A trajectory that fails anywhere is skipped entirely: its tail samples
    # are not trustworthy and ranges must stay reproducible.
    stats = SamplingStats(skipped_trajectories=int(np.sum(~alive)))
    if not np.any(alive):
        raise RangeError("every seed trajectory failed to integrate")

    keep = np.flatnonzero(alive)
    xs = states[:, keep, :].reshape(-1, sys.dim)
    ts = np.repeat(np.arange(n_samples) * sample_every, keep.size)
    U, ok_u = evolve_delta_batch(sys, xs, ts, dt, label_cfg)
    good = ok_u & np.all(np.isfinite(U), axis=1)
    stats.label_failures = int(np.sum(~good))
    xs, ts, U = xs[good], ts[good], U[good]
    if xs.shape[0] == 0:
        raise RangeError("no seed-trajectory sample produced a valid label")

    est = RangeEstimate(xs.min(axis=0), xs.max(axis=0), U.min(axis=0), U.max(axis=0),
                        int(keep.size), dt)
    inputs = xs if sys.autonomous else np.column_stack([xs, np.mod(ts, sys.period)])
    ds = Dataset(dt, sys.dim, sys.autonomous, inputs, U,
                 np.full(xs.shape[0], -1, dtype=np.int64))
    ds.stats = stats
    return est, ds


def _draw_states(rng, lo, hi, log_scale, n):
    cols = []
    for i in range(lo.size):
        if log_scale[i]:
            if lo[i] <= 0:
                raise ConfigError(f"log-scale dimension {i} needs a positive lower bound, got {lo[i]:g}")
            cols.append(np.exp(rng.uniform(np.log(lo[i]), np.log(hi[i]), size=n)))
        else:
            cols.append(rng.uniform(lo[i], hi[i], size=n))
    return np.column_stack(cols)


def mc_sample(range_est: RangeEstimate, sys: SystemSpec, cfg: EmcsConfig,
              integ_cfg: IntegratorConfig) -> Dataset:
    """Step 2: n0 hypercube draws (per-dimension linear or log scale) with labels.

    Non-autonomous systems also draw the phase time uniformly over one forcing
    period. Rows whose label integration fails are dropped and counted.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.mc_bounds == "system":
        lo, hi = sys.bounds[:, 0], sys.bounds[:, 1]
    else:
        lo, hi = range_est.x_lo, range_est.x_hi
    X = _draw_states(rng, lo, hi, sys.log_scale, cfg.n0)
    T = np.zeros(cfg.n0) if sys.autonomous else rng.uniform(0.0, sys.period, size=cfg.n0)
    U, ok = evolve_delta_batch(sys, X, T, cfg.dt, integ_cfg)
    good = ok & np.all(np.isfinite(U), axis=1)
    stats = SamplingStats(label_failures=int(np.sum(~good)))
    X, T, U = X[good], T[good], U[good]
    inputs = X if sys.autonomous else np.column_stack([X, np.mod(T, sys.period)])
    ds = Dataset(cfg.dt, sys.dim, sys.autonomous, inputs, U,
                 np.full(X.shape[0], PROV_MC, dtype=np.int64))
    ds.stats = stats
    return ds


def filter_box(range_est: RangeEstimate, lambda1: float, lambda2: float):
    """The widened label box [min(l1*u_lo, u_lo), max(l2*u_hi, u_hi)].

    Scaling is sign-aware: a multiplier only ever widens the interval, so a
    negative lower bound widens downward instead of shrinking.
    """
    lo = np.minimum(lambda1 * range_est.u_lo, range_est.u_lo)
    hi = np.maximum(lambda2 * range_est.u_hi, range_est.u_hi)
    return lo, hi


def filter_by_range(ds: Dataset, range_est: RangeEstimate, lambda1: float, lambda2: float,
                    filter_x: bool = False) -> Dataset:
    """Keep exactly the rows whose label lies inside the widened box (idempotent)."""
    if ds.dt != range_est.dt:
        raise InputError(f"dataset dt {ds.dt:g} != range dt {range_est.dt:g}")
    lo, hi = filter_box(range_est, lambda1, lambda2)
    keep = np.all((ds.labels >= lo) & (ds.labels <= hi), axis=1)
    if filter_x:
        keep &= np.all((ds.states >= range_est.x_lo) & (ds.states <= range_est.x_hi), axis=1)
    return ds.take(keep)


def _chain_taus(cfg: EmcsConfig, n_chains: int, rng) -> Optional[np.ndarray]:
    """Per-chain tau matrix (n_chains, k), or None for csp_adaptive."""
    tau = cfg.tau
    if tau.strategy in ("fixed", "increasing"):
        return np.tile(np.asarray(tau.values, dtype=float), (n_chains, 1))
    if tau.strategy == "random_uniform":
        return rng.uniform(tau.range[0], tau.range[1], size=(n_chains, tau.k))
    return None


def evolve_augment(
    ds_mc: Dataset,
    sys: SystemSpec,
    cfg: EmcsConfig,
    range_est: RangeEstimate,
    chain_cfg: IntegratorConfig,
    label_cfg: Optional[IntegratorConfig] = None,
) -> Dataset:
    """Step 3: evolve every MC root through the tau schedule, label all chain
    members, merge in (chain, step) order and apply the label filter.

    A chain whose evolution fails at step i contributes only its first i
    members; label failures drop individual rows. ``chain_cfg`` moves the
    points, ``label_cfg`` (default: same) computes the labels.
    """
    label_cfg = label_cfg or chain_cfg
    k = cfg.tau.steps()
    n = len(ds_mc)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    taus = _chain_taus(cfg, n, rng)
    stats = SamplingStats()

    X = ds_mc.states.copy()
    T = np.zeros(n) if sys.autonomous else ds_mc.times.copy()
    chain_states = [X.copy()]
    chain_times = [T.copy()]
    alive_steps = [np.ones(n, dtype=bool)]
    alive = np.ones(n, dtype=bool)
    for i in range(k):
        if taus is None:
            tau_i = _csp_taus(sys, X, T, cfg.tau, alive)
        else:
            tau_i = taus[:, i]
        Xn, ok = advance_batch(sys, X, T, np.where(alive, tau_i, 0.0), chain_cfg)
        ok &= np.all(np.isfinite(Xn), axis=1)
        newly_dead = alive & ~ok
        stats.chain_truncations += int(np.sum(newly_dead))
        alive = alive & ok
        X = np.where(alive[:, None], Xn, X)
        T = T + np.where(alive, tau_i, 0.0)
        chain_states.append(X.copy())
        chain_times.append(T.copy())
        alive_steps.append(alive.copy())

    # Merge candidate rows ordered by (chain index, step index).
    steps = np.arange(k + 1)
    states_all = np.stack(chain_states, axis=1)      # (n, k+1, dim)
    times_all = np.stack(chain_times, axis=1)        # (n, k+1)
    valid = np.stack(alive_steps, axis=1)            # (n, k+1)
    prov_all = np.broadcast_to(steps, (n, k + 1))

    flat_states = states_all.reshape(-1, sys.dim)
    flat_times = times_all.reshape(-1)
    flat_prov = prov_all.reshape(-1)
    flat_valid = valid.reshape(-1)

    # Labels: the MC roots already carry theirs; evolved members get labeled here.
    labels = np.zeros((n * (k + 1), sys.dim))
    labels[flat_prov == 0] = ds_mc.labels
    need = flat_valid & (flat_prov > 0)
    if np.any(need):
        U, ok_u = evolve_delta_batch(sys, flat_states[need], flat_times[need], cfg.dt, label_cfg)
        ok_u &= np.all(np.isfinite(U), axis=1)
        stats.label_failures = int(np.sum(~ok_u))
        labels[np.flatnonzero(need)] = np.where(ok_u[:, None], U, 0.0)
        keep_need = np.zeros(flat_valid.size, dtype=bool)
        keep_need[np.flatnonzero(need)[ok_u]] = True
        flat_valid = flat_valid & ((flat_prov == 0) | keep_need)

    inputs = flat_states if sys.autonomous else np.column_stack(
        [flat_states, np.mod(flat_times, sys.period)])
    ds = Dataset(cfg.dt, sys.dim, sys.autonomous,
                 inputs[flat_valid], labels[flat_valid], flat_prov[flat_valid])
    before = len(ds)
    if cfg.lambda1 is not None:
        ds = filter_by_range(ds, range_est, cfg.lambda1, cfg.lambda2, cfg.filter_x)
    stats.filtered_rows = before - len(ds)
    ds.stats = stats
    return ds


def _csp_taus(sys, X, T, tau: TauSchedule, alive):
    from .csp import tau_csp

    out = np.zeros(X.shape[0])
    for i in np.flatnonzero(alive):
        report = tau_csp(sys, X[i], float(T[i]), tau.csp_tol_rel, tau.csp_tol_abs)
        value = report.tau_csp
        if not np.isfinite(value):
            value = 0.0
        out[i] = tau.csp_multiplier * value
    return out


def manifold_sample(
    sys: SystemSpec,
    n_seeds: int,
    n_per_traj: int,
    sample_every: float,
    dt: float,
    cfg: IntegratorConfig,
    seed: int,
    label_cfg: Optional[IntegratorConfig] = None,
) -> Dataset:
    """The trajectory-only baseline: random seeds inside the system bounds,
    n_per_traj samples at fixed intervals along each trajectory."""
    if n_seeds < 1 or n_per_traj < 1:
        raise InputError("n_seeds and n_per_traj must be >= 1")
    rng = np.random.default_rng(seed)
    seeds = _draw_states(rng, sys.bounds[:, 0], sys.bounds[:, 1], sys.log_scale, n_seeds)
    est, ds = estimate_range(sys, seeds, n_per_traj * sample_every, sample_every, dt,
                             cfg, label_cfg=label_cfg)
    del est
    return ds


def build_emcs_dataset(
    sys: SystemSpec,
    cfg: EmcsConfig,
    range_est: RangeEstimate,
    chain_cfg: IntegratorConfig,
    label_cfg: Optional[IntegratorConfig] = None,
) -> Dataset:
    """Steps 2+3 against a precomputed Step-1 range estimate."""
    ds_mc = mc_sample(range_est, sys, cfg, label_cfg or chain_cfg)
    return evolve_augment(ds_mc, sys, cfg, range_est, chain_cfg, label_cfg)
