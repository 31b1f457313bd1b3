"""Reference numerical integrators.

Explicit: forward Euler, classical RK4, adaptive RKF45. Implicit: backward
Euler and fixed-step BDF2 with Newton iteration, the stand-in for a
production stiff solver. BDF2 startup uses one backward-Euler step; fixed-step
methods divide the interval into uniform substeps no larger than ``h_init``
so the final time is hit exactly.

All implicit stepping is batched: a whole population of states advances in
lockstep with per-sample step sizes, which is what makes dataset generation
tractable in numpy. Failures (Newton stalls, non-finite states) are reported
per sample through an ``ok`` mask in the batch API and as exceptions in the
single-state API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, NonFiniteError, StepSizeError, StiffFailureError
from .systems import SystemSpec, eval_jacobian

EXPLICIT_METHODS = ("explicit_euler", "rk4", "rkf45")
IMPLICIT_METHODS = ("backward_euler", "bdf2")


@dataclass
class IntegratorConfig:
    method: str = "bdf2"
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = math.inf
    rtol: float = 1e-8
    atol: float = 1e-10
    newton_tol: float = 1e-10
    newton_max_iter: int = 20

    def __post_init__(self):
        if self.method not in EXPLICIT_METHODS + IMPLICIT_METHODS:
            raise ConfigError(f"unknown method '{self.method}'")
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ConfigError("need 0 < h_min <= h_init <= h_max")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("rtol and atol must be positive")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be >= 1")

    def with_method(self, method: str) -> "IntegratorConfig":
        return replace(self, method=method)


@dataclass
class Trajectory:
    """Times (strictly increasing) and the matching states, one row per time."""

    times: np.ndarray
    states: np.ndarray
    truncated_at: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise InputError("states row count must equal times length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise InputError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def write_csv(self, path) -> None:
        """CSV export: header ``t,x0,...,x{d-1}``, 17 significant digits."""
        header = "t," + ",".join(f"x{i}" for i in range(self.dim))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _substeps(dt, h_init):
    """Per-sample substep count and uniform substep size covering dt exactly."""
    dt = np.asarray(dt, dtype=float)
    n = np.ceil(dt / h_init - 1e-12).astype(int)
    n = np.maximum(n, (dt > 0).astype(int))
    h = np.where(n > 0, dt / np.maximum(n, 1), 0.0)
    return n, h


def _newton_batch(sys, Z0, T, coef, const, cfg):
    """Solve Z - coef*f(Z, T) = const per sample; returns (Z, converged)."""
    Z = Z0.copy()
    n, d = Z.shape
    active = np.ones(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)
    eye = np.eye(d)
    for _ in range(cfg.newton_max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Za = Z[idx]
        Ta = T[idx]
        ca = coef[idx]
        F = Za - ca[:, None] * sys.rhs(Za, Ta) - const[idx]
        J = eye - ca[:, None, None] * _jac(sys, Za, Ta)
        try:
            delta = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            # Singular iteration matrix for some sample: fall back to
            # per-sample solves so the rest of the batch still converges.
            delta = np.full_like(F, np.nan)
            for k in range(idx.size):
                try:
                    delta[k] = np.linalg.solve(J[k], -F[k])
                except np.linalg.LinAlgError:
                    pass
        bad = ~np.all(np.isfinite(delta), axis=1)
        Znew = Za + np.where(bad[:, None], 0.0, delta)
        Z[idx] = Znew
        step_ok = np.max(np.abs(delta), axis=1) <= cfg.newton_tol * (1.0 + np.max(np.abs(Znew), axis=1))
        done = step_ok & ~bad
        converged[idx[done]] = True
        active[idx] = ~done & ~bad
    return Z, converged


def _jac(sys, X, T):
    if sys.jacobian is not None:
        return sys.jacobian(X, T)
    from .systems import finite_difference_jacobian

    return finite_difference_jacobian(sys, X, T)


def advance_batch(sys: SystemSpec, X, T, dt, cfg: IntegratorConfig):
    """Advance each row of X from its own T by its own dt (scalar dt broadcasts).

    Implicit fixed-step methods only. Returns (X_final, ok). Rows whose Newton
    iteration stalls or that go non-finite freeze at their last good state and
    report ok=False.
    """
    if cfg.method not in IMPLICIT_METHODS:
        raise ConfigError(f"advance_batch requires an implicit method, got '{cfg.method}'")
    X, single = _as_batch(X)
    nb, d = X.shape
    T = np.broadcast_to(np.asarray(T, dtype=float), (nb,)).copy()
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (nb,)).copy()
    if np.any(dt < 0):
        raise InputError("dt must be nonnegative")
    n, h = _substeps(dt, cfg.h_init)
    ok = np.ones(nb, dtype=bool)
    prev = None  # BDF2 history
    cur = X.copy()
    max_steps = int(n.max(initial=0))
    for j in range(max_steps):
        active = ok & (j < n)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ha = h[idx]
        t_new = T[idx] + (j + 1) * ha
        if j == 0 or cfg.method == "backward_euler":
            coef = ha
            const = cur[idx]
            guess = cur[idx]
        else:
            coef = 2.0 * ha / 3.0
            const = (4.0 * cur[idx] - prev[idx]) / 3.0
            guess = 2.0 * cur[idx] - prev[idx]
        Z, conv = _newton_batch(sys, guess, t_new, coef, const, cfg)
        finite = np.all(np.isfinite(Z), axis=1)
        good = conv & finite
        if prev is None:
            prev = cur.copy()
        prev[idx[good]] = cur[idx[good]]
        cur[idx[good]] = Z[good]
        ok[idx[~good]] = False
    if single:
        return cur[0], ok[0]
    return cur, ok


def _advance_single(sys, x, t0, dt, cfg):
    """Advance one state by dt with any method; raises on failure."""
    if dt == 0:
        return np.asarray(x, dtype=float).copy()
    if cfg.method in IMPLICIT_METHODS:
        out, ok = advance_batch(sys, x, t0, dt, cfg)
        if not ok:
            raise StiffFailureError(
                f"Newton failed to converge within {cfg.newton_max_iter} iterations at h={cfg.h_init:g}"
            )
        return out
    if cfg.method == "rkf45":
        state, _ = _rkf45_span(sys, np.asarray(x, float), t0, t0 + dt, cfg, record=None)
        return state
    state, _ = _explicit_span(sys, np.asarray(x, float), t0, t0 + dt, cfg, record=None)
    return state


# Fehlberg 4(5) tableau.
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_RKF_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_RKF_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)


def _rkf45_step(sys, x, t, h):
    k = []
    for i in range(6):
        xi = x
        for j, a in enumerate(_RKF_A[i]):
            xi = xi + h * a * k[j]
        k.append(sys.rhs(xi, t + _RKF_C[i] * h))
    x4 = x + h * sum(b * ki for b, ki in zip(_RKF_B4, k))
    x5 = x + h * sum(b * ki for b, ki in zip(_RKF_B5, k))
    return x4, x5 - x4


def _rkf45_span(sys, x, t0, t1, cfg, record):
    """Adaptive RKF45 from t0 to t1; optionally records accepted steps."""
    t = t0
    h = min(cfg.h_init, t1 - t0, cfg.h_max)
    while t < t1:
        h = min(h, t1 - t)
        x_new, err = _rkf45_step(sys, x, t, h)
        if not np.all(np.isfinite(x_new)):
            if h <= cfg.h_min * (1 + 1e-12):
                raise NonFiniteError(f"non-finite state at t={t:g} with h at h_min")
            h = max(h / 4.0, cfg.h_min)
            continue
        tol = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
        ratio = np.max(np.abs(err) / tol)
        if ratio <= 1.0:
            t = t1 if (t1 - t - h) < 1e-12 * max(abs(t1), 1.0) else t + h
            x = x_new
            if record is not None:
                record(t, x)
            grow = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** -0.2)
            h = min(h * grow, cfg.h_max)
        else:
            h_new = max(h * max(0.1, 0.9 * ratio ** -0.2), cfg.h_min)
            if h <= cfg.h_min * (1 + 1e-12):
                raise StepSizeError(f"error control requires h < h_min={cfg.h_min:g} at t={t:g}")
            h = h_new
    return x, t


def _explicit_span(sys, x, t0, t1, cfg, record):
    """Fixed-step explicit Euler / RK4; the last step is shortened to land on t1."""
    t = t0
    while t < t1:
        h = min(cfg.h_init, t1 - t)
        if cfg.method == "explicit_euler":
            x = x + h * sys.rhs(x, t)
        else:  # rk4
            k1 = sys.rhs(x, t)
            k2 = sys.rhs(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = sys.rhs(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = sys.rhs(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t1 if (t1 - t - h) < 1e-12 * max(abs(t1), 1.0) else t + h
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state at t={t:g}")
        if record is not None:
            record(t, x)
    return x, t


def integrate(sys: SystemSpec, x0, t0: float, t1: float, cfg: IntegratorConfig) -> Trajectory:
    """Integrate from t0 to t1, recording every step. Final time equals t1 exactly."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim,):
        raise InputError(f"x0 must have shape ({sys.dim},)")
    if not np.all(np.isfinite(x0)):
        raise InputError("x0 contains non-finite components")
    if not t1 > t0:
        raise InputError(f"need t1 > t0, got [{t0:g}, {t1:g}]")
    times = [t0]
    states = [x0.copy()]

    def record(t, x):
        times.append(t)
        states.append(np.array(x))

    if cfg.method == "rkf45":
        _rkf45_span(sys, x0, t0, t1, cfg, record)
    elif cfg.method in ("explicit_euler", "rk4"):
        _explicit_span(sys, x0, t0, t1, cfg, record)
    else:
        _implicit_record(sys, x0, t0, t1, cfg, record)
    return Trajectory(np.array(times), np.array(states))


def _implicit_record(sys, x0, t0, t1, cfg, record):
    n, h = _substeps(t1 - t0, cfg.h_init)
    n = int(n)
    h = float(h)
    prev = None
    cur = x0[None, :].copy()
    for j in range(n):
        t_new = np.array([t0 + (j + 1) * h])
        if j == 0 or cfg.method == "backward_euler":
            coef = np.array([h])
            const = cur.copy()
            guess = cur.copy()
        else:
            coef = np.array([2.0 * h / 3.0])
            const = (4.0 * cur - prev) / 3.0
            guess = 2.0 * cur - prev
        Z, conv = _newton_batch(sys, guess, t_new, coef, const, cfg)
        if not conv[0]:
            raise StiffFailureError(
                f"Newton failed to converge within {cfg.newton_max_iter} iterations at t={t_new[0]:g}, h={h:g}"
            )
        if not np.all(np.isfinite(Z)):
            raise NonFiniteError(f"non-finite state at t={t_new[0]:g}")
        prev = cur
        cur = Z
        record(t0 + (j + 1) * h, cur[0])
    return cur[0]


def sample_at(sys: SystemSpec, x0, t0: float, times, cfg: IntegratorConfig) -> np.ndarray:
    """States at the requested times, computed by dense integration (no interpolation)."""
    times = np.asarray(times, dtype=float)
    if times.size and not np.all(np.diff(times) > 0):
        raise InputError("times must be strictly increasing")
    out = np.empty((times.size, sys.dim))
    x = np.asarray(x0, dtype=float)
    t = t0
    for i, ti in enumerate(times):
        if ti < t0:
            raise InputError("requested time precedes t0")
        if ti > t:
            x = _advance_single(sys, x, t, ti - t, cfg)
            t = ti
        out[i] = x
    return out


def evolve_delta(sys: SystemSpec, x, t: float, dt: float, cfg: IntegratorConfig) -> np.ndarray:
    """The state change x(t+dt) - x(t) over one prediction step (the label generator)."""
    if dt <= 0:
        raise InputError(f"dt must be positive, got {dt:g}")
    x = np.asarray(x, dtype=float)
    return _advance_single(sys, x, t, dt, cfg) - x


def evolve_delta_batch(sys: SystemSpec, X, T, dt: float, cfg: IntegratorConfig):
    """Batched evolve_delta; returns (U, ok) with failed rows flagged, not raised."""
    if dt <= 0:
        raise InputError(f"dt must be positive, got {dt:g}")
    X = np.asarray(X, dtype=float)
    out, ok = advance_batch(sys, X, T, dt, cfg)
    return out - X, ok
