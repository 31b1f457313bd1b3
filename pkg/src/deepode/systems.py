"""ODE system definitions: the system abstraction plus the two built-in models.

Right-hand sides and Jacobians are written to broadcast: ``state`` may be a
single vector of shape ``(dim,)`` or a batch ``(n, dim)``, and ``t`` a scalar
or an array matching the leading shape. Batch evaluation is what makes the
samplers and the implicit integrators fast enough in pure numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InputError, NonFiniteError

# Central finite-difference steps for the Jacobian fallback.
FD_EPS_REL = 1e-6
FD_EPS_ABS = 1e-9

# The diode exponential is clamped at this exponent; far outside any simulated
# voltage range, it only protects samplers probing absurd states.
DIODE_EXP_CLAMP = 50.0


@dataclass(frozen=True)
class SystemSpec:
    """An ODE right-hand side with domain metadata.

    ``rhs(state, t)`` returns the time derivative; ``jacobian(state, t)`` the
    matrix of partials d(rhs)/d(state), or None to fall back on central finite
    differences. ``bounds`` is the per-dimension sampling box, ``log_scale``
    marks dimensions sampled uniformly in log space. Non-autonomous systems
    carry the fundamental period of their forcing.
    """

    name: str
    dim: int
    autonomous: bool
    rhs: Callable[[np.ndarray, np.ndarray | float], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, np.ndarray | float], np.ndarray]]
    bounds: np.ndarray
    log_scale: np.ndarray
    period: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.shape != (self.dim, 2):
            raise ConfigError(f"bounds must have shape ({self.dim}, 2)")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ConfigError("bounds lower edge exceeds upper edge")
        log_scale = np.asarray(self.log_scale, dtype=bool)
        if log_scale.shape != (self.dim,):
            raise ConfigError(f"log_scale must have shape ({self.dim},)")
        if not self.autonomous and (self.period is None or self.period <= 0):
            raise ConfigError("non-autonomous systems must declare a positive forcing period")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "log_scale", log_scale)


def eval_rhs(sys: SystemSpec, state: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Evaluate f(state, t), validating shapes and finiteness."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != sys.dim:
        raise InputError(f"state has {state.shape[-1]} components, system '{sys.name}' has {sys.dim}")
    if not np.all(np.isfinite(state)):
        raise InputError("state contains non-finite components")
    out = sys.rhs(state, t)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"rhs of '{sys.name}' produced non-finite output")
    return out


def finite_difference_jacobian(sys: SystemSpec, state: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with per-component step max(eps_abs, eps_rel*|x_i|)."""
    state = np.asarray(state, dtype=float)
    h = np.maximum(FD_EPS_ABS, FD_EPS_REL * np.abs(state))
    cols = []
    for i in range(sys.dim):
        e = np.zeros_like(state)
        e[..., i] = h[..., i]
        cols.append((sys.rhs(state + e, t) - sys.rhs(state - e, t)) / (2.0 * h[..., i : i + 1]))
    return np.stack(cols, axis=-1)


def eval_jacobian(sys: SystemSpec, state: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Analytic Jacobian when the system defines one, otherwise finite differences."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != sys.dim:
        raise InputError(f"state has {state.shape[-1]} components, system '{sys.name}' has {sys.dim}")
    if not np.all(np.isfinite(state)):
        raise InputError("state contains non-finite components")
    jac = sys.jacobian(state, t) if sys.jacobian is not None else finite_difference_jacobian(sys, state, t)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteError(f"Jacobian of '{sys.name}' produced non-finite entries")
    return jac


# ---------------------------------------------------------------------------
# Lotka-Volterra predator-prey model
#   dx1/dt = -x1 + x1*x2,  dx2/dt = 2*x2 - x1*x2
# ---------------------------------------------------------------------------

def _lv_rhs(x, t):
    x1 = x[..., 0]
    x2 = x[..., 1]
    return np.stack([-x1 + x1 * x2, 2.0 * x2 - x1 * x2], axis=-1)


def _lv_jacobian(x, t):
    x1 = x[..., 0]
    x2 = x[..., 1]
    jac = np.zeros(x.shape[:-1] + (2, 2))
    jac[..., 0, 0] = x2 - 1.0
    jac[..., 0, 1] = x1
    jac[..., 1, 0] = -x2
    jac[..., 1, 1] = 2.0 - x1
    return jac


def lotka_volterra() -> SystemSpec:
    """Two-species predator-prey model on the box [0, 5]^2."""
    return SystemSpec(
        name="lotka_volterra",
        dim=2,
        autonomous=True,
        rhs=_lv_rhs,
        jacobian=_lv_jacobian,
        bounds=np.array([[0.0, 5.0], [0.0, 5.0]]),
        log_scale=np.zeros(2, dtype=bool),
    )


# ---------------------------------------------------------------------------
# Ring modulator: 15-dimensional non-autonomous circuit model.
# State ordering y = (U1..U7, I1..I8); driven by a 1 kHz and a 10 kHz source,
# fundamental period 1e-3 s.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingModulatorParams:
    """Circuit constants of the ring modulator."""

    C: float = 1.6e-8
    Cs: float = 2e-12
    Cp: float = 1e-8
    Lh: float = 4.45
    Ls1: float = 0.002
    Ls2: float = 5e-4
    Ls3: float = 5e-4
    gamma: float = 40.67286402e-9
    R: float = 25000.0
    Rp: float = 50.0
    Rg1: float = 36.3
    Rg2: float = 17.3
    Rg3: float = 17.3
    Ri: float = 50.0
    Rc: float = 600.0
    delta: float = 17.7493332


RING_MODULATOR_PERIOD = 1e-3

# MC sampling box: currents I1, I2 are confined to much tighter ranges than
# the remaining components.
_RM_BOUNDS = np.array(
    [[-1e-3, 1e-3]] * 7 + [[-1e-5, 1e-7], [-1e-6, 1e-6]] + [[-1e-3, 1e-3]] * 6
)


def _u_in1(t):
    return 0.5 * np.sin(2000.0 * np.pi * np.asarray(t))


def _u_in2(t):
    return 2.0 * np.sin(20000.0 * np.pi * np.asarray(t))


def _make_ring_modulator_rhs(p: RingModulatorParams):
    def diode_q(u):
        return p.gamma * (np.exp(np.minimum(p.delta * u, DIODE_EXP_CLAMP)) - 1.0)

    def rhs(y, t):
        uin1 = _u_in1(t)
        uin2 = _u_in2(t)
        ud1 = y[..., 2] - y[..., 4] - y[..., 6] - uin2
        ud2 = -y[..., 3] + y[..., 5] - y[..., 6] - uin2
        ud3 = y[..., 3] + y[..., 4] + y[..., 6] + uin2
        ud4 = -y[..., 2] - y[..., 5] + y[..., 6] + uin2
        q1, q2, q3, q4 = diode_q(ud1), diode_q(ud2), diode_q(ud3), diode_q(ud4)
        out = np.empty_like(y)
        out[..., 0] = (y[..., 7] - 0.5 * y[..., 9] + 0.5 * y[..., 10] + y[..., 13] - y[..., 0] / p.R) / p.C
        out[..., 1] = (y[..., 8] - 0.5 * y[..., 11] + 0.5 * y[..., 12] + y[..., 14] - y[..., 1] / p.R) / p.C
        out[..., 2] = (y[..., 9] - q1 + q4) / p.Cs
        out[..., 3] = (-y[..., 10] + q2 - q3) / p.Cs
        out[..., 4] = (y[..., 11] + q1 - q3) / p.Cs
        out[..., 5] = (-y[..., 12] - q2 + q4) / p.Cs
        out[..., 6] = (-y[..., 6] / p.Rp + q1 + q2 - q3 - q4) / p.Cp
        out[..., 7] = -y[..., 0] / p.Lh
        out[..., 8] = -y[..., 0] / p.Lh
        out[..., 9] = (0.5 * y[..., 0] - y[..., 2] - p.Rg2 * y[..., 9]) / p.Ls2
        out[..., 10] = (-0.5 * y[..., 0] + y[..., 3] - p.Rg3 * y[..., 10]) / p.Ls3
        out[..., 11] = (0.5 * y[..., 1] - y[..., 4] - p.Rg2 * y[..., 11]) / p.Ls2
        out[..., 12] = (-0.5 * y[..., 1] + y[..., 5] - p.Rg3 * y[..., 12]) / p.Ls3
        out[..., 13] = (-y[..., 0] + uin1 - (p.Ri + p.Rg1) * y[..., 13]) / p.Ls1
        out[..., 14] = (-y[..., 1] - (p.Rc + p.Rg1) * y[..., 14]) / p.Ls1
        return out

    def diode_dq(u):
        arg = p.delta * u
        return np.where(arg < DIODE_EXP_CLAMP, p.gamma * p.delta * np.exp(np.minimum(arg, DIODE_EXP_CLAMP)), 0.0)

    # Gradients of the four diode voltages w.r.t. (y3, y4, y5, y6, y7),
    # i.e. state indices 2..6.
    _ud_grad = np.array(
        [
            [1.0, 0.0, -1.0, 0.0, -1.0],
            [0.0, -1.0, 0.0, 1.0, -1.0],
            [0.0, 1.0, 1.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0, -1.0, 1.0],
        ]
    )

    def jacobian(y, t):
        uin2 = _u_in2(t)
        ud = np.stack(
            [
                y[..., 2] - y[..., 4] - y[..., 6] - uin2,
                -y[..., 3] + y[..., 5] - y[..., 6] - uin2,
                y[..., 3] + y[..., 4] + y[..., 6] + uin2,
                -y[..., 2] - y[..., 5] + y[..., 6] + uin2,
            ],
            axis=-1,
        )
        dq = diode_dq(ud)  # (..., 4)
        jac = np.zeros(y.shape[:-1] + (15, 15))
        jac[..., 0, 0] = -1.0 / (p.R * p.C)
        jac[..., 0, 7] = 1.0 / p.C
        jac[..., 0, 9] = -0.5 / p.C
        jac[..., 0, 10] = 0.5 / p.C
        jac[..., 0, 13] = 1.0 / p.C
        jac[..., 1, 1] = -1.0 / (p.R * p.C)
        jac[..., 1, 8] = 1.0 / p.C
        jac[..., 1, 11] = -0.5 / p.C
        jac[..., 1, 12] = 0.5 / p.C
        jac[..., 1, 14] = 1.0 / p.C
        # Diode-coupled rows: each row is a signed combination of q(UD_k).
        # coefficient of q_k in rows y3'..y7' (before dividing by Cs / Cp)
        qcoef = np.array(
            [
                [-1.0, 0.0, 0.0, 1.0],
                [0.0, 1.0, -1.0, 0.0],
                [1.0, 0.0, -1.0, 0.0],
                [0.0, -1.0, 0.0, 1.0],
                [1.0, 1.0, -1.0, -1.0],
            ]
        )
        caps = np.array([p.Cs, p.Cs, p.Cs, p.Cs, p.Cp])
        for row in range(5):
            # d/dy_j sum_k qcoef[row,k] q(ud_k) = sum_k qcoef[row,k] dq_k * dud_k/dy_j
            contrib = np.einsum("...k,kj->...j", qcoef[row] * dq, _ud_grad) / caps[row]
            jac[..., 2 + row, 2:7] += contrib
        jac[..., 2, 9] += 1.0 / p.Cs
        jac[..., 3, 10] += -1.0 / p.Cs
        jac[..., 4, 11] += 1.0 / p.Cs
        jac[..., 5, 12] += -1.0 / p.Cs
        jac[..., 6, 6] += -1.0 / (p.Rp * p.Cp)
        jac[..., 7, 0] = -1.0 / p.Lh
        jac[..., 8, 0] = -1.0 / p.Lh
        jac[..., 9, 0] = 0.5 / p.Ls2
        jac[..., 9, 2] = -1.0 / p.Ls2
        jac[..., 9, 9] = -p.Rg2 / p.Ls2
        jac[..., 10, 0] = -0.5 / p.Ls3
        jac[..., 10, 3] = 1.0 / p.Ls3
        jac[..., 10, 10] = -p.Rg3 / p.Ls3
        jac[..., 11, 1] = 0.5 / p.Ls2
        jac[..., 11, 4] = -1.0 / p.Ls2
        jac[..., 11, 11] = -p.Rg2 / p.Ls2
        jac[..., 12, 1] = -0.5 / p.Ls3
        jac[..., 12, 5] = 1.0 / p.Ls3
        jac[..., 12, 12] = -p.Rg3 / p.Ls3
        jac[..., 13, 0] = -1.0 / p.Ls1
        jac[..., 13, 13] = -(p.Ri + p.Rg1) / p.Ls1
        jac[..., 14, 1] = -1.0 / p.Ls1
        jac[..., 14, 14] = -(p.Rc + p.Rg1) / p.Ls1
        return jac

    return rhs, jacobian


def ring_modulator(params: RingModulatorParams | None = None) -> SystemSpec:
    """The 15-dimensional ring modulator circuit, forced at 1 kHz and 10 kHz."""
    p = params or RingModulatorParams()
    rhs, jacobian = _make_ring_modulator_rhs(p)
    return SystemSpec(
        name="ring_modulator",
        dim=15,
        autonomous=False,
        rhs=rhs,
        jacobian=jacobian,
        bounds=_RM_BOUNDS.copy(),
        log_scale=np.zeros(15, dtype=bool),
        period=RING_MODULATOR_PERIOD,
    )


def diode_exponent_clamped(y: np.ndarray, t: float | np.ndarray, params: RingModulatorParams | None = None) -> np.ndarray:
    """True where a ring-modulator state drives some diode past the exponent clamp.

    Such states are outside the physical operating range; samplers should
    treat them as out-of-domain rather than trusting the clamped rhs.
    """
    p = params or RingModulatorParams()
    y = np.asarray(y, dtype=float)
    uin2 = _u_in2(t)
    ud = np.stack(
        [
            y[..., 2] - y[..., 4] - y[..., 6] - uin2,
            -y[..., 3] + y[..., 5] - y[..., 6] - uin2,
            y[..., 3] + y[..., 4] + y[..., 6] + uin2,
            -y[..., 2] - y[..., 5] + y[..., 6] + uin2,
        ],
        axis=-1,
    )
    return np.any(p.delta * ud >= DIODE_EXP_CLAMP, axis=-1)


# ---------------------------------------------------------------------------
# Registry: systems are selected by name from the CLI and configs; new systems
# are added by registering a SystemSpec in code.
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[[], SystemSpec]] = {
    "lotka_volterra": lotka_volterra,
    "ring_modulator": ring_modulator,
}


def register_system(name: str, factory: Callable[[], SystemSpec]) -> None:
    _REGISTRY[name] = factory


def get_system(name: str) -> SystemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown system '{name}'; known: {sorted(_REGISTRY)}") from None
    return factory()


def list_systems() -> list[str]:
    return sorted(_REGISTRY)
