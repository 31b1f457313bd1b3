"""Characteristic-timescale analysis of local Jacobians.

The Jacobian's eigen-decomposition J = A diag(lambda) B (B = A^-1) splits the
local dynamics into modes with timescales tau_i = 1/|lambda_i|. The number M
of fast modes is the largest count whose frozen contribution over the next
slower timescale stays below a state-dependent error budget; the decoupling
timescale is the (M+1)-th sorted timescale. A histogram of characteristic
times per evolution step is the main diagnostic for sampling coverage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DecompositionError, InputError
from .eigen import balance, eig, hessenberg, hessenberg_eigvals
from .systems import SystemSpec, eval_jacobian, eval_rhs

DEFAULT_TOL_REL = 1e-4
DEFAULT_TOL_ABS = 1e-10
DEFAULT_DIM_CAP = 64

RESIDUAL_TOL = 1e-8


@dataclass
class CspReport:
    """Mode analysis at one state, everything ordered by ascending timescale."""

    eigenvalues: np.ndarray
    timescales: np.ndarray
    split_index: int
    tau_csp: float
    amplitudes: Optional[np.ndarray]
    degraded: bool = False


def eig_decompose(J: np.ndarray, dim_cap: int = DEFAULT_DIM_CAP):
    """Right eigenvectors A, eigenvalues, and B = A^-1 with residual checks.

    Raises DecompositionError when ||J A - A L|| > 1e-8 ||J|| or
    ||B A - I|| > 1e-8 (Frobenius), i.e. the eigenbasis is defective or too
    ill-conditioned to invert; callers fall back to eigenvalues only.
    """
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    if J.shape != (n, n):
        raise InputError("J must be square")
    if n > dim_cap:
        raise ConfigError(f"dimension {n} exceeds cap {dim_cap}")
    if not np.all(np.isfinite(J)):
        raise InputError("J has non-finite entries")
    w, A = eig(J)
    jnorm = np.linalg.norm(J)
    resid = np.linalg.norm(J @ A - A * w[None, :])
    if jnorm > 0 and not resid <= RESIDUAL_TOL * jnorm:
        raise DecompositionError(f"eigen residual {resid:.3g} exceeds {RESIDUAL_TOL:g}*||J||")
    try:
        B = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("eigenvector matrix is singular") from exc
    ortho = np.linalg.norm(B @ A - np.eye(n))
    if not ortho <= RESIDUAL_TOL:
        raise DecompositionError(f"||BA - I|| = {ortho:.3g} exceeds {RESIDUAL_TOL:g}")
    # ||BA - I|| alone can miss a nearly-parallel basis (the computed inverse
    # is consistent with A even when both are garbage); bound the condition.
    kappa = np.linalg.norm(A) * np.linalg.norm(B)
    if not kappa <= 1.0 / RESIDUAL_TOL:
        raise DecompositionError(f"eigenbasis condition {kappa:.3g} exceeds {1.0 / RESIDUAL_TOL:g}")
    return w, A, B


def eigvals_only(J: np.ndarray) -> np.ndarray:
    """Eigenvalues without eigenvectors (balance + Hessenberg + QR)."""
    J = np.asarray(J, dtype=float)
    if J.shape[0] == 1:
        return J[0, 0].astype(complex).reshape(1)
    B, _ = balance(J)
    H, _ = hessenberg(B)
    return hessenberg_eigvals(H)


def _timescales(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(np.abs(w) > 0, 1.0 / np.abs(w), np.inf)


def tau_csp(
    sys: SystemSpec,
    x: np.ndarray,
    t: float,
    tol_rel: float = DEFAULT_TOL_REL,
    tol_abs: float = DEFAULT_TOL_ABS,
) -> CspReport:
    """Decoupling timescale at a state.

    Modes are sorted by ascending timescale; M is pushed up greedily while the
    frozen fast modes' integrated contribution over the next timescale stays
    within tol_rel*|x_j| + tol_abs for every component j. On a defective
    eigenbasis the report degrades to the fastest timescale.
    """
    if tol_rel <= 0 or tol_abs <= 0:
        raise ConfigError("tolerances must be positive")
    x = np.asarray(x, dtype=float)
    J = eval_jacobian(sys, x, t)
    omega = eval_rhs(sys, x, t)
    try:
        w, A, B = eig_decompose(J)
    except DecompositionError:
        w = eigvals_only(J)
        taus = np.sort(_timescales(w))
        order = np.argsort(_timescales(w), kind="stable")
        return CspReport(w[order], taus, 0, float(taus[0]), None, degraded=True)

    taus = _timescales(w)
    order = np.argsort(taus, kind="stable")
    w, taus = w[order], taus[order]
    A = A[:, order]
    f = (B @ omega)[order]
    err_budget = tol_rel * np.abs(x) + tol_abs

    M = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(1, sys.dim):
            tau_next = taus[m]
            if not np.isfinite(tau_next):
                # Freezing up to a zero mode means integrating over an
                # infinite horizon; only exactly-zero contributions pass.
                tau_next = np.inf
            lam = w[:m]
            growth = np.where(
                lam == 0.0,
                tau_next,
                (np.exp(lam * tau_next) - 1.0) / np.where(lam == 0.0, 1.0, lam),
            )
            contrib = A[:, :m] @ (f[:m] * growth)
            contrib = np.where(np.isfinite(np.abs(contrib)), np.abs(contrib), np.inf)
            if np.all(contrib < err_budget):
                M = m
            else:
                break
    return CspReport(w, taus, M, float(taus[M]), np.abs(f))


def characteristic_time(
    sys: SystemSpec,
    x: np.ndarray,
    t: float,
    mode: str = "lambda_max",
    tol_rel: float = DEFAULT_TOL_REL,
    tol_abs: float = DEFAULT_TOL_ABS,
) -> float:
    """Scalar characteristic time: the CSP decoupling time, or 1/max|lambda|.

    Returns +inf when every eigenvalue is zero (no local dynamics).
    """
    if mode == "csp":
        return tau_csp(sys, x, t, tol_rel, tol_abs).tau_csp
    if mode != "lambda_max":
        raise ConfigError(f"unknown characteristic-time mode '{mode}'")
    w = eigvals_only(eval_jacobian(sys, np.asarray(x, dtype=float), t))
    lam_max = np.max(np.abs(w))
    return float(1.0 / lam_max) if lam_max > 0 else np.inf


def log_bins(lo: float = 1e-14, hi: float = 1e2, n: int = 40) -> np.ndarray:
    if not (0 < lo < hi) or n < 1:
        raise ConfigError("need 0 < lo < hi and n >= 1")
    return np.logspace(np.log10(lo), np.log10(hi), n + 1)


@dataclass
class TimescaleHistogram:
    """Per-provenance-step normalized histograms over log-spaced bins.

    ``fractions[s]`` has one entry per bin plus a trailing overflow bin
    (times beyond the last edge, including the +inf sentinel); finite times
    below the first edge are clipped into the first bin.
    """

    edges: np.ndarray
    steps: np.ndarray
    fractions: np.ndarray
    counts: np.ndarray

    def occupied(self, step: int) -> np.ndarray:
        s = int(np.flatnonzero(self.steps == step)[0])
        return np.flatnonzero(self.fractions[s] > 0)

    def l1(self, step_a: int, step_b: int) -> float:
        a = int(np.flatnonzero(self.steps == step_a)[0])
        b = int(np.flatnonzero(self.steps == step_b)[0])
        return float(np.sum(np.abs(self.fractions[a] - self.fractions[b])))

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("step,bin_lo,bin_hi,fraction\n")
            for s, step in enumerate(self.steps):
                for b in range(self.fractions.shape[1] - 1):
                    f.write(f"{step},{self.edges[b]:.17g},{self.edges[b + 1]:.17g},{self.fractions[s, b]:.17g}\n")
                f.write(f"{step},{self.edges[-1]:.17g},inf,{self.fractions[s, -1]:.17g}\n")


def timescale_histogram(
    ds: Dataset,
    sys: SystemSpec,
    mode: str = "lambda_max",
    bins: Optional[np.ndarray] = None,
    tol_rel: float = DEFAULT_TOL_REL,
    tol_abs: float = DEFAULT_TOL_ABS,
) -> TimescaleHistogram:
    """Characteristic-time distribution per evolution step of a dataset."""
    edges = log_bins() if bins is None else np.asarray(bins, dtype=float)
    times = ds.times if not sys.autonomous else np.zeros(len(ds))
    char = np.empty(len(ds))
    for i in range(len(ds)):
        char[i] = characteristic_time(sys, ds.states[i], float(times[i]), mode, tol_rel, tol_abs)
    steps = np.unique(ds.provenance)
    nb = edges.size - 1
    fractions = np.zeros((steps.size, nb + 1))
    counts = np.zeros((steps.size, nb + 1), dtype=int)
    for s, step in enumerate(steps):
        vals = char[ds.provenance == step]
        overflow = ~np.isfinite(vals) | (vals >= edges[-1])
        hist, _ = np.histogram(np.clip(vals[~overflow], edges[0], edges[-1]), bins=edges)
        counts[s, :nb] = hist
        counts[s, nb] = int(np.sum(overflow))
        total = counts[s].sum()
        if total > 0:
            fractions[s] = counts[s] / total
    return TimescaleHistogram(edges, steps, fractions, counts)
