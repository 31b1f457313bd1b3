"""Feed-forward surrogate for the one-step state change.

The network maps the (preprocessed) current state, plus the phase time for
non-autonomous systems, to the state change over one prediction step dt.
Hidden layers use the exact erf form of GELU; the output layer is linear.
Training minimizes mean absolute error on standardized labels with Adam;
gradients are hand-written backprop (there is a finite-difference check in
the test suite). Everything is float64 and deterministic for a fixed seed.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import erf

from .dataset import Dataset
from .errors import (ConfigError, InferenceError, InputError, ModelFormatError,
                     PreprocessError, TrainingError)
from .integrators import Trajectory

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
STD_FLOOR = 1e-12
DEFAULT_BCT_LAMBDA = 0.1


def box_cox(x, lam: float = DEFAULT_BCT_LAMBDA):
    """(x^lam - 1)/lam; compresses nonnegative multi-scale values toward O(1)."""
    return (np.power(x, lam) - 1.0) / lam


def box_cox_inverse(y, lam: float = DEFAULT_BCT_LAMBDA):
    return np.power(1.0 + lam * y, 1.0 / lam)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


@dataclass
class Preprocessor:
    """Per-dimension Box-Cox (optional) then standardization for inputs;
    standardization for labels. Stds are floored at 1e-12."""

    bct_mask: np.ndarray
    bct_lambda: float
    input_mean: np.ndarray
    input_std: np.ndarray
    label_mean: np.ndarray
    label_std: np.ndarray

    def __post_init__(self):
        self.bct_mask = np.asarray(self.bct_mask, dtype=bool)
        for name in ("input_mean", "input_std", "label_mean", "label_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.input_std <= 0) or np.any(self.label_std <= 0):
            raise ConfigError("stds must be positive (floor at 1e-12)")

    @property
    def in_dim(self) -> int:
        return self.input_mean.size

    @property
    def out_dim(self) -> int:
        return self.label_mean.size

    def _bct(self, X):
        X = np.asarray(X, dtype=float)
        if not self.bct_mask.any():
            return X
        bad = (X[..., self.bct_mask] < 0).any(axis=-1)
        if np.any(bad):
            dims = np.flatnonzero(self.bct_mask)
            offending = [int(d) for d in dims if np.any(X[..., d] < 0)]
            raise PreprocessError(f"negative value on Box-Cox dimension(s) {offending}")
        out = X.copy()
        out[..., self.bct_mask] = box_cox(X[..., self.bct_mask], self.bct_lambda)
        return out

    def transform_inputs(self, X):
        return (self._bct(X) - self.input_mean) / self.input_std

    def inverse_inputs(self, Z):
        X = np.asarray(Z, dtype=float) * self.input_std + self.input_mean
        if self.bct_mask.any():
            X = X.copy()
            X[..., self.bct_mask] = box_cox_inverse(X[..., self.bct_mask], self.bct_lambda)
        return X

    def transform_labels(self, U):
        return (np.asarray(U, dtype=float) - self.label_mean) / self.label_std

    def inverse_labels(self, Z):
        return np.asarray(Z, dtype=float) * self.label_std + self.label_mean


def preprocess_fit(ds: Dataset, bct_mask=None, bct_lambda: float = DEFAULT_BCT_LAMBDA) -> Preprocessor:
    """Fit preprocessing statistics on a dataset (BCT applied before the stats)."""
    if len(ds) == 0:
        raise InputError("cannot fit a preprocessor on an empty dataset")
    in_dim = ds.inputs.shape[1]
    mask = np.zeros(in_dim, dtype=bool) if bct_mask is None else np.asarray(bct_mask, dtype=bool)
    if mask.shape != (in_dim,):
        raise ConfigError(f"bct_mask must have {in_dim} entries")
    pre = Preprocessor(mask, bct_lambda, np.zeros(in_dim), np.ones(in_dim),
                       np.zeros(ds.dim), np.ones(ds.dim))
    X = pre._bct(ds.inputs)
    pre.input_mean = X.mean(axis=0)
    pre.input_std = np.maximum(X.std(axis=0), STD_FLOOR)
    pre.label_mean = ds.labels.mean(axis=0)
    pre.label_std = np.maximum(ds.labels.std(axis=0), STD_FLOOR)
    return pre


@dataclass
class MlpModel:
    layer_sizes: tuple
    weights: list
    biases: list
    pre: Preprocessor
    dt: float
    system_name: str
    autonomous: bool
    train_seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ConfigError("need at least input and output layer sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ConfigError(f"layer {l} parameter shapes inconsistent with layer_sizes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {l} has non-finite parameters")
        if sizes[0] != self.pre.in_dim or sizes[-1] != self.pre.out_dim:
            raise ConfigError("layer sizes do not match preprocessor dimensions")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


def init_model(layer_sizes, pre: Preprocessor, dt: float, system_name: str,
               autonomous: bool, seed: int) -> MlpModel:
    """Kaiming-uniform weights (gain sqrt(2) for the GELU stack), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_sizes), weights, biases, pre, dt, system_name,
                    autonomous, train_seed=seed)


def _forward_std(weights, biases, X):
    """Network output on standardized inputs, no caching."""
    A = X
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        Z = A @ W + b
        A = gelu(Z) if l < last else Z
    return A


def forward(model: MlpModel, raw_input) -> np.ndarray:
    """Predicted state change in raw units for raw input(s)."""
    x = np.asarray(raw_input, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.in_dim:
        raise InputError(f"input has {X.shape[1]} columns, model expects {model.in_dim}")
    if not np.all(np.isfinite(X)):
        raise InputError("input contains non-finite values")
    out = _forward_std(model.weights, model.biases, model.pre.transform_inputs(X))
    if not np.all(np.isfinite(out)):
        raise InferenceError("non-finite intermediate during inference")
    out = model.pre.inverse_labels(out)
    return out[0] if single else out


def mae_loss_and_grads(weights, biases, X, Y):
    """MAE over all (row, dim) entries, its parameter gradients, and the
    per-output-dimension sums of |error| (for raw-unit reporting)."""
    last = len(weights) - 1
    A = X
    caches = []
    for l, (W, b) in enumerate(zip(weights, biases)):
        Z = A @ W + b
        caches.append((A, Z))
        A = gelu(Z) if l < last else Z
    err = A - Y
    abs_err = np.abs(err)
    loss = float(np.mean(abs_err))
    err_sums = abs_err.sum(axis=0)
    delta = np.sign(err) / err.size
    dW = [None] * len(weights)
    db = [None] * len(weights)
    for l in range(last, -1, -1):
        A_in, Z = caches[l]
        dW[l] = A_in.T @ delta
        db[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ weights[l].T) * gelu_grad(caches[l - 1][1])
    return loss, dW, db, err_sums


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    val_fraction: float = 0.05
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 <= self.val_fraction < 1):
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class TrainHistory:
    """Per-epoch MAE in standardized and raw label units."""

    train_mae: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    train_mae_raw: list = field(default_factory=list)
    val_mae_raw: list = field(default_factory=list)


def train(ds: Dataset, layer_sizes, cfg: TrainConfig, system_name: str = "",
          bct_mask=None, bct_lambda: float = DEFAULT_BCT_LAMBDA) -> tuple[MlpModel, TrainHistory]:
    """Fit the surrogate on a dataset; deterministic for a fixed seed."""
    if len(ds) == 0:
        raise InputError("cannot train on an empty dataset")
    layer_sizes = tuple(int(s) for s in layer_sizes)
    if layer_sizes[0] != ds.inputs.shape[1] or layer_sizes[-1] != ds.dim:
        raise ConfigError(
            f"layer sizes {layer_sizes} incompatible with dataset ({ds.inputs.shape[1]} -> {ds.dim})")
    pre = preprocess_fit(ds, bct_mask=bct_mask, bct_lambda=bct_lambda)
    model = init_model(layer_sizes, pre, ds.dt, system_name, ds.autonomous, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))

    X = pre.transform_inputs(ds.inputs)
    Y = pre.transform_labels(ds.labels)
    n = X.shape[0]
    n_val = int(round(cfg.val_fraction * n))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise ConfigError("validation split leaves no training rows")
    Xt, Yt = X[train_idx], Y[train_idx]
    Xv, Yv = X[val_idx], Y[val_idx]

    params = model.weights + model.biases
    state = adam_init(params)
    hist = TrainHistory()
    n_train = Xt.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train) if cfg.shuffle else np.arange(n_train)
        abs_sum = 0.0
        dim_sums = np.zeros(ds.dim)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, dW, db, err_sums = mae_loss_and_grads(model.weights, model.biases, Xt[idx], Yt[idx])
            grads = dW + db
            if not np.isfinite(loss):
                gmax = max(np.max(np.abs(g)) for g in grads if g is not None)
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}, max|grad|={gmax:g}")
            adam_step(params, grads, state, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            abs_sum += loss * (idx.size * ds.dim)
            dim_sums += err_sums
        hist.train_mae.append(abs_sum / (n_train * ds.dim))
        hist.train_mae_raw.append(float(np.mean(dim_sums / n_train * pre.label_std)))
        if Xv.shape[0] > 0:
            pv = _forward_std(model.weights, model.biases, Xv)
            err = np.abs(pv - Yv)
            hist.val_mae.append(float(np.mean(err)))
            hist.val_mae_raw.append(float(np.mean(err * pre.label_std)))
        else:
            hist.val_mae.append(float("nan"))
            hist.val_mae_raw.append(float("nan"))
    return model, hist


def rollout(model: MlpModel, x0, t0: float = 0.0, n_steps: int = 1,
            period: Optional[float] = None) -> Trajectory:
    """Autoregressive large-step prediction x <- x + F(x[, t mod period]).

    A non-finite prediction truncates the trajectory at that step (reported
    via Trajectory.truncated_at) instead of raising.
    """
    if n_steps < 1:
        raise InputError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    dim = model.out_dim
    if x0.shape != (dim,):
        raise InputError(f"x0 must have shape ({dim},)")
    if not model.autonomous and period is None:
        from .systems import get_system

        period = get_system(model.system_name).period
    states = np.empty((n_steps + 1, dim))
    states[0] = x0
    truncated = None
    x = x0.copy()
    for j in range(n_steps):
        t = t0 + j * model.dt
        feats = x if model.autonomous else np.concatenate([x, [np.mod(t, period)]])
        try:
            u = forward(model, feats)
        except (InferenceError, InputError):
            truncated = j
            break
        x = x + u
        if not np.all(np.isfinite(x)):
            truncated = j
            break
        states[j + 1] = x
    n_done = n_steps if truncated is None else truncated
    times = t0 + model.dt * np.arange(n_done + 1)
    return Trajectory(times, states[: n_done + 1], truncated_at=truncated)


# ---------------------------------------------------------------------------
# Model file format (versioned text, base64 payloads).
# ---------------------------------------------------------------------------

_MODEL_HEADER = "#deepode-model v1"


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode(s: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(s.encode(), validate=True)
    except Exception as exc:
        raise ModelFormatError(f"corrupted base64 payload: {exc}") from exc
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ModelFormatError(f"payload has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape).copy()


def save_model(model: MlpModel, path) -> None:
    lines = [
        _MODEL_HEADER,
        f"system_name={model.system_name}",
        f"dt={model.dt:.17g}",
        f"autonomous={int(model.autonomous)}",
        "layer_sizes=" + ",".join(str(s) for s in model.layer_sizes),
        "activation=gelu",
        f"train_seed={model.train_seed}",
        f"bct_lambda={model.pre.bct_lambda:.17g}",
        "bct_mask=" + ",".join(str(int(v)) for v in model.pre.bct_mask),
        "input_mean=" + _encode(model.pre.input_mean),
        "input_std=" + _encode(model.pre.input_std),
        "label_mean=" + _encode(model.pre.label_mean),
        "label_std=" + _encode(model.pre.label_std),
    ]
    for l, (w, b) in enumerate(zip(model.weights, model.biases), start=1):
        lines.append(f"W{l}=" + _encode(w))
        lines.append(f"b{l}=" + _encode(b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpModel:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MODEL_HEADER:
        raise ModelFormatError(f"not a '{_MODEL_HEADER}' file")
    kv = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise ModelFormatError(f"malformed line: {ln[:40]!r}")
        key, val = ln.split("=", 1)
        kv[key] = val
    try:
        sizes = tuple(int(s) for s in kv["layer_sizes"].split(","))
        if kv["activation"] != "gelu":
            raise ModelFormatError(f"unsupported activation '{kv['activation']}'")
        in_dim, out_dim = sizes[0], sizes[-1]
        pre = Preprocessor(
            np.array([int(v) for v in kv["bct_mask"].split(",")], dtype=bool),
            float(kv["bct_lambda"]),
            _decode(kv["input_mean"], (in_dim,)),
            _decode(kv["input_std"], (in_dim,)),
            _decode(kv["label_mean"], (out_dim,)),
            _decode(kv["label_std"], (out_dim,)),
        )
        weights, biases = [], []
        for l in range(1, len(sizes)):
            weights.append(_decode(kv[f"W{l}"], (sizes[l - 1], sizes[l])))
            biases.append(_decode(kv[f"b{l}"], (sizes[l],)))
        return MlpModel(sizes, weights, biases, pre, float(kv["dt"]),
                        kv["system_name"], bool(int(kv["autonomous"])),
                        train_seed=int(kv.get("train_seed", 0)))
    except ModelFormatError:
        raise
    except (KeyError, ValueError, ConfigError) as exc:
        raise ModelFormatError(f"invalid model file: {exc}") from exc
