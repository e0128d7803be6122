"""Training loops: hand-written BPTT, Adam/RMSprop, checkpoints, forecasting.

Reverse-mode gradients are computed by the window kernels (see
``tprec._kernels``); this module owns the readout layer, loss functions,
optimizers, truncated-BPTT state carry, model (de)serialization, and the two
evaluation protocols: teacher-forced one-step rolling forecasts and
encoder/decoder horizon forecasts.
"""

import hashlib
import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import (
    lstm_decode_backward,
    lstm_decode_forward,
    lstm_window_backward,
    lstm_window_forward,
    rnn_window_backward,
    rnn_window_forward,
)
from .cells import CellState, TPCellParams, TPLSTMParams, init_tp_cell, init_tp_lstm
from .data import SeriesDataset
from .degree import DEFAULT_BOUNDS, DegreeParam, init_mlp_params
from .errors import ArgumentError, NumericError
from .tensor import SymTensor, build_from_factors, symmetrize_first_p, tp_contract

LOSSES = ("mse", "sse")
OPTIMIZERS = ("adam", "rmsprop")
CELL_KINDS = ("tp-rnn", "tp-lstm", "exact-tp")

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
RMSPROP_RHO, RMSPROP_EPS = 0.9, 1e-8

_P_MODE_CODE = {"fixed": 0, "scalar": 1, "subnet": 2}
_DUMMY_MLP = (np.zeros((1, 1)), np.zeros(1), np.zeros(1), 0.0)


@dataclass
class TrainConfig:
    """Loss/optimizer/loop settings.

    ``precision`` selects the storage width of parameters and data (64 or
    32); arithmetic always runs in the backend's native real-64, so 32 is a
    quantization knob, not a fast path.
    """

    loss: str = "mse"
    optimizer: str = "adam"
    learning_rate: float = 0.01
    epochs: int = 100
    grad_clip_norm: Optional[float] = 1.0
    seed: int = 0
    bptt_window: int = 50
    precision: int = 64

    def __post_init__(self):
        self.loss = str(self.loss).lower()
        self.optimizer = str(self.optimizer).lower()
        if self.loss not in LOSSES:
            raise ArgumentError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ArgumentError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        self.learning_rate = float(self.learning_rate)
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be positive")
        self.epochs = int(self.epochs)
        if self.epochs < 1:
            raise ArgumentError("epochs must be at least 1")
        if self.grad_clip_norm is not None:
            self.grad_clip_norm = float(self.grad_clip_norm)
            if not self.grad_clip_norm > 0:
                raise ArgumentError("grad_clip_norm must be positive or None")
        self.seed = int(self.seed)
        self.bptt_window = int(self.bptt_window)
        if self.bptt_window < 1:
            raise ArgumentError("bptt_window must be at least 1")
        self.precision = int(self.precision)
        if self.precision not in (64, 32):
            raise ArgumentError("precision must be 64 or 32")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "grad_clip_norm": self.grad_clip_norm,
            "seed": self.seed,
            "bptt_window": self.bptt_window,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelSpec:
    """Architecture description, sufficient to rebuild a model from a seed."""

    cell: str = "tp-rnn"
    m: int = 8
    rank: int = 1
    d_h: int = 1
    degree_mode: str = "scalar"
    degree_init: float = 1.0
    degree_min: float = DEFAULT_BOUNDS[0]
    degree_max: float = DEFAULT_BOUNDS[1]
    standard_gating: bool = False

    def __post_init__(self):
        if self.cell not in CELL_KINDS:
            raise ArgumentError(f"cell must be one of {CELL_KINDS}, got {self.cell!r}")
        self.m = int(self.m)
        self.rank = int(self.rank)
        self.d_h = int(self.d_h)
        if min(self.m, self.rank, self.d_h) < 1:
            raise ArgumentError("m, rank, d_h must all be at least 1")
        self.degree_init = float(self.degree_init)
        self.degree_min = float(self.degree_min)
        self.degree_max = float(self.degree_max)
        if self.cell == "exact-tp":
            if self.degree_mode != "fixed":
                raise ArgumentError(
                    "the exact tensor cell supports fixed integer degrees only"
                )
            if self.degree_init != int(self.degree_init) or self.degree_init < 1:
                raise ArgumentError("exact-tp needs a positive integer degree")
            if self.d_h != 1:
                raise ArgumentError("exact-tp supports d_h = 1 only")

    def to_dict(self) -> dict:
        return {
            "cell": self.cell,
            "m": self.m,
            "rank": self.rank,
            "d_h": self.d_h,
            "degree_mode": self.degree_mode,
            "degree_init": self.degree_init,
            "degree_min": self.degree_min,
            "degree_max": self.degree_max,
            "standard_gating": self.standard_gating,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SingleCellModel:
    """A recurrent cell plus linear readout y = wout @ h + bout."""

    cell_kind: str
    degree: DegreeParam
    wout: np.ndarray
    bout: np.ndarray
    cell: object = None  # TPCellParams | TPLSTMParams
    G: Optional[SymTensor] = None  # exact-tp transition tensor
    b: Optional[np.ndarray] = None  # exact-tp bias

    @property
    def m(self) -> int:
        if self.cell_kind == "exact-tp":
            return self.G.dims[-1]
        return self.cell.m

    @property
    def l(self) -> int:
        return self.wout.shape[0]

    @property
    def d_h(self) -> int:
        return 1 if self.cell_kind == "exact-tp" else self.cell.d_h

    def initial_state(self) -> CellState:
        state = CellState.zeros(
            self.m, self.d_h, with_cell=(self.cell_kind == "tp-lstm"),
            p0=self.degree.value,
        )
        if self.cell_kind == "tp-lstm" and not self.cell.standard_gating:
            # the raw gating c' = c*f is purely multiplicative, so the cell
            # state must start away from zero to carry any signal
            state.c = np.ones(self.m)
        return state

    def _mlp_arrays(self):
        if self.degree.mode == "subnet":
            net = self.degree.subnet
            return net.w1, net.b1, net.w2, net.b2
        return _DUMMY_MLP

    def params_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        if self.cell_kind == "exact-tp":
            out["G"] = np.array(self.G.data)
            out["b"] = np.array(self.b)
        else:
            out["whh"] = np.array(self.cell.whh)
            out["whx"] = np.array(self.cell.whx)
            out["b"] = np.array(self.cell.b)
        if self.degree.mode == "scalar":
            out["degree_value"] = np.asarray(self.degree.value)
        elif self.degree.mode == "subnet":
            net = self.degree.subnet
            out["degree_w1"] = np.array(net.w1)
            out["degree_b1"] = np.array(net.b1)
            out["degree_w2"] = np.array(net.w2)
            out["degree_b2"] = np.asarray(net.b2)
        out["wout"] = np.array(self.wout)
        out["bout"] = np.array(self.bout)
        return out

    def set_params(self, params: dict) -> None:
        if self.cell_kind == "exact-tp":
            self.G = SymTensor(self.G.dims, np.array(params["G"]),
                               sym_prefix=self.G.sym_prefix,
                               sym_mode=self.G.sym_mode)
            self.b = np.array(params["b"], dtype=np.float64)
        elif self.cell_kind == "tp-lstm":
            self.cell = TPLSTMParams(
                np.array(params["whh"]), np.array(params["whx"]),
                np.array(params["b"]), standard_gating=self.cell.standard_gating,
            )
        else:
            self.cell = TPCellParams(
                np.array(params["whh"]), np.array(params["whx"]),
                np.array(params["b"]),
            )
        if self.degree.mode == "scalar":
            self.degree.value = self.degree.clamp(float(params["degree_value"]))
        elif self.degree.mode == "subnet":
            net = self.degree.subnet
            net.w1 = np.array(params["degree_w1"], dtype=np.float64)
            net.b1 = np.array(params["degree_b1"], dtype=np.float64)
            net.w2 = np.array(params["degree_w2"], dtype=np.float64)
            net.b2 = float(params["degree_b2"])
        self.wout = np.array(params["wout"], dtype=np.float64)
        self.bout = np.array(params["bout"], dtype=np.float64)


def build_model(spec: ModelSpec, l: int, seed: int) -> SingleCellModel:
    """Seeded construction; the degree controller and readout use derived
    streams so cell/degree/readout draws stay independent."""
    bounds = (spec.degree_min, spec.degree_max)
    subnet = (init_mlp_params(spec.m, l, seed=seed + 1)
              if spec.degree_mode == "subnet" else None)
    degree = DegreeParam(mode=spec.degree_mode, value=spec.degree_init,
                         bounds=bounds, subnet=subnet)
    rng = np.random.default_rng(seed + 2)
    scale = 1.0 / math.sqrt(spec.m)
    wout = rng.uniform(-scale, scale, size=(l, spec.m))
    bout = np.zeros(l)
    if spec.cell == "exact-tp":
        p = int(spec.degree_init)
        n = l + spec.m
        a = 1.0 / math.sqrt(n**p)
        raw = np.random.default_rng(seed).uniform(-a, a, size=(n,) * p + (spec.m,))
        G = symmetrize_first_p(raw, p, full_permutations=True)
        return SingleCellModel("exact-tp", degree, wout, bout,
                               G=G, b=np.zeros(spec.m))
    if spec.cell == "tp-lstm":
        cell = init_tp_lstm(spec.m, l, rank=spec.rank, d_h=spec.d_h, seed=seed,
                            standard_gating=spec.standard_gating)
    else:
        cell = init_tp_cell(spec.m, l, rank=spec.rank, d_h=spec.d_h, seed=seed)
    return SingleCellModel(spec.cell, degree, wout, bout, cell=cell)


# ---------------------------------------------------------------------------
# BPTT


@dataclass
class WindowGradients:
    grads: "OrderedDict[str, np.ndarray]"
    loss: float
    state_out: CellState
    predictions: np.ndarray


def _loss_and_dY(Y, targets, loss_kind):
    E = Y - targets
    if loss_kind == "mse":
        return float(np.mean(E * E)), 2.0 * E / E.size
    return float(np.sum(E * E)), 2.0 * E


def _check_finite_grads(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name!r}")


def _degree_entries(grads, model, dp_scalar, dw1, db1, dw2, db2):
    if model.degree.mode == "scalar":
        grads["degree_value"] = np.asarray(dp_scalar)
    elif model.degree.mode == "subnet":
        grads["degree_w1"] = dw1
        grads["degree_b1"] = db1
        grads["degree_w2"] = dw2
        grads["degree_b2"] = np.asarray(db2)


def _contract_leading(arr: np.ndarray, z: np.ndarray, k: int) -> np.ndarray:
    """Contract the first ``k`` modes of ``arr`` with the same vector."""
    out = arr
    for _ in range(k):
        out = np.tensordot(z, out, axes=([0], [0]))
    return out


def _exact_window_forward(model, xs, state0):
    G, b, p = model.G, model.b, int(model.degree.value)
    l = model.l
    n = l + model.m
    T = xs.shape[0]
    Z = np.empty((T, n))
    H = np.empty((T, model.m))
    h = state0.h.copy()
    for t in range(T):
        z = np.concatenate([xs[t], h])
        Z[t] = z
        h = tp_contract(G, z, p) + b
        H[t] = h
    return Z, H


def bptt_gradients(model: SingleCellModel, input_window, targets,
                   cfg: TrainConfig, state0: Optional[CellState] = None,
                   ) -> WindowGradients:
    """Exact reverse-mode gradients of the window loss.

    The window starts from ``state0`` (zeros when omitted); the state is
    treated as constant, which is the truncation point of truncated BPTT.
    """
    xs = np.ascontiguousarray(np.atleast_2d(np.asarray(input_window, dtype=np.float64)))
    ys = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, dtype=np.float64)))
    if xs.shape != ys.shape:
        raise ArgumentError(f"input/target shapes differ: {xs.shape} vs {ys.shape}")
    if xs.shape[0] > cfg.bptt_window:
        raise ArgumentError(
            f"window length {xs.shape[0]} exceeds bptt_window {cfg.bptt_window}"
        )
    if xs.shape[1] != model.l:
        raise ArgumentError(f"expected {model.l}-channel inputs, got {xs.shape[1]}")
    state0 = state0 or model.initial_state()
    p_mode = _P_MODE_CODE[model.degree.mode]
    w1, b1, w2, b2 = model._mlp_arrays()
    lo, hi = model.degree.bounds
    grads = OrderedDict()

    if model.cell_kind == "tp-rnn":
        c = model.cell
        H, U, P, PRAW, A1, hist_f, p_f = rnn_window_forward(
            c.whh, c.whx, c.b, xs, state0.h_history,
            p_mode, model.degree.value, w1, b1, w2, b2,
            state0.p_carry, lo, hi,
        )
        H = np.asarray(H)
        Y = H @ model.wout.T + model.bout
        loss, dY = _loss_and_dY(Y, ys, cfg.loss)
        dH_ext = dY @ model.wout
        (dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2g, dhist0,
         dp_carry) = rnn_window_backward(
            c.whh, c.whx, xs, state0.h_history, H, U, P, PRAW, A1, dH_ext,
            p_mode, w1, b1, w2, b2, state0.p_carry, lo, hi,
        )
        grads["whh"], grads["whx"], grads["b"] = dwhh, dwhx, db
        _degree_entries(grads, model, dp_scalar, dw1, db1, dw2, db2g)
        state_out = CellState(np.asarray(hist_f), p_carry=float(p_f))
    elif model.cell_kind == "tp-lstm":
        c = model.cell
        gating = 1 if c.standard_gating else 0
        c0 = state0.c if state0.c is not None else np.zeros(model.m)
        (H, C, U, A, P, PRAW, A1, hist_f, c_f, p_f) = lstm_window_forward(
            c.whh, c.whx, c.b, xs, state0.h_history, c0, gating,
            p_mode, model.degree.value, w1, b1, w2, b2,
            state0.p_carry, lo, hi,
        )
        H = np.asarray(H)
        Y = H @ model.wout.T + model.bout
        loss, dY = _loss_and_dY(Y, ys, cfg.loss)
        dH_ext = dY @ model.wout
        (dwhh, dwhx, db, dp_scalar, dw1, db1, dw2, db2g, dhist0, dc0,
         dp_carry) = lstm_window_backward(
            c.whh, c.whx, xs, state0.h_history, c0, H, C, U, A, P, PRAW, A1,
            dH_ext, np.zeros(model.m), 0.0, gating,
            p_mode, w1, b1, w2, b2, state0.p_carry, lo, hi,
        )
        grads["whh"], grads["whx"], grads["b"] = dwhh, dwhx, db
        _degree_entries(grads, model, dp_scalar, dw1, db1, dw2, db2g)
        state_out = CellState(np.asarray(hist_f), c=np.asarray(c_f),
                              p_carry=float(p_f))
    else:  # exact-tp
        G, p = model.G, int(model.degree.value)
        Z, H = _exact_window_forward(model, xs, state0)
        Y = H @ model.wout.T + model.bout
        loss, dY = _loss_and_dY(Y, ys, cfg.loss)
        dH_ext = dY @ model.wout
        dG = np.zeros(G.data.size)
        db = np.zeros(model.m)
        carry = np.zeros(model.m)
        for t in range(xs.shape[0] - 1, -1, -1):
            dh = dH_ext[t] + carry
            db += dh
            dG += build_from_factors(Z[t][None, :], dh[None, :], p).data
            W1 = _contract_leading(G.array, Z[t], p - 1)
            carry = (p * (W1 @ dh))[model.l:]
        grads["G"], grads["b"] = dG, db
        state_out = CellState(H[-1][None, :])
    grads["wout"] = dY.T @ H
    grads["bout"] = dY.sum(axis=0)
    _check_finite_grads(grads)
    return WindowGradients(grads=grads, loss=loss, state_out=state_out,
                           predictions=Y)


# ---------------------------------------------------------------------------
# Optimizers


def init_moments(params: dict, kind: str) -> dict:
    if kind not in OPTIMIZERS:
        raise ArgumentError(f"unknown optimizer {kind!r}")

    def zeros():
        return {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                for k, v in params.items()}

    moments = {"t": 0, "v": zeros()}
    if kind == "adam":
        moments["m"] = zeros()
    return moments


def optimizer_step(kind, params, grads, moments, lr):
    """One Adam or RMSprop update; returns (new_params, new_moments)."""
    if kind not in OPTIMIZERS:
        raise ArgumentError(f"unknown optimizer {kind!r}")
    t = moments["t"] + 1
    new_params = OrderedDict()
    new_moments = {"t": t, "v": {}}
    if kind == "adam":
        new_moments["m"] = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ArgumentError(
                f"gradient shape {g.shape} != param shape {value.shape} "
                f"for {name!r}"
            )
        v = RMSPROP_RHO * moments["v"][name] + (1 - RMSPROP_RHO) * g * g \
            if kind == "rmsprop" \
            else ADAM_BETA2 * moments["v"][name] + (1 - ADAM_BETA2) * g * g
        if kind == "adam":
            m = ADAM_BETA1 * moments["m"][name] + (1 - ADAM_BETA1) * g
            m_hat = m / (1 - ADAM_BETA1**t)
            v_hat = v / (1 - ADAM_BETA2**t)
            step = lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            new_moments["m"][name] = m
        else:
            step = lr * g / (np.sqrt(v) + RMSPROP_EPS)
        new_moments["v"][name] = v
        new_params[name] = value - step
    return new_params, new_moments


def clip_gradients(grads, max_norm):
    """Scale all gradients to a global norm cap; returns (grads, clipped)."""
    if max_norm is None:
        return grads, False
    total = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, False
    scale = max_norm / total
    return OrderedDict((k, g * scale) for k, g in grads.items()), True


# ---------------------------------------------------------------------------
# Checkpoints


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _to_jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    return x


@dataclass
class Checkpoint:
    """Full training snapshot; serializes to one JSON file losslessly
    (floats round-trip through repr)."""

    cell_kind: str
    cell: dict
    degree: dict
    wout: list
    bout: list
    moments: dict
    epoch: int
    norm_stats: dict
    config: dict
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "cell_kind": self.cell_kind,
            "cell": _to_jsonable(self.cell),
            "degree": _to_jsonable(self.degree),
            "wout": _to_jsonable(self.wout),
            "bout": _to_jsonable(self.bout),
            "moments": _to_jsonable(self.moments),
            "epoch": self.epoch,
            "norm_stats": _to_jsonable(self.norm_stats),
            "config": self.config,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def save(self, path: str) -> None:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _snapshot(model, spec, cfg, moments, epoch, norm_stats) -> Checkpoint:
    if model.cell_kind == "exact-tp":
        cell = {"G": model.G.to_dict(), "b": model.b.tolist()}
    else:
        cell = model.cell.to_dict()
    config = {"model": spec.to_dict(), "train": cfg.to_dict()}
    return Checkpoint(
        cell_kind=model.cell_kind,
        cell=cell,
        degree=model.degree.to_dict(),
        wout=model.wout.tolist(),
        bout=model.bout.tolist(),
        moments=_to_jsonable(moments),
        epoch=epoch,
        norm_stats={"mean": norm_stats[0].tolist(), "std": norm_stats[1].tolist()},
        config=config,
        config_hash=config_hash(config),
    )


def model_from_checkpoint(cp: Checkpoint) -> SingleCellModel:
    degree = DegreeParam.from_dict(cp.degree)
    wout = np.asarray(cp.wout, dtype=np.float64)
    bout = np.asarray(cp.bout, dtype=np.float64)
    if cp.cell_kind == "exact-tp":
        return SingleCellModel(
            "exact-tp", degree, wout, bout,
            G=SymTensor.from_dict(cp.cell["G"]),
            b=np.asarray(cp.cell["b"], dtype=np.float64),
        )
    if cp.cell_kind == "tp-lstm":
        return SingleCellModel("tp-lstm", degree, wout, bout,
                               cell=TPLSTMParams.from_dict(cp.cell))
    return SingleCellModel("tp-rnn", degree, wout, bout,
                           cell=TPCellParams.from_dict(cp.cell))


# ---------------------------------------------------------------------------
# Single-cell training


def _teacher_forced_predictions(model: SingleCellModel, values: np.ndarray,
                                ) -> np.ndarray:
    """One-step predictions over a normalized segment (predicts rows 1..T-1)."""
    xs = np.ascontiguousarray(values[:-1])
    state0 = model.initial_state()
    p_mode = _P_MODE_CODE[model.degree.mode]
    w1, b1, w2, b2 = model._mlp_arrays()
    lo, hi = model.degree.bounds
    if model.cell_kind == "tp-rnn":
        c = model.cell
        H = rnn_window_forward(
            c.whh, c.whx, c.b, xs, state0.h_history,
            p_mode, model.degree.value, w1, b1, w2, b2, state0.p_carry, lo, hi,
        )[0]
    elif model.cell_kind == "tp-lstm":
        c = model.cell
        H = lstm_window_forward(
            c.whh, c.whx, c.b, xs, state0.h_history, state0.c,
            1 if c.standard_gating else 0,
            p_mode, model.degree.value, w1, b1, w2, b2, state0.p_carry, lo, hi,
        )[0]
    else:
        _, H = _exact_window_forward(model, xs, state0)
    return np.asarray(H) @ model.wout.T + model.bout


def _denorm_rmse(pred_norm, truth_norm, stats):
    mean, std = stats
    diff = (pred_norm - truth_norm) * std
    return float(np.sqrt(np.mean(diff * diff)))


def _val_rmse(model, val_values, stats):
    if val_values.shape[0] < 2:
        return float("nan")
    preds = _teacher_forced_predictions(model, val_values)
    return _denorm_rmse(preds, val_values[1:], stats)


def _windows(values, width):
    """(input, target) pairs for one-step prediction, in chronological order."""
    T = values.shape[0]
    for start in range(0, T - 1, width):
        stop = min(start + width, T - 1)
        yield values[start:stop], values[start + 1 : stop + 1]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list
    diverged: bool = False
    divergence_report: Optional[dict] = None


def _quantize(params, precision):
    if precision == 64:
        return params
    return OrderedDict(
        (k, np.asarray(v, dtype=np.float32).astype(np.float64))
        for k, v in params.items()
    )


def train_single_cell(dataset: SeriesDataset, spec: ModelSpec,
                      cfg: TrainConfig) -> TrainResult:
    """Truncated-BPTT training with per-epoch validation selection.

    Logs one metrics row per epoch and returns the checkpoint with the best
    validation RMSE.  A non-finite loss or gradient aborts the loop; the
    best checkpoint so far (or the initial snapshot) is returned together
    with a divergence report.
    """
    values = dataset.normalized_values()
    if cfg.precision == 32:
        values = values.astype(np.float32).astype(np.float64)
    train_end, val_end = dataset.split_bounds
    train_vals = values[:train_end]
    val_vals = values[train_end:val_end]
    stats = dataset.norm_stats
    if train_vals.shape[0] < 2:
        raise ArgumentError("training split needs at least two points")

    model = build_model(spec, dataset.channels, cfg.seed)
    params = _quantize(model.params_dict(), cfg.precision)
    model.set_params(params)
    moments = init_moments(params, cfg.optimizer)

    # fallback for divergence before the first completed epoch
    initial = _snapshot(model, spec, cfg, moments, 0, stats)
    best: Optional[Checkpoint] = None
    best_rmse = math.inf
    metrics = []
    diverged = False
    report = None

    for epoch in range(1, cfg.epochs + 1):
        state = model.initial_state()
        clip_events = 0
        sq_sum = 0.0
        n_elems = 0
        for xs, ys in _windows(train_vals, cfg.bptt_window):
            try:
                wg = bptt_gradients(model, xs, ys, cfg, state0=state)
            except NumericError as exc:
                diverged = True
                report = {"epoch": epoch, "reason": str(exc)}
                break
            if not math.isfinite(wg.loss):
                diverged = True
                report = {"epoch": epoch, "reason": "non-finite loss"}
                break
            grads, clipped = clip_gradients(wg.grads, cfg.grad_clip_norm)
            clip_events += int(clipped)
            params, moments = optimizer_step(
                cfg.optimizer, params, grads, moments, cfg.learning_rate
            )
            params = _quantize(params, cfg.precision)
            model.set_params(params)
            params = model.params_dict()  # degree clamping may apply
            state = wg.state_out
            if cfg.loss == "mse":
                sq_sum += wg.loss * xs.size
                n_elems += xs.size
            else:
                sq_sum += wg.loss
                n_elems += xs.size
        if diverged:
            break
        train_loss = sq_sum / n_elems if cfg.loss == "mse" else sq_sum
        val_rmse = _val_rmse(model, val_vals, stats)
        p_value = (state.p_carry if model.degree.mode == "subnet"
                   else model.degree.value)
        metrics.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_rmse": val_rmse,
            "p_value": p_value,
            "clip_events": clip_events,
        })
        if math.isfinite(val_rmse) and val_rmse < best_rmse:
            best_rmse = val_rmse
            best = _snapshot(model, spec, cfg, moments, epoch, stats)

    if best is None:
        best = initial
    return TrainResult(checkpoint=best, metrics=metrics, diverged=diverged,
                       divergence_report=report)


def rolling_forecast(checkpoint: Checkpoint, segment):
    """Teacher-forced one-step forecasts over a raw segment.

    Each step consumes the true past; predictions and the RMSE are reported
    in original (denormalized) units.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim == 1:
        seg = seg[:, None]
    if seg.shape[0] < 2:
        raise ArgumentError("segment must contain at least two points")
    mean = np.asarray(checkpoint.norm_stats["mean"], dtype=np.float64)
    std = np.asarray(checkpoint.norm_stats["std"], dtype=np.float64)
    model = model_from_checkpoint(checkpoint)
    norm = (seg - mean) / std
    preds_norm = _teacher_forced_predictions(model, norm)
    preds = preds_norm * std + mean
    rmse = float(np.sqrt(np.mean((preds - seg[1:]) ** 2)))
    return preds, rmse


# ---------------------------------------------------------------------------
# Seq2seq


@dataclass
class Seq2SeqModel:
    """Encoder/decoder pair of gated cells with a shared linear readout.

    ``decoder_degree`` None means the decoder shares the encoder's
    DegreeParam (including the sub-network, when present).
    """

    encoder: TPLSTMParams
    decoder: TPLSTMParams
    degree: DegreeParam
    wout: np.ndarray
    bout: np.ndarray
    decoder_degree: Optional[DegreeParam] = None

    def __post_init__(self):
        if self.encoder.m != self.decoder.m:
            raise ArgumentError("encoder and decoder hidden sizes must match")
        if self.encoder.l != self.decoder.l:
            raise ArgumentError("encoder and decoder input sizes must match")

    @property
    def m(self) -> int:
        return self.encoder.m

    @property
    def l(self) -> int:
        return self.encoder.l

    def _deg(self, which: str) -> DegreeParam:
        if which == "dec" and self.decoder_degree is not None:
            return self.decoder_degree
        return self.degree

    def params_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        out["enc_whh"] = np.array(self.encoder.whh)
        out["enc_whx"] = np.array(self.encoder.whx)
        out["enc_b"] = np.array(self.encoder.b)
        out["dec_whh"] = np.array(self.decoder.whh)
        out["dec_whx"] = np.array(self.decoder.whx)
        out["dec_b"] = np.array(self.decoder.b)
        for prefix, deg in self._degree_slots():
            if deg.mode == "scalar":
                out[f"{prefix}value"] = np.asarray(deg.value)
            elif deg.mode == "subnet":
                out[f"{prefix}w1"] = np.array(deg.subnet.w1)
                out[f"{prefix}b1"] = np.array(deg.subnet.b1)
                out[f"{prefix}w2"] = np.array(deg.subnet.w2)
                out[f"{prefix}b2"] = np.asarray(deg.subnet.b2)
        out["wout"] = np.array(self.wout)
        out["bout"] = np.array(self.bout)
        return out

    def _degree_slots(self):
        slots = [("degree_", self.degree)]
        if self.decoder_degree is not None:
            slots.append(("dec_degree_", self.decoder_degree))
        return slots

    def set_params(self, params: dict) -> None:
        gating = self.encoder.standard_gating
        self.encoder = TPLSTMParams(
            np.array(params["enc_whh"]), np.array(params["enc_whx"]),
            np.array(params["enc_b"]), standard_gating=gating,
        )
        self.decoder = TPLSTMParams(
            np.array(params["dec_whh"]), np.array(params["dec_whx"]),
            np.array(params["dec_b"]), standard_gating=gating,
        )
        for prefix, deg in self._degree_slots():
            if deg.mode == "scalar":
                deg.value = deg.clamp(float(params[f"{prefix}value"]))
            elif deg.mode == "subnet":
                deg.subnet.w1 = np.array(params[f"{prefix}w1"], dtype=np.float64)
                deg.subnet.b1 = np.array(params[f"{prefix}b1"], dtype=np.float64)
                deg.subnet.w2 = np.array(params[f"{prefix}w2"], dtype=np.float64)
                deg.subnet.b2 = float(params[f"{prefix}b2"])
        self.wout = np.array(params["wout"], dtype=np.float64)
        self.bout = np.array(params["bout"], dtype=np.float64)


def build_seq2seq(spec: ModelSpec, l: int, seed: int,
                  shared_degree: bool = True) -> Seq2SeqModel:
    if spec.cell != "tp-lstm":
        raise ArgumentError("the encoder/decoder model uses tp-lstm cells")
    bounds = (spec.degree_min, spec.degree_max)

    def make_degree(s):
        subnet = (init_mlp_params(spec.m, l, seed=s)
                  if spec.degree_mode == "subnet" else None)
        return DegreeParam(mode=spec.degree_mode, value=spec.degree_init,
                           bounds=bounds, subnet=subnet)

    encoder = init_tp_lstm(spec.m, l, rank=spec.rank, d_h=spec.d_h, seed=seed,
                           standard_gating=spec.standard_gating)
    decoder = init_tp_lstm(spec.m, l, rank=spec.rank, d_h=spec.d_h, seed=seed + 1,
                           standard_gating=spec.standard_gating)
    rng = np.random.default_rng(seed + 2)
    scale = 1.0 / math.sqrt(spec.m)
    wout = rng.uniform(-scale, scale, size=(l, spec.m))
    bout = np.zeros(l)
    return Seq2SeqModel(
        encoder=encoder, decoder=decoder, degree=make_degree(seed + 3),
        wout=wout, bout=bout,
        decoder_degree=None if shared_degree else make_degree(seed + 4),
    )


def _seq2seq_forward(model: Seq2SeqModel, prefix, horizon: int):
    """Encode the prefix, then decode ``horizon`` steps autoregressively."""
    enc, dec = model.encoder, model.decoder
    gating = 1 if enc.standard_gating else 0
    m, D = model.m, enc.d_h
    enc_deg, dec_deg = model._deg("enc"), model._deg("dec")
    enc_mode = _P_MODE_CODE[enc_deg.mode]
    dec_mode = _P_MODE_CODE[dec_deg.mode]
    e_w1, e_b1, e_w2, e_b2 = _mlp_of(enc_deg)
    d_w1, d_b1, d_w2, d_b2 = _mlp_of(dec_deg)
    lo, hi = enc_deg.bounds
    hist0 = np.zeros((D, m))
    c0 = np.zeros(m) if gating else np.ones(m)
    enc_out = lstm_window_forward(
        enc.whh, enc.whx, enc.b, prefix, hist0, c0, gating,
        enc_mode, enc_deg.value, e_w1, e_b1, e_w2, e_b2, enc_deg.value, lo, hi,
    )
    hist_f, c_f, p_f = enc_out[7], enc_out[8], enc_out[9]
    dec_carry = float(p_f) if model.decoder_degree is None else dec_deg.value
    dec_out = lstm_decode_forward(
        dec.whh, dec.whx, dec.b, model.wout, model.bout, prefix[-1],
        np.asarray(hist_f), np.asarray(c_f), horizon, gating,
        dec_mode, dec_deg.value, d_w1, d_b1, d_w2, d_b2,
        dec_carry, *dec_deg.bounds,
    )
    return enc_out, dec_out, (hist0, c0, dec_carry)


def _mlp_of(deg: DegreeParam):
    if deg.mode == "subnet":
        return deg.subnet.w1, deg.subnet.b1, deg.subnet.w2, deg.subnet.b2
    return _DUMMY_MLP


def _seq2seq_window_gradients(model: Seq2SeqModel, prefix, targets, cfg):
    enc, dec = model.encoder, model.decoder
    gating = 1 if enc.standard_gating else 0
    m, D = model.m, enc.d_h
    horizon = targets.shape[0]
    enc_deg, dec_deg = model._deg("enc"), model._deg("dec")
    enc_mode = _P_MODE_CODE[enc_deg.mode]
    dec_mode = _P_MODE_CODE[dec_deg.mode]
    e_w1, e_b1, e_w2, e_b2 = _mlp_of(enc_deg)
    d_w1, d_b1, d_w2, d_b2 = _mlp_of(dec_deg)

    enc_out, dec_out, (hist0, c0, dec_carry) = _seq2seq_forward(
        model, prefix, horizon
    )
    eH, eC, eU, eA, eP, ePRAW, eA1, ehist_f, ec_f, ep_f = enc_out
    Y, XS, H, C, U, A, P, PRAW, A1, _, _, _ = dec_out
    Y = np.asarray(Y)
    loss, dY = _loss_and_dY(Y, targets, cfg.loss)

    (d_dwhh, d_dwhx, d_db, dwout, dbout, d_dp_scalar, d_dw1, d_db1, d_dw2,
     d_db2, d_dhist0, d_dc0, d_dp_carry) = lstm_decode_backward(
        dec.whh, dec.whx, model.wout, XS, np.asarray(ehist_f), np.asarray(ec_f),
        H, C, U, A, P, PRAW, A1, dY, gating,
        dec_mode, d_w1, d_b1, d_w2, d_b2, dec_carry, *dec_deg.bounds,
    )
    # the decoder consumed the encoder's full final state: route gradients
    # into the last D encoder steps, the final cell state, and the degree
    prefix_len = prefix.shape[0]
    dH_ext = np.zeros((prefix_len, m))
    d_dhist0 = np.asarray(d_dhist0)
    for d in range(min(D, prefix_len)):
        dH_ext[prefix_len - 1 - d] += d_dhist0[d]
    dP_last = float(d_dp_carry) if model.decoder_degree is None else 0.0
    (e_dwhh, e_dwhx, e_db, e_dp_scalar, e_dw1, e_db1, e_dw2, e_db2,
     _, _, _) = lstm_window_backward(
        enc.whh, enc.whx, prefix, hist0, c0, eH, eC, eU, eA, eP, ePRAW, eA1,
        dH_ext, np.asarray(d_dc0), dP_last, gating,
        enc_mode, e_w1, e_b1, e_w2, e_b2, enc_deg.value, *enc_deg.bounds,
    )
    # the decoder's x_init = prefix[-1] is data, so its gradient is dropped

    grads = OrderedDict()
    grads["enc_whh"], grads["enc_whx"], grads["enc_b"] = e_dwhh, e_dwhx, e_db
    grads["dec_whh"], grads["dec_whx"], grads["dec_b"] = d_dwhh, d_dwhx, d_db
    if model.decoder_degree is None:
        if model.degree.mode == "scalar":
            grads["degree_value"] = np.asarray(e_dp_scalar + d_dp_scalar)
        elif model.degree.mode == "subnet":
            grads["degree_w1"] = e_dw1 + d_dw1
            grads["degree_b1"] = e_db1 + d_db1
            grads["degree_w2"] = e_dw2 + d_dw2
            grads["degree_b2"] = np.asarray(e_db2 + d_db2)
    else:
        if model.degree.mode == "scalar":
            grads["degree_value"] = np.asarray(e_dp_scalar)
            grads["dec_degree_value"] = np.asarray(d_dp_scalar)
        elif model.degree.mode == "subnet":
            grads["degree_w1"], grads["degree_b1"] = e_dw1, e_db1
            grads["degree_w2"] = e_dw2
            grads["degree_b2"] = np.asarray(e_db2)
            grads["dec_degree_w1"], grads["dec_degree_b1"] = d_dw1, d_db1
            grads["dec_degree_w2"] = d_dw2
            grads["dec_degree_b2"] = np.asarray(d_db2)
    grads["wout"] = np.asarray(dwout)
    grads["bout"] = np.asarray(dbout)
    _check_finite_grads(grads)
    return grads, loss, Y


def _seq2seq_windows(values, prefix_len, horizon):
    T = values.shape[0]
    for start in range(0, T - prefix_len - horizon + 1, horizon):
        yield (values[start : start + prefix_len],
               values[start + prefix_len : start + prefix_len + horizon])


def seq2seq_evaluate(model: Seq2SeqModel, values, prefix_len, horizon, stats):
    """Horizon predictions over all windows of a normalized segment.

    Returns (predictions (n_windows, horizon, l), denormalized RMSE); NaN
    RMSE when the segment is too short for a single window.
    """
    preds, truths = [], []
    for prefix, target in _seq2seq_windows(values, prefix_len, horizon):
        _, dec_out, _ = _seq2seq_forward(model, prefix, horizon)
        preds.append(np.asarray(dec_out[0]))
        truths.append(target)
    if not preds:
        return np.empty((0, horizon, values.shape[1])), float("nan")
    preds = np.stack(preds)
    truths = np.stack(truths)
    mean, std = stats
    diff = (preds - truths) * std
    rmse = float(np.sqrt(np.mean(diff * diff)))
    return preds * std + mean, rmse


@dataclass
class Seq2SeqResult:
    checkpoint: Checkpoint
    predictions: np.ndarray
    rmse: float
    metrics: list
    diverged: bool = False
    divergence_report: Optional[dict] = None


def _seq2seq_snapshot(model, spec, cfg, moments, epoch, stats,
                      prefix_len, horizon) -> Checkpoint:
    cell = {"encoder": model.encoder.to_dict(), "decoder": model.decoder.to_dict()}
    if model.decoder_degree is not None:
        cell["decoder_degree"] = model.decoder_degree.to_dict()
    config = {"model": spec.to_dict(), "train": cfg.to_dict(),
              "prefix_len": prefix_len, "horizon": horizon}
    return Checkpoint(
        cell_kind="seq2seq",
        cell=cell,
        degree=model.degree.to_dict(),
        wout=model.wout.tolist(),
        bout=model.bout.tolist(),
        moments=_to_jsonable(moments),
        epoch=epoch,
        norm_stats={"mean": stats[0].tolist(), "std": stats[1].tolist()},
        config=config,
        config_hash=config_hash(config),
    )


def seq2seq_model_from_checkpoint(cp: Checkpoint) -> Seq2SeqModel:
    if cp.cell_kind != "seq2seq":
        raise ArgumentError(f"not a seq2seq checkpoint: {cp.cell_kind!r}")
    dec_degree = (DegreeParam.from_dict(cp.cell["decoder_degree"])
                  if "decoder_degree" in cp.cell else None)
    return Seq2SeqModel(
        encoder=TPLSTMParams.from_dict(cp.cell["encoder"]),
        decoder=TPLSTMParams.from_dict(cp.cell["decoder"]),
        degree=DegreeParam.from_dict(cp.degree),
        wout=np.asarray(cp.wout, dtype=np.float64),
        bout=np.asarray(cp.bout, dtype=np.float64),
        decoder_degree=dec_degree,
    )


def seq2seq_train_and_forecast(dataset: SeriesDataset, model: Seq2SeqModel,
                               cfg: TrainConfig, prefix_len: int = 32,
                               horizon: int = 8) -> Seq2SeqResult:
    """Train on (prefix, horizon) windows and forecast the test split.

    The encoder consumes each observed prefix; the decoder emits the horizon
    autoregressively, feeding its own outputs back.  Test predictions come
    from the best-on-validation checkpoint.
    """
    if prefix_len < 1 or horizon < 1:
        raise ArgumentError("prefix_len and horizon must be positive")
    values = dataset.normalized_values()
    if cfg.precision == 32:
        values = values.astype(np.float32).astype(np.float64)
    train_end, val_end = dataset.split_bounds
    train_vals = values[:train_end]
    val_vals = values[train_end:val_end]
    test_vals = values[val_end:]
    stats = dataset.norm_stats
    if train_vals.shape[0] < prefix_len + horizon:
        raise ArgumentError("training split shorter than one (prefix, horizon)")

    spec = ModelSpec(
        cell="tp-lstm", m=model.m, rank=model.encoder.rank, d_h=model.encoder.d_h,
        degree_mode=model.degree.mode, degree_init=model.degree.value,
        degree_min=model.degree.bounds[0], degree_max=model.degree.bounds[1],
        standard_gating=model.encoder.standard_gating,
    )
    params = _quantize(model.params_dict(), cfg.precision)
    model.set_params(params)
    moments = init_moments(params, cfg.optimizer)

    initial = _seq2seq_snapshot(model, spec, cfg, moments, 0, stats,
                                prefix_len, horizon)
    best = None
    best_rmse = math.inf
    metrics = []
    diverged = False
    report = None

    for epoch in range(1, cfg.epochs + 1):
        clip_events = 0
        sq_sum = 0.0
        n_elems = 0
        for prefix, target in _seq2seq_windows(train_vals, prefix_len, horizon):
            try:
                grads, loss, _ = _seq2seq_window_gradients(model, prefix,
                                                           target, cfg)
            except NumericError as exc:
                diverged = True
                report = {"epoch": epoch, "reason": str(exc)}
                break
            if not math.isfinite(loss):
                diverged = True
                report = {"epoch": epoch, "reason": "non-finite loss"}
                break
            grads, clipped = clip_gradients(grads, cfg.grad_clip_norm)
            clip_events += int(clipped)
            params, moments = optimizer_step(
                cfg.optimizer, params, grads, moments, cfg.learning_rate
            )
            params = _quantize(params, cfg.precision)
            model.set_params(params)
            params = model.params_dict()
            if cfg.loss == "mse":
                sq_sum += loss * target.size
            else:
                sq_sum += loss
            n_elems += target.size
        if diverged:
            break
        train_loss = sq_sum / n_elems if cfg.loss == "mse" else sq_sum
        _, val_rmse = seq2seq_evaluate(model, val_vals, prefix_len, horizon, stats)
        metrics.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_rmse": val_rmse,
            "p_value": model.degree.value if model.degree.mode != "subnet"
            else float("nan"),
            "clip_events": clip_events,
        })
        if math.isfinite(val_rmse) and val_rmse < best_rmse:
            best_rmse = val_rmse
            best = _seq2seq_snapshot(model, spec, cfg, moments, epoch, stats,
                                     prefix_len, horizon)

    if best is None:
        best = initial
    final_model = seq2seq_model_from_checkpoint(best)
    predictions, rmse = seq2seq_evaluate(final_model, test_vals, prefix_len,
                                         horizon, stats)
    return Seq2SeqResult(checkpoint=best, predictions=predictions, rmse=rmse,
                         metrics=metrics, diverged=diverged,
                         divergence_report=report)
