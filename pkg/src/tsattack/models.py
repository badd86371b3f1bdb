"""Single-step forecasters built on :mod:`tsattack.autodiff`, plus Adam training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tape, Tensor, add_bias, mse_loss, sigmoid, tanh
from .data import NormalizationMeta, WindowedDataset
from .errors import ConfigError, DataError, NumericError, ShapeError
from .io import SCHEMA_VERSION, read_json, write_json

log = logging.getLogger(__name__)

MODEL_KINDS = ("linear_ar", "mlp", "gru")


@dataclass
class ModelConfig:
    kind: str = "gru"
    window: int = 5
    num_features: int = 1
    hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        for name in ("window", "num_features", "hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model {name} must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    patience: int = 5
    val_fraction: float = 0.1
    batch_size: int = 32

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs, patience and batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, f = cfg.window * cfg.num_features, cfg.hidden, cfg.num_features
    if cfg.kind == "linear_ar":
        return {"weight": (d,), "bias": ()}
    if cfg.kind == "mlp":
        return {"w1": (d, h), "b1": (h,), "w2": (h,), "b2": ()}
    return {
        "w_xr": (f, h), "w_xz": (f, h), "w_xn": (f, h),
        "w_hr": (h, h), "w_hz": (h, h), "w_hn": (h, h),
        "b_r": (h,), "b_z": (h,), "b_n": (h,), "b_hn": (h,),
        "w_out": (h,), "b_out": (),
    }


def _fan_in(cfg: ModelConfig, name: str) -> int:
    if cfg.kind == "gru":
        return cfg.hidden
    if cfg.kind == "mlp" and name in ("w2", "b2"):
        return cfg.hidden
    return cfg.window * cfg.num_features


class ForecastModel:
    """A forecaster ``f(window) -> next target value`` with parameters ``params``.

    ``forward`` accepts a single window ``(w, F)`` (returning a scalar) or a
    batch ``(N, w, F)`` (returning ``(N,)``).  Samples in a batch never
    interact, so the gradient of a summed loss splits per window.
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray]):
        self.config = config
        shapes = _param_shapes(config)
        if set(params) != set(shapes):
            raise ShapeError(f"parameter names {sorted(params)} do not match {config.kind}")
        self.params: dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"parameter {name} has non-finite values")
            self.params[name] = arr

    @classmethod
    def initialize(cls, config: ModelConfig) -> "ForecastModel":
        rng = np.random.default_rng(config.seed)
        params = {}
        for name, shape in _param_shapes(config).items():
            k = 1.0 / math.sqrt(_fan_in(config, name))
            params[name] = rng.uniform(-k, k, size=shape)
        return cls(config, params)

    def copy(self) -> "ForecastModel":
        return ForecastModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def forward(self, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.num_features):
            raise ShapeError(
                f"forward: window shape {x.shape} does not match "
                f"(N, {cfg.window}, {cfg.num_features})"
            )
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        n = x.shape[0]
        if cfg.kind == "linear_ar":
            out = x.reshape(n, -1) @ p["weight"] + p["bias"]
        elif cfg.kind == "mlp":
            hid = tanh(add_bias(x.reshape(n, -1) @ p["w1"], p["b1"]))
            out = hid @ p["w2"] + p["b2"]
        else:
            out = self._gru(x, p)
        return out.reshape(()) if single else out

    def _gru(self, x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
        n = x.shape[0]
        h = Tensor(np.zeros((n, self.config.hidden)))
        for t in range(self.config.window):
            xt = x[:, t, :]
            r = sigmoid(add_bias(xt @ p["w_xr"] + h @ p["w_hr"], p["b_r"]))
            z = sigmoid(add_bias(xt @ p["w_xz"] + h @ p["w_hz"], p["b_z"]))
            cand = tanh(add_bias(xt @ p["w_xn"], p["b_n"]) + r * add_bias(h @ p["w_hn"], p["b_hn"]))
            h = cand + z * (h - cand)
        return h @ p["w_out"] + p["b_out"]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predictions for a batch of windows, without recording a tape."""
        return self.forward(Tensor(X)).data.copy()

    def loss_and_input_grad(self, X: np.ndarray, target: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-window squared error, its gradient w.r.t. each window, and predictions."""
        with Tape() as tape:
            xt = Tensor(X, requires_grad=True)
            pred = self.forward(xt)
            d = pred - Tensor(target)
            loss = (d * d).sum()
        grads = tape.backward(loss, wrt=[xt])
        return d.data * d.data, grads[xt], pred.data


def rmse(model: ForecastModel, data: WindowedDataset) -> float:
    """Root mean squared error on the target feature, in normalized units."""
    if len(data) == 0:
        raise DataError("rmse of an empty dataset")
    err = model.predict(data.X) - data.y
    return float(np.sqrt(np.mean(err * err)))


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_rmse: float
    early_stop: bool = False


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_rmse(self) -> float:
        return self.records[self.best_epoch - 1].val_rmse

    def rows(self) -> list[tuple]:
        return [(r.epoch, r.train_rmse, r.val_rmse, int(r.early_stop)) for r in self.records]


def train(config: ModelConfig, data: WindowedDataset, cfg: TrainConfig | None = None,
          init: ForecastModel | None = None) -> tuple[ForecastModel, TrainLog]:
    """Fit with MSE + Adam; returns the parameters with the lowest validation RMSE.

    The validation set is the chronological tail of ``data``.  Training stops
    once validation RMSE has not improved for ``cfg.patience`` epochs.
    """
    cfg = cfg or TrainConfig()
    n = len(data)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    n_val = max(1, int(round(cfg.val_fraction * n)))
    if n - n_val < 1:
        raise DataError(f"{n} samples cannot be split into train and validation")
    if data.X.shape[1:] != (config.window, config.num_features):
        raise ShapeError(f"dataset windows {data.X.shape[1:]} do not match model config")
    fit, val = data.subset(slice(0, n - n_val)), data.subset(slice(n - n_val, n))

    model = init.copy() if init is not None else ForecastModel.initialize(config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.params, cfg.learning_rate, cfg.betas, cfg.adam_eps)
    best = model.copy()
    best_val = math.inf
    trainlog = TrainLog()
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(fit))
        for b, start in enumerate(range(0, len(fit), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                with Tape() as tape:
                    ps = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
                    loss = mse_loss(model.forward(Tensor(fit.X[idx]), ps), Tensor(fit.y[idx]))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss)
            opt.step(model.params, {k: grads[t] for k, t in ps.items()})
        for k, v in model.params.items():
            if not np.isfinite(v).all():
                raise NumericError(f"parameter {k} became non-finite at epoch {epoch}")
        rec = EpochRecord(epoch, rmse(model, fit), rmse(model, val))
        trainlog.records.append(rec)
        if rec.val_rmse < best_val:
            best_val, best, stale = rec.val_rmse, model.copy(), 0
            trainlog.best_epoch = epoch
        else:
            stale += 1
        log.debug("epoch %d train %.5f val %.5f", epoch, rec.train_rmse, rec.val_rmse)
        if stale >= cfg.patience:
            rec.early_stop = True
            break
    return best, trainlog


def checkpoint_dict(model: ForecastModel, normalization: NormalizationMeta | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "tsattack.checkpoint",
        "model_config": asdict(model.config),
        "normalization": normalization.to_dict() if normalization else None,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in sorted(model.params.items())},
    }


def save_checkpoint(path, model: ForecastModel,
                    normalization: NormalizationMeta | None = None) -> Path:
    return write_json(path, checkpoint_dict(model, normalization))


def load_checkpoint(path) -> tuple[ForecastModel, NormalizationMeta | None]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such checkpoint: {path}")
    d = read_json(path)
    if d.get("kind") != "tsattack.checkpoint":
        raise DataError(f"{path} is not a model checkpoint")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported checkpoint schema_version {d.get('schema_version')}")
    config = ModelConfig(**d["model_config"])
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in d["params"].items()}
    norm = d.get("normalization")
    return ForecastModel(config, params), (NormalizationMeta.from_dict(norm) if norm else None)
