"""L-infinity bounded FGSM, PGD and modified Auto-PGD attacks on forecasters.

All attacks operate on a batch of windows ``x0`` of shape ``(N, w, F)`` with
one target value per window.  Windows are independent: every quantity that
Auto-PGD adapts (step size, best iterate, checkpoint counters) is tracked
per window, so attacking a batch equals attacking each window alone.

Targeted attacks minimize the squared error to the target; when the target
is flagged ``ascend`` (untargeted) the squared error is maximized instead.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import WindowedDataset
from .errors import ConfigError, DataError, NumericError
from .io import SCHEMA_VERSION, csv_text, atomic_write_text, dumps_json, read_json
from .models import ForecastModel
from .targets import AttackTargetSpec, TargetSequence, build_target

METHODS = ("fgsm", "pgd", "mapgd")
STEP_MODES = ("sign", "raw")


@dataclass
class AttackConfig:
    """Attack hyper-parameters.

    ``step`` is the PGD step (default ``epsilon / 10`` for sign steps,
    ``epsilon`` for raw-gradient steps).  ``initial_step`` is the starting
    mAPGD step size (default ``2 * epsilon``).  ``checkpoints`` default to
    the Auto-PGD schedule from :func:`apgd_checkpoints`.
    """

    method: str = "pgd"
    epsilon: float = 0.1
    n_iter: int = 40
    step: float | None = None
    initial_step: float | None = None
    momentum: float = 0.75
    rho: float = 0.75
    checkpoints: tuple[int, ...] | None = None
    clip_range: tuple[float, float] = (0.0, 1.0)
    step_mode: str = "sign"
    record_trace: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attack method {self.method!r}; expected one of {METHODS}")
        if self.step_mode not in STEP_MODES:
            raise ConfigError(f"unknown step mode {self.step_mode!r}")
        # epsilon == 0 is accepted as the no-attack control
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if not 0 < self.momentum < 1 or not 0 < self.rho < 1:
            raise ConfigError("momentum and rho must lie in (0, 1)")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigError(f"invalid clip range {self.clip_range}")
        self.clip_range = (float(lo), float(hi))
        if self.checkpoints is not None:
            self.checkpoints = tuple(int(c) for c in self.checkpoints)
            validate_checkpoints(self.checkpoints, self.n_iter)

    @property
    def pgd_step(self) -> float:
        if self.step is not None:
            return self.step
        return self.epsilon / 10 if self.step_mode == "sign" else self.epsilon

    @property
    def mapgd_step(self) -> float:
        return self.initial_step if self.initial_step is not None else 2 * self.epsilon

    @property
    def schedule(self) -> tuple[int, ...]:
        if self.checkpoints is not None:
            return self.checkpoints
        return apgd_checkpoints(self.n_iter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip_range"] = list(self.clip_range)
        d["checkpoints"] = list(self.schedule)
        d["step"] = self.pgd_step
        d["initial_step"] = self.mapgd_step
        return d


def apgd_checkpoints(n_iter: int) -> tuple[int, ...]:
    """Auto-PGD checkpoints ``ceil(p_j * n_iter)`` with p_0 = 0, p_1 = 0.22 and
    ``p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06)``."""
    p = [0.0, 0.22]
    while p[-1] < 1.0:
        p.append(p[-1] + max(p[-1] - p[-2] - 0.03, 0.06))
    ws = {math.ceil(round(pj * n_iter, 9)) for pj in p[1:]}
    return tuple(sorted(w for w in ws if 1 <= w <= n_iter))


def validate_checkpoints(checkpoints, n_iter: int) -> None:
    ck = list(checkpoints)
    if any(b <= a for a, b in zip(ck, ck[1:])):
        raise ConfigError(f"checkpoints must be strictly increasing: {ck}")
    if ck and (ck[0] < 1 or ck[-1] > n_iter):
        raise ConfigError(f"checkpoints must lie in [1, {n_iter}]: {ck}")


class AttackFailure(NumericError):
    """Non-finite loss or gradient for some windows of a batch."""

    def __init__(self, message: str, windows=(), iteration: int | None = None):
        super().__init__(message)
        self.windows = list(windows)
        self.iteration = iteration


class _Objective:
    """Per-window objective (squared error, negated when ascending) and gradient."""

    def __init__(self, model: ForecastModel, target: np.ndarray, ascend: bool):
        self.model = model
        self.target = np.asarray(target, dtype=np.float64)
        self.sign = -1.0 if ascend else 1.0
        self.calls = 0

    def __call__(self, x: np.ndarray, iteration: int) -> tuple[np.ndarray, np.ndarray]:
        self.calls += 1
        try:
            loss, grad, _ = self.model.loss_and_input_grad(x, self.target)
        except NumericError as exc:
            raise AttackFailure(str(exc), range(len(x)), iteration) from exc
        bad = ~(np.isfinite(loss) & np.isfinite(grad).reshape(len(x), -1).all(axis=1))
        if bad.any():
            raise AttackFailure(f"non-finite gradient at iteration {iteration}",
                                np.flatnonzero(bad), iteration)
        return self.sign * loss, self.sign * grad


class _Projection:
    """Clamp to the intersection of the eps-ball around ``x0`` and the clip range."""

    def __init__(self, x0: np.ndarray, epsilon: float, clip_range: tuple[float, float]):
        self.lo = np.maximum(clip_range[0], x0 - epsilon)
        self.hi = np.minimum(clip_range[1], x0 + epsilon)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lo), self.hi)


def _direction(grad: np.ndarray, mode: str) -> np.ndarray:
    return np.sign(grad) if mode == "sign" else grad


def _check_inputs(x0: np.ndarray, target, clip_range) -> tuple[np.ndarray, np.ndarray]:
    x0 = np.asarray(x0, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x0.ndim != 3 or target.shape != (x0.shape[0],):
        raise DataError(f"need windows (N, w, F) and N targets, got {x0.shape} and {target.shape}")
    if x0.size and (x0.min() < clip_range[0] or x0.max() > clip_range[1]):
        raise DataError(f"clean windows lie outside the clip range {clip_range}")
    return x0, target


@dataclass
class BatchOutcome:
    x_adv: np.ndarray
    loss: np.ndarray  # squared error against the target at x_adv, per window
    loss_trace: np.ndarray | None = None  # (N, iterates)
    fmin_trace: np.ndarray | None = None
    halvings: list[list[int]] = field(default_factory=list)


def fgsm(model: ForecastModel, x0, target, epsilon: float, ascend: bool = False,
         clip_range=(0.0, 1.0)) -> BatchOutcome:
    """One signed-gradient step of size ``epsilon``: down the loss when
    targeted, up the loss when ``ascend``."""
    x0, target = _check_inputs(x0, target, clip_range)
    obj = _Objective(model, target, ascend)
    proj = _Projection(x0, epsilon, clip_range)
    _, g = obj(x0, 0)
    x_adv = proj(x0 - epsilon * np.sign(g))
    loss, _ = obj(x_adv, 1)
    return BatchOutcome(x_adv, obj.sign * loss)


def pgd(model: ForecastModel, x0, target, cfg: AttackConfig, ascend: bool = False
        ) -> BatchOutcome:
    """``n_iter`` projected gradient steps; returns the best iterate after x0."""
    x0, target = _check_inputs(x0, target, cfg.clip_range)
    obj = _Objective(model, target, ascend)
    proj = _Projection(x0, cfg.epsilon, cfg.clip_range)
    eta = cfg.pgd_step
    n = len(x0)
    f, g = obj(x0, 0)
    trace = [f]
    x = x0
    best_x, best_f = x0, np.full(n, np.inf)
    for k in range(1, cfg.n_iter + 1):
        x = proj(x - eta * _direction(g, cfg.step_mode))
        f, g = obj(x, k)
        better = f < best_f
        best_f = np.where(better, f, best_f)
        best_x = np.where(better[:, None, None], x, best_x)
        trace.append(f)
    out = BatchOutcome(best_x, obj.sign * best_f)
    if cfg.record_trace:
        out.loss_trace = obj.sign * np.stack(trace, axis=1)
        out.halvings = [[] for _ in range(n)]
    return out


def mapgd_tsf(model: ForecastModel, x0, target, cfg: AttackConfig, ascend: bool = False
              ) -> BatchOutcome:
    """Modified Auto-PGD for regression targets.

    One projected step initializes the best iterate; subsequent iterates
    combine a projected gradient step with momentum.  At every checkpoint a
    window halves its step size and restarts from its best iterate when
    either too few steps reduced the loss since the previous checkpoint
    (fewer than ``rho`` times the interval length) or neither its step size
    nor its best loss changed over that interval.
    """
    x0, target = _check_inputs(x0, target, cfg.clip_range)
    obj = _Objective(model, target, ascend)
    proj = _Projection(x0, cfg.epsilon, cfg.clip_range)
    n = len(x0)
    alpha, rho = cfg.momentum, cfg.rho
    eta = np.full(n, cfg.mapgd_step)
    checkpoints = set(cfg.schedule)
    mode = cfg.step_mode

    f0, g0 = obj(x0, 0)
    x1 = proj(x0 - eta[:, None, None] * _direction(g0, mode))
    f1, g1 = obj(x1, 1)
    keep0 = f0 < f1
    f_min = np.where(keep0, f0, f1)
    x_min = np.where(keep0[:, None, None], x0, x1)
    g_min = np.where(keep0[:, None, None], g0, g1)

    losses = [f0, f1]
    fmins = [f0, f_min.copy()]
    halvings: list[list[int]] = [[] for _ in range(n)]
    x_prev, x_cur, g_cur = x0, x1, g1
    last_ck = 0
    halved_last = np.zeros(n, dtype=bool)

    for it in range(1, cfg.n_iter):
        e = eta[:, None, None]
        z = proj(x_cur - e * _direction(g_cur, mode))
        x_new = proj(x_cur + alpha * (z - x_cur) + (1 - alpha) * (x_cur - x_prev))
        f_new, g_new = obj(x_new, it + 1)
        better = f_new < f_min
        f_min = np.where(better, f_new, f_min)
        x_min = np.where(better[:, None, None], x_new, x_min)
        g_min = np.where(better[:, None, None], g_new, g_min)
        losses.append(f_new)
        fmins.append(f_min.copy())
        x_prev, x_cur, g_cur = x_cur, x_new, g_new

        if it in checkpoints:
            hist = np.stack(losses[last_ck:it + 1], axis=1)
            n_improved = (hist[:, 1:] < hist[:, :-1]).sum(axis=1)
            cond1 = n_improved < rho * (it - last_ck)
            cond2 = ~halved_last & (fmins[last_ck] == fmins[it])
            reduce = cond1 | cond2
            if reduce.any():
                eta = np.where(reduce, eta / 2, eta)
                m = reduce[:, None, None]
                x_cur = np.where(m, x_min, x_cur)
                g_cur = np.where(m, g_min, g_cur)
                losses[-1] = np.where(reduce, f_min, f_new)
                for i in np.flatnonzero(reduce):
                    halvings[i].append(it)
            halved_last = reduce
            last_ck = it

    out = BatchOutcome(x_min, obj.sign * f_min, halvings=halvings)
    if cfg.record_trace:
        out.loss_trace = obj.sign * np.stack(losses, axis=1)
        out.fmin_trace = obj.sign * np.stack(fmins, axis=1)
    return out


def run_batch(model: ForecastModel, x0, target, cfg: AttackConfig, ascend: bool = False
              ) -> BatchOutcome:
    if cfg.method == "fgsm":
        out = fgsm(model, x0, target, cfg.epsilon, ascend, cfg.clip_range)
        out.halvings = [[] for _ in range(len(out.x_adv))]
        return out
    if cfg.method == "pgd":
        return pgd(model, x0, target, cfg, ascend)
    return mapgd_tsf(model, x0, target, cfg, ascend)


@dataclass
class AttackResult:
    """Outcome of attacking every window of a dataset with one configuration."""

    method: str
    epsilon: float
    target_spec: dict
    untargeted: bool
    config: dict
    origin: np.ndarray
    x_clean: np.ndarray
    x_adv: np.ndarray
    y_true: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    target: np.ndarray
    attacked: np.ndarray  # bool per window
    final_loss: np.ndarray
    halvings: list[list[int]]
    loss_trace: list | None = None
    errors: list[dict] = field(default_factory=list)
    target_source: str = "clean_prediction"

    @property
    def linf(self) -> np.ndarray:
        d = np.abs(self.x_adv - self.x_clean)
        return d.reshape(len(d), -1).max(axis=1) if d.size else np.zeros(0)

    @property
    def l2(self) -> np.ndarray:
        d = self.x_adv - self.x_clean
        return np.sqrt((d * d).reshape(len(d), -1).sum(axis=1))

    @property
    def label(self) -> str:
        return self.target_spec.get("label", "untargeted")

    def to_dict(self) -> dict:
        linf, l2 = self.linf, self.l2
        windows = []
        for i in range(len(self.origin)):
            rec = {
                "index": i,
                "origin": int(self.origin[i]),
                "attacked": bool(self.attacked[i]),
                "y_true": float(self.y_true[i]),
                "clean_pred": float(self.clean_pred[i]),
                "adv_pred": float(self.adv_pred[i]),
                "target": float(self.target[i]),
                "final_loss": float(self.final_loss[i]),
                "linf": float(linf[i]),
                "l2": float(l2[i]),
                "x_clean": self.x_clean[i].tolist(),
                "x_adv": self.x_adv[i].tolist(),
                "halvings": list(self.halvings[i]),
            }
            if self.loss_trace is not None:
                rec["loss_trace"] = [float(v) for v in self.loss_trace[i]]
            windows.append(rec)
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tsattack.attack_result",
            "method": self.method,
            "epsilon": self.epsilon,
            "untargeted": self.untargeted,
            "target_spec": self.target_spec,
            "target_source": self.target_source,
            "config": self.config,
            "errors": self.errors,
            "windows": windows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackResult":
        if d.get("kind") != "tsattack.attack_result":
            raise DataError("not an attack result file")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported attack result schema_version {d.get('schema_version')}")
        w = d["windows"]
        col = lambda k: np.asarray([r[k] for r in w], dtype=np.float64)
        shape_of = lambda k: np.asarray([r[k] for r in w], dtype=np.float64)
        traces = [r["loss_trace"] for r in w] if w and "loss_trace" in w[0] else None
        return cls(
            method=d["method"], epsilon=d["epsilon"], target_spec=d["target_spec"],
            untargeted=d["untargeted"], config=d["config"],
            origin=np.asarray([r["origin"] for r in w], dtype=np.int64),
            x_clean=shape_of("x_clean"), x_adv=shape_of("x_adv"),
            y_true=col("y_true"), clean_pred=col("clean_pred"), adv_pred=col("adv_pred"),
            target=col("target"), attacked=np.asarray([r["attacked"] for r in w], dtype=bool),
            final_loss=col("final_loss"), halvings=[list(r["halvings"]) for r in w],
            loss_trace=traces, errors=list(d.get("errors", [])),
            target_source=d.get("target_source", "clean_prediction"),
        )

    def csv_rows(self) -> list[tuple]:
        linf, l2 = self.linf, self.l2
        return [(i, float(self.clean_pred[i]), float(self.adv_pred[i]), float(self.target[i]),
                 float(linf[i]), float(l2[i]), float(self.final_loss[i]))
                for i in range(len(self.origin))]

    def save(self, json_path, csv_path=None) -> None:
        atomic_write_text(json_path, dumps_json(self.to_dict()))
        if csv_path is not None:
            atomic_write_text(csv_path, csv_text(RESULT_CSV_HEADER, self.csv_rows()))

    @classmethod
    def load(cls, path) -> "AttackResult":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such attack result: {path}")
        return cls.from_dict(read_json(path))


RESULT_CSV_HEADER = ("window_index", "clean_pred", "adv_pred", "target", "linf_dist",
                     "l2_dist", "final_loss")


def attack_dataset(model: ForecastModel, dataset: WindowedDataset, spec: AttackTargetSpec,
                   cfg: AttackConfig) -> AttackResult:
    """Attack every window of ``dataset`` independently.

    Targets come from the model's clean predictions.  In targeted mode,
    windows whose target equals their clean prediction are left untouched.
    A window whose loss or gradient turns non-finite keeps its clean input
    and is listed in ``errors``; the remaining windows are still attacked.
    """
    X = dataset.X
    clean = model.predict(X)
    tseq: TargetSequence = build_target(spec, clean, dataset.y)
    ascend = tseq.ascend
    target = tseq.values
    attacked = np.ones(len(X), dtype=bool) if ascend else target != clean

    x_adv = X.copy()
    halvings: list[list[int]] = [[] for _ in range(len(X))]
    traces: list | None = [None] * len(X) if cfg.record_trace and cfg.method != "fgsm" else None
    errors: list[dict] = []
    idx = np.flatnonzero(attacked)

    def store(sub_idx, out: BatchOutcome):
        x_adv[sub_idx] = out.x_adv
        for j, i in enumerate(sub_idx):
            halvings[i] = out.halvings[j] if out.halvings else []
            if traces is not None and out.loss_trace is not None:
                traces[i] = out.loss_trace[j].tolist()

    if len(idx):
        try:
            store(idx, run_batch(model, X[idx], target[idx], cfg, ascend))
        except AttackFailure:
            for i in idx:
                try:
                    store([i], run_batch(model, X[i:i + 1], target[i:i + 1], cfg, ascend))
                except AttackFailure as exc:
                    errors.append({"window": int(i), "iteration": exc.iteration,
                                   "error": str(exc)})

    adv = model.predict(x_adv)
    if traces is not None:
        traces = [t if t is not None else [] for t in traces]
    return AttackResult(
        method=cfg.method, epsilon=float(cfg.epsilon), target_spec=spec.to_dict(),
        untargeted=ascend, config=cfg.to_dict(), origin=dataset.origin.copy(),
        x_clean=X.copy(), x_adv=x_adv, y_true=dataset.y.copy(), clean_pred=clean,
        adv_pred=adv, target=target, attacked=attacked, final_loss=(adv - target) ** 2,
        halvings=halvings, loss_trace=traces, errors=errors,
        target_source="ground_truth" if ascend else "clean_prediction",
    )


def check_invariants(result: AttackResult, slack: float = 1e-9) -> list[int]:
    """Indices of windows violating the epsilon ball or the clip range."""
    lo, hi = result.config.get("clip_range", (0.0, 1.0))
    flat = result.x_adv.reshape(len(result.x_adv), -1)
    bad = (result.linf > result.epsilon + slack) | (flat < lo - slack).any(axis=1) \
        | (flat > hi + slack).any(axis=1)
    return [int(i) for i in np.flatnonzero(bad)]
