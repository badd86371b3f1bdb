"""Loss distributions, two-sample KS statistics, sweeps and a perturbation detector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import kolmogorov

from .attacks import AttackConfig, AttackResult, attack_dataset
from .data import WindowedDataset
from .errors import DataError, ShapeError
from .models import ForecastModel
from .targets import AttackTargetSpec

LABELS = ("original", "targeted", "untargeted")
KS_PAIRS = ("O-T", "O-U", "T-U")


@dataclass
class LossDistribution:
    values: np.ndarray
    label: str
    group_size: int
    n_forecasts: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if (self.values < 0).any():
            raise DataError("RMSE values must be non-negative")

    def __len__(self) -> int:
        return len(self.values)


def grouped_rmse(pred, ref, group_size: int = 5, label: str = "original") -> LossDistribution:
    """RMSE over consecutive groups of ``group_size`` forecasts; a trailing partial
    group is dropped."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 1:
        raise ShapeError(f"grouped_rmse: lengths {pred.shape} and {ref.shape} differ")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    k = len(pred) // group_size
    d = (pred[: k * group_size] - ref[: k * group_size]).reshape(k, group_size)
    return LossDistribution(np.sqrt((d * d).mean(axis=1)), label, group_size, len(pred))


def ks_statistic(a, b) -> float:
    """Two-sample KS distance ``sup_x |F_a(x) - F_b(x)|``.

    Both samples are sorted once; the empirical CDFs are evaluated at every
    pooled observation via binary search (the sorted merge).
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise DataError("KS statistic needs two non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_pvalue(d: float, n: int, m: int) -> float:
    """Asymptotic two-sided p-value ``Q_KS((sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D)``
    with ``ne = n m / (n + m)`` and ``Q_KS`` the Kolmogorov survival function."""
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be >= 1")
    en = math.sqrt(n * m / (n + m))
    lam = (en + 0.12 + 0.11 / en) * d
    return float(min(1.0, max(0.0, kolmogorov(lam))))


@dataclass
class KSReport:
    statistics: dict[str, float]
    sizes: dict[str, int]
    pvalues: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"statistics": dict(self.statistics), "sizes": dict(self.sizes),
                "pvalues": dict(self.pvalues)}


def ks_table(original: LossDistribution, targeted: LossDistribution,
             untargeted: LossDistribution) -> KSReport:
    """Pairwise KS distances; smaller means closer distributions."""
    dists = {"O": original, "T": targeted, "U": untargeted}
    if len({(d.group_size, d.n_forecasts) for d in dists.values()}) != 1:
        raise DataError("loss distributions were built with different groupings")
    stats, pvals = {}, {}
    for pair in KS_PAIRS:
        a, b = dists[pair[0]], dists[pair[2]]
        stats[pair] = ks_statistic(a.values, b.values)
        pvals[pair] = ks_pvalue(stats[pair], len(a), len(b))
    return KSReport(stats, {k: len(v) for k, v in dists.items()}, pvals)


def loss_distributions(targeted: AttackResult, untargeted: AttackResult, group_size: int = 5,
                       reference: str = "truth") -> tuple[LossDistribution, ...]:
    """Original / targeted / untargeted grouped RMSE, against the ground truth by
    default or against the clean predictions with ``reference="clean"``."""
    if not np.array_equal(targeted.origin, untargeted.origin):
        raise DataError("targeted and untargeted results cover different windows")
    ref = targeted.y_true if reference == "truth" else targeted.clean_pred
    return (grouped_rmse(targeted.clean_pred, ref, group_size, "original"),
            grouped_rmse(targeted.adv_pred, ref, group_size, "targeted"),
            grouped_rmse(untargeted.adv_pred, ref, group_size, "untargeted"))


def histogram(dists: Sequence[LossDistribution], bins: int = 20
              ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Equal-width counts over edges shared by all ``dists``."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    pooled = np.concatenate([d.values for d in dists])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    return edges, {d.label: np.histogram(d.values, bins=edges)[0] for d in dists}


def high_freq_ratio(x0, x_adv) -> float:
    """First-difference energy of the perturbation over that of the clean window,
    per feature along time, averaged over features.

    Returns ``inf`` when a feature's clean window is constant but its
    perturbation is not.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x0.shape != x_adv.shape:
        raise ShapeError(f"high_freq_ratio: shapes {x0.shape} and {x_adv.shape} differ")
    if x0.ndim == 1:
        x0, x_adv = x0[:, None], x_adv[:, None]
    de = (np.diff(x_adv - x0, axis=0) ** 2).sum(axis=0)
    ce = (np.diff(x0, axis=0) ** 2).sum(axis=0)
    ratios = []
    for num, den in zip(de, ce):
        if num == 0:
            ratios.append(0.0)
        elif den == 0:
            return math.inf
        else:
            ratios.append(num / den)
    return float(np.mean(ratios))


@dataclass
class SweepPoint:
    method: str
    epsilon: float
    output_rmse: float  # adversarial vs clean predictions
    output_rmse_truth: float  # adversarial predictions vs ground truth
    mean_l2: float
    mean_linf: float


@dataclass
class SweepCurve:
    method: str
    target: str
    points: list[SweepPoint]

    @property
    def epsilons(self) -> list[float]:
        return [p.epsilon for p in self.points]


def sweep_point(result: AttackResult) -> SweepPoint:
    shift = result.adv_pred - result.clean_pred
    err = result.adv_pred - result.y_true
    return SweepPoint(result.method, result.epsilon, float(np.sqrt(np.mean(shift ** 2))),
                      float(np.sqrt(np.mean(err ** 2))), float(result.l2.mean()),
                      float(result.linf.mean()))


def sweep(model: ForecastModel, dataset: WindowedDataset, spec: AttackTargetSpec,
          methods: Iterable[str], epsilons: Sequence[float],
          base: AttackConfig | None = None) -> dict[str, SweepCurve]:
    """Attack at every ``(method, epsilon)`` and record output shift and input distance."""
    base = base or AttackConfig()
    curves = {}
    for method in methods:
        pts = []
        for eps in epsilons:
            cfg = _with(base, method=method, epsilon=float(eps))
            pts.append(sweep_point(attack_dataset(model, dataset, spec, cfg)))
        curves[method] = SweepCurve(method, spec.label, pts)
    return curves


def _with(cfg: AttackConfig, **changes) -> AttackConfig:
    d = {k: getattr(cfg, k) for k in AttackConfig.__dataclass_fields__}
    d.update(changes)
    return AttackConfig(**d)


def mean_shift(result: AttackResult, mask: np.ndarray | None = None) -> float:
    d = result.adv_pred - result.clean_pred
    return float(d[mask].mean() if mask is not None else d.mean())


def detection_rates(results: Mapping[str, AttackResult]) -> dict[str, float]:
    """Mean high-frequency ratio of the attacked windows per result label."""
    out = {}
    for key, res in results.items():
        vals = [high_freq_ratio(res.x_clean[i], res.x_adv[i])
                for i in np.flatnonzero(res.attacked)]
        finite = [v for v in vals if math.isfinite(v)]
        out[key] = float(np.mean(finite)) if finite else 0.0
    return out
