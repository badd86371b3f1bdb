"""Adversarial target sequences for directional, amplitudinal and temporal attacks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TARGET_KINDS = ("DTA", "ATA", "TTA", "UNTARGETED")


@dataclass(frozen=True)
class AttackTargetSpec:
    """What the attacker wants the forecasts to look like.

    ``direction`` is +1 (push up) or -1 (push down) for DTA and directional
    TTA.  ``tau`` is the amplitude threshold for ATA and amplitudinal TTA.
    ``window`` is the half-open forecast-index range ``[t1, t2)`` of a TTA,
    and ``inner`` selects ``"DTA"`` or ``"ATA"`` inside that range.
    ``clip`` picks how ATA limits values: ``"upper"`` (min(y, tau)) or
    ``"magnitude"`` (sign(y) * min(|y|, tau)).
    """

    kind: str
    direction: int = 1
    tau: float | None = None
    window: tuple[int, int] | None = None
    inner: str | None = None
    clip: str = "upper"
    name: str | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}")
        uses_dir = self.kind == "DTA" or (self.kind == "TTA" and self.inner == "DTA")
        uses_tau = self.kind == "ATA" or (self.kind == "TTA" and self.inner == "ATA")
        if uses_dir and self.direction not in (1, -1):
            raise ConfigError(f"direction must be +1 or -1, got {self.direction}")
        if uses_tau and (self.tau is None or not math.isfinite(self.tau)):
            raise ConfigError(f"ATA needs a finite tau, got {self.tau}")
        if self.clip not in ("upper", "magnitude"):
            raise ConfigError(f"unknown clip mode {self.clip!r}")
        if self.kind == "TTA":
            if self.inner not in ("DTA", "ATA"):
                raise ConfigError(f"TTA inner kind must be DTA or ATA, got {self.inner!r}")
            if self.window is None or len(self.window) != 2:
                raise ConfigError("TTA needs a (t1, t2) window")
            t1, t2 = self.window
            if not 0 <= t1 < t2:
                raise ConfigError(f"TTA window needs 0 <= t1 < t2, got {self.window}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "DTA":
            return "dta-up" if self.direction > 0 else "dta-down"
        if self.kind == "ATA":
            return "ata"
        if self.kind == "TTA":
            if self.inner == "ATA":
                return "tta-amp"
            return "tta-up" if self.direction > 0 else "tta-down"
        return "untargeted"

    @property
    def untargeted(self) -> bool:
        return self.kind == "UNTARGETED"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "direction": self.direction, "tau": self.tau,
                "window": list(self.window) if self.window else None, "inner": self.inner,
                "clip": self.clip, "label": self.label}


@dataclass(frozen=True)
class TargetSequence:
    values: np.ndarray
    ascend: bool = False  # maximize the loss against ``values`` instead of minimizing


def dta_target(y, direction: int) -> TargetSequence:
    """``y + direction * |y|``."""
    if direction not in (1, -1):
        raise ConfigError(f"direction must be +1 or -1, got {direction}")
    y = np.asarray(y, dtype=np.float64)
    return TargetSequence(y + direction * np.abs(y))


def ata_target(y, tau: float, clip: str = "upper") -> TargetSequence:
    """Limit forecasts to ``tau``: ``min(y, tau)`` by default."""
    if not math.isfinite(tau):
        raise ConfigError(f"tau must be finite, got {tau}")
    y = np.asarray(y, dtype=np.float64)
    if clip == "upper":
        return TargetSequence(np.minimum(y, tau))
    if clip == "magnitude":
        return TargetSequence(np.sign(y) * np.minimum(np.abs(y), tau))
    raise ConfigError(f"unknown clip mode {clip!r}")


def tta_target(y, window: tuple[int, int], inner: AttackTargetSpec) -> TargetSequence:
    """Apply the inner DTA/ATA target on ``[t1, t2)``; identity elsewhere."""
    y = np.asarray(y, dtype=np.float64)
    t1, t2 = window
    if not 0 <= t1 < t2 <= len(y):
        raise ConfigError(f"TTA window {window} out of range for {len(y)} forecasts")
    if inner.kind == "DTA":
        part = dta_target(y[t1:t2], inner.direction).values
    elif inner.kind == "ATA":
        part = ata_target(y[t1:t2], inner.tau, inner.clip).values
    else:
        raise ConfigError(f"TTA inner kind must be DTA or ATA, got {inner.kind}")
    out = y.copy()
    out[t1:t2] = part
    return TargetSequence(out)


def untargeted_reference(y) -> TargetSequence:
    """The reference itself, flagged so attacks ascend the loss against it."""
    return TargetSequence(np.asarray(y, dtype=np.float64).copy(), ascend=True)


def build_target(spec: AttackTargetSpec, y_clean, y_true=None) -> TargetSequence:
    """Target sequence for ``spec`` built from the clean predictions.

    Untargeted attacks push away from the ground truth ``y_true`` when given,
    since the loss against the clean prediction has a zero gradient at the
    clean input.
    """
    if spec.kind == "DTA":
        return dta_target(y_clean, spec.direction)
    if spec.kind == "ATA":
        return ata_target(y_clean, spec.tau, spec.clip)
    if spec.kind == "TTA":
        inner = AttackTargetSpec(spec.inner, direction=spec.direction, tau=spec.tau,
                                 clip=spec.clip)
        return tta_target(y_clean, spec.window, inner)
    return untargeted_reference(y_clean if y_true is None else y_true)
