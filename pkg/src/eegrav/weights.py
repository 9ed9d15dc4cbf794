"""Spatial coupling weights, distance-decay kernels and lag-weight schemes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import poisson

POWER = "power"
EXP_NORMAL = "exp-normal"
EXP_SQRT = "exp-sqrt"
EXPONENTIAL = "exp"
KERNELS = (POWER, EXP_NORMAL, EXP_SQRT, EXPONENTIAL)

GEOMETRIC = "geometric"
TRIANGULAR = "triangular"
SHIFTED_POISSON = "poisson"
SINGLE = "single"
LAG_SCHEMES = (GEOMETRIC, TRIANGULAR, SHIFTED_POISSON, SINGLE)


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class DecayKernel:
    """Distance decay ``f(d)``; ``scale`` is the distance unit the decay rate refers to."""

    kind: str
    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise WeightError(f"unknown decay kernel {self.kind!r}; choose from {KERNELS}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise WeightError("decay parameter alpha must be finite and >= 0")
        if self.scale <= 0:
            raise WeightError("distance scale must be positive")

    def __call__(self, d):
        return decay_apply(self, d)


def decay_apply(kernel: DecayKernel, d) -> np.ndarray:
    """Evaluate the decay kernel elementwise on a distance array."""
    x = np.asarray(d, dtype=float) / kernel.scale
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise WeightError("distances must be nonnegative numbers")
    a = kernel.alpha
    if kernel.kind == POWER:
        if np.any(x == 0):
            raise WeightError("power decay undefined at zero distance")
        return x ** (-a)
    if kernel.kind == EXP_NORMAL:
        return np.exp(-a * x * x)
    if kernel.kind == EXP_SQRT:
        return np.exp(-a * np.sqrt(x))
    return np.exp(-a * x)


def normalize_rows(raw, unit_ids: Sequence | None = None) -> np.ndarray:
    """Divide every row (source unit) by its total.

    Raises WeightError naming the first unit whose row carries no weight.
    """
    w = np.asarray(raw, dtype=float)
    if w.ndim != 2 or np.any(w < 0) or np.any(~np.isfinite(w)):
        raise WeightError("raw weights must be a finite nonnegative matrix")
    tot = w.sum(axis=1)
    bad = np.flatnonzero(tot <= 0)
    if bad.size:
        name = unit_ids[bad[0]] if unit_ids is not None else int(bad[0])
        raise WeightError(f"isolated unit {name}: its weight row is all zero")
    return w / tot[:, None]


def powerlaw_weights(o, rho: float) -> np.ndarray:
    """``(o + 1) ** rho`` elementwise; the diagonal (o = 0) is always 1."""
    o = np.asarray(o, dtype=float)
    if np.any(o < 0):
        raise WeightError("path distances must be nonnegative")
    with np.errstate(over="ignore"):
        return (o + 1.0) ** rho


def adjacency_lag1_weights(structure) -> np.ndarray:
    """First-order neighbour indicator with zero diagonal."""
    return (np.asarray(structure.path_distance) == 1).astype(float)


@dataclass(frozen=True)
class CouplingMatrix:
    raw: np.ndarray
    normalized: np.ndarray
    rho: float | None = None

    @classmethod
    def from_raw(cls, raw, rho=None, unit_ids=None) -> "CouplingMatrix":
        raw = np.array(raw, dtype=float)
        norm = normalize_rows(raw, unit_ids)
        raw.setflags(write=False)
        norm.setflags(write=False)
        return cls(raw, norm, rho)


@dataclass(frozen=True)
class LagWeights:
    scheme: str
    max_lag: int
    weights: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.weights, dtype=float)
        if u.shape != (self.max_lag,) or np.any(u < 0):
            raise WeightError("lag weights must be D nonnegative values")
        u.setflags(write=False)
        object.__setattr__(self, "weights", u)


def lag_weights(scheme: str = SINGLE, max_lag: int = 1, *, p: float | None = None,
                kappa: float | None = None) -> LagWeights:
    """Normalised weights u_1..u_D for the autoregressive lags.

    geometric: u_d ~ p (1-p)^(d-1); triangular: u_d ~ D + 1 - d;
    poisson: u_d ~ Poisson pmf at d - 1 with mean kappa; single: D = 1, u = [1].
    """
    D = int(max_lag)
    if D < 1:
        raise WeightError("maximum lag D must be >= 1")
    d = np.arange(1, D + 1, dtype=float)
    if scheme == SINGLE:
        if D != 1:
            raise WeightError("single-lag scheme requires D = 1")
        mass = np.ones(1)
    elif scheme == GEOMETRIC:
        if p is None or not 0 < p < 1:
            raise WeightError("geometric lag weights need 0 < p < 1")
        mass = p * (1 - p) ** (d - 1)
    elif scheme == TRIANGULAR:
        mass = D + 1 - d
    elif scheme == SHIFTED_POISSON:
        if kappa is None or not kappa > 0:
            raise WeightError("shifted Poisson lag weights need kappa > 0")
        mass = poisson.pmf(d - 1, kappa)
    else:
        raise WeightError(f"unknown lag scheme {scheme!r}; choose from {LAG_SCHEMES}")
    u = mass / mass.sum()
    # nudge the largest weight until the correctly rounded sum is exactly 1.0
    top = int(np.argmax(u))
    u[top] = 1.0 - math.fsum(np.delete(u, top))
    for _ in range(64):
        total = math.fsum(u)
        if total == 1.0:
            break
        u[top] = np.nextafter(u[top], -np.inf if total > 1.0 else np.inf)
    return LagWeights(scheme, D, u)
