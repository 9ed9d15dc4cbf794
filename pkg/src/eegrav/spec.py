"""Declarative model descriptions (ModelSpec) and the packed parameter layout.

A ``ModelSpec`` describes one member of either family:

* ``ee``: additive endemic-epidemic autoregression,
  ``mu = lambda * within + phi * between + nu`` with ``log nu`` linear;
* ``gravity``: log-linear model with endemic, location effects and an
  air-traffic term ``sum_k theta_k f(d_k) X_k``.

Packing maps natural parameters to an unconstrained vector. Positive
parameters are stored as logs, sum-to-zero blocks in an orthonormal
(Helmert) basis of dimension k - 1, and the linear trend scaled by T.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

from .panel import DAILY, MONTHLY, PanelError
from .weights import KERNELS, LAG_SCHEMES, LagWeights, lag_weights

EE = "ee"
GRAVITY = "gravity"

CONSTANT = "constant"
FREE = "free"
SEASONAL = "seasonal"
HARMONIC = "harmonic"
ENDEMIC_KINDS = (CONSTANT, FREE, SEASONAL, HARMONIC)
_ENDEMIC_ALIASES = {
    "FreePerTime": (FREE, False),
    "FreePerRegionTime": (FREE, True),
    "MonthSeasonal": (SEASONAL, False),
    "Harmonic": (HARMONIC, False),
    "Constant": (CONSTANT, False),
}

PER_REGION = "per-region"
COMPOSITE = "composite"

ADJACENCY = "adjacency"
POWERLAW = "powerlaw"


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class EndemicBlock:
    kind: str = FREE
    per_region: bool = False
    omega: float | None = None

    def __post_init__(self):
        if self.kind in _ENDEMIC_ALIASES:
            kind, per_region = _ENDEMIC_ALIASES[self.kind]
            object.__setattr__(self, "kind", kind)
            object.__setattr__(self, "per_region", self.per_region or per_region)
        if self.kind not in ENDEMIC_KINDS:
            raise SpecError(f"unknown endemic kind {self.kind!r}")
        if self.omega is not None and not self.omega > 0:
            raise SpecError("harmonic frequency omega must be > 0")

    def frequency(self, resolution: str) -> float:
        if self.omega is not None:
            return float(self.omega)
        return 2 * math.pi / (365.0 if resolution == DAILY else 12.0)


@dataclass(frozen=True)
class LagSpec:
    scheme: str = "single"
    max_lag: int = 1
    p: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.scheme not in LAG_SCHEMES:
            raise SpecError(f"unknown lag scheme {self.scheme!r}")

    def weights(self) -> LagWeights:
        return lag_weights(self.scheme, self.max_lag, p=self.p, kappa=self.kappa)

    def with_max_lag(self, D: int) -> "LagSpec":
        scheme = self.scheme
        if scheme == "single" and D > 1:
            scheme = "geometric"
        elif D == 1:
            scheme = "single"
        p = self.p if self.p is not None else 0.5
        return replace(self, scheme=scheme, max_lag=D, p=p)


@dataclass(frozen=True)
class CouplingSpec:
    """Between-unit weights: first-order adjacency or power law in hop distance.

    ``rho=None`` with the power law means rho is profiled over ``rho_grid``.
    """

    kind: str = ADJACENCY
    rho: float | None = None
    rho_grid: tuple = (-5.0, 0.0)

    def __post_init__(self):
        if self.kind not in (ADJACENCY, POWERLAW):
            raise SpecError(f"unknown coupling {self.kind!r}")

    @property
    def profiled(self) -> bool:
        return self.kind == POWERLAW and self.rho is None


@dataclass(frozen=True)
class AutoRegression:
    shared: bool = True
    lags: LagSpec = field(default_factory=LagSpec)


@dataclass(frozen=True)
class SpatialAutoRegression(AutoRegression):
    coupling: CouplingSpec = field(default_factory=CouplingSpec)


@dataclass(frozen=True)
class EpidemicBlock:
    within: AutoRegression | None = field(default_factory=AutoRegression)
    between: SpatialAutoRegression | None = field(default_factory=SpatialAutoRegression)

    @property
    def max_lag(self) -> int:
        lags = [b.lags.max_lag for b in (self.within, self.between) if b is not None]
        return max(lags, default=0)


@dataclass(frozen=True)
class GravityBlock:
    """Air-traffic term and level conventions of the gravity family.

    ``alpha=None`` profiles the decay rate over ``alpha_grid`` (log grid,
    rate per ``distance_scale_km``). ``traffic=False`` drops the covariate
    term while keeping everything else, for ablations.
    """

    variant: str = COMPOSITE
    intercept: bool = True
    kernel: str = "exp"
    alpha: float | None = None
    alpha_grid: tuple = (1e-3, 10.0)
    distance_scale_km: float = 100.0
    cross_region: bool = False
    traffic: bool = True

    def __post_init__(self):
        if self.variant not in (PER_REGION, COMPOSITE):
            raise SpecError(f"unknown gravity variant {self.variant!r}")
        if self.kernel not in KERNELS:
            raise SpecError(f"unknown decay kernel {self.kernel!r}")
        if self.alpha is not None and self.alpha < 0:
            raise SpecError("decay alpha must be >= 0")

    @property
    def profiled(self) -> bool:
        return self.traffic and self.alpha is None


@dataclass(frozen=True)
class DispersionSpec:
    shared: bool = True


@dataclass(frozen=True)
class ModelSpec:
    family: str = EE
    endemic: EndemicBlock = field(default_factory=EndemicBlock)
    epidemic: EpidemicBlock | None = None
    gravity: GravityBlock | None = None
    effects: str | None = None
    dispersion: DispersionSpec = field(default_factory=DispersionSpec)
    burn_in: int | None = None

    def __post_init__(self):
        if self.family not in (EE, GRAVITY):
            raise SpecError(f"unknown model family {self.family!r}")
        if self.effects not in (None, "region", "district"):
            raise SpecError("effects must be None, 'region' or 'district'")
        if self.family == GRAVITY:
            g = self.gravity or GravityBlock()
            object.__setattr__(self, "gravity", g)
            if self.epidemic is not None:
                raise SpecError("the gravity family has no autoregressive epidemic block")
            per_region = g.variant == PER_REGION
            if self.endemic.per_region != per_region:
                object.__setattr__(self, "endemic", replace(self.endemic, per_region=per_region))
            if not g.intercept and self.endemic.kind not in (FREE, SEASONAL):
                raise SpecError("without an intercept the endemic block must be free or seasonal")
        elif self.gravity is not None:
            raise SpecError("the ee family has no gravity block")

    @property
    def burn(self) -> int:
        """Leading time points excluded from the likelihood."""
        D = self.epidemic.max_lag if self.epidemic is not None else 0
        if self.burn_in is None:
            return D
        if self.burn_in < D:
            raise SpecError(f"burn-in {self.burn_in} shorter than the maximum lag {D}")
        return int(self.burn_in)

    @property
    def n_profiled(self) -> int:
        n = 0
        if self.gravity is not None and self.gravity.profiled:
            n += 1
        ep = self.epidemic
        if ep is not None and ep.between is not None and ep.between.coupling.profiled:
            n += 1
        return n

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return spec_from_dict(d)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_clean(v) for v in obj]
    return obj


def _build(cls, d, **nested):
    if d is None:
        return None
    if isinstance(d, cls):
        return d
    if not isinstance(d, dict):
        raise SpecError(f"expected a mapping for {cls.__name__}, got {d!r}")
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in nested:
            v = nested[k](v)
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    return cls(**kw)


def spec_from_dict(d: dict) -> ModelSpec:
    """Build a ModelSpec from a plain mapping (parsed configuration file)."""
    lag = lambda v: _build(LagSpec, v)  # noqa: E731
    coupling = lambda v: _build(CouplingSpec, v)  # noqa: E731
    epidemic = lambda v: _build(  # noqa: E731
        EpidemicBlock, v,
        within=lambda w: _build(AutoRegression, w, lags=lag),
        between=lambda b: _build(SpatialAutoRegression, b, lags=lag, coupling=coupling),
    )
    return _build(
        ModelSpec, d,
        endemic=lambda v: _build(EndemicBlock, v),
        epidemic=epidemic,
        gravity=lambda v: _build(GravityBlock, v),
        dispersion=lambda v: _build(DispersionSpec, v),
    )


# ---------------------------------------------------------------------------
# dimensions and layout


@dataclass(frozen=True)
class ModelDims:
    """Data-dependent sizes a spec needs to lay out its parameters."""

    n_units: int
    n_times: int
    burn: int
    resolution: str
    unit_region: np.ndarray
    n_regions: int
    calendar_months: np.ndarray
    airports_per_region: tuple = ()
    n_airports: int = 0

    @property
    def n_eff(self) -> int:
        return self.n_times - self.burn

    @property
    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.unit_region, minlength=self.n_regions)

    @property
    def time_index(self) -> np.ndarray:
        """1-based panel time index of the modelled (post burn-in) cells."""
        return np.arange(self.burn + 1, self.n_times + 1, dtype=float)

    @property
    def modelled_months(self) -> np.ndarray:
        return np.asarray(self.calendar_months)[self.burn:]


def dims_for(spec: ModelSpec, panel, structure=None) -> ModelDims:
    if panel.n_times < 2:
        raise PanelError("a model needs at least two time points")
    burn = spec.burn
    if panel.n_times - burn < 1:
        raise SpecError("burn-in leaves no time points to model")
    if spec.family == GRAVITY and panel.axis.resolution != MONTHLY:
        raise SpecError("gravity models need a monthly panel")
    regions = panel.units.regions
    per_region = ()
    n_airports = 0
    if spec.family == GRAVITY and spec.gravity.traffic:
        if structure is None:
            raise SpecError("the gravity traffic term needs a spatial structure with airports")
        per_region = tuple(int(k) for k in structure.airports_per_region(regions))
        n_airports = structure.n_airports
    return ModelDims(
        n_units=panel.n_units,
        n_times=panel.n_times,
        burn=burn,
        resolution=panel.axis.resolution,
        unit_region=panel.units.region_index(),
        n_regions=len(regions),
        calendar_months=panel.axis.calendar_months(),
        airports_per_region=per_region,
        n_airports=n_airports,
    )


def helmert_basis(k: int) -> np.ndarray:
    """Orthonormal basis (k, k-1) of vectors summing to zero."""
    Q = np.zeros((k, max(k - 1, 0)))
    for j in range(1, k):
        c = 1.0 / math.sqrt(j * (j + 1))
        Q[:j, j - 1] = c
        Q[j, j - 1] = -j * c
    return Q


def nested_basis(groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Orthonormal basis of vectors summing to zero within every group."""
    n = len(groups)
    cols = []
    for g in range(n_groups):
        members = np.flatnonzero(groups == g)
        H = helmert_basis(len(members))
        for c in range(H.shape[1]):
            v = np.zeros(n)
            v[members] = H[:, c]
            cols.append(v)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


LOG = "log"
IDENTITY = "identity"
SCALE = "scale"
CONTRAST = "contrast"


@dataclass(frozen=True)
class Segment:
    """One named block of the packed vector.

    ``contrast`` segments hold ``rows`` independent sum-to-zero vectors,
    each expressed as ``basis @ z``.
    """

    name: str
    transform: str
    shape: tuple
    basis: np.ndarray | None = field(default=None, repr=False, compare=False)
    scale: float = 1.0

    @cached_property
    def size(self) -> int:
        if self.transform == CONTRAST:
            rows = self.shape[0] if len(self.shape) == 2 else 1
            return rows * self.basis.shape[1]
        return math.prod(self.shape)


@dataclass(frozen=True)
class Layout:
    segments: tuple

    @cached_property
    def size(self) -> int:
        return sum(s.size for s in self.segments)

    @cached_property
    def names(self) -> tuple:
        return tuple(s.name for s in self.segments)

    @cached_property
    def _slices(self) -> dict:
        out, i = {}, 0
        for s in self.segments:
            out[s.name] = slice(i, i + s.size)
            i += s.size
        return out

    def slices(self) -> dict:
        return dict(self._slices)

    def segment(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return name in self.names


def _endemic_segments(spec: ModelSpec, dims: ModelDims, carried_level: bool) -> list:
    """Segments of the time-varying endemic term.

    With ``carried_level`` the endemic shape must absorb the level itself
    (no intercept), so free/seasonal blocks are left unconstrained.
    """
    end = spec.endemic
    rows = (dims.n_regions,) if end.per_region else ()
    segs = []
    if end.kind == FREE:
        k = dims.n_eff
    elif end.kind == SEASONAL:
        k = 12
    elif end.kind == HARMONIC:
        segs.append(Segment("trend", SCALE, rows or (1,), scale=float(dims.n_times)))
        segs.append(Segment("sin", IDENTITY, rows or (1,)))
        segs.append(Segment("cos", IDENTITY, rows or (1,)))
        return segs
    else:
        return segs
    name = "nu" if end.kind == FREE else "season"
    if carried_level:
        segs.append(Segment(name, IDENTITY, rows + (k,)))
    else:
        segs.append(Segment(name, CONTRAST, rows + (k,), basis=helmert_basis(k)))
    return segs


def build_layout(spec: ModelSpec, dims: ModelDims) -> Layout:
    segs = []
    has_intercept = spec.family == EE or spec.gravity.intercept
    if has_intercept:
        segs.append(Segment("intercept", IDENTITY, (1,)))
    segs += _endemic_segments(spec, dims, carried_level=not has_intercept)
    region_level = spec.effects is not None or spec.endemic.per_region
    # an unconstrained per-region endemic already carries every region's level
    if region_level and not (spec.endemic.per_region and not has_intercept):
        R = dims.n_regions
        segs.append(Segment("region_effect", CONTRAST, (R,), basis=helmert_basis(R)))
    if spec.effects == "district":
        B = nested_basis(dims.unit_region, dims.n_regions)
        segs.append(Segment("district_effect", CONTRAST, (dims.n_units,), basis=B))
    if spec.family == EE and spec.epidemic is not None:
        P = dims.n_units
        if spec.epidemic.within is not None:
            segs.append(Segment("lambda", LOG, (1,) if spec.epidemic.within.shared else (P,)))
        if spec.epidemic.between is not None:
            segs.append(Segment("phi", LOG, (1,) if spec.epidemic.between.shared else (P,)))
    if spec.family == GRAVITY and spec.gravity.traffic:
        segs.append(Segment("theta", IDENTITY, (theta_size(spec, dims),)))
    segs.append(Segment("psi", LOG, (1,) if spec.dispersion.shared else (dims.n_units,)))
    return Layout(tuple(segs))


def theta_size(spec: ModelSpec, dims: ModelDims) -> int:
    if spec.gravity.cross_region:
        return dims.n_regions * dims.n_airports
    return int(sum(dims.airports_per_region))


def parameter_count(spec: ModelSpec, dims: ModelDims) -> int:
    """Free parameters for AIC: packed length plus one per profiled decay parameter."""
    return build_layout(spec, dims).size + spec.n_profiled


def _contrast_rows(seg: Segment, value: np.ndarray) -> np.ndarray:
    return value.reshape(-1, seg.shape[-1]) if len(seg.shape) == 2 else value.reshape(1, -1)


def pack(layout: Layout, natural: dict) -> np.ndarray:
    """Natural parameters -> unconstrained vector (raises naming the bad parameter)."""
    parts = []
    for seg in layout.segments:
        if seg.name not in natural:
            raise SpecError(f"missing parameter {seg.name!r}")
        v = np.asarray(natural[seg.name], dtype=float)
        if v.size != int(np.prod(seg.shape, dtype=int)):
            raise SpecError(f"parameter {seg.name!r} has {v.size} values, expected shape {seg.shape}")
        v = v.reshape(seg.shape)
        if not np.all(np.isfinite(v)):
            raise SpecError(f"parameter {seg.name!r} must be finite")
        if seg.transform == LOG:
            if np.any(v <= 0):
                raise SpecError(f"parameter {seg.name!r} must be > 0 (log-parametrised)")
            parts.append(np.log(v).ravel())
        elif seg.transform == SCALE:
            parts.append((v * seg.scale).ravel())
        elif seg.transform == CONTRAST:
            rows = _contrast_rows(seg, v)
            z = rows @ seg.basis
            back = z @ seg.basis.T
            tol = 1e-9 * max(1.0, float(np.abs(rows).max(initial=0.0)))
            if np.any(np.abs(back - rows) > tol):
                raise SpecError(f"parameter {seg.name!r} violates its sum-to-zero constraint")
            parts.append(z.ravel())
        else:
            parts.append(v.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(layout: Layout, v) -> dict:
    """Unconstrained vector -> natural parameters (every value is admissible)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (layout.size,):
        raise SpecError(f"parameter vector has length {v.size}, layout expects {layout.size}")
    out = {}
    for seg, sl in zip(layout.segments, layout.slices().values()):
        x = v[sl]
        if seg.transform == LOG:
            out[seg.name] = np.exp(x).reshape(seg.shape)
        elif seg.transform == SCALE:
            out[seg.name] = (x / seg.scale).reshape(seg.shape)
        elif seg.transform == CONTRAST:
            k = seg.basis.shape[1]
            if k == 0:         # a single-member block is identically zero
                out[seg.name] = np.zeros(seg.shape)
            else:
                out[seg.name] = (x.reshape(-1, k) @ seg.basis.T).reshape(seg.shape)
        else:
            out[seg.name] = x.reshape(seg.shape).copy()
    return out


def general_gravity_mean(U, V, d, theta) -> np.ndarray:
    """Log-mean ``theta0 + theta1 U + theta2 V + theta3 d`` of the two-location flow model.

    Exponentiate for the mean itself.
    """
    t0, t1, t2, t3 = (float(x) for x in theta)
    U, V, d = (np.asarray(a, dtype=float) for a in (U, V, d))
    return t0 + t1 * U + t2 * V + t3 * d
