"""Forward simulation of count panels and synthetic spatial fixtures."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__, kernels
from .likelihood import EPS, _Context, _predictor, coupling_matrix, traffic_design
from .panel import (
    DAILY, MONTHLY, CountPanel, CovariateCube, SpatialStructure, TimeAxis, UnitIndex, _add_months,
)
from .spec import (
    EE, GRAVITY, LOG, ModelSpec, build_layout, dims_for, pack, spec_from_dict, unpack,
)

MU_LIMIT = 1e9
RNG_NAME = "numpy.random.Philox"


class SimulationError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the stream depends only on the seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def nb_draw(mu, psi, rng: np.random.Generator) -> np.ndarray:
    """Negative binomial draws with mean mu and variance mu (1 + psi mu).

    Gamma-Poisson mixture; psi below the Poisson threshold draws Poisson(mu).
    Scalars in, scalar out.
    """
    mu_a = np.asarray(mu, dtype=float)
    psi_a = np.broadcast_to(np.asarray(psi, dtype=float), mu_a.shape)
    if np.any(~(mu_a > 0)) or not np.all(np.isfinite(mu_a)):
        raise ValueError("nb_draw needs finite mu > 0")
    if np.any(psi_a < 0):
        raise ValueError("nb_draw needs psi >= 0")
    rate = mu_a.copy()
    mix = psi_a >= kernels.POISSON_PSI
    if np.any(mix):
        p = psi_a[mix]
        rate[mix] = rng.gamma(1.0 / p, p * mu_a[mix])
    out = np.asarray(rng.poisson(rate))
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, dt.date):
        return x.isoformat()
    return x


@dataclass(frozen=True)
class SimConfig:
    spec: ModelSpec
    params: dict
    axis: TimeAxis
    units: UnitIndex
    seed: int = 0
    burn_in: int | None = None
    initial_history: object = None     # None: Poisson(endemic mean at the first step)
    decay: float | None = None         # alpha / rho when the model leaves it profiled
    eps: float = EPS

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    @property
    def steps_discarded(self) -> int:
        if self.burn_in is not None:
            return int(self.burn_in)
        return 50 if self.spec.family == EE else 0

    def to_dict(self) -> dict:
        ih = self.initial_history
        return _jsonable({
            "spec": self.spec.to_dict(),
            "params": {k: np.asarray(v, dtype=float).tolist() for k, v in self.params.items()},
            "axis": {"resolution": self.axis.resolution, "origin": self.axis.origin,
                     "length": self.axis.length},
            "units": {"ids": list(self.units.unit_ids), "regions": list(self.units.unit_regions)},
            "seed": int(self.seed),
            "burn_in": self.burn_in,
            "initial_history": None if ih is None else np.asarray(ih).tolist(),
            "decay": self.decay,
            "eps": self.eps,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {"spec", "params", "axis", "units", "seed", "burn_in", "initial_history",
                 "decay", "eps"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown simulation keys {sorted(extra)}")
        ax = d["axis"]
        origin = ax["origin"]
        if isinstance(origin, str):
            origin = dt.date.fromisoformat(origin if len(origin) > 7 else origin + "-01")
        return cls(
            spec=spec_from_dict(d["spec"]),
            params={k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
            axis=TimeAxis(ax["resolution"], origin, int(ax["length"])),
            units=UnitIndex(d["units"]["ids"], d["units"]["regions"]),
            seed=int(d.get("seed", 0)),
            burn_in=d.get("burn_in"),
            initial_history=d.get("initial_history"),
            decay=d.get("decay"),
            eps=float(d.get("eps", EPS)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def natural_params(layout, params: dict) -> dict:
    """Validated natural parameters; log-parametrised values may be exactly 0 here."""
    probe, zeros = dict(params), {}
    for seg in layout.segments:
        if seg.transform == LOG and seg.name in params:
            v = np.asarray(params[seg.name], dtype=float)
            if np.any(v == 0):
                zeros[seg.name] = v
                probe[seg.name] = np.where(v == 0, 1.0, v)
    nat = unpack(layout, pack(layout, probe))
    for name, v in zeros.items():
        nat[name] = v.reshape(nat[name].shape).copy()
    return nat


def _shift_axis(axis: TimeAxis, back: int) -> TimeAxis:
    if back == 0:
        return axis
    if axis.resolution == DAILY:
        origin = axis.origin - dt.timedelta(days=back)
    else:
        origin = _add_months(axis.origin, -back)
    return TimeAxis(axis.resolution, origin, axis.length + back)


def _initial_history(cfg: SimConfig, endemic_first, D, rng):
    P = cfg.units.n_units
    if cfg.initial_history is None:
        return rng.poisson(np.repeat(endemic_first[:, None], D, axis=1)).astype(float)
    h = np.asarray(cfg.initial_history, dtype=float)
    if h.ndim == 0:
        h = np.full((P, D), float(h))
    elif h.ndim == 1 and h.size == P:
        h = np.repeat(h[:, None], D, axis=1)
    if h.shape != (P, D):
        raise ValueError(f"initial history must be {P} x {D}")
    if np.any(h < 0) or np.any(h != np.round(h)):
        raise ValueError("initial history must hold nonnegative integers")
    return np.array(h, dtype=float)


def _guard(mu, cfg: SimConfig, col: int, burn: int):
    bad = ~(mu <= MU_LIMIT)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise SimulationError(
            f"non-stationary parameters: mean {mu[i]:.3g} at unit {cfg.units.unit_ids[i]}, "
            f"time {col - burn + 1}")


def simulate(cfg: SimConfig, structure: SpatialStructure | None = None,
             cube: CovariateCube | None = None) -> CountPanel:
    """Draw a panel from the model; burn-in steps are simulated and discarded."""
    spec = cfg.spec
    P, T = cfg.units.n_units, cfg.axis.length
    shell = CountPanel(cfg.axis, cfg.units, np.zeros((P, T), dtype=np.int64))
    dims = dims_for(spec, shell, structure)
    layout = build_layout(spec, dims)
    nat = natural_params(layout, cfg.params)
    burn = cfg.steps_discarded
    L = T + burn
    ext = _shift_axis(cfg.axis, burn)
    traffic = None
    if spec.family == GRAVITY and spec.gravity.traffic:
        alpha = spec.gravity.alpha if spec.gravity.alpha is not None else cfg.decay
        if alpha is None:
            raise ValueError("gravity simulation needs alpha (spec or decay=)")
        G, _ = traffic_design(spec, shell, structure, cube, alpha)
        # burn-in steps reuse the first month's traffic; they are discarded anyway
        traffic = np.concatenate([np.repeat(G[:, :1], burn, axis=1), G], axis=1)
    ctx = _Context(
        spec=spec,
        unit_region=dims.unit_region,
        n_regions=dims.n_regions,
        tau=np.arange(1 - burn, T + 1, dtype=float),
        months=ext.calendar_months(),
        free_offset=spec.burn,
        omega=spec.endemic.frequency(cfg.axis.resolution),
        traffic=traffic,
    )
    eta = _predictor(ctx, nat)
    psi = np.asarray(nat["psi"], dtype=float).ravel()
    psi = np.full(P, psi[0]) if psi.size == 1 else psi
    rng = make_rng(cfg.seed)
    Y = np.zeros((P, L))
    if spec.family == GRAVITY:
        mu = np.exp(eta)
        for c in range(L):
            _guard(mu[:, c], cfg, c, burn)
            Y[:, c] = nb_draw(mu[:, c], psi, rng)
    else:
        endemic = np.exp(eta)
        D = spec.burn
        ep = spec.epidemic
        Y[:, :D] = _initial_history(cfg, endemic[:, 0], D, rng)
        lam = phi = None
        if ep is not None and ep.within is not None:
            lam = np.asarray(nat["lambda"], dtype=float).ravel()
            uw = ep.within.lags.weights().weights
        if ep is not None and ep.between is not None:
            phi = np.asarray(nat["phi"], dtype=float).ravel()
            ub = ep.between.lags.weights().weights
            W = coupling_matrix(spec, structure, cfg.units.unit_ids, cfg.decay)
            WoT = W.T.copy()
            np.fill_diagonal(WoT, 0.0)
        for c in range(D, L):
            mu = endemic[:, c] + cfg.eps
            if lam is not None:
                mu = mu + lam * (Y[:, c - len(uw):c][:, ::-1] @ uw)
            if phi is not None:
                mu = mu + phi * (WoT @ (Y[:, c - len(ub):c][:, ::-1] @ ub))
            _guard(mu, cfg, c, burn)
            Y[:, c] = nb_draw(mu, psi, rng)
    prov = {
        "generator": RNG_NAME,
        "seed": int(cfg.seed),
        "config_sha256": cfg.digest(),
        "burn_in": burn,
        "package_version": __version__,
        "numpy_version": np.__version__,
    }
    return CountPanel(cfg.axis, cfg.units, Y[:, burn:].astype(np.int64), prov)


# ---------------------------------------------------------------------------
# synthetic geography


@dataclass(frozen=True)
class World:
    units: UnitIndex
    structure: SpatialStructure
    cube: CovariateCube
    coords: np.ndarray = field(repr=False, default=None)


def synthetic_world(n_regions: int = 3, districts_per_region: int = 8, airports_per_region: int = 2,
                    *, start: dt.date = dt.date(2020, 1, 1), n_months: int = 36,
                    spacing_km: float = 40.0, step_sd: float = 0.25, seed: int = 0) -> World:
    """Regions of districts on small grids, airports inside each region, monthly traffic.

    Districts of a region sit on a 2-row grid ``spacing_km`` apart and are
    grid-adjacent; consecutive regions are joined by one edge so the whole
    map is connected. Passenger series are log-normal random walks.
    """
    if districts_per_region < 2:
        raise ValueError("need at least two districts per region")
    rng = make_rng(seed)
    ids, regs, xy = [], [], []
    cols = (districts_per_region + 1) // 2
    for r in range(n_regions):
        ox = r * (cols + 3) * spacing_km
        for j in range(districts_per_region):
            ids.append(f"R{r + 1}D{j + 1}")
            regs.append(f"R{r + 1}")
            xy.append((ox + (j // 2) * spacing_km, (j % 2) * spacing_km))
    xy = np.array(xy)
    P = len(ids)
    adj = np.zeros((P, P), dtype=bool)
    for a in range(P):
        for b in range(a + 1, P):
            if regs[a] == regs[b] and abs(np.hypot(*(xy[a] - xy[b])) - spacing_km) < 1e-9:
                adj[a, b] = adj[b, a] = True
    for r in range(n_regions - 1):
        a = (r + 1) * districts_per_region - 1
        adj[a, a + 1] = adj[a + 1, a] = True
    air_ids, air_regs, air_xy = [], [], []
    for r in range(n_regions):
        members = xy[np.array(regs) == f"R{r + 1}"]
        lo, hi = members.min(axis=0), members.max(axis=0)
        for k in range(airports_per_region):
            air_ids.append(f"A{r + 1}{chr(ord('a') + k)}")
            air_regs.append(f"R{r + 1}")
            air_xy.append(lo + rng.uniform(0, 1, 2) * (hi - lo))
    air_xy = np.array(air_xy)
    dist = np.hypot(xy[:, None, 0] - air_xy[None, :, 0], xy[:, None, 1] - air_xy[None, :, 1])
    dist = np.round(np.maximum(dist, 1.0), 3)
    K = len(air_ids)
    level = rng.uniform(np.log(2e4), np.log(5e5), K)
    steps = rng.normal(0.0, step_sd, (K, n_months))
    passengers = np.round(np.exp(level[:, None] + np.cumsum(steps, axis=1)))
    axis = TimeAxis(MONTHLY, start, n_months)
    structure = SpatialStructure.from_adjacency(
        adj, airport_ids=air_ids, airport_regions=air_regs, airport_distance=dist)
    cube = CovariateCube(air_ids, axis.month_keys(), passengers)
    return World(UnitIndex(ids, regs), structure, cube, xy)
