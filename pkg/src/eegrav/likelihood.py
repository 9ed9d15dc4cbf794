"""Conditional means, negative binomial log-likelihood and its exact gradient.

Two mean structures share one log-linear predictor ``eta`` built from the
intercept, endemic shape, location effects and (gravity only) the traffic
term:

* ee:      mu = lambda * sum_d u_d Y[i, t-d]
                + phi * sum_d u_d sum_{j != i} W[j, i] Y[j, t-d]
                + exp(eta) + eps
* gravity: mu = exp(eta)

Gradients are formed with respect to natural parameters and then chained
through the pack transforms (log, scale, orthonormal contrasts).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .panel import CountPanel, SpatialStructure
from .spec import (
    ADJACENCY, CONTRAST, EE, GRAVITY, LOG, SCALE,
    ModelSpec, SpecError, build_layout, dims_for, unpack,
)
from .weights import (
    DecayKernel, WeightError, adjacency_lag1_weights, normalize_rows, powerlaw_weights,
)

EPS = 1e-10


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class MeanSurface:
    """Means on the full (unit, time) grid; ``mask`` marks cells in the likelihood."""

    mu: np.ndarray
    mask: np.ndarray
    log_mu: np.ndarray | None = None


@dataclass(frozen=True)
class LogLik:
    value: float
    per_cell: np.ndarray
    n: int


def harmonic_endemic(t, alpha0, eta, gamma, delta, omega):
    """exp(alpha0 + eta t + gamma sin(omega t) + delta cos(omega t))."""
    if not omega > 0:
        raise LikelihoodError("omega must be > 0")
    t = np.asarray(t, dtype=float)
    return np.exp(alpha0 + eta * t + gamma * np.sin(omega * t) + delta * np.cos(omega * t))


# ---------------------------------------------------------------------------
# shared predictor machinery


@dataclass
class _Context:
    """Index data the log-linear predictor needs on a given time grid."""

    spec: ModelSpec
    unit_region: np.ndarray
    n_regions: int
    tau: np.ndarray          # 1-based panel time of every column
    months: np.ndarray       # calendar month (1..12) of every column
    free_offset: int         # panel time of the first free endemic value, minus one
    omega: float
    traffic: np.ndarray | None = None   # (P, Tc, q)

    def free_columns(self, n_free):
        return np.clip(self.tau.astype(int) - self.free_offset - 1, 0, n_free - 1)


def _endemic_rows(ctx: _Context, x):
    """Broadcast a shared (1,) / per-region (R,) harmonic coefficient to (P, 1)."""
    x = np.asarray(x, dtype=float).ravel()
    if ctx.spec.endemic.per_region:
        return x[ctx.unit_region][:, None]
    return np.full((len(ctx.unit_region), 1), x[0])


def _predictor(ctx: _Context, nat: dict) -> np.ndarray:
    P, Tc = len(ctx.unit_region), len(ctx.tau)
    eta = np.zeros((P, Tc))
    if "intercept" in nat:
        eta += nat["intercept"][0]
    per_region = ctx.spec.endemic.per_region
    if "nu" in nat:
        nu = np.asarray(nat["nu"])
        cols = ctx.free_columns(nu.shape[-1])
        eta += nu[ctx.unit_region][:, cols] if per_region else nu[cols][None, :]
    if "season" in nat:
        s = np.asarray(nat["season"])
        m = ctx.months - 1
        eta += s[ctx.unit_region][:, m] if per_region else s[m][None, :]
    if "trend" in nat:
        t = ctx.tau[None, :]
        eta += (_endemic_rows(ctx, nat["trend"]) * t
                + _endemic_rows(ctx, nat["sin"]) * np.sin(ctx.omega * t)
                + _endemic_rows(ctx, nat["cos"]) * np.cos(ctx.omega * t))
    if "region_effect" in nat:
        eta += np.asarray(nat["region_effect"])[ctx.unit_region][:, None]
    if "district_effect" in nat:
        eta += np.asarray(nat["district_effect"])[:, None]
    if "theta" in nat and ctx.traffic is not None:
        eta += ctx.traffic @ np.asarray(nat["theta"])
    return eta


def _region_sum(ctx: _Context, x):
    """Sum rows of x (P, ...) within regions -> (R, ...)."""
    out = np.zeros((ctx.n_regions,) + x.shape[1:])
    np.add.at(out, ctx.unit_region, x)
    return out


def _predictor_grad(ctx: _Context, nat: dict, w: np.ndarray) -> dict:
    """d loglik / d natural parameter, given w = d loglik / d eta (P, Tc)."""
    g = {}
    per_region = ctx.spec.endemic.per_region
    if "intercept" in nat:
        g["intercept"] = np.array([w.sum()])
    if "nu" in nat:
        n_free = np.asarray(nat["nu"]).shape[-1]
        cols = ctx.free_columns(n_free)
        rows = _region_sum(ctx, w) if per_region else w.sum(axis=0, keepdims=True)
        acc = np.zeros((rows.shape[0], n_free))
        for r in range(rows.shape[0]):
            acc[r] = np.bincount(cols, weights=rows[r], minlength=n_free)
        g["nu"] = acc if per_region else acc[0]
    if "season" in nat:
        rows = _region_sum(ctx, w) if per_region else w.sum(axis=0, keepdims=True)
        acc = np.stack([np.bincount(ctx.months - 1, weights=r, minlength=12) for r in rows])
        g["season"] = acc if per_region else acc[0]
    if "trend" in nat:
        t = ctx.tau[None, :]
        for name, basis in (("trend", t), ("sin", np.sin(ctx.omega * t)),
                            ("cos", np.cos(ctx.omega * t))):
            per_unit = (w * basis).sum(axis=1)
            g[name] = _region_sum(ctx, per_unit) if per_region else np.array([per_unit.sum()])
    if "region_effect" in nat:
        g["region_effect"] = _region_sum(ctx, w.sum(axis=1))
    if "district_effect" in nat:
        g["district_effect"] = w.sum(axis=1)
    if "theta" in nat and ctx.traffic is not None:
        g["theta"] = np.einsum("ptq,pt->q", ctx.traffic, w)
    return g


def _chain(layout, v, nat: dict, gnat: dict) -> np.ndarray:
    """Natural-parameter gradient -> gradient in the packed coordinates."""
    out = np.zeros(layout.size)
    for seg, sl in zip(layout.segments, layout.slices().values()):
        if seg.name not in gnat:
            continue
        gn = np.asarray(gnat[seg.name], dtype=float).reshape(seg.shape)
        if seg.transform == LOG:
            out[sl] = (gn * nat[seg.name]).ravel()
        elif seg.transform == SCALE:
            out[sl] = (gn / seg.scale).ravel()
        elif seg.transform == CONTRAST:
            rows = gn.reshape(-1, seg.shape[-1])
            out[sl] = (rows @ seg.basis).ravel()
        else:
            out[sl] = gn.ravel()
    return out


# ---------------------------------------------------------------------------
# coupling and traffic designs


def coupling_matrix(spec: ModelSpec, structure: SpatialStructure, unit_ids, rho=None) -> np.ndarray:
    """Row-normalised between-unit weights for an ee spec."""
    cs = spec.epidemic.between.coupling
    if cs.kind == ADJACENCY:
        raw = adjacency_lag1_weights(structure)
    else:
        r = cs.rho if cs.rho is not None else rho
        if r is None:
            raise SpecError("power-law coupling needs rho (fixed or profiled)")
        raw = powerlaw_weights(structure.path_distance, r)
        raw = np.where(np.isfinite(raw), raw, 0.0)
    return normalize_rows(raw, unit_ids)


def traffic_design(spec: ModelSpec, panel: CountPanel, structure: SpatialStructure,
                   cube, alpha: float) -> tuple[np.ndarray, list]:
    """Design (P, T, q) holding f_alpha(d) * X for every theta column, plus column labels."""
    g = spec.gravity
    regions = panel.units.regions
    region_of = panel.units.region_index()
    X = cube.aligned(panel.axis, structure.airport_ids)        # (K, T)
    kern = DecayKernel(g.kernel, alpha, g.distance_scale_km)
    dist = structure.airport_distance
    P, T = panel.n_units, panel.n_times
    if g.cross_region:
        K = structure.n_airports
        cols = [(r, k) for r in range(len(regions)) for k in range(K)]
    else:
        cols = [(r, int(k)) for r in range(len(regions)) for k in structure.airports_in(regions[r])]
    G = np.zeros((P, T, len(cols)))
    for c, (r, k) in enumerate(cols):
        members = np.flatnonzero(region_of == r)
        d = dist[members, k]
        if np.any(np.isnan(d)):
            bad = panel.units.unit_ids[members[np.flatnonzero(np.isnan(d))[0]]]
            raise LikelihoodError(
                f"no distance from district {bad} to airport {structure.airport_ids[k]}")
        try:
            f = kern(d)
        except WeightError as exc:
            raise LikelihoodError(str(exc)) from None
        G[members, :, c] = f[:, None] * X[k][None, :]
    labels = [(regions[r], structure.airport_ids[k]) for r, k in cols]
    return G, labels


# ---------------------------------------------------------------------------
# the compiled problem


class Problem:
    """Data, spec and fixed decay value bundled for repeated likelihood evaluation."""

    def __init__(self, panel: CountPanel, spec: ModelSpec, structure: SpatialStructure | None = None,
                 cube=None, *, decay: float | None = None, eps: float = EPS, coupling=None):
        self.panel = panel
        self.spec = spec
        self.structure = structure
        self.cube = cube
        self.dims = dims_for(spec, panel, structure)
        self.layout = build_layout(spec, self.dims)
        self.eps = eps
        self.decay = decay
        burn = self.dims.burn
        Y = panel.counts.astype(float)
        self.y = np.ascontiguousarray(Y[:, burn:])
        self.n = self.y.size
        self.theta_labels = []
        traffic = None
        self.A = self.B = None
        if spec.family == EE and spec.epidemic is not None:
            ep = spec.epidemic
            if ep.within is not None:
                self.A = kernels.lag_sums(Y, ep.within.lags.weights().weights, burn)
            if ep.between is not None:
                if coupling is not None:
                    W = np.asarray(coupling, dtype=float)
                    if np.any(W < 0) or np.any(np.abs(W.sum(axis=1) - 1) > 1e-12):
                        raise LikelihoodError("coupling rows must be normalised to sum to 1")
                else:
                    if structure is None:
                        raise SpecError("the between-unit term needs a spatial structure")
                    W = coupling_matrix(spec, structure, panel.units.unit_ids, decay)
                self.W = W
                Wo = W.copy()
                np.fill_diagonal(Wo, 0.0)
                L = kernels.lag_sums(Y, ep.between.lags.weights().weights, burn)
                self.B = Wo.T @ L
        if spec.family == GRAVITY and spec.gravity.traffic:
            alpha = spec.gravity.alpha if spec.gravity.alpha is not None else decay
            if alpha is None:
                raise SpecError("the gravity decay alpha is profiled; pass decay=")
            if cube is None:
                raise SpecError("the gravity traffic term needs a covariate cube")
            G, self.theta_labels = traffic_design(spec, panel, structure, cube, alpha)
            traffic = np.ascontiguousarray(G[:, burn:, :])
        self.ctx = _Context(
            spec=spec,
            unit_region=self.dims.unit_region,
            n_regions=self.dims.n_regions,
            tau=self.dims.time_index,
            months=self.dims.modelled_months,
            free_offset=burn,
            omega=spec.endemic.frequency(panel.axis.resolution),
            traffic=traffic,
        )

    # -- natural-space evaluation -------------------------------------------------

    def natural(self, v) -> dict:
        return unpack(self.layout, v)

    def predictor(self, nat: dict) -> np.ndarray:
        return _predictor(self.ctx, nat)

    def components(self, nat: dict) -> dict:
        """Additive ee components (within, between, endemic) on the modelled cells."""
        out = {"endemic": np.exp(self.predictor(nat))}
        if self.A is not None:
            out["within"] = self._by_unit(nat["lambda"]) * self.A
        if self.B is not None:
            out["between"] = self._by_unit(nat["phi"]) * self.B
        return out

    def _by_unit(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return x[:, None] if x.size > 1 else x[0]

    def mean(self, nat: dict, comps: dict | None = None) -> np.ndarray:
        if self.spec.family == GRAVITY:
            return np.exp(self.predictor(nat))
        comps = self.components(nat) if comps is None else comps
        for name, c in comps.items():
            if np.any(c < 0):
                raise LikelihoodError(f"negative {name} component")
        return sum(comps.values()) + self.eps

    def psi_cells(self, nat: dict) -> np.ndarray:
        psi = np.asarray(nat["psi"], dtype=float).ravel()
        if psi.size == 1:
            return np.full(self.y.shape, psi[0])
        return np.repeat(psi[:, None], self.y.shape[1], axis=1)

    def cell_terms(self, nat: dict, comps: dict | None = None):
        mu = self.mean(nat, comps)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise LikelihoodError("means must be finite and positive")
        ll, dmu, dlp = kernels.nb_terms(self.y.ravel(), mu.ravel(), self.psi_cells(nat).ravel())
        shape = self.y.shape
        return mu, ll.reshape(shape), dmu.reshape(shape), dlp.reshape(shape)

    # -- packed-space objective ------------------------------------------------------

    def loglik(self, v) -> float:
        nat = self.natural(v)
        return float(self.cell_terms(nat)[1].sum())

    def loglik_and_grad(self, v) -> tuple[float, np.ndarray]:
        nat = self.natural(v)
        comps = self.components(nat) if self.spec.family == EE else None
        mu, ll, s, dlp = self.cell_terms(nat, comps)
        w = s * (mu if comps is None else comps["endemic"])
        gnat = _predictor_grad(self.ctx, nat, w)
        if self.A is not None:
            gl = (s * self.A).sum(axis=1)
            gnat["lambda"] = gl if nat["lambda"].size > 1 else np.array([gl.sum()])
        if self.B is not None:
            gp = (s * self.B).sum(axis=1)
            gnat["phi"] = gp if nat["phi"].size > 1 else np.array([gp.sum()])
        grad = _chain(self.layout, v, nat, gnat)
        # dispersion gradient is produced directly in log(psi)
        sl = self.layout.slices()["psi"]
        gpsi = dlp.sum(axis=1)
        grad[sl] = gpsi if nat["psi"].size > 1 else gpsi.sum()
        return float(ll.sum()), grad

    def mean_surface(self, nat: dict) -> MeanSurface:
        P, T = self.panel.n_units, self.panel.n_times
        mu = np.full((P, T), np.nan)
        mask = np.zeros((P, T), dtype=bool)
        burn = self.dims.burn
        mu[:, burn:] = self.mean(nat)
        mask[:, burn:] = True
        log_mu = None
        if self.spec.family == GRAVITY:
            log_mu = np.full((P, T), np.nan)
            log_mu[:, burn:] = self.predictor(nat)
        return MeanSurface(mu, mask, log_mu)


# ---------------------------------------------------------------------------
# public operations


def ee_mean(panel, structure, spec: ModelSpec, params: dict, *, rho=None, coupling=None,
            eps: float = EPS) -> MeanSurface:
    if spec.family != EE:
        raise SpecError("ee_mean needs an ee spec")
    prob = Problem(panel, spec, structure, decay=rho, eps=eps, coupling=coupling)
    return prob.mean_surface(params)


def gravity_log_mean(panel, structure, cube, spec: ModelSpec, params: dict, *,
                     alpha=None) -> MeanSurface:
    if spec.family != GRAVITY:
        raise SpecError("gravity_log_mean needs a gravity spec")
    prob = Problem(panel, spec, structure, cube, decay=alpha)
    return prob.mean_surface(params)


def cross_region_gravity_log_mean(panel, structure, cube, spec: ModelSpec, params: dict, *,
                                  alpha=None) -> MeanSurface:
    """Gravity mean with every airport reachable from every district."""
    from dataclasses import replace

    spec = replace(spec, gravity=replace(spec.gravity, cross_region=True))
    return gravity_log_mean(panel, structure, cube, spec, params, alpha=alpha)


def nb_loglik(panel: CountPanel, means: MeanSurface, psi) -> LogLik:
    """Negative binomial log-likelihood over the unmasked cells (psi shared or per unit)."""
    mask = np.asarray(means.mask, dtype=bool)
    mu = np.asarray(means.mu, dtype=float)
    if np.any(~(mu[mask] > 0)):
        raise LikelihoodError("means must be positive on every modelled cell")
    psi = np.asarray(psi, dtype=float).ravel()
    if np.any(psi < 0):
        raise LikelihoodError("overdispersion must be >= 0")
    P, T = mu.shape
    psi_grid = np.broadcast_to(psi[:, None] if psi.size > 1 else psi, (P, T))
    y = panel.counts.astype(float)
    ll, _, _ = kernels.nb_terms(y[mask], mu[mask], psi_grid[mask])
    per_cell = np.full((P, T), np.nan)
    per_cell[mask] = ll
    return LogLik(float(ll.sum()), per_cell, int(mask.sum()))


def nb_loglik_grad(panel, spec: ModelSpec, v, structure=None, cube=None, *, decay=None) -> np.ndarray:
    return Problem(panel, spec, structure, cube, decay=decay).loglik_and_grad(v)[1]
