"""Maximum-likelihood fitting, profile search and model comparison."""
from __future__ import annotations

import datetime as dt
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .likelihood import Problem
from .optim import maximize
from .panel import DAILY, CountPanel, TimeAxis, mid_month_slice
from .spec import (
    CONSTANT, EE, FREE, GRAVITY, HARMONIC, SEASONAL, ModelSpec, build_layout, pack,
)

log = logging.getLogger(__name__)

THREADS_ENV = "EEGRAV_THREADS"


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-6
    max_iter: int = 500
    grid_points: int = 25
    threads: int | None = None

    def n_threads(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get(THREADS_ENV, "1")))


@dataclass(frozen=True)
class NullFit:
    mu: float
    psi: float
    loglik: float
    n: int
    k: int = 2


@dataclass
class FitResult:
    spec: ModelSpec
    params: dict
    packed: np.ndarray
    loglik: float
    k: int
    aic: float
    pseudo_r2: float
    null: NullFit
    n: int
    converged: bool
    iterations: int
    grad_norm: float
    fallback_steps: int = 0
    decay: float | None = None
    profile: list = field(default_factory=list)
    theta_labels: list = field(default_factory=list)
    axis: TimeAxis | None = None
    unit_ids: tuple = ()
    regions: tuple = ()
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if not math.isclose(self.aic, -2 * self.loglik + 2 * self.k, rel_tol=0, abs_tol=1e-9):
            raise FitError("AIC inconsistent with log-likelihood and k")
        if not 0.0 <= self.pseudo_r2 <= 1.0:
            raise FitError(f"pseudo-R2 {self.pseudo_r2} outside [0, 1]")

    @property
    def decay_name(self) -> str | None:
        if self.spec.family == GRAVITY and self.spec.gravity.traffic:
            return "alpha"
        ep = self.spec.epidemic
        if ep is not None and ep.between is not None and ep.between.coupling.kind == "powerlaw":
            return "rho"
        return None


# ---------------------------------------------------------------------------
# metrics


def aic(loglik: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return -2.0 * loglik + 2.0 * k


def nagelkerke_r2(l1: float, l0: float, n: int) -> float:
    """[1 - exp(2 (l0 - l1) / n)] / [1 - exp(2 l0 / n)], clamped to [0, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    denom = -math.expm1(2.0 * l0 / n)
    if not denom > 1e-15:
        raise ValueError("degenerate null: null log-likelihood is ~0")
    if l1 < l0:
        warnings.warn("fitted log-likelihood below the null; pseudo-R2 clamped at 0")
        return 0.0
    r2 = -math.expm1(2.0 * (l0 - l1) / n) / denom
    return min(max(r2, 0.0), 1.0)


# ---------------------------------------------------------------------------
# null model


def _null_loglik(y, mu, psi):
    n = y.size
    ll, _, dlp = kernels.nb_terms(y, np.full(n, mu), np.full(n, psi))
    return ll.sum(), dlp.sum()


def fit_null_cells(y) -> NullFit:
    """Intercept-only NB fit; the mean MLE is the sample mean (score identity)."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("null fit needs at least two cells")
    mu = float(y.mean())
    if mu == 0:
        warnings.warn("all-zero counts: overdispersion unidentified, Poisson limit used")
        return NullFit(0.0, 0.0, 0.0, y.size)
    # the profile score in log(psi) tends to psi * sum((y-mu)^2 - y) / 2 as psi -> 0
    excess = float(np.sum((y - mu) ** 2 - y))
    if excess <= 0:
        ll, _ = _null_loglik(y, mu, 0.0)
        return NullFit(mu, 0.0, float(ll), y.size)

    def score(lp):
        return _null_loglik(y, mu, math.exp(lp))[1]

    lo, hi = -30.0, 10.0
    while score(hi) > 0 and hi < 50:
        hi += 10.0
    if score(lo) <= 0:
        psi = math.exp(lo)
    else:
        psi = math.exp(brentq(score, lo, hi, xtol=1e-12, rtol=1e-12))
    ll, _ = _null_loglik(y, mu, psi)
    return NullFit(mu, psi, float(ll), y.size)


def fit_null(panel: CountPanel, burn: int = 0) -> NullFit:
    return fit_null_cells(panel.counts[:, burn:])


# ---------------------------------------------------------------------------
# fitting


def initial_vector(prob: Problem) -> np.ndarray:
    """Level coordinates at log(sample mean), every other packed coordinate 0."""
    v = np.zeros(prob.layout.size)
    level = math.log(max(float(prob.y.mean()), 1e-8))
    sl = prob.layout.slices()
    if "intercept" in sl:
        v[sl["intercept"]] = level
    elif "nu" in sl:
        v[sl["nu"]] = level
    elif "season" in sl:
        v[sl["season"]] = level
    return v


def decay_grid(spec: ModelSpec, n_points: int) -> tuple[str, np.ndarray] | None:
    if spec.family == GRAVITY and spec.gravity.profiled:
        lo, hi = spec.gravity.alpha_grid
        return "alpha", np.geomspace(lo, hi, n_points)
    ep = spec.epidemic
    if ep is not None and ep.between is not None and ep.between.coupling.profiled:
        lo, hi = ep.between.coupling.rho_grid
        return "rho", np.linspace(lo, hi, n_points)
    return None


def _solve(panel, spec, structure, cube, decay, options):
    prob = Problem(panel, spec, structure, cube, decay=decay)
    x0 = initial_vector(prob)
    try:
        f0, _ = prob.loglik_and_grad(x0)
    except (ValueError, FloatingPointError, OverflowError) as exc:
        raise FitError(f"log-likelihood is not finite at the initial point: {exc}") from exc
    if not np.isfinite(f0):
        raise FitError("log-likelihood is not finite at the initial point")
    res = maximize(prob.loglik_and_grad, x0, gtol=options.gtol, max_iter=options.max_iter)
    return prob, res


def fit(panel: CountPanel, spec: ModelSpec, structure=None, cube=None,
        options: FitOptions | None = None, *, decay: float | None = None) -> FitResult:
    """Maximum-likelihood fit; profiled decay parameters are searched on a grid.

    ``decay`` pins a profiled alpha/rho to one value (the grid is skipped,
    but k still counts it).
    """
    options = options or FitOptions()
    grid = decay_grid(spec, options.grid_points)
    profile = []
    if grid is None or decay is not None:
        prob, res = _solve(panel, spec, structure, cube, decay, options)
        chosen = decay
    else:
        name, values = grid

        def run(val):
            return _solve(panel, spec, structure, cube, float(val), options)

        if options.n_threads() > 1:
            with ThreadPoolExecutor(options.n_threads()) as pool:
                results = list(pool.map(run, values))
        else:
            results = [run(v) for v in values]
        profile = [(float(v), float(r.f), bool(r.converged)) for v, (_, r) in zip(values, results)]
        best = int(np.argmax([r.f for _, r in results]))
        prob, res = results[best]
        chosen = float(values[best])
        log.info("profiled %s = %.4g (grid index %d)", name, chosen, best)
    if spec.family == GRAVITY and spec.gravity.traffic and spec.gravity.alpha is not None:
        chosen = spec.gravity.alpha
    null = fit_null_cells(prob.y)
    k = build_layout(spec, prob.dims).size + spec.n_profiled
    notes = []
    if res.fallback_steps:
        notes.append(f"{res.fallback_steps} gradient fallback steps")
    if not res.converged:
        notes.append(f"not converged: {res.message}")
        warnings.warn(f"fit did not converge ({res.message}); max |grad| = {res.grad_norm:.3g}")
    r2 = nagelkerke_r2(res.f, null.loglik, prob.n) if null.loglik < 0 else 0.0
    axis = panel.axis
    burn = prob.dims.burn
    if burn:
        if axis.resolution == DAILY:
            origin = axis.origin + dt.timedelta(days=burn)
        else:
            origin = axis.dates()[burn]
        axis = TimeAxis(axis.resolution, origin, axis.length - burn)
    return FitResult(
        spec=spec,
        params=prob.natural(res.x),
        packed=res.x,
        loglik=res.f,
        k=k,
        aic=aic(res.f, k),
        pseudo_r2=r2,
        null=null,
        n=prob.n,
        converged=res.converged,
        iterations=res.iterations,
        grad_norm=res.grad_norm,
        fallback_steps=res.fallback_steps,
        decay=chosen,
        profile=profile,
        theta_labels=list(prob.theta_labels),
        axis=axis,
        unit_ids=panel.units.unit_ids,
        regions=panel.units.regions,
        notes=notes,
    )


def refit(result: FitResult, panel, structure=None, cube=None, options=None) -> FitResult:
    """Restart the optimiser from a previous optimum with the decay value held."""
    options = options or FitOptions()
    prob = Problem(panel, result.spec, structure, cube, decay=result.decay)
    res = maximize(prob.loglik_and_grad, result.packed, gtol=options.gtol,
                   max_iter=options.max_iter)
    return replace(result, params=prob.natural(res.x), packed=res.x, loglik=res.f,
                   aic=aic(res.f, result.k),
                   pseudo_r2=nagelkerke_r2(res.f, result.null.loglik, result.n),
                   converged=res.converged, iterations=res.iterations, grad_norm=res.grad_norm)


# ---------------------------------------------------------------------------
# comparison harnesses


def _row(label, res: FitResult, **extra) -> dict:
    row = {"model": label, "loglik": res.loglik, "k": res.k, "aic": res.aic,
           "pseudo_r2": res.pseudo_r2, "converged": res.converged}
    if res.decay is not None:
        row[res.decay_name or "decay"] = res.decay
    row.update(extra)
    return row


def with_max_lag(spec: ModelSpec, D: int, burn: int) -> ModelSpec:
    ep = spec.epidemic
    within = replace(ep.within, lags=ep.within.lags.with_max_lag(D)) if ep.within else None
    between = replace(ep.between, lags=ep.between.lags.with_max_lag(D)) if ep.between else None
    return replace(spec, epidemic=replace(ep, within=within, between=between), burn_in=burn)


def lag_scan(panel, structure, base_spec: ModelSpec, max_lag: int,
             options: FitOptions | None = None) -> list[dict]:
    """Fit the ee spec for D = 1..max_lag on a common burn-in of max_lag."""
    if base_spec.family != EE or base_spec.epidemic is None:
        raise ValueError("lag_scan needs an ee spec with an epidemic block")
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if panel.axis.resolution != DAILY:
        raise ValueError("lag_scan expects a daily panel")
    rows = []
    for D in range(1, max_lag + 1):
        res = fit(panel, with_max_lag(base_spec, D, max_lag), structure, options=options)
        rows.append(_row(f"D={D}", res, D=D))
    return rows


def moving_average_2(values) -> np.ndarray:
    """Circular order-2 moving average over calendar months: (s[m-1] + s[m]) / 2."""
    s = np.asarray(values, dtype=float)
    return 0.5 * (s + np.roll(s, 1, axis=-1))


def season_compare(panel, structure, cube, gravity_spec: ModelSpec,
                   options: FitOptions | None = None) -> dict:
    """Month-seasonal versus free per-time endemic for the same gravity spec."""
    if gravity_spec.family != GRAVITY:
        raise ValueError("season_compare needs a gravity spec")
    if panel.n_times < 13:
        raise ValueError("season_compare needs at least 13 months")
    out = {"rows": []}
    fits = {}
    for label, kind in (("seasonal", SEASONAL), ("free", FREE)):
        spec = replace(gravity_spec, endemic=replace(gravity_spec.endemic, kind=kind))
        res = fit(panel, spec, structure, cube, options)
        fits[label] = res
        out["rows"].append(_row(label, res))
    season = np.asarray(fits["seasonal"].params["season"])
    out["season"] = season.tolist()
    out["season_ma2"] = moving_average_2(season).tolist()
    out["fits"] = fits
    return out


ABLATION_ROWS = (
    ("regional effects", "region", CONSTANT),
    ("district effects", "district", CONSTANT),
    ("district effects + seasonal", "district", SEASONAL),
    ("district effects + endemic", "district", FREE),
)


def ablation(panel, structure, cube, gravity_spec: ModelSpec,
             options: FitOptions | None = None) -> list[dict]:
    """With/without the traffic term across four effect/endemic combinations."""
    if gravity_spec.family != GRAVITY:
        raise ValueError("ablation needs a gravity spec")
    rows = []
    for label, effects, kind in ABLATION_ROWS:
        endemic = replace(gravity_spec.endemic, kind=kind)
        g = replace(gravity_spec.gravity, intercept=True)
        base = replace(gravity_spec, effects=effects, endemic=endemic, gravity=g)
        without = fit(panel, replace(base, gravity=replace(g, traffic=False)), structure, cube, options)
        with_ = fit(panel, base, structure, cube, options)
        rows.append({
            "model": label,
            "without": without.pseudo_r2,
            "with": with_.pseudo_r2,
            "aic_without": without.aic,
            "aic_with": with_.aic,
            "loglik_without": without.loglik,
            "loglik_with": with_.loglik,
        })
    return rows


# ---------------------------------------------------------------------------
# endemic trajectories


@dataclass(frozen=True)
class Trajectory:
    """Level-free log-endemic shape per scope (``shared`` or a region id)."""

    axis: TimeAxis
    scopes: tuple
    values: np.ndarray     # (n_scopes, T)

    def rows(self):
        labels = self.axis.labels()
        for s, scope in enumerate(self.scopes):
            for t, lab in enumerate(labels):
                yield scope, lab, float(self.values[s, t])

    def mid_month(self) -> "Trajectory":
        ax, vals = mid_month_slice(self.axis, self.values)
        return Trajectory(ax, self.scopes, vals - vals.mean(axis=1, keepdims=True))


def endemic_trajectory(fit_result: FitResult) -> Trajectory:
    res = fit_result
    spec = res.spec
    if not res.converged:
        warnings.warn("endemic trajectory taken from a fit that did not converge")
    axis = res.axis
    T = axis.length
    end = spec.endemic
    p = res.params
    n_rows = len(res.regions) if end.per_region else 1
    if end.kind == FREE:
        vals = np.asarray(p["nu"], dtype=float).reshape(n_rows, T)
    elif end.kind == SEASONAL:
        s = np.asarray(p["season"], dtype=float).reshape(n_rows, 12)
        vals = s[:, axis.calendar_months() - 1]
    elif end.kind == HARMONIC:
        burn = spec.burn
        t = np.arange(burn + 1, burn + T + 1, dtype=float)
        omega = end.frequency(axis.resolution)
        coef = {k: np.asarray(p[k], dtype=float).reshape(n_rows, 1) for k in ("trend", "sin", "cos")}
        vals = coef["trend"] * t + coef["sin"] * np.sin(omega * t) + coef["cos"] * np.cos(omega * t)
    else:
        vals = np.zeros((n_rows, T))
    vals = vals - vals.mean(axis=1, keepdims=True)
    scopes = tuple(res.regions) if end.per_region else ("shared",)
    return Trajectory(axis, scopes, vals)


def fit_from_params(panel, spec, params, structure=None, cube=None, decay=None) -> float:
    """Log-likelihood of given natural parameters (convenience for checks)."""
    prob = Problem(panel, spec, structure, cube, decay=decay)
    return prob.loglik(pack(prob.layout, params))


__all__ = [
    "FitOptions", "FitResult", "NullFit", "Trajectory", "ablation", "aic", "endemic_trajectory",
    "fit", "fit_null", "fit_null_cells", "lag_scan", "nagelkerke_r2", "refit", "season_compare",
]
