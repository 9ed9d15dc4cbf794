"""Naive reference implementations used as test oracles.

Everything here is written with scalar loops and the ``math`` module so it
shares no code path with the package beyond the data containers.
"""
from __future__ import annotations

import calendar
import math

import numpy as np


def nb_cell(y, mu, psi):
    """NB log-probability of one count in the (r, p) parametrisation."""
    y = int(y)
    if psi == 0:
        return y * math.log(mu) - mu - math.lgamma(y + 1)
    r = 1.0 / psi
    return (math.lgamma(y + r) - math.lgamma(r) - math.lgamma(y + 1)
            + r * math.log(r / (r + mu)) + y * math.log(mu / (r + mu)))


def nb_loglik(Y, mu, psi, burn=0):
    """Sum of nb_cell over units and times t >= burn; psi scalar or per unit."""
    P, T = len(Y), len(Y[0])
    psi = np.broadcast_to(np.asarray(psi, dtype=float).ravel(), (P,)) if np.size(psi) > 1 \
        else [float(np.ravel(psi)[0])] * P
    total = 0.0
    for i in range(P):
        for t in range(burn, T):
            total += nb_cell(Y[i][t], mu[i][t], psi[i])
    return total


def kernel(kind, alpha, d):
    if kind == "power":
        return d ** (-alpha)
    if kind == "exp-normal":
        return math.exp(-alpha * d * d)
    if kind == "exp-sqrt":
        return math.exp(-alpha * math.sqrt(d))
    return math.exp(-alpha * d)


def normalize(raw):
    out = []
    for row in raw:
        s = sum(row)
        out.append([x / s for x in row])
    return out


def powerlaw(o, rho):
    return [[(x + 1.0) ** rho for x in row] for row in o]


def endemic_log(nat, spec, i, t, regions_of, months, burn, n_times, omega):
    """log of the endemic component at unit i, 1-based time t."""
    per_region = spec.endemic.per_region
    r = regions_of[i]
    val = 0.0
    if "intercept" in nat:
        val += float(np.ravel(nat["intercept"])[0])
    if "nu" in nat:
        nu = np.asarray(nat["nu"])
        col = t - burn - 1
        val += nu[r][col] if per_region else nu[col]
    if "season" in nat:
        s = np.asarray(nat["season"])
        m = months[t - 1] - 1
        val += s[r][m] if per_region else s[m]
    if "trend" in nat:
        k = r if per_region else 0
        val += (np.ravel(nat["trend"])[k] * t + np.ravel(nat["sin"])[k] * math.sin(omega * t)
                + np.ravel(nat["cos"])[k] * math.cos(omega * t))
    if "region_effect" in nat:
        val += np.ravel(nat["region_effect"])[r]
    if "district_effect" in nat:
        val += np.ravel(nat["district_effect"])[i]
    return val


def ee_mean(Y, nat, spec, W, regions_of, months, omega, eps=1e-10):
    """Triple-loop additive mean on the modelled cells t = burn+1..T (1-based)."""
    P, T = len(Y), len(Y[0])
    burn = spec.burn
    ep = spec.epidemic
    uw = ep.within.lags.weights().weights if ep and ep.within else []
    ub = ep.between.lags.weights().weights if ep and ep.between else []
    lam = np.ravel(nat.get("lambda", [0.0]))
    phi = np.ravel(nat.get("phi", [0.0]))
    mu = [[float("nan")] * T for _ in range(P)]
    for i in range(P):
        for t in range(burn + 1, T + 1):
            within = sum(uw[d - 1] * Y[i][t - 1 - d] for d in range(1, len(uw) + 1))
            between = 0.0
            for d in range(1, len(ub) + 1):
                for j in range(P):
                    if j != i:
                        between += ub[d - 1] * W[j][i] * Y[j][t - 1 - d]
            li = lam[i] if lam.size > 1 else lam[0]
            pi = phi[i] if phi.size > 1 else phi[0]
            nu = math.exp(endemic_log(nat, spec, i, t, regions_of, months, burn, T, omega))
            mu[i][t - 1] = li * within + pi * between + nu + eps
    return mu


def gravity_log_mean(nat, spec, regions_of, months, X, dist, airport_region, alpha, scale_km,
                     n_times, cross_region=False, omega=2 * math.pi / 12):
    """Per-cell log-mean; X is transformed traffic (airports, T), dist km (units, airports)."""
    P = len(regions_of)
    K = len(airport_region)
    R = max(regions_of) + 1
    if cross_region:
        cols = [(r, k) for r in range(R) for k in range(K)]
    else:
        cols = [(r, k) for r in range(R) for k in range(K) if airport_region[k] == r]
    theta = np.ravel(nat.get("theta", []))
    out = [[0.0] * n_times for _ in range(P)]
    for i in range(P):
        for t in range(1, n_times + 1):
            v = endemic_log(nat, spec, i, t, regions_of, months, 0, n_times, omega)
            for c, (r, k) in enumerate(cols):
                if r == regions_of[i] and theta.size:
                    v += theta[c] * kernel(spec.gravity.kernel, alpha, dist[i][k] / scale_km) * X[k][t - 1]
            out[i][t - 1] = v
    return out


def monthly_sums(origin, counts):
    """Per-unit sums over complete calendar months by walking the dates."""
    import datetime as dt

    T = len(counts[0])
    by_month = {}
    for t in range(T):
        d = origin + dt.timedelta(days=t)
        by_month.setdefault((d.year, d.month), []).append(t)
    keep = [k for k, idx in sorted(by_month.items())
            if len(idx) == calendar.monthrange(*k)[1]]
    return keep, [[sum(row[t] for t in by_month[k]) for k in keep] for row in counts]


def central_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def nagelkerke(l1, l0, n):
    return (1 - math.exp(2 * (l0 - l1) / n)) / (1 - math.exp(2 * l0 / n))
