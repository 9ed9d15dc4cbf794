"""Pure NumPy kernels, used when the compiled ``_core`` extension is unavailable.

Per-cell negative binomial log-likelihood with mean ``mu`` and overdispersion
``psi`` (variance ``mu * (1 + psi * mu)``), written as

    l = y log mu - log y! + Q0 - (y + 1/psi) log1p(mu psi),
    Q0 = sum_{k<y} log1p(k psi),  Q1 = sum_{k<y} k psi / (1 + k psi),

which stays accurate as psi -> 0 where the Gamma-function form cancels.
Q0/Q1 come from direct sums for small counts, a power series when y psi is
tiny, Stirling expansions of the Gamma/digamma differences when 1/psi is
large, and the Gamma functions themselves otherwise.
"""
import numpy as np
from scipy.special import digamma, gammaln

POISSON_PSI = 1e-12
_SERIES_X = 1e-3
DIRECT_MAX = 64
STIRLING_R = 50.0


def _lgamma_tail(x):
    """lnGamma(x) - [(x - 1/2) ln x - x + ln(2 pi)/2] for large x."""
    x2 = x * x
    return (1 / 12 - (1 / 360 - (1 / 1260 - 1 / (1680 * x2)) / x2) / x2) / x


def _digamma_tail(x):
    """psi(x) - ln x for large x."""
    x2 = x * x
    return -0.5 / x - (1 / 12 - (1 / 120 - (1 / 252 - 1 / (240 * x2)) / x2) / x2) / x2


def _q_stirling(y, r):
    """Q0, Q1 for large r without cancelling lnGamma(y + r) - lnGamma(r)."""
    l1 = np.log1p(y / r)
    q0 = (r + y - 0.5) * l1 - y + _lgamma_tail(r + y) - _lgamma_tail(r)
    q1 = y - r * l1 - r * (_digamma_tail(r + y) - _digamma_tail(r))
    return q0, q1


def _q_terms(y, psi):
    q0 = np.zeros_like(y)
    q1 = np.zeros_like(y)
    direct = (y > 0) & (y <= DIRECT_MAX)
    if direct.any():
        k = np.arange(1, DIRECT_MAX, dtype=float)
        kp = k[None, :] * psi[direct][:, None]
        inside = k[None, :] < y[direct][:, None]
        q0[direct] = np.where(inside, np.log1p(kp), 0.0).sum(axis=1)
        q1[direct] = np.where(inside, kp / (1.0 + kp), 0.0).sum(axis=1)
    yp = y * psi
    small = (y > DIRECT_MAX) & (yp < _SERIES_X)
    if small.any():
        n = y[small] - 1.0
        p = psi[small]
        s1 = n * (n + 1) / 2
        s2 = n * (n + 1) * (2 * n + 1) / 6
        s3 = s1 * s1
        s4 = n * (n + 1) * (2 * n + 1) * (3 * n * n + 3 * n - 1) / 30
        q0[small] = p * (s1 - p * (s2 / 2 - p * (s3 / 3 - p * s4 / 4)))
        q1[small] = p * (s1 - p * (s2 - p * (s3 - p * s4)))
    stir = (y > DIRECT_MAX) & ~small & (psi * STIRLING_R <= 1.0)
    if stir.any():
        q0[stir], q1[stir] = _q_stirling(y[stir], 1.0 / psi[stir])
    big = (y > DIRECT_MAX) & ~small & ~stir
    if big.any():
        yb = y[big]
        r = 1.0 / psi[big]
        q0[big] = gammaln(yb + r) - gammaln(r) - yb * np.log(r)
        q1[big] = yb - r * (digamma(yb + r) - digamma(r))
    return q0, q1


def _h_over_psi(mu, psi):
    """(log1p(x) - x / (1 + x)) / psi with x = mu psi."""
    x = mu * psi
    out = np.empty_like(x)
    small = x < _SERIES_X
    xs = x[small]
    out[small] = mu[small] * xs * (0.5 - xs * (2 / 3 - xs * (0.75 - 0.8 * xs)))
    xb = x[~small]
    out[~small] = (np.log1p(xb) - xb / (1 + xb)) / psi[~small]
    return out


def nb_terms(y, mu, psi):
    """Per-cell log-likelihood, d/dmu and d/dlog(psi).

    All arguments are 1-d float arrays of equal length.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    psi = np.asarray(psi, dtype=float)
    ll = np.empty_like(mu)
    dmu = np.empty_like(mu)
    dlp = np.empty_like(mu)
    ylogmu = np.where(y > 0, y * np.log(mu), 0.0)
    lfact = gammaln(y + 1.0)

    pois = psi < POISSON_PSI
    if pois.any():
        yp, mp, pp = y[pois], mu[pois], psi[pois]
        ll[pois] = ylogmu[pois] - mp - lfact[pois]
        dmu[pois] = yp / mp - 1.0
        dlp[pois] = pp * ((yp - mp) ** 2 - yp) / 2
    nb = ~pois
    if nb.any():
        yn, mn, pn = y[nb], mu[nb], psi[nb]
        q0, q1 = _q_terms(yn, pn)
        x = mn * pn
        l1p = np.log1p(x)
        ll[nb] = ylogmu[nb] - lfact[nb] + q0 - (yn + 1.0 / pn) * l1p
        dmu[nb] = yn / mn - (yn * pn + 1.0) / (1.0 + x)
        dlp[nb] = q1 - yn * x / (1.0 + x) + _h_over_psi(mn, pn)
    return ll, dmu, dlp


def lag_sums(Y, u, start):
    """sum_d u[d-1] * Y[:, t-d] for t = start..T-1, shape (P, T - start)."""
    Y = np.asarray(Y, dtype=float)
    u = np.asarray(u, dtype=float)
    T = Y.shape[1]
    if start < len(u):
        raise ValueError("start must leave room for every lag")
    out = np.zeros((Y.shape[0], T - start))
    for d in range(1, len(u) + 1):
        out += u[d - 1] * Y[:, start - d:T - d]
    return out
