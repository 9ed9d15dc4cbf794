"""Quasi-Newton maximiser with backtracking line search.

Maximises ``f`` given ``fun_grad(x) -> (f, grad)``. Problems with at most
``DENSE_MAX_DIM`` coordinates run dense BFGS seeded with a finite-difference
Hessian of the analytic gradient, which removes the bad scaling between
level, shape and covariate coordinates; larger ones run limited-memory BFGS.
Directions that fail to ascend, or line searches that cannot satisfy the
sufficient-increase condition, fall back to a plain gradient step and reset
the curvature information; every fallback is counted. Small problems that
stall above the gradient tolerance get a few damped Newton steps.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

C1 = 1e-4
MAX_HALVINGS = 60
NEWTON_MAX_DIM = 400
DENSE_MAX_DIM = 400
MAX_REFRESH = 10
NEWTON_RESERVE = 40
STALL_WINDOW = 20


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    converged: bool
    iterations: int
    fallback_steps: int
    message: str

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _two_loop(g, S, Yc):
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Yc))):
        a = s @ q / (y @ s)
        alphas.append(a)
        q -= a * y
    if S:
        s, y = S[-1], Yc[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(S, Yc), reversed(alphas)):
        b = y @ q / (y @ s)
        q += (a - b) * s
    return q


def _safe_eval(fun_grad, x):
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            f, g = fun_grad(x)
    except (ValueError, FloatingPointError, OverflowError):
        return -np.inf, None
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return -np.inf, None
    return f, g


def _line_search(fun_grad, x, f, g, d, step):
    """Backtracking for ascent direction d; returns (step, f_new, g_new) or None."""
    slope = g @ d
    for _ in range(MAX_HALVINGS):
        xn = x + step * d
        fn, gn = _safe_eval(fun_grad, xn)
        if gn is not None:
            if fn >= f + C1 * step * slope:
                return step, fn, gn
            # predicted change below the resolution of f: let the gradient decide
            resolution = 1e-11 * (1 + abs(f))
            if (fn >= f - resolution and step * slope <= resolution
                    and np.max(np.abs(gn)) < np.max(np.abs(g))):
                return step, fn, gn
        step *= 0.5
    return None


def _fd_hessian(fun_grad, x, g=None):
    """Symmetrised finite-difference Hessian of f (central, or forward when g is given)."""
    n = x.size
    H = np.empty((n, n))
    for j in range(n):
        h = 1e-5 * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        _, gp = _safe_eval(fun_grad, x + e)
        if gp is None:
            return None
        if g is None:
            _, gm = _safe_eval(fun_grad, x - e)
            if gm is None:
                return None
            H[:, j] = (gp - gm) / (2 * h)
        else:
            H[:, j] = (gp - g) / h
    return 0.5 * (H + H.T)


def _ascent_inverse(H):
    """Inverse of -H with eigenvalues floored so it is positive definite."""
    w, V = np.linalg.eigh(-H)
    w = np.maximum(w, 1e-8 * max(1.0, np.max(np.abs(w))))
    return (V / w) @ V.T


def _newton_polish(fun_grad, x, f, g, gtol, budget):
    """Damped Newton ascent with a finite-difference Hessian; returns (x, f, g, iters)."""
    used = 0
    while used < budget and np.max(np.abs(g)) >= gtol:
        H = _fd_hessian(fun_grad, x)
        if H is None:
            return x, f, g, used
        d = _ascent_inverse(H) @ g
        used += 1
        res = _line_search(fun_grad, x, f, g, d, 1.0)
        if res is None:
            return x, f, g, used
        step, f, g = res
        x = x + step * d
    return x, f, g, used


def maximize(fun_grad, x0, *, gtol: float = 1e-6, max_iter: int = 500,
             memory: int = 10, polish: bool = True) -> OptimResult:
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(fun_grad, x)
    if g is None:
        raise ValueError("objective is not finite at the starting point")
    dense = x.size <= DENSE_MAX_DIM
    Hinv = None
    if dense and x.size:
        H0 = _fd_hessian(fun_grad, x, g)
        Hinv = _ascent_inverse(H0) if H0 is not None else np.eye(x.size)
    S, Yc = deque(maxlen=memory), deque(maxlen=memory)
    fallbacks = 0
    refreshes = short_steps = 0
    it = 0
    message = "iteration limit"
    newton = polish and x.size <= NEWTON_MAX_DIM
    lbfgs_cap = max_iter - NEWTON_RESERVE if newton and max_iter > 2 * NEWTON_RESERVE else max_iter
    history = []
    while it < lbfgs_cap:
        if np.max(np.abs(g), initial=0.0) < gtol:
            message = "gradient tolerance"
            break
        it += 1
        if dense:
            d, curved = Hinv @ g, True
        else:
            d, curved = (_two_loop(g, S, Yc), True) if S else (g.copy(), False)
        step0 = 1.0 if curved else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
        if not np.all(np.isfinite(d)) or g @ d <= 0:
            d, step0, curved = g.copy(), min(1.0, 1.0 / np.max(np.abs(g))), False
            S.clear()
            Yc.clear()
            if dense:
                Hinv = np.eye(x.size) / max(np.max(np.abs(g)), 1.0)
            fallbacks += 1
        res = _line_search(fun_grad, x, f, g, d, step0)
        if res is None and curved:
            S.clear()
            Yc.clear()
            if dense:
                Hinv = np.eye(x.size) / max(np.max(np.abs(g)), 1.0)
            fallbacks += 1
            d = g.copy()
            res = _line_search(fun_grad, x, f, g, d, min(1.0, 1.0 / np.max(np.abs(g))))
        if res is None:
            message = "line search failed"
            break
        step, fn, gn = res
        s = step * d
        # ascent problem: curvature pairs use the negated gradient change
        y = g - gn
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if dense:
                r = 1.0 / sy
                Hy = Hinv @ y
                Hinv = Hinv - r * (np.outer(s, Hy) + np.outer(Hy, s)) \
                    + (r * r * (y @ Hy) + r) * np.outer(s, s)
            else:
                S.append(s)
                Yc.append(y)
        x, f, g = x + s, fn, gn
        history.append(f)
        # repeated short steps: the curvature model is off scale, rebuild it here
        short_steps = short_steps + 1 if step < 1.0 else 0
        if dense and short_steps >= 3 and refreshes < MAX_REFRESH:
            H = _fd_hessian(fun_grad, x, g)
            if H is not None:
                Hinv = _ascent_inverse(H)
            refreshes += 1
            short_steps = 0
        # slow crawl on an ill-conditioned surface: hand over to Newton early
        if newton and len(history) > STALL_WINDOW and \
                history[-1] - history[-1 - STALL_WINDOW] < 1e-8 * (1 + abs(f)):
            message = "stalled"
            break
    converged = bool(np.max(np.abs(g), initial=0.0) < gtol)
    if not converged and newton and it < max_iter:
        x, f, g, used = _newton_polish(fun_grad, x, f, g, gtol, min(20, max_iter - it))
        it += used
        converged = bool(np.max(np.abs(g), initial=0.0) < gtol)
        if converged:
            message = "gradient tolerance (newton polish)"
    elif converged:
        message = "gradient tolerance"
    return OptimResult(x, float(f), g, converged, it, fallbacks, message)
