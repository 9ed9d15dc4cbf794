import numpy as np
import pytest

from eegrav.optim import DENSE_MAX_DIM, maximize


def concave_quadratic(A, b):
    """f(x) = -x'Ax/2 + b'x with maximiser A^{-1} b."""
    def fg(x):
        return -0.5 * x @ A @ x + b @ x, -A @ x + b
    return fg


def spd(n, cond, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (Q * np.geomspace(1, cond, n)) @ Q.T


def test_quadratic_dense():
    A, b = spd(20, 1e6), np.arange(20.0)
    res = maximize(concave_quadratic(A, b), np.zeros(20))
    assert res.converged and res.grad_norm < 1e-6
    assert np.allclose(res.x, np.linalg.solve(A, b), rtol=1e-6, atol=1e-6)


def test_quadratic_limited_memory():
    n = DENSE_MAX_DIM + 50
    A = np.diag(np.geomspace(1, 50, n))
    b = np.ones(n)
    res = maximize(concave_quadratic(A, b), np.zeros(n), max_iter=500)
    assert res.converged
    assert np.allclose(res.x, b / np.diag(A), atol=1e-6)


def test_rosenbrock():
    def fg(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
        return -f, -g
    res = maximize(fg, np.array([-1.2, 1.0]))
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_infeasible_region_is_backtracked():
    # log barrier: the objective is -inf for x <= 0
    def fg(x):
        if np.any(x <= 0):
            return -np.inf, np.full_like(x, np.nan)
        return float(np.sum(np.log(x) - x)), 1.0 / x - 1.0
    res = maximize(fg, np.full(3, 50.0))
    assert res.converged and np.allclose(res.x, 1.0, atol=1e-6)


def test_nonfinite_start():
    with pytest.raises(ValueError, match="not finite"):
        maximize(lambda x: (np.nan, x), np.zeros(2))


def test_iteration_cap_reported():
    A, b = spd(30, 1e8, seed=2), np.ones(30)
    res = maximize(concave_quadratic(A, b), np.zeros(30), max_iter=3, polish=False)
    assert res.iterations <= 3
    assert res.converged == (res.grad_norm < 1e-6)


def test_already_optimal():
    res = maximize(concave_quadratic(np.eye(3), np.zeros(3)), np.zeros(3))
    assert res.converged and res.iterations == 0 and res.message == "gradient tolerance"


def test_noisy_objective_still_converges():
    # large constant offset: f differences fall below double resolution near the optimum
    A, b = spd(8, 1e3, seed=4), np.ones(8)
    base = concave_quadratic(A, b)

    def fg(x):
        f, g = base(x)
        return f + 1e7, g
    res = maximize(fg, np.zeros(8), gtol=1e-7)
    assert res.converged
