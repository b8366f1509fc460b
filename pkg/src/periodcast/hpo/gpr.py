"""Gaussian-process regression with a Matern 5/2 ARD kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from ..errors import NumericError

SQRT5 = math.sqrt(5.0)

# search box for the log hyperparameters (inputs live in the unit cube, targets are standardized)
LOG_LENGTH_BOUNDS = (math.log(1e-2), math.log(10.0))
LOG_SIGNAL_BOUNDS = (math.log(1e-2), math.log(1e2))
LOG_NOISE_BOUNDS = (math.log(1e-8), math.log(1.0))


def matern52(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray, signal_var: float) -> np.ndarray:
    """``k(a_i, b_j) = s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`` with ``r`` the scaled distance."""
    a = np.atleast_2d(a) / lengthscales
    b = np.atleast_2d(b) / lengthscales
    sq = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    r = np.sqrt(np.maximum(sq, 0.0))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def cholesky_with_jitter(k: np.ndarray, jitter: float = 1e-10, retries: int = 3) -> tuple[np.ndarray, float]:
    """Cholesky of ``k + jitter I``, growing the jitter tenfold on failure.

    Returns the lower factor and the jitter that worked.  Raises
    :class:`NumericError` once ``retries`` increases have failed.
    """
    eye = np.eye(len(k))
    for attempt in range(retries + 1):
        try:
            return np.linalg.cholesky(k + jitter * eye), jitter
        except np.linalg.LinAlgError:
            if attempt == retries:
                break
            jitter *= 10.0
    raise NumericError(f"Gram matrix not positive definite even with jitter {jitter:.1e}")


@dataclass
class GprPosterior:
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray
    x: np.ndarray
    y: np.ndarray  # standardized targets
    y_mean: float
    y_std: float

    def predict(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return gpr_predict(self, h)


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 1e-12:
        std = 1.0
    return (y - mean) / std, mean, std


def neg_log_marginal_likelihood(x, y, lengthscales, signal_var, noise_var, jitter=1e-10,
                                 grad: bool = False):
    """Negative log marginal likelihood of standardized ``y``.

    With ``grad`` also returns the derivatives with respect to the log
    lengthscales, log signal variance and log noise variance.
    """
    n = len(x)
    ls = np.asarray(lengthscales, dtype=float)
    kf = matern52(x, x, ls, signal_var)
    chol, _ = cholesky_with_jitter(kf + noise_var * np.eye(n), jitter, retries=0)
    alpha = cho_solve((chol, True), y)
    nll = float(0.5 * y @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * n * math.log(2 * math.pi))
    if not grad:
        return nll
    # d nll / d theta = -1/2 tr((alpha alpha^T - K^-1) dK/dtheta)
    inner = np.outer(alpha, alpha) - cho_solve((chol, True), np.eye(n))
    scaled = x / ls
    diff2 = (scaled[:, None, :] - scaled[None, :, :]) ** 2
    r = np.sqrt(np.sum(diff2, axis=-1))
    radial = signal_var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    g_ls = np.array([-0.5 * np.sum(inner * radial * diff2[..., i]) for i in range(x.shape[1])])
    g_sv = -0.5 * np.sum(inner * kf)
    g_nv = -0.5 * noise_var * np.trace(inner)
    return nll, g_ls, float(g_sv), float(g_nv)


def _fit_hyperparameters(x, y, fixed: dict, rng: np.random.Generator, restarts: int, jitter: float) -> dict:
    d = x.shape[1]
    free = []
    if fixed["lengthscales"] is None:
        free += [("ls", i, LOG_LENGTH_BOUNDS) for i in range(d)]
    if fixed["signal_var"] is None:
        free.append(("sv", 0, LOG_SIGNAL_BOUNDS))
    if fixed["noise_var"] is None:
        free.append(("nv", 0, LOG_NOISE_BOUNDS))

    def unpack(theta):
        ls = np.full(d, 0.3) if fixed["lengthscales"] is None else np.asarray(fixed["lengthscales"], float)
        ls = ls.copy()
        sv, nv = fixed["signal_var"], fixed["noise_var"]
        for (kind, i, _), t in zip(free, theta):
            if kind == "ls":
                ls[i] = math.exp(t)
            elif kind == "sv":
                sv = math.exp(t)
            else:
                nv = math.exp(t)
        return ls, sv, nv

    if not free:
        return dict(zip(("lengthscales", "signal_var", "noise_var"), unpack([])))

    def objective(theta):
        try:
            nll, g_ls, g_sv, g_nv = neg_log_marginal_likelihood(x, y, *unpack(theta), jitter=jitter, grad=True)
        except NumericError:
            return 1e10, np.zeros(len(theta))
        parts = {"ls": g_ls, "sv": [g_sv], "nv": [g_nv]}
        return nll, np.array([parts[kind][i] for kind, i, _ in free])

    bounds = [b for _, _, b in free]
    defaults = {"ls": math.log(0.3), "sv": 0.0, "nv": math.log(1e-4)}
    starts = [np.array([defaults[kind] for kind, _, _ in free])]
    starts += [np.array([rng.uniform(lo, hi) for lo, hi in bounds]) for _ in range(restarts)]
    best_theta, best_val = starts[0], objective(starts[0])[0]
    for theta0 in starts:
        res = minimize(objective, theta0, method="L-BFGS-B", jac=True, bounds=bounds)
        if res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    return dict(zip(("lengthscales", "signal_var", "noise_var"), unpack(best_theta)))


def gpr_fit(points, targets, lengthscales=None, signal_var=None, noise_var=None,
            rng: np.random.Generator | None = None, restarts: int = 2, jitter: float = 1e-10,
            retries: int = 3) -> GprPosterior:
    """Fit a GP to ``targets`` observed at ``points`` (rows, typically in the unit cube).

    Hyperparameters left as ``None`` are chosen by maximizing the marginal
    likelihood (L-BFGS-B with analytic gradients, from a default start plus
    ``restarts`` random starts); the rest are held fixed.  Targets are
    standardized internally.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y_raw = np.asarray(targets, dtype=float).ravel()
    if len(x) != len(y_raw) or len(x) == 0:
        raise ValueError(f"need matching, non-empty points and targets, got {len(x)} and {len(y_raw)}")
    y, y_mean, y_std = _standardize(y_raw)
    rng = rng if rng is not None else np.random.default_rng(0)
    hp = _fit_hyperparameters(x, y, dict(lengthscales=lengthscales, signal_var=signal_var, noise_var=noise_var),
                              rng, restarts, jitter)
    ls = np.broadcast_to(np.asarray(hp["lengthscales"], float), (x.shape[1],)).copy()
    k = matern52(x, x, ls, hp["signal_var"]) + hp["noise_var"] * np.eye(len(x))
    chol, used = cholesky_with_jitter(k, jitter, retries)
    alpha = cho_solve((chol, True), y)
    return GprPosterior(ls, float(hp["signal_var"]), float(hp["noise_var"]), used, chol, alpha, x, y, y_mean, y_std)


def gpr_predict(post: GprPosterior, h) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance (target units) at each row of ``h``."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    ks = matern52(h, post.x, post.lengthscales, post.signal_var)
    mu = ks @ post.alpha
    v = solve_triangular(post.chol, ks.T, lower=True)
    var = np.maximum(post.signal_var - np.sum(v * v, axis=0), 0.0)
    return post.y_mean + post.y_std * mu, var * post.y_std ** 2
