"""L1-penalized adaptive Huber regression on estimated factors and residuals."""

from dataclasses import dataclass

import numpy as np

from . import _lasso
from .errors import NonConvergence
from .rng import stream

REL_OBJ_TOL = 1e-9
PROX_GRAD_TOL = 1e-7
MAX_ITER = 50_000
STALL_GRAD_TOL = 1e-6


@dataclass(frozen=True)
class HuberConfig:
    omega: float
    lam: float
    vartheta: float = 1.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class HuberFit:
    beta: np.ndarray
    gamma: np.ndarray
    config: HuberConfig
    objective: float
    optimality_gap: float
    iterations: int


def huber_value_grad(z, omega):
    """Huber loss and its derivative, elementwise.

    >>> huber_value_grad(2.0, 1.0)
    (1.5, 1.0)
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    z = np.asarray(z, dtype=np.float64)
    a = np.abs(z)
    value = np.where(a <= omega, 0.5 * z * z, omega * a - 0.5 * omega * omega)
    grad = np.clip(z, -omega, omega)
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def _loss(r, omega):
    a = np.abs(r)
    return float(np.mean(np.where(a <= omega, 0.5 * r * r, omega * a - 0.5 * omega * omega)))


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def optimality_gap(Z, y, theta, d_pen, omega, lam):
    """Violation of the first-order conditions; penalized block first."""
    n = Z.shape[0]
    g = Z.T @ np.clip(y - Z @ theta, -omega, omega) / n
    pen = _lasso.kkt_violation(g[:d_pen].copy(), theta[:d_pen].copy(), lam, -1)
    free = float(np.max(np.abs(g[d_pen:]))) if g.shape[0] > d_pen else 0.0
    return max(float(pen), free)


def huber_lasso(Z, y, d_pen, omega, lam, theta0=None, L0=1.0, max_iter=MAX_ITER,
                rel_tol=REL_OBJ_TOL, grad_tol=PROX_GRAD_TOL, trace=None):
    """Minimize ``mean(rho_omega(y - Z theta)) + lam * ||theta[:d_pen]||_1``.

    Monotone FISTA with backtracking on the Lipschitz estimate. Returns
    ``(theta, objective, iterations, L)``; ``trace`` (a list) collects the
    objective after every iteration when given.
    """
    n, p = Z.shape
    x = np.zeros(p) if theta0 is None else np.array(theta0, dtype=np.float64)
    mask = np.zeros(p, dtype=bool)
    mask[:d_pen] = True

    def smooth(theta):
        r = y - Z @ theta
        return _loss(r, omega), -(Z.T @ np.clip(r, -omega, omega)) / n

    def prox(v, step):
        out = v.copy()
        out[mask] = _soft(v[mask], step * lam)
        return out

    def penalty(theta):
        return lam * float(np.abs(theta[mask]).sum())

    fx, _ = smooth(x)
    Fx = fx + penalty(x)
    yk, t, L = x.copy(), 1.0, float(L0)
    for it in range(1, max_iter + 1):
        fy, gy = smooth(yk)
        while True:
            z = prox(yk - gy / L, 1.0 / L)
            diff = z - yk
            fz, _ = smooth(z)
            if fz <= fy + gy @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fy):
                break
            L *= 2.0
        Fz = fz + penalty(z)
        prox_norm = L * float(np.sqrt(diff @ diff))
        x_old, F_old = x, Fx
        if Fz <= Fx:
            x, Fx = z, Fz
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        yk = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_old)
        t = t_new
        if trace is not None:
            trace.append(Fx)
        if prox_norm < grad_tol:
            return x, Fx, it, L
        if Fz <= F_old and (F_old - Fx) <= rel_tol * max(abs(F_old), 1e-300):
            # stalled progress only ends the run if the gradient map at x is
            # small too; otherwise restart the momentum
            yk, t = x.copy(), 1.0
            _, gx = smooth(x)
            stall_tol = min(STALL_GRAD_TOL, 10.0 * grad_tol)
            if L * float(np.linalg.norm(prox(x - gx / L, 1.0 / L) - x)) < stall_tol:
                return x, Fx, it, L
    gap = optimality_gap(Z, y, x, d_pen, omega, lam)
    raise NonConvergence("proximal gradient hit the iteration limit", gap)


def fit_farm_huber(fe, config, theta0=None, **kwargs):
    """Factor-augmented Huber fit; ``gamma`` is left unpenalized."""
    Z = np.hstack([fe.Uhat, fe.Fhat])
    theta, obj, iters, _ = huber_lasso(Z, fe.Y, fe.d, config.omega, config.lam,
                                       theta0, **kwargs)
    gap = optimality_gap(Z, fe.Y, theta, fe.d, config.omega, config.lam)
    return HuberFit(theta[:fe.d].copy(), theta[fe.d:].copy(), config, obj, gap, iters)


def default_tuning(n, d, vartheta=1.0, c_omega=1.0, c_lambda=1.0):
    """Rate-matched robustification and penalty levels.

    ``omega = c_omega (n / log d)^(1 / (1 + a))`` and
    ``lambda = c_lambda (log d / n)^(a / (1 + a))`` with ``a = min(vartheta, 1)``.
    """
    if n <= 1 or d <= 1:
        raise ValueError("need n > 1 and d > 1")
    a = min(float(vartheta), 1.0)
    logd = np.log(d)
    omega = c_omega * (n / logd) ** (1.0 / (1.0 + a))
    lam = c_lambda * (logd / n) ** (a / (1.0 + a))
    return HuberConfig(omega, lam, vartheta)


@dataclass(frozen=True)
class HuberCV:
    omegas: np.ndarray
    lambdas: np.ndarray
    cv_errors: np.ndarray  # omegas x lambdas, mean absolute validation error
    best: tuple

    @property
    def config(self):
        i, j = self.best
        return HuberConfig(float(self.omegas[i]), float(self.lambdas[j]))


def cv_huber(fe, omegas, lambdas, folds=5, seed=0, vartheta=1.0, **kwargs):
    """Grid CV over ``(omega, lambda)`` scored by mean absolute validation error.

    Absolute error is comparable across different ``omega``; each omega runs
    a warm-started path over the decreasing ``lambdas``.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    lambdas = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1]
    Z = np.hstack([fe.Uhat, fe.Fhat])
    y = fe.Y
    labels = _lasso.fold_ids(fe.n, folds, stream(seed, "huber-folds"))
    errors = np.zeros((omegas.size, lambdas.size))
    for k in range(folds):
        tr, va = labels != k, labels == k
        Ztr, ytr, Zva, yva = Z[tr], y[tr], Z[va], y[va]
        for i, om in enumerate(omegas):
            theta, L = None, 1.0
            for j, lam in enumerate(lambdas):
                theta, _, _, L = huber_lasso(Ztr, ytr, fe.d, om, lam, theta, L0=max(L / 4, 1e-3),
                                             **kwargs)
                errors[i, j] += np.mean(np.abs(yva - Zva @ theta)) / folds
    i, j = np.unravel_index(np.argmin(errors), errors.shape)
    return HuberCV(omegas, lambdas, errors, (int(i), int(j)))
