"""Penalized least-squares fit of the factor-augmented sparse regression."""

from dataclasses import dataclass

import numpy as np

from . import _lasso
from .errors import InsufficientData
from .rng import stream


@dataclass(frozen=True)
class FarmEstimate:
    beta: np.ndarray
    gamma: np.ndarray
    lam: float
    active_set: np.ndarray
    objective: float
    kkt_gap: float
    sweeps: int = 0


@dataclass(frozen=True)
class LambdaPath:
    """CV errors along a decreasing lambda grid.

    ``cv_errors`` rows beyond the point where the path was cut short are NaN.
    """

    grid: np.ndarray
    cv_errors: np.ndarray
    chosen: int

    @property
    def mean_errors(self):
        return self.cv_errors.mean(axis=1)

    @property
    def lam(self):
        return float(self.grid[self.chosen])


def gram_problem(fe):
    """``(G, c) = (Uhat'Uhat / n, Uhat' Yresid / n)``."""
    U = fe.Uhat
    n = fe.n
    return U.T @ U / n, U.T @ fe.Yresid / n


def lasso_objective(X, y, beta, lam):
    r = y - X @ beta
    return float(r @ r / (2 * X.shape[0]) + lam * np.abs(beta).sum())


def _estimate(fe, beta, lam, sweeps=0, grad=None):
    beta = np.where(np.abs(beta) < _lasso.ZERO_THRESHOLD, 0.0, beta)
    if grad is None:
        grad = fe.Uhat.T @ (fe.Yresid - fe.Uhat @ beta) / fe.n
    gamma = fe.Fhat.T @ fe.Y / fe.n
    return FarmEstimate(
        beta=beta,
        gamma=gamma,
        lam=float(lam),
        active_set=np.flatnonzero(beta),
        objective=lasso_objective(fe.Uhat, fe.Yresid, beta, lam),
        kkt_gap=float(_lasso.kkt_violation(grad, beta, lam, -1)),
        sweeps=sweeps,
    )


def fit_farm_lasso(fe, lam, beta0=None, tol=_lasso.CD_TOL,
                   max_sweeps=_lasso.CD_MAX_SWEEPS):
    """Lasso of ``Yresid`` on ``Uhat`` plus the closed-form ``gamma = Fhat'Y / n``.

    Because ``Fhat' Uhat = 0`` the factor coefficients decouple from the
    penalized problem and do not depend on ``lam``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    G, c = gram_problem(fe)
    beta, grad, sweeps = _lasso.solve(G, c, lam, beta0, tol=tol, max_sweeps=max_sweeps)
    return _estimate(fe, beta, lam, sweeps, grad)


def lambda_max(fe):
    return float(np.max(np.abs(fe.Uhat.T @ fe.Yresid)) / fe.n)


def cv_path(X, y, folds=10, seed=0, n_lambda=_lasso.N_LAMBDA,
            ratio=_lasso.LAMBDA_RATIO, patience=10):
    """Fold-averaged CV along the standard grid for a Lasso of ``y`` on ``X``."""
    n = X.shape[0]
    if n < 2 * folds:
        raise InsufficientData(f"{n} rows cannot fill {folds} folds of at least two")
    lam_max = float(np.max(np.abs(X.T @ y)) / n)
    if lam_max <= 0:
        grid = np.zeros(1)
        return LambdaPath(grid, np.zeros((1, folds)), 0)
    grid = _lasso.lambda_grid(lam_max, n_lambda, ratio)
    labels = _lasso.fold_ids(n, folds, stream(seed, "cv-folds"))
    errors = _lasso.FoldGrams(X, labels, y).cv_errors(grid, patience)
    mean = errors.mean(axis=1)
    # argmin returns the first minimizer, which is the larger lambda on ties
    chosen = int(np.nanargmin(mean))
    return LambdaPath(grid, errors, chosen)


def cv_select_lambda(fe, folds=10, seed=0, **kwargs):
    """Choose lambda for :func:`fit_farm_lasso` by K-fold CV on ``(Uhat, Yresid)``."""
    return cv_path(fe.Uhat, fe.Yresid, folds, seed, **kwargs)


def fit_farm_cv(fe, folds=10, seed=0):
    """CV-tuned FARM fit; returns ``(FarmEstimate, LambdaPath)``."""
    path = cv_select_lambda(fe, folds, seed)
    G, c = gram_problem(fe)
    beta, grad, sweeps = _lasso.fit_path_to(G, c, path.grid, path.chosen)
    return _estimate(fe, beta, path.lam, sweeps, grad), path


def lasso_cv(X, y, folds=10, seed=0):
    """Plain CV-tuned Lasso of ``y`` on ``X`` (no intercept; centered inputs).

    Returns ``(beta, LambdaPath)``.
    """
    path = cv_path(X, y, folds, seed)
    n = X.shape[0]
    beta, _, _ = _lasso.fit_path_to(X.T @ X / n, X.T @ y / n, path.grid, path.chosen)
    return beta, path


def factor_scores(fe, Xnew):
    """Factor scores ``Xnew Bhat V^-1`` for centered new rows."""
    Xnew = np.array(Xnew, dtype=np.float64, ndmin=2)
    if Xnew.shape[1] != fe.d:
        raise ValueError(f"expected {fe.d} columns, got {Xnew.shape[1]}")
    return Xnew @ fe.Bhat / fe.V


def predict(est, fe, Xnew):
    """Predicted (centered) responses for centered new rows.

    New factors are ``Xnew Bhat V^-1``, the map that reproduces ``Fhat`` on
    the training rows, and the idiosyncratic part is what the loadings leave.
    """
    Fnew = factor_scores(fe, Xnew)
    Unew = np.asarray(Xnew, dtype=np.float64) - Fnew @ fe.Bhat.T
    return Fnew @ est.gamma + Unew @ est.beta


def lasso_bic(X, y, n_lambda=_lasso.N_LAMBDA, ratio=_lasso.LAMBDA_RATIO,
              ebic_gamma=0.0, p=None):
    """Support selection along the Lasso path by (extended) BIC after an OLS refit.

    Each distinct support on the standard grid is scored by
    ``n log(RSS / n) + |support| (log n + 2 ebic_gamma log p)`` with RSS from
    least squares on that support, which removes the shrinkage bias that
    makes plain Lasso BIC over-select. ``p`` is the number of candidate
    covariates the columns of ``X`` were drawn from (default: their count). The path stops once a support would leave fewer than two
    residual degrees of freedom. Returns ``(beta, support)`` with ``beta``
    the refitted coefficients.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    G, c = X.T @ X / n, X.T @ y / n
    best_beta, best_support = np.zeros(d), np.zeros(0, dtype=np.int64)
    best = n * np.log(max(float(y @ y), 1e-300) / n)
    per_term = np.log(n) + 2.0 * ebic_gamma * np.log(max(p or d, 1))
    lam_max = float(np.max(np.abs(c))) if d else 0.0
    if lam_max <= 0:
        return best_beta, best_support
    seen = set()
    beta = None
    for lam in _lasso.lambda_grid(lam_max, n_lambda, ratio):
        beta, _, _ = _lasso.solve(G, c, lam, beta)
        support = np.flatnonzero(np.abs(beta) > _lasso.ZERO_THRESHOLD)
        if support.size >= n - 2:
            break
        key = support.tobytes()
        if key in seen or support.size == 0:
            continue
        seen.add(key)
        coef, *_ = np.linalg.lstsq(X[:, support], y, rcond=None)
        r = y - X[:, support] @ coef
        bic = n * np.log(max(float(r @ r), 1e-300) / n) + support.size * per_term
        if bic < best:
            best, best_support = bic, support
            best_beta = np.zeros(d)
            best_beta[support] = coef
    return best_beta, best_support
