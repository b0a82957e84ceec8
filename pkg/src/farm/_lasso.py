"""Covariance-update coordinate descent for the Lasso.

All solvers work on the scaled Gram form

    minimize  0.5 * b' G b - c' b + lam * ||b||_1,

with ``G = X'X / n`` and ``c = X'y / n``, which is the same problem as
``(2n)^-1 ||y - X b||^2 + lam ||b||_1`` up to a constant. Cross-validation
folds only need their own Gram blocks, so one pass over the data serves an
entire path and every node-wise regression sharing the same design.
"""

import numpy as np
from numba import njit

from .errors import InsufficientData, NonConvergence

CD_TOL = 1e-7
# CV paths and warm-start steps only need to rank lambdas or seed the next
# solve; they stop at this multiple of the response scale. Final fits use
# CD_TOL plus the KKT check.
CV_TOL = 1e-4
CD_MAX_SWEEPS = 100_000
ZERO_THRESHOLD = 1e-12
N_LAMBDA = 100
LAMBDA_RATIO = 1e-3


@njit(cache=True)
def _update(G, grad, beta, j, lam):
    gjj = G[j, j]
    if gjj <= 0.0:
        return 0.0
    z = grad[j] + gjj * beta[j]
    if z > lam:
        new = (z - lam) / gjj
    elif z < -lam:
        new = (z + lam) / gjj
    else:
        new = 0.0
    delta = new - beta[j]
    if delta != 0.0:
        beta[j] = new
        col = G[:, j]
        for k in range(grad.shape[0]):
            grad[k] -= delta * col[k]
    return abs(delta)


@njit(cache=True)
def cd_gram(G, grad, beta, lam, tol, max_sweeps, skip):
    """Run coordinate descent in place; ``grad`` must equal ``c - G @ beta``.

    Alternates full sweeps with sweeps restricted to the active set. Returns
    the number of sweeps used, or -1 when ``max_sweeps`` was exhausted.
    """
    d = beta.shape[0]
    active = np.empty(d, dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        max_delta = 0.0
        for j in range(d):
            if j == skip:
                continue
            step = _update(G, grad, beta, j, lam)
            if step > max_delta:
                max_delta = step
        sweeps += 1
        if max_delta < tol:
            return sweeps
        n_active = 0
        for j in range(d):
            if beta[j] != 0.0:
                active[n_active] = j
                n_active += 1
        while sweeps < max_sweeps:
            max_delta = 0.0
            for i in range(n_active):
                step = _update(G, grad, beta, active[i], lam)
                if step > max_delta:
                    max_delta = step
            sweeps += 1
            if max_delta < tol:
                break
    return -1


@njit(cache=True)
def kkt_violation(grad, beta, lam, skip):
    """Largest violation of the Lasso subgradient conditions."""
    worst = 0.0
    for j in range(beta.shape[0]):
        if j == skip:
            continue
        if beta[j] > 0.0:
            v = abs(grad[j] - lam)
        elif beta[j] < 0.0:
            v = abs(grad[j] + lam)
        else:
            v = abs(grad[j]) - lam
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _quad_error(Gv, cv, yyv, beta):
    # yy - 2 b'c + b'Gb over the nonzero coordinates only
    d = beta.shape[0]
    idx = np.empty(d, dtype=np.int64)
    m = 0
    for j in range(d):
        if beta[j] != 0.0:
            idx[m] = j
            m += 1
    err = yyv
    for a in range(m):
        ja = idx[a]
        err -= 2.0 * beta[ja] * cv[ja]
        acc = 0.0
        for b in range(m):
            acc += Gv[ja, idx[b]] * beta[idx[b]]
        err += beta[ja] * acc
    return err


@njit(cache=True)
def cv_path(Gt, ct, yyt, Gv, cv, yyv, n_train, lambdas, tol, max_sweeps, skip,
            patience):
    """Validation errors (grid x folds) along warm-started paths run in lockstep.

    A fold stops moving once its fit saturates (training R^2 above 0.999, a
    relative R^2 gain below 1e-5, or as many nonzeros as training rows); its
    last solution is carried forward. Coefficient steps stop below
    ``tol * sqrt(yyt)``, i.e. relative to each fold's response scale. The whole path stops once the mean
    validation error has not improved for ``patience`` grid points
    (``patience <= 0`` disables this). Unvisited grid points are NaN.
    """
    n_folds, d = ct.shape
    n_lam = lambdas.shape[0]
    out = np.full((n_lam, n_folds), np.nan)
    betas = np.zeros((n_folds, d))
    grads = ct.copy()
    frozen = np.zeros(n_folds, dtype=np.bool_)
    rsq_old = np.zeros(n_folds)
    if skip >= 0:
        for k in range(n_folds):
            grads[k, skip] = 0.0
    tols = np.empty(n_folds)
    for k in range(n_folds):
        tols[k] = tol * np.sqrt(yyt[k]) if yyt[k] > 0.0 else tol
    best = np.inf
    best_at = 0
    for i in range(n_lam):
        total = 0.0
        for k in range(n_folds):
            beta = betas[k]
            if not frozen[k]:
                grad = grads[k]
                cd_gram(Gt[k], grad, beta, lambdas[i], tols[k], max_sweeps, skip)
                if yyt[k] > 0.0:
                    mse = yyt[k]
                    nnz = 0
                    for j in range(d):
                        if beta[j] != 0.0:
                            mse -= beta[j] * (ct[k, j] + grad[j])
                            nnz += 1
                    rsq = 1.0 - mse / yyt[k]
                    if (rsq > 0.999 or rsq - rsq_old[k] < 1e-5 * rsq
                            or nnz >= n_train[k] - 1):
                        frozen[k] = True
                    rsq_old[k] = rsq
            err = _quad_error(Gv[k], cv[k], yyv[k], beta)
            out[i, k] = err
            total += err
        if total < best:
            best = total
            best_at = i
        elif patience > 0 and i - best_at >= patience:
            break
        done = True
        for k in range(n_folds):
            if not frozen[k]:
                done = False
        if done and i - best_at >= 1:
            # every fold is frozen; remaining errors are constant
            for r in range(i + 1, n_lam):
                for k in range(n_folds):
                    out[r, k] = out[i, k]
            break
    return out


def lambda_grid(lam_max, n_lambda=N_LAMBDA, ratio=LAMBDA_RATIO):
    """Log-spaced, strictly decreasing grid from ``lam_max`` to ``ratio * lam_max``."""
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def solve(G, c, lam, beta0=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS,
          skip=-1, kkt_rtol=1e-6):
    """Solve one Lasso problem to both a coefficient-change and a KKT tolerance.

    Returns ``(beta, grad, sweeps)``. Raises NonConvergence with the final KKT
    gap when the sweep budget runs out.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    beta = np.zeros(c.shape[0]) if beta0 is None else np.array(beta0, dtype=np.float64)
    if skip >= 0:
        beta[skip] = 0.0
    grad = c - G @ beta
    if skip >= 0:
        grad[skip] = 0.0
    used = 0
    step_tol = tol
    # at lam = 0 the relative target vanishes; fall back to rounding level
    target = max(kkt_rtol * lam, ZERO_THRESHOLD * max(1.0, float(np.max(np.abs(c), initial=0.0))))
    while True:
        sweeps = cd_gram(G, grad, beta, lam, step_tol, max_sweeps - used, skip)
        if sweeps < 0:
            gap = kkt_violation(c - G @ beta, beta, lam, skip)
            raise NonConvergence("coordinate descent hit the sweep limit", gap)
        used += sweeps
        # refresh the running gradient to shed accumulated rounding
        grad = c - G @ beta
        if skip >= 0:
            grad[skip] = 0.0
        gap = kkt_violation(grad, beta, lam, skip)
        if gap <= target:
            return beta, grad, used
        if used >= max_sweeps:
            raise NonConvergence("coordinate descent hit the sweep limit", gap)
        step_tol = step_tol / 100.0


def fold_ids(n, folds, rng):
    """Contiguous blocks of a seeded permutation; returns a fold label per row."""
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < 2 * folds:
        raise InsufficientData(f"{n} rows cannot fill {folds} folds of at least two")
    labels = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(rng.permutation(n), folds)):
        labels[block] = k
    return labels


class FoldGrams:
    """Per-fold training and validation Gram blocks of a design matrix.

    Training blocks are obtained by subtracting the validation block from the
    full cross-product, so the design is only multiplied once per fold.
    """

    def __init__(self, X, labels, y=None):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        self.n_folds = F = int(labels.max()) + 1
        full = X.T @ X
        self.train = np.empty((F, d, d))
        self.valid = np.empty((F, d, d))
        self.n_train = np.empty(F, dtype=np.int64)
        for k in range(F):
            Xv = X[labels == k]
            nv = Xv.shape[0]
            gv = Xv.T @ Xv
            self.n_train[k] = n - nv
            self.train[k] = (full - gv) / (n - nv)
            self.valid[k] = gv / nv
        self.has_response = y is not None
        if y is not None:
            xy, yy = X.T @ y, float(y @ y)
            self.train_c = np.empty((F, d))
            self.valid_c = np.empty((F, d))
            self.train_yy = np.empty(F)
            self.valid_yy = np.empty(F)
            for k in range(F):
                mask = labels == k
                nv = int(mask.sum())
                yv = y[mask]
                cv = X[mask].T @ yv
                self.train_c[k] = (xy - cv) / (n - nv)
                self.valid_c[k] = cv / nv
                self.train_yy[k] = (yy - float(yv @ yv)) / (n - nv)
                self.valid_yy[k] = float(yv @ yv) / nv

    def cv_errors(self, lambdas, patience=10, tol=CV_TOL, max_sweeps=CD_MAX_SWEEPS):
        """Validation errors (grid x folds) for the response given at construction."""
        return cv_path(self.train, self.train_c, self.train_yy, self.valid,
                       self.valid_c, self.valid_yy, self.n_train, lambdas, tol,
                       max_sweeps, -1, patience)

    def column_cv_errors(self, j, lambdas, patience=10, tol=CV_TOL,
                         max_sweeps=CD_MAX_SWEEPS):
        """Validation errors for regressing column ``j`` on the other columns."""
        ct = np.ascontiguousarray(self.train[:, :, j])
        cv = np.ascontiguousarray(self.valid[:, :, j])
        return cv_path(self.train, ct, ct[:, j].copy(), self.valid, cv,
                       cv[:, j].copy(), self.n_train, lambdas, tol, max_sweeps,
                       j, patience)


def fit_path_to(G, c, lambdas, stop, skip=-1, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS,
                path_tol=CV_TOL):
    """Warm-start along ``lambdas[:stop + 1]`` and return the final solution.

    Intermediate points are solved loosely (``path_tol`` relative to the
    scale of ``c``); the last one to ``tol`` and the KKT check.
    """
    beta = np.zeros(c.shape[0])
    loose = max(tol, path_tol * float(np.sqrt(np.max(np.abs(c))) if c.size else tol))
    for i in range(stop):
        beta, _, _ = solve(G, c, lambdas[i], beta, tol=loose, max_sweeps=max_sweeps,
                           skip=skip, kkt_rtol=np.inf)
    return solve(G, c, lambdas[stop], beta, tol=tol, max_sweeps=max_sweeps, skip=skip)
