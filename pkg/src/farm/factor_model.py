"""Latent factor extraction by principal components."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, RankDeficient

SPECTRUM_GUARD = 1e-12


@dataclass(frozen=True)
class DataSet:
    """Centered covariates ``X`` (n x d) and response ``Y`` (n,).

    Build instances with :meth:`from_arrays`, which removes and remembers the
    column means so raw values can be recovered with :meth:`raw`.
    """

    X: np.ndarray
    Y: np.ndarray
    column_means: np.ndarray
    y_mean: float
    names: tuple = field(default=None, compare=False)

    @classmethod
    def from_arrays(cls, X, Y, names=None):
        X = np.array(X, dtype=np.float64, ndmin=2)
        Y = np.array(Y, dtype=np.float64).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        n, d = X.shape
        if n < 2 or d < 1:
            raise ValueError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("X and Y must be finite")
        means = X.mean(axis=0)
        y_mean = float(Y.mean())
        return cls(X - means, Y - y_mean, means, y_mean,
                   None if names is None else tuple(names))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def raw(self):
        """Uncentered ``(X, Y)``."""
        return self.X + self.column_means, self.Y + self.y_mean

    def subset(self, rows):
        """Re-centered data restricted to ``rows``."""
        X, Y = self.raw()
        return DataSet.from_arrays(X[rows], Y[rows], self.names)

    def center_like(self, Xnew):
        """Center new raw rows with this data's column means."""
        Xnew = np.array(Xnew, dtype=np.float64, ndmin=2)
        if Xnew.shape[1] != self.d:
            raise ValueError(f"expected {self.d} columns, got {Xnew.shape[1]}")
        return Xnew - self.column_means


@dataclass(frozen=True)
class FactorEstimate:
    K: int
    Fhat: np.ndarray
    Bhat: np.ndarray
    Uhat: np.ndarray
    V: np.ndarray
    Yresid: np.ndarray
    Y: np.ndarray

    @property
    def n(self):
        return self.Fhat.shape[0]

    @property
    def d(self):
        return self.Bhat.shape[0]

    def projector(self):
        """The n x n projector onto the column span of ``Fhat``."""
        return self.Fhat @ self.Fhat.T / self.n


@dataclass
class SimulationTruth:
    F: np.ndarray
    B: np.ndarray
    U: np.ndarray
    beta_star: np.ndarray
    gamma_star: np.ndarray
    varphi_star: np.ndarray
    eps: np.ndarray
    sigma: float = None
    H: np.ndarray = None

    def rotation(self, fe):
        """``H = n^-1 V^-1 Fhat' F B' B`` for an estimate on the same rows."""
        n = self.F.shape[0]
        self.H = (fe.Fhat.T @ self.F @ (self.B.T @ self.B)) / (n * fe.V[:, None])
        return self.H


def _gram_eigen(X):
    """Eigenpairs of ``X X'`` in descending order.

    Works on whichever Gram matrix is smaller; when ``d < n`` the left
    eigenvectors are recovered as ``X w / ||X w||``.
    """
    n, d = X.shape
    if n <= d:
        vals, vecs = np.linalg.eigh(X @ X.T)
        return np.clip(vals[::-1], 0.0, None), vecs[:, ::-1]
    vals, vecs = np.linalg.eigh(X.T @ X)
    vals, vecs = np.clip(vals[::-1], 0.0, None), vecs[:, ::-1]
    left = X @ vecs
    norms = np.linalg.norm(left, axis=0)
    norms[norms == 0] = 1.0
    return vals, left / norms


def gram_eigenvalues(X):
    """All eigenvalues of ``X X'`` (equivalently ``X' X``), descending."""
    n, d = X.shape
    gram = X @ X.T if n <= d else X.T @ X
    return np.clip(np.linalg.eigvalsh(gram)[::-1], 0.0, None)


def estimate_factors(data, K):
    """PCA estimate of factors, loadings and idiosyncratic parts of ``data.X``.

    ``Fhat / sqrt(n)`` holds the top-``K`` eigenvectors of ``X X'``,
    ``Bhat = X' Fhat / n`` and ``Uhat = X - Fhat Bhat'``. Each factor is signed
    so that its loading column's largest-magnitude entry is positive.
    """
    X = data.X
    n, d = X.shape
    K = int(K)
    if K < 1 or K > min(n, d):
        raise ValueError(f"K must lie in [1, {min(n, d)}], got {K}")
    vals, vecs = _gram_eigen(X)
    tol = max(n, d) * np.finfo(float).eps * max(vals[0], SPECTRUM_GUARD)
    rank = int(np.sum(vals > tol))
    if rank < K:
        raise RankDeficient(rank, K)
    vals = vals[:K]
    Fhat = np.sqrt(n) * vecs[:, :K]
    Bhat = X.T @ Fhat / n
    signs = np.sign(Bhat[np.argmax(np.abs(Bhat), axis=0), np.arange(K)])
    signs[signs == 0] = 1.0
    Fhat *= signs
    Bhat *= signs
    Uhat = X - Fhat @ Bhat.T
    Y = data.Y
    Yresid = Y - Fhat @ (Fhat.T @ Y) / n
    return FactorEstimate(K, Fhat, Bhat, Uhat, vals / n, Yresid, Y.copy())


def select_num_factors(data, K_max):
    """Eigenvalue-ratio estimate of the number of factors.

    Picks the smallest ``k <= K_max`` maximizing ``lambda_k / lambda_{k+1}``
    of the Gram matrix. Once ``lambda_{k+1}`` falls to ``1e-12 * lambda_1``
    the ratio at ``k`` counts as infinite and the scan stops there.
    """
    n, d = data.X.shape
    K_max = int(K_max)
    if K_max < 1 or K_max > min(n, d) - 1:
        raise ValueError(f"K_max must lie in [1, {min(n, d) - 1}], got {K_max}")
    vals = gram_eigenvalues(data.X)
    if vals[0] < SPECTRUM_GUARD:
        raise DegenerateSpectrum("all Gram eigenvalues are numerically zero")
    floor = SPECTRUM_GUARD * vals[0]
    best_k, best_ratio = 1, -np.inf
    for k in range(1, K_max + 1):
        nxt = vals[k]
        if nxt <= floor:
            # exact low rank: the ratio at k is unbounded
            return k
        ratio = vals[k - 1] / nxt
        if ratio > best_ratio:
            best_k, best_ratio = k, ratio
    return best_k


def default_k_max(data):
    return max(1, min(10, min(data.n, data.d) - 1))


def project_out_factors(v, fe):
    """``(I - Fhat Fhat' / n) v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != fe.n:
        raise ValueError(f"vector length {v.shape[0]} does not match n={fe.n}")
    return v - fe.Fhat @ (fe.Fhat.T @ v) / fe.n
