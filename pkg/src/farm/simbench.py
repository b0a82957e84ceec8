"""Data-generating processes, the replication harness, and forecast benchmarks."""

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import linalg, stats

from .errors import WindowTooSmall
from .factor_model import DataSet, SimulationTruth
from .rng import derive_seed, stream

FACTOR_AR_DECAY = 0.5
IDIO_AR_CORR = 0.6


@dataclass(frozen=True)
class Noise:
    kind: str
    scale: float

    @classmethod
    def gaussian(cls, sigma=0.5):
        return cls("gaussian", float(sigma))

    @classmethod
    def uniform(cls, a=math.sqrt(3) / 2):
        """Unif(-a, a)."""
        return cls("uniform", float(a))

    @classmethod
    def student_t(cls, df=3):
        return cls("student_t", float(df))

    @property
    def sd(self):
        if self.kind == "gaussian":
            return self.scale
        if self.kind == "uniform":
            return self.scale / math.sqrt(3)
        if self.kind == "student_t":
            df = self.scale
            return math.sqrt(df / (df - 2)) if df > 2 else math.inf
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def draw(self, rng, n):
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal(n)
        if self.kind == "uniform":
            return rng.uniform(-self.scale, self.scale, n)
        if self.kind == "student_t":
            return rng.standard_t(self.scale, n)
        raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class DgpSpec:
    """One simulation setting.

    ``model`` is ``"iid"`` (standard normal factors and idiosyncratic terms)
    or ``"ar"`` (VAR(1) factors, Toeplitz-correlated idiosyncratic terms).
    Supply exactly one of ``gamma_star`` and ``varphi_star``.
    """

    n: int
    d: int
    K: int
    beta_star: tuple
    gamma_star: tuple = None
    varphi_star: tuple = None
    model: str = "iid"
    noise: Noise = field(default_factory=Noise.gaussian)
    seed: int = 0

    def __post_init__(self):
        if (self.gamma_star is None) == (self.varphi_star is None):
            raise ValueError("supply exactly one of gamma_star and varphi_star")
        if self.model not in ("iid", "ar"):
            raise ValueError(f"unknown model {self.model!r}")
        if len(self.beta_star) != self.d:
            raise ValueError("beta_star must have length d")
        coef = self.gamma_star if self.gamma_star is not None else self.varphi_star
        if len(coef) != self.K:
            raise ValueError("factor coefficients must have length K")

    def with_seed(self, seed):
        return DgpSpec(self.n, self.d, self.K, self.beta_star, self.gamma_star,
                       self.varphi_star, self.model, self.noise, int(seed))


def factor_transition(K):
    idx = np.arange(K)
    return FACTOR_AR_DECAY ** (np.abs(idx[:, None] - idx[None, :]) + 1)


def idiosyncratic_cov(d, model="ar"):
    if model == "iid":
        return np.eye(d)
    idx = np.arange(d)
    return IDIO_AR_CORR ** np.abs(idx[:, None] - idx[None, :])


def stationary_factor_cov(K):
    """Solves ``S = Phi S Phi' + I`` for the VAR(1) factor transition."""
    return linalg.solve_discrete_lyapunov(factor_transition(K), np.eye(K))


def _draw_factors(rng, spec):
    n, K = spec.n, spec.K
    if spec.model == "iid":
        return rng.standard_normal((n, K))
    Phi = factor_transition(K)
    chol = np.linalg.cholesky(stationary_factor_cov(K))
    f = chol @ rng.standard_normal(K)
    xi = rng.standard_normal((n, K))
    F = np.empty((n, K))
    for t in range(n):
        f = Phi @ f + xi[t]
        F[t] = f
    return F


def _draw_idiosyncratic(rng, spec):
    n, d = spec.n, spec.d
    Z = rng.standard_normal((n, d))
    if spec.model == "iid":
        return Z
    # AR(1) across columns has exactly the Toeplitz covariance rho^|i-j|
    U = np.empty((n, d))
    U[:, 0] = Z[:, 0]
    scale = math.sqrt(1.0 - IDIO_AR_CORR ** 2)
    for j in range(1, d):
        U[:, j] = IDIO_AR_CORR * U[:, j - 1] + scale * Z[:, j]
    return U


def generate(spec):
    """Draw ``(DataSet, SimulationTruth)`` for ``spec``.

    Loadings are Unif(-1, 1), ``X = F B' + U`` and
    ``Y = F gamma + U beta + eps`` (equivalently ``F varphi + X beta + eps``).
    """
    rng = stream(spec.seed, "dgp")
    beta = np.asarray(spec.beta_star, dtype=np.float64)
    B = rng.uniform(-1.0, 1.0, (spec.d, spec.K))
    F = _draw_factors(rng, spec)
    U = _draw_idiosyncratic(rng, spec)
    eps = spec.noise.draw(rng, spec.n)
    if spec.gamma_star is not None:
        gamma = np.asarray(spec.gamma_star, dtype=np.float64)
        varphi = gamma - B.T @ beta
    else:
        varphi = np.asarray(spec.varphi_star, dtype=np.float64)
        gamma = varphi + B.T @ beta
    X = F @ B.T + U
    Y = F @ gamma + U @ beta + eps
    truth = SimulationTruth(F, B, U, beta, gamma, varphi, eps, spec.noise.sd)
    return DataSet.from_arrays(X, Y), truth


# -- paper simulation settings -------------------------------------------------

def factor_test_spec(w, d=200, model="iid", noise=None, n=200, seed=0):
    """Factor-adequacy setting: K=2, gamma=(0.5, 0.5), beta=(w, w, w, 0, ...)."""
    beta = np.zeros(d)
    beta[:3] = w
    return DgpSpec(n, d, 2, tuple(beta), gamma_star=(0.5, 0.5), model=model,
                   noise=noise or Noise.gaussian(0.5), seed=seed)


def sparse_test_spec(v, d=250, model="iid", noise=None, n=250, seed=0):
    """Sparse-adequacy setting: K=3, beta=(0.8 x 4, 0, ...), varphi = v * 1."""
    beta = np.zeros(d)
    beta[:4] = 0.8
    return DgpSpec(n, d, 3, tuple(beta), varphi_star=(v,) * 3, model=model,
                   noise=noise or Noise.gaussian(0.5), seed=seed)


def estimation_spec(n, noise, d=1000, s=3, seed=0):
    """Estimation-accuracy setting: K=2, gamma=(0.5, 0.5), first s betas 0.5."""
    beta = np.zeros(d)
    beta[:s] = 0.5
    return DgpSpec(n, d, 2, tuple(beta), gamma_star=(0.5, 0.5), model="iid",
                   noise=noise, seed=seed)


def sample_sizes(rate_lo, rate_hi, points, d, scale):
    """Sample sizes putting ``scale * sqrt(log d / n)`` on a uniform grid."""
    rates = np.linspace(rate_lo, rate_hi, points)
    return [int(math.ceil(scale ** 2 * math.log(d) / r ** 2)) for r in rates]


# -- replication harness ----------------------------------------------------

def n_threads():
    """Worker count from ``FARM_THREADS`` (default 1)."""
    value = os.environ.get("FARM_THREADS", "1")
    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"FARM_THREADS must be an integer, got {value!r}") from None
    return max(threads, 1)


def _parallel_map(fn, items, threads=None):
    threads = n_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=threads)(delayed(fn)(item) for item in items)


def cell_key(setting, value):
    return f"{setting}|{value!r}"


def rep_seed(master_seed, setting, value, rep):
    """Seed of replication ``rep`` in cell ``(setting, value)``."""
    return derive_seed(master_seed, "cell", cell_key(setting, value), int(rep))


@dataclass(frozen=True)
class Cell:
    setting: str
    value: float
    reps: int
    rate: float
    se: float
    ci_low: float
    ci_high: float
    successes: int = None
    master_seed: int = 0
    reference: float = None

    def seed_for(self, rep):
        """Replay seed of one replication of this cell."""
        if not 0 <= rep < self.reps:
            raise IndexError(f"replication {rep} outside 0..{self.reps - 1}")
        return rep_seed(self.master_seed, self.setting, self.value, rep)


@dataclass(frozen=True)
class ReplicationTable:
    """Rejection rates (or mean errors) per ``(setting, value)`` cell."""

    cells: tuple
    param: str = "value"

    def __getitem__(self, key):
        setting, value = key
        for c in self.cells:
            if c.setting == setting and c.value == value:
                return c
        raise KeyError(key)

    def rates(self, setting=None):
        return [c.rate for c in self.cells if setting is None or c.setting == setting]

    def to_rows(self):
        rows = []
        for c in self.cells:
            row = asdict(c)
            row[self.param] = row.pop("value")
            rows.append(row)
        return rows

    def to_csv(self, path=None):
        fields = ["setting", self.param, "reps", "successes", "rate", "se", "ci_low",
                  "ci_high", "reference", "master_seed"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.to_rows():
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
        return _emit(buf.getvalue(), path)

    def to_json(self, path=None):
        text = json.dumps({"schema": "farm-table/1", "param": self.param,
                           "cells": self.to_rows()}, sort_keys=True, indent=2) + "\n"
        return _emit(text, path)


def _emit(text, path):
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def binomial_cell(setting, value, outcomes, master_seed=0, reference=None, level=0.95):
    """Rate, binomial standard error and Clopper-Pearson interval of 0/1 outcomes."""
    reps = len(outcomes)
    k = int(np.sum(outcomes))
    rate = k / reps
    ci = stats.binomtest(k, reps).proportion_ci(level, method="exact")
    return Cell(setting, value, reps, rate, math.sqrt(rate * (1 - rate) / reps),
                float(ci.low), float(ci.high), k, master_seed, reference)


def run_table(cells, test, reps, master_seed=0, threads=None, references=None,
              param="value"):
    """Monte-Carlo rejection rates.

    ``cells`` maps ``(setting, value)`` to a :class:`DgpSpec`; ``test(data, seed)``
    returns True for a rejection. Replication ``r`` of a cell uses
    :func:`rep_seed` for both the data and the test, so any single run can
    be replayed and results do not depend on ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    references = references or {}
    jobs = [(key, r) for key in cells for r in range(reps)]

    def one(job):
        (setting, value), r = job
        seed = rep_seed(master_seed, setting, value, r)
        data, _ = generate(cells[(setting, value)].with_seed(seed))
        return bool(test(data, seed))

    outcomes = _parallel_map(one, jobs, threads)
    out = []
    for i, key in enumerate(cells):
        block = outcomes[i * reps:(i + 1) * reps]
        out.append(binomial_cell(key[0], key[1], block, master_seed, references.get(key)))
    return ReplicationTable(tuple(out), param)


# -- tests and estimators used by the presets -------------------------------

def factor_adequacy_test(alpha=0.05, B=1000, K=None):
    from .fab_test import fab_test

    def test(data, seed):
        return fab_test(data, alpha=alpha, B=B, seed=seed, K=K).report.reject
    return test


def sparse_adequacy(alpha=0.05, K=None, no_split=False):
    from .anova_test import sparse_adequacy_test

    def test(data, seed):
        return sparse_adequacy_test(data, alpha=alpha, seed=seed, K=K,
                                    no_split=no_split).reject
    return test


HUBER_OMEGA_SCALES = (0.25, 0.5, 1.0)
HUBER_LAMBDA_SCALES = (2.0, 1.4, 1.0, 0.7, 0.5)
HUBER_FOLDS = 3


ESTIMATORS = ("fa_lasso", "plain_lasso", "robust_fa")


def fit_betas(data, estimators, seed=0, K=None):
    """Coefficient estimates keyed by estimator name.

    ``fa_lasso``: CV Lasso on the estimated idiosyncratic parts.
    ``plain_lasso``: CV Lasso of ``Y`` on ``X``.
    ``robust_fa``: factor-adjusted Huber fit with ``(omega, lambda)`` chosen by
    CV on a grid around ``sqrt(n / log d)`` and the ``fa_lasso`` penalty.
    The factor estimate and the ``fa_lasso`` path are shared.
    """
    from .estimate import fit_farm_cv, lasso_cv
    from .factor_model import default_k_max, estimate_factors, select_num_factors
    from .huber import cv_huber, fit_farm_huber

    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimator {sorted(unknown)[0]!r}")
    out = {}
    if "plain_lasso" in estimators:
        out["plain_lasso"] = lasso_cv(data.X, data.Y, 10, seed)[0]
    if {"fa_lasso", "robust_fa"} & set(estimators):
        if K is None:
            K = select_num_factors(data, default_k_max(data))
        fe = estimate_factors(data, K)
        est, path = fit_farm_cv(fe, 10, seed)
        out["fa_lasso"] = est.beta
        if "robust_fa" in estimators:
            base = math.sqrt(data.n / math.log(data.d))
            grid = cv_huber(fe, [c * base for c in HUBER_OMEGA_SCALES],
                            [c * path.lam for c in HUBER_LAMBDA_SCALES], HUBER_FOLDS, seed)
            out["robust_fa"] = fit_farm_huber(fe, grid.config).beta
    return {e: out[e] for e in estimators}


def fit_beta(data, estimator, seed=0, K=None):
    """Coefficient estimate of a single estimator; see :func:`fit_betas`."""
    return fit_betas(data, (estimator,), seed, K)[estimator]


@dataclass(frozen=True)
class ErrorCurve:
    estimator: str
    noise: str
    sizes: tuple
    mean: tuple
    se: tuple
    reps: int
    master_seed: int = 0

    def to_rows(self):
        return [{"estimator": self.estimator, "noise": self.noise, "n": n,
                 "mean_l1_error": m, "se": s, "reps": self.reps}
                for n, m, s in zip(self.sizes, self.mean, self.se)]


def curves_to_csv(curves, path=None):
    fields = ["estimator", "noise", "n", "mean_l1_error", "se", "reps"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for curve in curves:
        writer.writerows(curve.to_rows())
    return _emit(buf.getvalue(), path)


def error_curves(sizes, noise, estimators, reps=100, master_seed=0, d=1000, s=3,
                 threads=None):
    """Mean and standard error of ``||beta_hat - beta_star||_1`` per sample size.

    Every estimator sees the same draws, so the curves are paired.
    """
    estimators = tuple(estimators)
    jobs = [(n, r) for n in sizes for r in range(reps)]

    def one(job):
        n, r = job
        seed = derive_seed(master_seed, "curve", noise.kind, int(n), r)
        data, truth = generate(estimation_spec(n, noise, d, s, seed))
        betas = fit_betas(data, estimators, seed)
        return [float(np.abs(betas[e] - truth.beta_star).sum()) for e in estimators]

    errors = np.array(_parallel_map(one, jobs, threads)).reshape(len(sizes), reps, -1)
    curves = []
    for i, est in enumerate(estimators):
        e = errors[:, :, i]
        curves.append(ErrorCurve(est, noise.kind, tuple(int(n) for n in sizes),
                                 tuple(e.mean(axis=1)),
                                 tuple(e.std(axis=1, ddof=1) / math.sqrt(reps)), reps,
                                 master_seed))
    return curves


def error_curve(sizes, noise, estimator, reps=100, master_seed=0, d=1000, s=3,
                threads=None):
    """Single-estimator form of :func:`error_curves`."""
    return error_curves(sizes, noise, (estimator,), reps, master_seed, d, s, threads)[0]


# -- moving-window prediction -----------------------------------------------

MIN_WINDOW = 20


def out_of_sample_r2(y, yhat, ybar):
    """``1 - sum (y - yhat)^2 / sum (y - ybar)^2``."""
    y, yhat, ybar = (np.asarray(a, dtype=np.float64) for a in (y, yhat, ybar))
    denom = float(np.sum((y - ybar) ** 2))
    if denom <= 0:
        raise ValueError("the benchmark predictions match every response")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / denom


def _window_predictor(model, K, seed):
    from .estimate import fit_farm_cv, lasso_cv, predict, factor_scores
    from .factor_model import default_k_max, estimate_factors, select_num_factors

    def factors(train):
        k = K if K is not None else select_num_factors(train, default_k_max(train))
        return estimate_factors(train, k)

    if model == "farm":
        def fn(train, xnew, t):
            fe = factors(train)
            est, _ = fit_farm_cv(fe, 10, seed)
            return float(predict(est, fe, xnew)[0])
    elif model == "sparse":
        def fn(train, xnew, t):
            beta, _ = lasso_cv(train.X, train.Y, 10, seed)
            return float(xnew[0] @ beta)
    elif model == "factor":
        def fn(train, xnew, t):
            fe = factors(train)
            return float(factor_scores(fe, xnew)[0] @ (fe.Fhat.T @ fe.Y / fe.n))
    elif callable(model):
        fn = model
    else:
        raise ValueError(f"unknown model {model!r}")
    return fn


def moving_window_predictions(data, window, model="farm", K=None, seed=0):
    """One-step predictions from fits on the previous ``window`` rows.

    ``model`` may be ``"farm"``, ``"sparse"``, ``"factor"`` or a callable
    ``fn(train, xnew, t)`` returning a centered prediction, where ``train``
    is the re-centered window and ``xnew`` row ``t`` centered like it.
    Returns ``(y, yhat, ybar)`` for ``t = window, ..., n - 1``.
    """
    if window < MIN_WINDOW:
        raise WindowTooSmall(f"window {window} is below the minimum {MIN_WINDOW}")
    X, Y = data.raw()
    n = X.shape[0]
    if n <= window + 5:
        raise ValueError(f"need n > window + 5, got n={n} and window={window}")
    fn = _window_predictor(model, K, seed)
    ys, preds, means = [], [], []
    for t in range(window, n):
        train = DataSet.from_arrays(X[t - window:t], Y[t - window:t], data.names)
        xnew = train.center_like(X[t])
        preds.append(train.y_mean + fn(train, xnew, t))
        means.append(train.y_mean)
        ys.append(Y[t])
    return np.array(ys), np.array(preds), np.array(means)


def moving_window_r2(data, window=90, model="farm", K=None, seed=0):
    """Out-of-sample R^2 against the moving in-window mean; may be negative."""
    return out_of_sample_r2(*moving_window_predictions(data, window, model, K, seed))


def farm_prediction_spec(n=200, d=50, K=2, phi=1.0, s=3, b=0.5, seed=0):
    """FARM data with a strong factor effect beyond ``X beta`` for prediction checks."""
    beta = np.zeros(d)
    beta[:s] = b
    return DgpSpec(n, d, K, tuple(beta), varphi_star=(phi,) * K, noise=Noise.gaussian(0.5),
                   seed=seed)


# -- presets ------------------------------------------------------------------

FACTOR_W_GRID = (0.0, 0.05, 0.10, 0.15, 0.20)
SPARSE_V_GRID = (0.0, 0.04, 0.08, 0.12, 0.16)

# published rejection rates, Gaussian noise, model (1), smallest d
TABLE1_REFERENCE = {"table1-gaussian1-p200": (0.044, 0.067, 0.326, 0.859, 0.998)}
TABLE2_REFERENCE = {"table2-gaussian1-p250": (0.051, 0.215, 0.659, 0.965, 1.000)}


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str  # "table" or "curve"
    default_reps: int
    description: str


def _noise(kind, estimation=False):
    if kind == "gaussian":
        return Noise.gaussian(1.0 if estimation else 0.5)
    if kind == "uniform":
        return Noise.uniform(math.sqrt(3) if estimation else math.sqrt(3) / 2)
    if kind == "t3":
        return Noise.student_t(3)
    raise ValueError(f"unknown noise {kind!r}")


def _table_presets():
    out = {}
    for noise in ("gaussian", "uniform"):
        for model, label in (("iid", "1"), ("ar", "2")):
            for d in (200, 500):
                name = f"table1-{noise}{label}-p{d}"
                out[name] = Preset(name, "table", 500, f"factor adequacy, d={d}, w grid")
            for d in (250, 600):
                name = f"table2-{noise}{label}-p{d}"
                out[name] = Preset(name, "table", 500, f"sparse adequacy, d={d}, v grid")
    return out


PRESETS = {
    **_table_presets(),
    "fig1a": Preset("fig1a", "curve", 100, "estimation error, Gaussian noise"),
    "fig1b": Preset("fig1b", "curve", 100, "estimation error, uniform noise"),
    "fig1c": Preset("fig1c", "curve", 100, "estimation error, t3 noise"),
    "smoke": Preset("smoke", "table", 10, "small factor-adequacy table for a quick check"),
}

FIG1_LIGHT_RATES = (0.15, 0.5)
FIG1_HEAVY_RATES = (0.4, 0.7)
FIG1_POINTS = 5


def fig1_sizes(noise_kind, d=1000, s=3, K=2, points=FIG1_POINTS):
    """Sample sizes of the estimation-error grid for a noise kind."""
    if noise_kind == "t3":
        return sample_sizes(*FIG1_HEAVY_RATES, points, d, s + K)
    return sample_sizes(*FIG1_LIGHT_RATES, points, d, s)


def _parse_table_preset(name):
    kind, rest = name.split("-", 1)
    label, dim = rest.rsplit("-p", 1)
    noise, model = label[:-1], "iid" if label[-1] == "1" else "ar"
    return kind, noise, model, int(dim)


def run_preset(name, reps=None, master_seed=0, threads=None, B=1000):
    """Run a preset; returns a :class:`ReplicationTable` or a list of :class:`ErrorCurve`."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    reps = preset.default_reps if reps is None else int(reps)
    if name == "smoke":
        cells = {("smoke", w): factor_test_spec(w, d=60, n=120) for w in (0.0, 0.5)}
        return run_table(cells, factor_adequacy_test(B=200), reps, master_seed, threads,
                         param="w")
    if preset.kind == "table":
        kind, noise, model, d = _parse_table_preset(name)
        if kind == "table1":
            cells = {(name, w): factor_test_spec(w, d, model, _noise(noise))
                     for w in FACTOR_W_GRID}
            test, refs, param = factor_adequacy_test(B=B), TABLE1_REFERENCE, "w"
        else:
            cells = {(name, v): sparse_test_spec(v, d, model, _noise(noise))
                     for v in SPARSE_V_GRID}
            test, refs, param = sparse_adequacy(), TABLE2_REFERENCE, "v"
        ref = refs.get(name)
        references = {key: ref[i] for i, key in enumerate(cells)} if ref else None
        return run_table(cells, test, reps, master_seed, threads, references, param)
    noise = {"fig1a": "gaussian", "fig1b": "uniform", "fig1c": "t3"}[name]
    sizes = fig1_sizes(noise)
    estimators = ("robust_fa", "fa_lasso") if noise == "t3" else ("fa_lasso", "plain_lasso")
    return error_curves(sizes, _noise(noise, estimation=True), estimators, reps,
                        master_seed, threads=threads)
