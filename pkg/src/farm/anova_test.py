"""Testing adequacy of sparse linear regression (H0: varphi = 0).

Rows are split in two. The first part screens covariates by factor-adjusted
marginal regression; the second compares the residual sums of squares of a
sparse fit on ``X_S`` and a factor-augmented fit on ``(Fhat, Uhat_S)``.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _lasso
from .errors import DegenerateColumn, ExponentTooLarge, InsufficientData
from .estimate import lasso_bic
from .fab_test import estimate_sigma_rcv
from .factor_model import default_k_max, estimate_factors, select_num_factors
from .rng import stream

log = logging.getLogger(__name__)

DEFAULT_EXPONENT = 0.8
EBIC_GAMMA = 1.0


@dataclass(frozen=True)
class ScreenRule:
    """``rank`` keeps the top ``k`` coordinates, ``threshold`` keeps ``|b| >= phi``.

    With ``k=None`` the rank rule uses ``ceil(m / log m)`` for the size ``m`` of
    the screened sample. ``iterate`` adds one round of residual screening.
    """

    kind: str = "rank"
    k: int = None
    threshold: float = None
    iterate: bool = True

    def __post_init__(self):
        if self.kind not in ("rank", "threshold"):
            raise ValueError(f"unknown screening rule {self.kind!r}")
        if self.kind == "threshold" and (self.threshold is None or self.threshold < 0):
            raise ValueError("the threshold rule needs a nonnegative threshold")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")

    @classmethod
    def rank(cls, k=None, iterate=True):
        return cls("rank", k=k, iterate=iterate)

    @classmethod
    def thresholded(cls, phi):
        return cls("threshold", threshold=float(phi), iterate=False)

    def describe(self):
        if self.kind == "threshold":
            return f"threshold:{self.threshold!r}"
        return f"rank:{'auto' if self.k is None else self.k}" + (":isis" if self.iterate else "")


@dataclass(frozen=True)
class ScreeningResult:
    selected: np.ndarray
    marginal_betas: np.ndarray
    threshold_or_rank: str
    m: int
    size_bound: int


@dataclass(frozen=True)
class AnovaStatistic:
    Q: float
    raw: float
    rank_deficient: bool


@dataclass(frozen=True)
class AnovaResult:
    Q: float
    sigma_sq_hat: float
    df: int
    p_value: float
    alpha: float
    reject: bool
    Q_raw: float = float("nan")
    no_split: bool = False
    screening: ScreeningResult = None
    stage1_rows: np.ndarray = None
    stage2_rows: np.ndarray = None


def rank_size(m):
    """``ceil(m / log m)``."""
    return int(math.ceil(m / math.log(m)))


def split_indices(n, exponent=DEFAULT_EXPONENT, seed=0):
    """Seeded row partition into a screening part of ``ceil(n^exponent)`` rows and the rest."""
    if n < 30:
        raise InsufficientData(f"sample splitting needs n >= 30, got {n}")
    m = int(math.ceil(n ** exponent))
    if n - m < 2:
        raise ExponentTooLarge(f"exponent {exponent} leaves {n - m} rows for the second stage")
    perm = stream(seed, "split").permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:])


def split_sample(data, exponent=DEFAULT_EXPONENT, seed=0):
    """Two re-centered parts of sizes ``ceil(n^exponent)`` and ``n - m``."""
    first, second = split_indices(data.n, exponent, seed)
    return data.subset(first), data.subset(second)


def _marginal(U, y):
    norms = np.einsum("ij,ij->j", U, U)
    bad = np.flatnonzero(norms <= _lasso.ZERO_THRESHOLD * U.shape[0])
    if bad.size:
        raise DegenerateColumn(int(bad[0]), "zero idiosyncratic norm")
    return U.T @ y / norms


def _top(scores, k, exclude=()):
    order = np.argsort(-np.abs(scores), kind="stable")
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order[:k]


def marginal_screen(part1, K, rule=None, seed=0, folds=10):
    """Factor-adjusted marginal screening.

    ``b_l = Uhat_l' Yresid / ||Uhat_l||^2``. The plain rank rule keeps
    exactly ``min(k, d)`` coordinates. With ``iterate`` a Lasso on that set
    keeps the support chosen by refitted extended BIC, the free slots go to
    the strongest marginal regressions of its residual, and a final
    extended-BIC Lasso on the union gives the selection (at most ``k``).
    """
    rule = rule or ScreenRule()
    if K > min(part1.n, part1.d):
        raise ValueError(f"K={K} exceeds min(m, d)")
    fe = estimate_factors(part1, K)
    U, y = fe.Uhat, fe.Yresid
    betas = _marginal(U, y)
    d = part1.d
    if rule.kind == "threshold":
        selected = np.flatnonzero(np.abs(betas) >= rule.threshold)
        return ScreeningResult(selected, betas, rule.describe(), part1.n, d)
    k = min(rule.k if rule.k is not None else rank_size(part1.n), d)
    selected = _top(betas, k)
    if rule.iterate and k < d:
        coef, support = lasso_bic(U[:, selected], y, ebic_gamma=EBIC_GAMMA, p=d)
        kept = selected[support]
        resid = y - U[:, selected] @ coef
        extra = _top(_marginal(U, resid), k - kept.size, exclude=kept)
        union = np.sort(np.concatenate([kept, extra]))
        selected = union[lasso_bic(U[:, union], y, ebic_gamma=EBIC_GAMMA, p=d)[1]]
    return ScreeningResult(np.sort(selected), betas, rule.describe(), part1.n, k)


def _rss(Z, y):
    if Z.shape[1] == 0:
        return float(y @ y), False
    rank = np.linalg.matrix_rank(Z)
    # lstsq returns the minimum-norm solution, i.e. the pseudo-inverse projection
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    r = y - Z @ coef
    return float(r @ r), rank < Z.shape[1]


def anova_components(data, K, S, fe=None):
    """``Q = ||(I - P_{X_S}) Y||^2 - ||(I - P_Fhat - P_{Uhat_S}) Y||^2``.

    Negative values from rounding are clamped to zero; the raw value and a
    rank-deficiency flag are kept alongside.
    """
    S = np.asarray(S, dtype=np.int64)
    if S.size + K >= data.n:
        raise ValueError(f"|S| + K = {S.size + K} must be below the sample size {data.n}")
    fe = fe if fe is not None else estimate_factors(data, K)
    rss_sparse, def1 = _rss(data.X[:, S], data.Y)
    rss_full, def2 = _rss(np.hstack([fe.Fhat, fe.Uhat[:, S]]), data.Y)
    if def1 or def2:
        warnings.warn("rank-deficient design in the ANOVA projections; using the "
                      "pseudo-inverse", RuntimeWarning, stacklevel=2)
    raw = rss_sparse - rss_full
    if raw < 0:
        log.debug("clamping negative ANOVA statistic %.3e to zero", raw)
    return AnovaStatistic(max(raw, 0.0), raw, def1 or def2)


def anova_statistic(part2, K, S):
    """The clamped ANOVA statistic on ``part2`` with factors re-estimated there."""
    return anova_components(part2, K, S).Q


def sparse_adequacy_test(data, alpha=0.05, seed=0, no_split=False, K=None, rule=None,
                         exponent=DEFAULT_EXPONENT, folds=10):
    """Reject sparse-regression adequacy when ``Q > sigma_hat^2 chi2_{K, 1-alpha}``.

    With ``no_split`` every step uses the full sample (the statistic then
    loses its chi-square calibration; kept for comparison).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rows1 = rows2 = None
    if no_split:
        part1 = part2 = data
    else:
        rows1, rows2 = split_indices(data.n, exponent, seed)
        part1, part2 = data.subset(rows1), data.subset(rows2)
    if K is None:
        K = select_num_factors(part2, default_k_max(part2))
    rule = rule or ScreenRule()
    if rule.kind == "rank" and rule.k is None:
        rule = ScreenRule.rank(rank_size(part2.n), rule.iterate)
    screen = marginal_screen(part1, K, rule, seed, folds)
    fe2 = estimate_factors(part2, K)
    stat = anova_components(part2, K, screen.selected, fe2)
    sigma_sq = estimate_sigma_rcv(fe2, seed, folds) ** 2
    ratio = stat.Q / sigma_sq
    return AnovaResult(
        Q=stat.Q,
        sigma_sq_hat=sigma_sq,
        df=int(K),
        p_value=float(stats.chi2.sf(ratio, K)),
        alpha=float(alpha),
        reject=bool(ratio > stats.chi2.ppf(1.0 - alpha, K)),
        Q_raw=stat.raw,
        no_split=bool(no_split),
        screening=screen,
        stage1_rows=rows1,
        stage2_rows=rows2,
    )


@dataclass(frozen=True)
class PowerReport:
    boundary: float
    phi_norm_sq: float
    above_boundary: bool
    power: float
    reps: int
    rejections: int
    alpha: float
    theta: float


def power_boundary(sigma_sq, K, n, s_n, lambda_min, alpha=0.05, theta=0.1, b_max=1.0,
                   delta=0.1):
    """Smallest ``||varphi||^2`` in the guaranteed-power region.

    ``sigma^2 (2 + delta) (chi2_{K,1-alpha} + chi2_{K,1-theta})
    (1 + K s_n ||B||_max^2 / lambda_min) / n``.
    """
    quant = stats.chi2.ppf(1.0 - alpha, K) + stats.chi2.ppf(1.0 - theta, K)
    inflation = 1.0 + K * s_n * b_max ** 2 / lambda_min
    return sigma_sq * (2.0 + delta) * quant * inflation / n


def power_region_check(spec, alpha=0.05, theta=0.1, seeds=range(200), delta=0.1,
                       b_max=1.0, exponent=DEFAULT_EXPONENT):
    """Empirical rejection rate of :func:`sparse_adequacy_test` against the power boundary.

    The boundary uses the second-stage sample size, the default rank-rule
    screening size as ``s_n`` and the population idiosyncratic covariance
    of ``spec``.
    """
    from .simbench import generate, idiosyncratic_cov

    n2 = spec.n - int(math.ceil(spec.n ** exponent))
    lam_min = float(np.linalg.eigvalsh(idiosyncratic_cov(spec.d, spec.model))[0])
    sigma_sq = spec.noise.sd ** 2
    boundary = power_boundary(sigma_sq, spec.K, n2, rank_size(n2), lam_min, alpha, theta,
                              b_max, delta)
    if spec.varphi_star is not None:
        phi_sq = float(np.sum(np.square(spec.varphi_star)))
    else:
        phi_sq = float("nan")
    rejections = 0
    seeds = list(seeds)
    for s in seeds:
        data, truth = generate(spec.with_seed(s))
        if spec.varphi_star is None:
            phi_sq = float(truth.varphi_star @ truth.varphi_star)
        res = sparse_adequacy_test(data, alpha, seed=s, K=spec.K, exponent=exponent)
        rejections += res.reject
    return PowerReport(boundary, phi_sq, bool(phi_sq >= boundary),
                       rejections / len(seeds), len(seeds), rejections, alpha, theta)
