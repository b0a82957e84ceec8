"""Command-line interface: ``farm estimate | test | simulate | predict``.

Exit codes: 0 success, 1 runtime error, 2 usage error. Reports are JSON
with sorted keys, so identical inputs and seeds give identical bytes.
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import FarmError

SCHEMA = "farm-report/1"


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str = None
    response_col: str = None
    fred_md: bool = False
    start: str = None
    end: str = None
    alpha: float = 0.05
    boot: int = 1000
    folds: int = 10
    seed: int = 0
    k: int = None
    screen: str = "rank"
    threshold: float = None
    no_split: bool = False
    robust: bool = False
    omega: float = None
    lam: float = None
    window: int = 90
    model: str = "farm"
    which: str = None
    preset: str = None
    reps: int = None
    out: str = None
    fmt: str = "csv"

    @classmethod
    def from_args(cls, args, parser):
        """Validate every parameter before any computation starts."""
        cfg = cls(**{k: v for k, v in vars(args).items() if k in cls.__dataclass_fields__})
        errors = []
        if not 0.0 < cfg.alpha < 1.0:
            errors.append(f"--alpha must lie in (0, 1), got {cfg.alpha}")
        if cfg.boot < 100:
            errors.append(f"--boot must be at least 100, got {cfg.boot}")
        if cfg.folds < 2:
            errors.append(f"--folds must be at least 2, got {cfg.folds}")
        if cfg.seed < 0:
            errors.append("--seed must be nonnegative")
        if cfg.k is not None and cfg.k < 1:
            errors.append("--k must be positive")
        if cfg.screen == "threshold" and cfg.threshold is None:
            errors.append("--screen threshold needs --threshold")
        if cfg.omega is not None and not cfg.omega > 0:
            errors.append("--omega must be positive")
        if cfg.omega is not None and not cfg.robust:
            errors.append("--omega only applies with --robust")
        if cfg.lam is not None and not cfg.lam >= 0:
            errors.append("--lambda must be nonnegative")
        if cfg.reps is not None and cfg.reps < 1:
            errors.append("--reps must be positive")
        if cfg.fred_md and cfg.response_col is None:
            errors.append("--fred-md needs --response-col")
        if errors:
            parser.error("; ".join(errors))
        return cfg


# -- JSON helpers ---------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dump_report(report):
    return json.dumps(_jsonable({"schema": SCHEMA, **report}), sort_keys=True, indent=2) + "\n"


def _write(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- commands -------------------------------------------------------------------

def load_data(cfg):
    from .data_io import load_fred_md, read_matrix_csv

    if cfg.fred_md:
        return load_fred_md(cfg.input, cfg.response_col, cfg.start, cfg.end)
    return read_matrix_csv(cfg.input, cfg.response_col)


def _factors(data, k):
    from .factor_model import default_k_max, estimate_factors, select_num_factors

    K = k if k is not None else select_num_factors(data, default_k_max(data))
    return estimate_factors(data, K)


def cmd_estimate(cfg):
    from .estimate import fit_farm_cv, fit_farm_lasso
    from .huber import HuberConfig, cv_huber, default_tuning, fit_farm_huber

    data = load_data(cfg)
    fe = _factors(data, cfg.k)
    report = {"command": "estimate", "n": data.n, "d": data.d, "K": fe.K,
              "names": list(data.names) if data.names else None,
              "eigenvalues": (fe.V).tolist()}
    if cfg.robust:
        if cfg.omega is not None and cfg.lam is not None:
            config = HuberConfig(cfg.omega, cfg.lam)
        elif cfg.omega is not None or cfg.lam is not None:
            base = default_tuning(data.n, data.d)
            config = HuberConfig(cfg.omega or base.omega, cfg.lam or base.lam)
        else:
            base = default_tuning(data.n, data.d)
            grid = cv_huber(fe, [c * base.omega for c in (0.25, 0.5, 1.0)],
                            [c * base.lam for c in (0.5, 0.25, 0.1, 0.05, 0.02)],
                            min(cfg.folds, 5), cfg.seed)
            config = grid.config
        fit = fit_farm_huber(fe, config)
        report["fit"] = {"method": "huber", "omega": config.omega, "lambda": config.lam,
                         "beta": fit.beta, "gamma": fit.gamma, "objective": fit.objective,
                         "optimality_gap": fit.optimality_gap,
                         "iterations": fit.iterations,
                         "active_set": np.flatnonzero(fit.beta)}
        return report
    if cfg.lam is not None:
        est, path = fit_farm_lasso(fe, cfg.lam), None
    else:
        est, path = fit_farm_cv(fe, cfg.folds, cfg.seed)
    report["fit"] = {"method": "lasso", "lambda": est.lam, "beta": est.beta,
                     "gamma": est.gamma, "objective": est.objective,
                     "kkt_gap": est.kkt_gap, "active_set": est.active_set}
    if path is not None:
        report["cv"] = {"grid": path.grid, "mean_errors": path.mean_errors,
                        "chosen": path.chosen, "folds": cfg.folds}
    return report


def _report_dict(rep):
    return {"statistic": rep.statistic, "critical_value": rep.critical_value,
            "p_value": rep.p_value, "alpha": rep.alpha, "reject": rep.reject,
            "bootstrap_draws": rep.bootstrap_draws}


def cmd_test(cfg):
    from .anova_test import ScreenRule, sparse_adequacy_test
    from .fab_test import fab_test

    data = load_data(cfg)
    if cfg.which == "factor-adequacy":
        res = fab_test(data, cfg.alpha, cfg.boot, cfg.seed, cfg.k, cfg.folds)
        return {"command": "test", "which": cfg.which, "n": data.n, "d": data.d,
                "K": res.K, "sigma_hat": res.debiased.sigma_hat,
                "lambda": res.estimate.lam, "report": _report_dict(res.report)}
    rule = (ScreenRule.thresholded(cfg.threshold) if cfg.screen == "threshold"
            else ScreenRule.rank())
    res = sparse_adequacy_test(data, cfg.alpha, cfg.seed, cfg.no_split, cfg.k, rule,
                               folds=cfg.folds)
    return {"command": "test", "which": cfg.which, "n": data.n, "d": data.d,
            "report": {"Q": res.Q, "Q_raw": res.Q_raw, "sigma_sq_hat": res.sigma_sq_hat,
                       "df": res.df, "p_value": res.p_value, "alpha": res.alpha,
                       "reject": res.reject, "no_split": res.no_split,
                       "selected": res.screening.selected,
                       "screen_rule": res.screening.threshold_or_rank}}


def cmd_simulate(cfg):
    from .simbench import PRESETS, ReplicationTable, curves_to_csv, run_preset

    if cfg.preset not in PRESETS:
        raise ValueError(f"unknown preset {cfg.preset!r}; choose from "
                         f"{', '.join(sorted(PRESETS))}")
    result = run_preset(cfg.preset, cfg.reps, cfg.seed, B=cfg.boot)
    if isinstance(result, ReplicationTable):
        return result.to_json() if cfg.fmt == "json" else result.to_csv()
    if cfg.fmt == "json":
        return dump_report({"command": "simulate", "preset": cfg.preset,
                            "curves": [c.to_rows() for c in result]})
    return curves_to_csv(result)


def cmd_predict(cfg):
    from .simbench import moving_window_predictions, out_of_sample_r2

    data = load_data(cfg)
    y, yhat, ybar = moving_window_predictions(data, cfg.window, cfg.model, cfg.k, cfg.seed)
    return {"command": "predict", "model": cfg.model, "window": cfg.window,
            "n": data.n, "d": data.d, "predictions": len(y),
            "r2": out_of_sample_r2(y, yhat, ybar)}


# -- argument parsing -----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="farm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--input", required=True, help="CSV file with a header row")
        p.add_argument("--response-col", help="response column name or index "
                       "(default: first column)")
        p.add_argument("--fred-md", action="store_true",
                       help="input is in FRED-MD layout (transform-code row)")
        p.add_argument("--start", help="first date kept (FRED-MD)")
        p.add_argument("--end", help="last date kept (FRED-MD)")
        p.add_argument("--k", type=int, help="number of factors (default: eigenvalue ratio)")
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("estimate", help="fit the factor-augmented regression")
    data_args(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed penalty (default: CV)")
    p.add_argument("--robust", action="store_true", help="adaptive Huber loss")
    p.add_argument("--omega", type=float, help="Huber robustification parameter")

    p = sub.add_parser("test", help="adequacy tests")
    p.add_argument("which", choices=("factor-adequacy", "sparse-adequacy"))
    data_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=1000, help="bootstrap draws")
    p.add_argument("--screen", choices=("rank", "threshold"), default="rank")
    p.add_argument("--threshold", type=float, help="threshold for --screen threshold")
    p.add_argument("--no-split", action="store_true",
                   help="screen and test on the full sample")

    p = sub.add_parser("simulate", help="run a simulation preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    p.add_argument("--out")

    p = sub.add_parser("predict", help="moving-window out-of-sample R^2")
    data_args(p)
    p.add_argument("--window", type=int, default=90)
    p.add_argument("--model", choices=("farm", "sparse", "factor"), default="farm")
    return parser


COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "simulate": cmd_simulate,
            "predict": cmd_predict}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = RunConfig.from_args(args, parser)
    try:
        result = COMMANDS[cfg.command](cfg)
        text = result if isinstance(result, str) else dump_report(result)
        _write(text, cfg.out)
    except (FarmError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"farm: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
