"""CSV and FRED-MD ingestion.

Numeric cells must be plain decimal or scientific literals; thousands
separators, decimal commas, underscores and non-finite values are rejected
with the line and column of the offending cell.
"""

import csv
import re
from datetime import datetime

import numpy as np

from .errors import DataFormatError
from .factor_model import DataSet

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_DATE_FORMATS = ("%m/%d/%Y", "%Y-%m-%d", "%Y/%m/%d")

# lag lost to differencing, per transform code
TRANSFORM_LAGS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


def parse_number(text, where):
    s = text.strip()
    if not _NUMBER.match(s):
        raise DataFormatError(f"{where}: not a finite plain number: {text!r}")
    value = float(s)
    if not np.isfinite(value):
        raise DataFormatError(f"{where}: value overflows: {text!r}")
    return value


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not a text CSV file ({exc.reason})") from None
    # csv line numbers are 1-based; drop trailing blank lines
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    return rows


def _resolve_column(names, response_col, path):
    if response_col is None:
        return 0
    if response_col in names:
        return names.index(response_col)
    try:
        idx = int(response_col)
    except ValueError:
        raise DataFormatError(f"{path}: no column named {response_col!r}") from None
    if not 0 <= idx < len(names):
        raise DataFormatError(f"{path}: column index {idx} outside 0..{len(names) - 1}")
    return idx


def read_matrix_csv(path, response_col=None):
    """Read a numeric CSV with a header row into a :class:`DataSet`.

    The response is the first column unless ``response_col`` names another
    (by header or zero-based index); the remaining columns form ``X``.
    """
    rows = _read_rows(path)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need a header row and at least one data row")
    names = [h.strip() for h in rows[0]]
    width = len(names)
    if width < 2:
        raise DataFormatError(f"{path}:1: need a response column and at least one covariate")
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataFormatError(f"{path}:{i}: expected {width} fields, found {len(row)}")
        for j, cell in enumerate(row, start=1):
            values[i - 2, j - 1] = parse_number(cell, f"{path}:{i}:{j}")
    col = _resolve_column(names, response_col, path)
    keep = [j for j in range(width) if j != col]
    try:
        return DataSet.from_arrays(values[:, keep], values[:, col], [names[j] for j in keep])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_matrix_csv(path, X, Y, names=None, response_name="Y"):
    """Write ``Y`` then the columns of ``X`` with full float precision."""
    X = np.asarray(X, dtype=np.float64)
    names = names or [f"X{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([response_name, *names])
        for y, row in zip(Y, X):
            writer.writerow([repr(float(y)), *(repr(float(v)) for v in row)])


def transform_series(x, code):
    """Apply a FRED-MD transform code; the first ``TRANSFORM_LAGS[code]`` entries are NaN.

    1 level, 2 first difference, 3 second difference, 4 log, 5 log
    difference, 6 second log difference, 7 first difference of the growth
    rate ``x_t / x_{t-1} - 1``. Logs of non-positive values are NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if code not in TRANSFORM_LAGS:
        raise DataFormatError(f"unknown transform code {code!r}")

    def diff(v, k=1):
        out = np.full_like(v, np.nan)
        if k == 1:
            out[1:] = v[1:] - v[:-1]
        else:
            out[2:] = v[2:] - 2.0 * v[1:-1] + v[:-2]
        return out

    def log(v):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), np.nan)

    if code == 1:
        return x.copy()
    if code == 2:
        return diff(x)
    if code == 3:
        return diff(x, 2)
    if code == 4:
        return log(x)
    if code == 5:
        return diff(log(x))
    if code == 6:
        return diff(log(x), 2)
    growth = np.full_like(x, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        growth[1:] = x[1:] / x[:-1] - 1.0
    return diff(growth)


def _parse_date(text, where):
    s = text.strip()
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    raise DataFormatError(f"{where}: unrecognized date {text!r}")


def _as_date(value):
    if value is None or not isinstance(value, str):
        return value
    return _parse_date(value, "span bound")


def read_fred_md(path):
    """Raw FRED-MD table: ``(dates, names, codes, values)`` with NaN for blanks."""
    rows = _read_rows(path)
    if len(rows) < 3:
        raise DataFormatError(f"{path}: need a header, a transform-code row and data")
    names = [h.strip() for h in rows[0][1:]]
    width = len(names) + 1
    if len(rows[1]) != width:
        raise DataFormatError(f"{path}:2: expected {width} fields, found {len(rows[1])}")
    codes = []
    for j, cell in enumerate(rows[1][1:], start=2):
        try:
            code = int(float(cell))
        except ValueError:
            raise DataFormatError(f"{path}:2:{j}: bad transform code {cell!r}") from None
        if code not in TRANSFORM_LAGS:
            raise DataFormatError(f"{path}:2:{j}: unknown transform code {code}")
        codes.append(code)
    dates, values = [], np.full((len(rows) - 2, len(names)), np.nan)
    for i, row in enumerate(rows[2:], start=3):
        if len(row) != width:
            raise DataFormatError(f"{path}:{i}: expected {width} fields, found {len(row)}")
        dates.append(_parse_date(row[0], f"{path}:{i}:1"))
        if len(dates) > 1 and dates[-1] <= dates[-2]:
            raise DataFormatError(f"{path}:{i}:1: dates are not strictly increasing")
        for j, cell in enumerate(row[1:], start=2):
            if cell.strip():
                values[i - 3, j - 2] = parse_number(cell, f"{path}:{i}:{j}")
    return dates, names, codes, values


def load_fred_md(path, response, start=None, end=None, columns=None, return_dates=False):
    """Transformed FRED-MD panel as a :class:`DataSet` with ``response`` as ``Y``.

    Every series is transformed by its code, the leading rows lost to
    differencing are dropped, the sample is cut to ``[start, end]`` and
    covariates with any missing value in that span are dropped.
    ``columns`` optionally restricts the covariates considered.
    """
    dates, names, codes, values = read_fred_md(path)
    if response not in names:
        raise DataFormatError(f"{path}: no series named {response!r}")
    lag = max(TRANSFORM_LAGS[c] for c in codes)
    panel = np.column_stack([transform_series(values[:, j], c) for j, c in enumerate(codes)])
    panel, dates = panel[lag:], dates[lag:]
    start, end = _as_date(start), _as_date(end)
    rows = [i for i, d in enumerate(dates)
            if (start is None or d >= start) and (end is None or d <= end)]
    if not rows:
        raise DataFormatError(f"{path}: no observations in the requested span")
    panel = panel[rows]
    y_idx = names.index(response)
    y = panel[:, y_idx]
    if np.isnan(y).any():
        raise DataFormatError(f"{path}: response {response!r} has missing values in the span")
    allowed = set(columns) if columns is not None else None
    keep = [j for j in range(len(names))
            if j != y_idx and (allowed is None or names[j] in allowed)
            and not np.isnan(panel[:, j]).any()]
    if not keep:
        raise DataFormatError(f"{path}: no complete covariates in the requested span")
    data = DataSet.from_arrays(panel[:, keep], y, [names[j] for j in keep])
    if return_dates:
        return data, [dates[i] for i in rows]
    return data
