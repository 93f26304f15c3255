"""Observational data handling: loading, validation, standardization, Box-Cox.

A :class:`Dataset` holds an immutable sample of (treatment, covariates,
outcome) triples together with the min-max maps that place the treatment and
every covariate coordinate on [0, 1].  All basis construction and weight
functions downstream consume the standardized scales; the original scales are
kept for model fitting and reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, DataError, FileError, ParseError


@dataclass(frozen=True)
class Observation:
    """One (treatment, covariates, outcome) triple on the original scale."""

    t: float
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class ColumnScale:
    """Affine min-max map of one column onto [0, 1]."""

    lo: float
    hi: float

    def standardize(self, v):
        return (np.asarray(v, dtype=float) - self.lo) / (self.hi - self.lo)

    def destandardize(self, s):
        return self.lo + np.asarray(s, dtype=float) * (self.hi - self.lo)


def _as_finite_1d(arr, name):
    out = np.asarray(arr, dtype=float)
    if out.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DataError(f"{name} contains a non-finite value at position {bad}")
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable sample of N observations with standardization metadata.

    Attributes
    ----------
    t, x, y : ndarray
        Original-scale treatment (N,), covariates (N, r), outcome (N,).
    t_std, x_std : ndarray
        Min-max standardized treatment and covariates, each in [0, 1].
    t_scale, x_scales : ColumnScale
        The affine maps used for standardization.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t_std: np.ndarray = field(repr=False)
    x_std: np.ndarray = field(repr=False)
    t_scale: ColumnScale = field(repr=False)
    x_scales: tuple[ColumnScale, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def r(self) -> int:
        return self.x.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [Observation(float(self.t[i]), self.x[i], float(self.y[i]))
                for i in range(self.n)]

    @staticmethod
    def from_arrays(t, x, y) -> "Dataset":
        """Validate raw arrays and compute the standardization maps."""
        t = _as_finite_1d(t, "treatment")
        y = _as_finite_1d(y, "outcome")
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError(f"covariates must be 2-dimensional, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"covariate column {j} contains a non-finite value at row {i}")
        n = t.shape[0]
        if x.shape[0] != n or y.shape[0] != n:
            raise DataError(
                f"length mismatch: treatment {n}, covariates {x.shape[0]}, outcome {y.shape[0]}")
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")

        def scale_for(col, name):
            lo, hi = float(col.min()), float(col.max())
            if hi <= lo:
                raise DataError(f"{name} is constant; cannot standardize to [0, 1]")
            return ColumnScale(lo, hi)

        t_scale = scale_for(t, "treatment")
        x_scales = tuple(scale_for(x[:, j], f"covariate {j}") for j in range(x.shape[1]))
        t_std = t_scale.standardize(t)
        x_std = np.column_stack([x_scales[j].standardize(x[:, j]) for j in range(x.shape[1])])
        for arr in (t, x, y, t_std, x_std):
            arr.setflags(write=False)
        return Dataset(t=t, x=x, y=y, t_std=t_std, x_std=x_std,
                       t_scale=t_scale, x_scales=x_scales)

    def subset(self, idx) -> "SampleView":
        """Row view reusing the parent standardization maps (for CV folds)."""
        idx = np.asarray(idx)
        return SampleView(t=self.t[idx], x=self.x[idx], y=self.y[idx],
                          t_std=self.t_std[idx], x_std=self.x_std[idx])


@dataclass(frozen=True)
class SampleView:
    """Array view over a subset of rows; scales belong to the parent Dataset."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t_std: np.ndarray
    x_std: np.ndarray

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def r(self) -> int:
        return self.x.shape[1]


def _resolve_column(spec, header, what):
    """Map a column name or integer index to a position in the header."""
    if isinstance(spec, int):
        if not 0 <= spec < len(header):
            raise ConfigurationError(f"{what} column index {spec} out of range (file has {len(header)} columns)")
        return spec
    try:
        return header.index(spec)
    except ValueError:
        raise ConfigurationError(f"{what} column {spec!r} not found in header {header}") from None


def load_csv(path, treatment, covariates: Sequence, outcome) -> Dataset:
    """Load a comma-separated file with a header row into a Dataset.

    Columns may be addressed by header name or by 0-based index.  Cells must
    be numeric; a blank or malformed cell raises :class:`ParseError` naming
    the offending data row (1-based, excluding the header).
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FileError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        ti = _resolve_column(treatment, header, "treatment")
        xi = [_resolve_column(c, header, "covariate") for c in covariates]
        yi = _resolve_column(outcome, header, "outcome")

        t_rows, x_rows, y_rows = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            def cell(idx, colname):
                if idx >= len(row) or not row[idx].strip():
                    raise ParseError(f"row {rownum}: missing value in column {colname!r}")
                try:
                    return float(row[idx])
                except ValueError:
                    raise ParseError(
                        f"row {rownum}: non-numeric value {row[idx]!r} in column {colname!r}") from None
            t_rows.append(cell(ti, header[ti]))
            x_rows.append([cell(j, header[j]) for j in xi])
            y_rows.append(cell(yi, header[yi]))

    if len(t_rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(t_rows)}")
    return Dataset.from_arrays(np.array(t_rows), np.array(x_rows), np.array(y_rows))


@dataclass(frozen=True)
class BoxCoxParams:
    """Parameters of the shifted power transform ((v + lambda2)^lambda1 - 1) / lambda1."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 == 0:
            raise ConfigurationError("lambda1 must be nonzero")
        if self.lambda2 < 0:
            raise ConfigurationError("lambda2 must be nonnegative")


def boxcox(value, params: BoxCoxParams):
    """Apply the two-parameter Box-Cox transform; requires value + lambda2 > 0."""
    v = np.asarray(value, dtype=float)
    shifted = v + params.lambda2
    if np.any(shifted <= 0):
        raise DataError(
            f"Box-Cox transform undefined: value + lambda2 must be positive "
            f"(min shifted value {shifted.min():g})")
    out = (shifted ** params.lambda1 - 1.0) / params.lambda1
    return float(out) if np.isscalar(value) else out


def default_boxcox_grid():
    """Log-spaced default search grid: 60 lambda1 points, 30 lambda2 points."""
    lam1 = np.geomspace(0.01, 2.0, 60)
    lam2 = np.geomspace(0.001, 1.0, 30)
    return lam1, lam2


def boxcox_search(values, lambda1_grid=None, lambda2_grid=None) -> BoxCoxParams:
    """Pick the grid point whose transformed sample looks most Gaussian.

    For each (lambda1, lambda2) the sorted transformed values are correlated
    with standard normal quantiles at plotting positions (i - 0.5) / N; the
    pair with the largest Pearson correlation wins.  Grid points whose shift
    leaves non-positive values are skipped.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2 or v[0] == v[-1]:
        raise DataError("Box-Cox search needs at least two distinct values")
    if lambda1_grid is None or lambda2_grid is None:
        d1, d2 = default_boxcox_grid()
        lambda1_grid = d1 if lambda1_grid is None else lambda1_grid
        lambda2_grid = d2 if lambda2_grid is None else lambda2_grid
    lambda1_grid = np.atleast_1d(np.asarray(lambda1_grid, dtype=float))
    lambda2_grid = np.atleast_1d(np.asarray(lambda2_grid, dtype=float))
    if lambda1_grid.size == 0 or lambda2_grid.size == 0:
        raise ConfigurationError("Box-Cox search grid is empty")

    q = norm.ppf((np.arange(1, v.size + 1) - 0.5) / v.size)
    q_c = q - q.mean()
    q_ss = float(q_c @ q_c)
    best = None
    best_corr = -np.inf
    for lam2 in lambda2_grid:
        shifted = v + lam2
        if shifted[0] <= 0:
            continue
        log_shifted = np.log(shifted)
        for lam1 in lambda1_grid:
            if lam1 == 0:
                continue
            z = np.exp(lam1 * log_shifted)  # transform is monotone; skip the -1/lam1 affine part
            z_c = z - z.mean()
            denom = np.sqrt(float(z_c @ z_c) * q_ss)
            if denom <= 0 or not np.isfinite(denom):
                continue
            corr = float(z_c @ q_c) / denom
            if lam1 < 0:
                corr = -corr  # (z^lam1 - 1)/lam1 is increasing; z^lam1 alone flips sign
            if corr > best_corr:
                best_corr = corr
                best = (float(lam1), float(lam2))
    if best is None:
        raise DataError("no valid Box-Cox grid point for these values")
    return BoxCoxParams(*best)


def boxcox_outcome(values, params: BoxCoxParams | None = None):
    """Transform an outcome column and shift it so its minimum is zero.

    If ``params`` is None the search over the default grid is run first.
    Returns (transformed values, params used).
    """
    v = np.asarray(values, dtype=float)
    if params is None:
        params = boxcox_search(v)
    z = boxcox(v, params)
    return z - z.min(), params
