"""Weighted empirical process over the treatment and its CM / KS functionals.

All quantities are evaluated on the standardized treatment scale, so the
logistic offset and the cosine-sine frequencies act on arguments bounded in
[0, 1].  The Kolmogorov-Smirnov supremum is taken over the sample treatments
plus a uniform grid; since the indicator-type process only jumps at sample
points, that grid is exact for it and dense enough for the smooth kinds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DEFAULT_LOGISTIC_C = 5.0
DEFAULT_KS_GRID = 201

WEIGHT_KINDS = ("logistic", "cosine_sine", "indicator")


@dataclass(frozen=True)
class WeightFunctionSpec:
    """Choice of the weight family H(T_i, t) that converts the conditional moment
    restriction into a continuum of unconditional ones."""

    kind: str = "logistic"
    c: float = DEFAULT_LOGISTIC_C
    ks_grid: int = DEFAULT_KS_GRID

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigurationError(f"unknown weight function {self.kind!r}; "
                                     f"choose one of {WEIGHT_KINDS}")
        if self.kind == "logistic" and self.c == 0:
            raise ConfigurationError("logistic weight needs a nonzero offset c")
        if self.ks_grid < 2:
            raise ConfigurationError("ks_grid must have at least 2 points")


def weight_fn(spec: WeightFunctionSpec, t_i, t):
    """Evaluate H(t_i, t) elementwise (inputs broadcast)."""
    t_i = np.asarray(t_i, dtype=float)
    t = np.asarray(t, dtype=float)
    if spec.kind == "logistic":
        return 1.0 / (1.0 + np.exp(spec.c - t * t_i))
    if spec.kind == "cosine_sine":
        arg = t * t_i
        return np.cos(arg) + np.sin(arg)
    return (t_i <= t).astype(float)


def weight_matrix(spec: WeightFunctionSpec, treatments, eval_points) -> np.ndarray:
    """H(T_i, t_j) for all sample treatments i and evaluation points j; (N, M)."""
    ti = np.asarray(treatments, dtype=float)[:, None]
    tj = np.asarray(eval_points, dtype=float)[None, :]
    if spec.kind == "logistic":
        return 1.0 / (1.0 + np.exp(spec.c - tj * ti))
    if spec.kind == "cosine_sine":
        arg = tj * ti
        return np.cos(arg) + np.sin(arg)
    return (ti <= tj).astype(float)


def j_process(residuals, treatments, spec: WeightFunctionSpec, eval_points) -> np.ndarray:
    """J_N(t) = N^{-1/2} sum_i U_i H(T_i, t) at each evaluation point."""
    u = np.asarray(residuals, dtype=float)
    t = np.asarray(treatments, dtype=float)
    if u.shape != t.shape:
        raise ConfigurationError("residuals and treatments must have equal length")
    H = weight_matrix(spec, t, eval_points)
    return u @ H / np.sqrt(u.shape[0])


def sup_grid(treatments, spec: WeightFunctionSpec) -> np.ndarray:
    """Evaluation points for the supremum: sample treatments plus a uniform grid."""
    extra = np.linspace(0.0, 1.0, spec.ks_grid)
    return np.concatenate([np.asarray(treatments, dtype=float), extra])


@dataclass(frozen=True)
class TestStatistics:
    """Empirical-process evaluations and the two omnibus statistics."""

    j_values: np.ndarray      # J_N at the sample treatments, dataset order
    cm: float
    ks: float
    sup_points: np.ndarray    # grid used for the supremum (includes sample points)
    j_sup: np.ndarray         # J_N over sup_points


def statistics(j_sample: np.ndarray, j_sup: np.ndarray) -> tuple[float, float]:
    """CM (mean of squares at sample points) and KS (sup of |J| over the grid)."""
    j_sample = np.asarray(j_sample, dtype=float)
    j_sup = np.asarray(j_sup, dtype=float)
    cm = float(np.mean(j_sample ** 2))
    ks = float(np.abs(j_sup).max())
    return cm, ks


def compute_statistics(residuals, treatments_std, spec: WeightFunctionSpec) -> TestStatistics:
    """Evaluate the process at sample points and the sup grid, then reduce."""
    t = np.asarray(treatments_std, dtype=float)
    points = sup_grid(t, spec)
    j_all = j_process(residuals, t, spec, points)
    n = t.shape[0]
    cm, ks = statistics(j_all[:n], j_all)
    return TestStatistics(j_values=j_all[:n], cm=cm, ks=ks,
                          sup_points=points, j_sup=j_all)
