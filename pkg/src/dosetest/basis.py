"""Approximation sieves: expanding bases over the standardized treatment and covariates.

Two families are provided.  Power series put a literal constant first,
``(1, t, t^2, ...)``.  B-splines (clamped, equally spaced interior knots) form
a partition of unity, so the constant function lives in their span as the sum
of all elements; both properties guarantee that the balance constraints force
the fitted weights to average to one.

The covariate basis supports two compositions:

* ``additive``: a constant followed by per-coordinate univariate terms of
  orders 1..d, so K2 = 1 + r*d.
* ``tensor``: the full tensor product of univariate power terms, truncated to
  K2 terms ordered by total degree and then lexicographically within degree.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigurationError, DataError


class BasisKind(str, enum.Enum):
    POWER = "power"
    BSPLINE = "bspline"


class Composition(str, enum.Enum):
    ADDITIVE = "additive"
    TENSOR = "tensor"


@dataclass(frozen=True)
class BasisFamily:
    """Basis family with its per-kind shape parameter.

    ``degree`` is the spline degree for B-splines (capped at size - 1) and the
    per-coordinate exponent cap for tensor power compositions (None means no
    cap beyond the term budget).
    """

    kind: BasisKind = BasisKind.POWER
    degree: int | None = None


@dataclass(frozen=True)
class SieveSpec:
    """Dimensions and composition of the treatment/covariate sieves."""

    k1: int
    k2: int
    family: BasisFamily = BasisFamily()
    composition: Composition = Composition.ADDITIVE

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigurationError(f"sieve dimensions must be positive, got ({self.k1}, {self.k2})")

    @property
    def k(self) -> int:
        return self.k1 * self.k2


def _power_design(t: np.ndarray, k: int) -> np.ndarray:
    return np.vander(t, N=k, increasing=True)


def _bspline_knots(k: int, degree: int) -> np.ndarray:
    interior = np.linspace(0.0, 1.0, k - degree + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def _bspline_design(t: np.ndarray, k: int, degree: int | None) -> np.ndarray:
    deg = 3 if degree is None else int(degree)
    deg = min(deg, k - 1)
    knots = _bspline_knots(k, deg)
    try:
        dm = BSpline.design_matrix(t, knots, deg, extrapolate=False)
    except ValueError as exc:
        raise DataError(f"B-spline evaluation outside [0, 1]: {exc}") from exc
    return dm.toarray()


def eval_u_many(spec: SieveSpec, t: np.ndarray) -> np.ndarray:
    """Evaluate the treatment sieve at standardized points; returns (N, K1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if spec.family.kind is BasisKind.POWER:
        return _power_design(t, spec.k1)
    return _bspline_design(t, spec.k1, spec.family.degree)


def eval_u(spec: SieveSpec, t: float) -> np.ndarray:
    """Single-point version of :func:`eval_u_many`; returns (K1,)."""
    return eval_u_many(spec, np.array([t]))[0]


def _tensor_exponents(r: int, k2: int, cap: int | None) -> list[tuple[int, ...]]:
    cap = (k2 - 1) if cap is None else int(cap)
    if (cap + 1) ** r > 1_000_000:
        raise ConfigurationError(
            f"tensor composition with r={r} covariates and degree cap {cap} is too large; "
            "use the additive composition")
    exps = sorted(itertools.product(range(cap + 1), repeat=r),
                  key=lambda e: (sum(e), tuple(-v for v in e)))
    if len(exps) < k2:
        raise ConfigurationError(
            f"K2={k2} not representable: tensor basis with degree cap {cap} over "
            f"{r} covariates has only {len(exps)} terms")
    return exps[:k2]


def eval_v_many(spec: SieveSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the covariate sieve at standardized points; returns (N, K2)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, r = x.shape

    if spec.composition is Composition.TENSOR:
        if spec.family.kind is not BasisKind.POWER:
            raise ConfigurationError("tensor composition is only defined for the power family")
        exps = _tensor_exponents(r, spec.k2, spec.family.degree)
        cols = [np.prod(x ** np.asarray(e, dtype=float), axis=1) for e in exps]
        return np.column_stack(cols)

    # additive: constant + per-coordinate terms of orders 1..d
    if (spec.k2 - 1) % r != 0:
        raise ConfigurationError(
            f"K2={spec.k2} not representable: additive composition over {r} covariates "
            f"requires K2 = 1 + r*d")
    d = (spec.k2 - 1) // r
    cols = [np.ones(n)]
    for j in range(r):
        if d == 0:
            break
        if spec.family.kind is BasisKind.POWER:
            cols.append(_power_design(x[:, j], d + 1)[:, 1:])
        else:
            cols.append(_bspline_design(x[:, j], d + 1, spec.family.degree)[:, 1:])
    return np.column_stack(cols) if len(cols) > 1 else cols[0][:, None]


def eval_v(spec: SieveSpec, x) -> np.ndarray:
    """Single-point version of :func:`eval_v_many`; returns (K2,)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return eval_v_many(spec, x[None, :])[0]


def constant_combo_u(spec: SieveSpec) -> np.ndarray:
    """Coefficients c with c @ u(t) identically 1 (exists for both families)."""
    if spec.family.kind is BasisKind.POWER:
        c = np.zeros(spec.k1)
        c[0] = 1.0
        return c
    return np.ones(spec.k1)  # partition of unity


def constant_combo_v(spec: SieveSpec) -> np.ndarray:
    """Coefficients c with c @ v(x) identically 1 (constant is always first)."""
    c = np.zeros(spec.k2)
    c[0] = 1.0
    return c
