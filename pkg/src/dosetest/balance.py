"""Stabilized-weight estimation by maximizing the concave dual of the entropy program.

The primal problem maximizes the entropy of the weights subject to the sample
moment constraints

    N^-1 sum_i pi_i u(T_i) v(X_i)' = (N^-1 sum_i u(T_i)) (N^-1 sum_j v(X_j))'.

Its dual maximizes, over a K1 x K2 matrix of multipliers L,

    G(L) = N^-1 sum_i rho(u(T_i)' L v(X_i)) - ubar' L vbar,

with rho(s) = -exp(-s - 1).  G is strictly concave whenever the vectorized
design has full column rank, so a damped Newton iteration with an Armijo
backtracking line search converges globally.  The fitted weights are
pi_i = rho'(u(T_i)' L v(X_i)) = exp(-u' L v - 1) > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import SieveSpec, constant_combo_u, constant_combo_v, eval_u_many, eval_v_many
from .errors import ConditioningError, ConfigurationError, ConvergenceError

ARMIJO_SLOPE = 1e-4
ARMIJO_SHRINK = 0.5
HESSIAN_RIDGE = 1e-10


def rho(s):
    return -np.exp(-s - 1.0)


def rho_prime(s):
    return np.exp(-s - 1.0)


@dataclass(frozen=True)
class BalanceFit:
    """Converged dual solution and per-observation weights.

    ``constraint_gap`` is the sup-norm violation of the sample moment
    constraints at the fitted weights, which coincides with the dual gradient.
    """

    lam: np.ndarray          # (K1, K2) dual multipliers
    weights: np.ndarray      # (N,) fitted stabilized weights, all > 0
    grad_norm: float
    iterations: int
    constraint_gap: float
    objective: float
    regularized: bool = False

    @property
    def min_weight(self) -> float:
        return float(self.weights.min())

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    def diagnostics_text(self) -> str:
        lines = [
            f"iterations={self.iterations}",
            f"grad_norm={self.grad_norm:.6e}",
            f"constraint_gap={self.constraint_gap:.6e}",
            f"min_weight={self.min_weight:.6e}",
            f"max_weight={self.max_weight:.6e}",
            f"mean_weight={float(self.weights.mean()):.12f}",
            f"regularized={str(self.regularized).lower()}",
        ]
        return "\n".join(lines)


def _design(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row i is the row-major flattening of outer(u_i, v_i); shape (N, K1*K2)."""
    n = U.shape[0]
    return np.einsum("ik,il->ikl", U, V).reshape(n, -1)


def dual_objective(lam: np.ndarray, U: np.ndarray, V: np.ndarray) -> float:
    """Evaluate G at the multiplier matrix ``lam`` given basis evaluations."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (U.shape[1], V.shape[1]):
        raise ConfigurationError(
            f"lambda shape {lam.shape} does not match bases ({U.shape[1]}, {V.shape[1]})")
    s = np.einsum("ik,kl,il->i", U, lam, V)
    return float(np.mean(rho(s)) - U.mean(axis=0) @ lam @ V.mean(axis=0))


def dual_gradient(lam: np.ndarray, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Analytic gradient of G with respect to ``lam``; shape (K1, K2)."""
    lam = np.asarray(lam, dtype=float)
    s = np.einsum("ik,kl,il->i", U, lam, V)
    w = rho_prime(s)
    return (U.T * w) @ V / U.shape[0] - np.outer(U.mean(axis=0), V.mean(axis=0))


def weights_from_dual(lam: np.ndarray, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Evaluate pi = rho'(u' lam v) row-wise; also used for held-out samples."""
    s = np.einsum("ik,kl,il->i", U, np.asarray(lam, dtype=float), V)
    return rho_prime(s)


def constraint_gap(weights: np.ndarray, U: np.ndarray, V: np.ndarray) -> float:
    """Sup-norm of the sample balance-constraint violation at given weights."""
    n = U.shape[0]
    lhs = (U.T * weights) @ V / n
    rhs = np.outer(U.mean(axis=0), V.mean(axis=0))
    return float(np.abs(lhs - rhs).max())


def fit_weights_arrays(U: np.ndarray, V: np.ndarray, *, tol: float = 1e-8,
                       max_iter: int = 100, lam0: np.ndarray | None = None) -> BalanceFit:
    """Damped Newton ascent on the dual from precomputed basis evaluations."""
    n, k1 = U.shape
    k2 = V.shape[1]
    k = k1 * k2
    if k > n:
        raise ConfigurationError(f"K1*K2 = {k} exceeds the sample size {n}")

    Z = _design(U, V)
    if np.linalg.matrix_rank(Z) < k:
        raise ConditioningError(
            f"vectorized basis design is rank deficient (K1*K2 = {k}); "
            "reduce K1 or K2")
    zbar = np.outer(U.mean(axis=0), V.mean(axis=0)).ravel()

    lam = np.ravel(lam0).astype(float).copy() if lam0 is not None else None
    if lam is None:
        lam = -np.outer(constant_combo_u_from_width(U, k1), constant_combo_v_from_width(V, k2)).ravel()

    s = Z @ lam
    obj = float(np.mean(rho(s)) - zbar @ lam)
    regularized = False
    grad_norm = np.inf
    for iteration in range(max_iter):
        w = rho_prime(s)
        grad = Z.T @ w / n - zbar
        grad_norm = float(np.abs(grad).max())
        if grad_norm <= tol:
            lam_mat = lam.reshape(k1, k2)
            return BalanceFit(lam=lam_mat, weights=w, grad_norm=grad_norm,
                              iterations=iteration, constraint_gap=constraint_gap(w, U, V),
                              objective=obj, regularized=regularized)

        # -Hessian = Z' diag(w) Z / N is positive definite on full-rank designs
        H = (Z.T * w) @ Z / n
        try:
            factor = cho_factor(H, lower=True)
        except LinAlgError:
            H = H + HESSIAN_RIDGE * np.eye(k)
            factor = cho_factor(H, lower=True)
            regularized = True
        step = cho_solve(factor, grad)

        slope = float(grad @ step)  # directional derivative of G along the ascent step
        alpha = 1.0
        while True:
            cand = lam + alpha * step
            s_cand = Z @ cand
            obj_cand = float(np.mean(rho(s_cand)) - zbar @ cand)
            if obj_cand >= obj + ARMIJO_SLOPE * alpha * slope:
                break
            alpha *= ARMIJO_SHRINK
            if alpha < 1e-14:
                raise ConvergenceError(
                    "line search failed to make progress on the dual objective",
                    grad_norm=grad_norm)
        lam, s, obj = cand, s_cand, obj_cand

    raise ConvergenceError(
        f"dual Newton did not reach tolerance {tol:g} in {max_iter} iterations "
        f"(last gradient sup-norm {grad_norm:.3e}); the primal may be infeasible "
        "for this sample", grad_norm=grad_norm)


def constant_combo_u_from_width(U: np.ndarray, k1: int) -> np.ndarray:
    """Start-point helper: coefficients of the constant function in the u-basis."""
    ones = np.ones(U.shape[0])
    if np.allclose(U[:, 0], ones):
        c = np.zeros(k1)
        c[0] = 1.0
        return c
    if np.allclose(U.sum(axis=1), ones):
        return np.ones(k1)
    # fall back to least squares projection of the constant onto the basis
    c, *_ = np.linalg.lstsq(U, ones, rcond=None)
    return c


def constant_combo_v_from_width(V: np.ndarray, k2: int) -> np.ndarray:
    ones = np.ones(V.shape[0])
    if np.allclose(V[:, 0], ones):
        c = np.zeros(k2)
        c[0] = 1.0
        return c
    if np.allclose(V.sum(axis=1), ones):
        return np.ones(k2)
    c, *_ = np.linalg.lstsq(V, ones, rcond=None)
    return c


def fit_weights(dataset, spec: SieveSpec, *, tol: float = 1e-8,
                max_iter: int = 100) -> BalanceFit:
    """Fit stabilized weights for a dataset under the given sieve dimensions.

    The start point is the uniform-weight multiplier (u' L0 v = -1 for every
    observation), from which pi = 1 identically; Newton steps keep the
    objective non-decreasing, and at convergence the first-order condition is
    exactly the sample balance constraint.
    """
    U = eval_u_many(spec, dataset.t_std)
    V = eval_v_many(spec, dataset.x_std)
    lam0 = -np.outer(constant_combo_u(spec), constant_combo_v(spec))
    return fit_weights_arrays(U, V, tol=tol, max_iter=max_iter, lam0=lam0)
