"""Influence-function plug-ins and the Gaussian-multiplier approximation of the null law.

The empirical process admits the asymptotically linear representation
eta_i(t) = U_i H(T_i, t) - phi_i(t) - psi_i(t), where phi corrects for the
estimated stabilized weights and psi for the estimated model parameter.  Both
corrections involve conditional means that are estimated here by ridge-spiked
series regressions on the same sieve bases used for balancing:

* E[m | T, X]  via the tensor (u x v) basis,
* E[pi m H(., t) | X] and E[pi m w | X]  via the v basis, refit over all
  evaluation points in a single factorized solve.

For quantile residuals the slope d/dg E[m | T, X] equals minus the conditional
density of Y at the fitted quantile, estimated with a product Gaussian kernel
and rule-of-thumb bandwidths on standardized scales.

The null distribution of the CM / KS statistics is then simulated by drawing
independent standard normal multipliers w_{i,b} and forming
J*_b(t) = N^{-1/2} sum_i w_{i,b} eta_i(t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import SieveSpec, eval_u_many, eval_v_many
from .errors import ConditioningError, ConfigurationError
from .teststat import WeightFunctionSpec, sup_grid, weight_matrix

DEFAULT_RIDGE = 1e-8
DENSITY_CHUNK = 512


@dataclass(frozen=True)
class InfluenceComponents:
    """Estimated influence contributions at every (observation, eval point) pair."""

    phi: np.ndarray          # (N, M) weight-estimation correction
    psi: np.ndarray          # (N, M) parameter-estimation correction
    eta: np.ndarray          # (N, M) total influence: U*H - phi - psi
    eval_points: np.ndarray  # (M,) standardized treatment values
    n_sample: int            # first n_sample eval points are the sample treatments
    cond_mean: np.ndarray    # (N,) fitted E[m | T, X] at the data
    cond_density: np.ndarray | None = None  # (N,) fitted f_{Y|T,X} at g (quantile only)


def _ridge_fitted(design: np.ndarray, responses: np.ndarray, ridge: float) -> np.ndarray:
    """Fitted values of a ridge-regularized least squares fit, shared factorization."""
    k = design.shape[1]
    gram = design.T @ design + ridge * np.eye(k)
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as exc:
        raise ConditioningError(f"series plug-in design is singular: {exc}") from exc
    coef = cho_solve(factor, design.T @ responses)
    return design @ coef


def conditional_density_at_fit(t_std, x_std, y, g, *, bandwidth_scale: float = 1.0) -> np.ndarray:
    """Product-Gaussian kernel estimate of f_{Y|T,X}(g_i | T_i, X_i) for every i.

    Bandwidths follow Scott's rule on the standardized scales; the outcome is
    standardized internally and the density is returned on the original
    outcome scale.
    """
    if bandwidth_scale <= 0:
        raise ConfigurationError("density bandwidth scale must be positive")
    t_std = np.asarray(t_std, dtype=float)
    x_std = np.asarray(x_std, dtype=float)
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    n, r = x_std.shape
    mu_y, sd_y = float(y.mean()), float(y.std())
    if sd_y == 0.0:
        sd_y = 1.0
    y_s = (y - mu_y) / sd_y
    g_s = (g - mu_y) / sd_y

    d = r + 2
    exponent = -1.0 / (d + 4)
    def rot(v):
        s = float(np.std(v))
        return bandwidth_scale * max(s, 1e-3) * n ** exponent

    h_t = rot(t_std)
    h_x = np.array([rot(x_std[:, j]) for j in range(r)])
    h_y = rot(y_s)

    inv_sqrt2pi = 1.0 / np.sqrt(2.0 * np.pi)
    out = np.empty(n)
    for lo in range(0, n, DENSITY_CHUNK):
        hi = min(lo + DENSITY_CHUNK, n)
        logk = -0.5 * ((t_std[lo:hi, None] - t_std[None, :]) / h_t) ** 2
        for j in range(r):
            logk += -0.5 * ((x_std[lo:hi, j, None] - x_std[None, :, j]) / h_x[j]) ** 2
        kcond = np.exp(logk)
        ky = inv_sqrt2pi * np.exp(-0.5 * ((g_s[lo:hi, None] - y_s[None, :]) / h_y) ** 2) / h_y
        denom = kcond.sum(axis=1)
        numer = (kcond * ky).sum(axis=1)
        out[lo:hi] = numer / np.maximum(denom, 1e-300)
    return out / sd_y


def estimate_influence(dataset, balance_fit, theta_fit, residual, model, instrument,
                       wspec: WeightFunctionSpec, *, plugin_spec: SieveSpec,
                       eval_points=None, ridge: float = DEFAULT_RIDGE,
                       density_bandwidth_scale: float = 1.0) -> InfluenceComponents:
    """Estimate phi, psi, and eta at all evaluation points.

    ``plugin_spec`` fixes the sieve dimensions of the series plug-ins; by
    convention it equals the spec used for balancing.
    """
    if ridge < 0:
        raise ConfigurationError("ridge penalty must be nonnegative")
    t_raw, t_std, x_std, y = dataset.t, dataset.t_std, dataset.x_std, dataset.y
    n = t_raw.shape[0]
    pi = balance_fit.weights
    theta = theta_fit.theta

    if eval_points is None:
        eval_points = sup_grid(t_std, wspec)
    eval_points = np.asarray(eval_points, dtype=float)

    g = model.value(t_raw, theta)
    # same residual map the statistic uses: smoothed at the estimation bandwidth
    # for quantiles (sharp in the h -> 0 limit), exact for the average kind
    m = residual.smoothed_residuals(y, g, theta_fit.bandwidth)
    U = pi * m
    H = weight_matrix(wspec, t_std, eval_points)

    Ub = eval_u_many(plugin_spec, t_std)
    Vb = eval_v_many(plugin_spec, x_std)
    Z = np.einsum("ik,il->ikl", Ub, Vb).reshape(n, -1)

    cond_mean = _ridge_fitted(Z, m, ridge)

    # phi: pi * H * E[m|T,X] minus the X-conditional mean of pi*m*H(., t)
    phi = pi[:, None] * H * cond_mean[:, None]
    phi -= _ridge_fitted(Vb, (pi * m)[:, None] * H, ridge)

    # psi: sandwich around the q-vector xi_i = pi*m*w - pi*w*E[m|T,X] + E[pi*w*m | X]
    if residual.kind == "average":
        slope = -np.ones(n)
        cond_density = None
    else:
        cond_density = conditional_density_at_fit(
            t_std, x_std, y, g, bandwidth_scale=density_bandwidth_scale)
        slope = -cond_density
    G = model.gradient(t_raw, theta)
    W = instrument.matrix(t_raw, theta, model)
    core = (pi * slope)[:, None]

    A = (core * G).T @ H / n                       # (p, M)
    Xi = (pi * m)[:, None] * W - (pi * cond_mean)[:, None] * W \
        + _ridge_fitted(Vb, (pi * m)[:, None] * W, ridge)

    if instrument.kind == "grad_g":
        D = G.T @ (core * G) / n                   # symmetric (p, p)
        try:
            kernel = np.linalg.solve(D, A)         # (p, M)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"psi sandwich matrix is singular: {exc}") from exc
        psi = Xi @ kernel
    else:
        C1 = (core * G).T @ W / n                  # (p, q)
        C2 = (core * W).T @ G / n                  # (q, p)
        B = C1 @ C2
        try:
            kernel = C1.T @ np.linalg.solve(B.T, A)   # (q, M)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"psi sandwich matrix is singular: {exc}") from exc
        psi = Xi @ kernel

    eta = U[:, None] * H - phi - psi
    return InfluenceComponents(phi=phi, psi=psi, eta=eta, eval_points=eval_points,
                               n_sample=n, cond_mean=cond_mean, cond_density=cond_density)


@dataclass(frozen=True)
class BootstrapResult:
    """Multiplier-bootstrap draws of the two statistics and the resulting p-values."""

    draws_cm: np.ndarray
    draws_ks: np.ndarray
    p_cm: float
    p_ks: float
    b: int
    seed: int


def multiplier_bootstrap(eta: np.ndarray, n_sample: int, observed_cm: float,
                         observed_ks: float, *, b: int = 500, seed: int = 0) -> BootstrapResult:
    """Draw B multiplier replicates of (CM*, KS*) and compute their p-values.

    Each draw perturbs the influence contributions by i.i.d. standard normals;
    CM* averages the squared process over the sample evaluation points, KS*
    takes the supremum over the full grid.  Deterministic given the seed.
    """
    if b < 1:
        raise ConfigurationError("bootstrap needs at least one draw")
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ConfigurationError("eta contains non-finite entries")
    n = eta.shape[0]
    rng = np.random.default_rng(seed)
    mult = rng.standard_normal((b, n))
    j_star = mult @ eta / np.sqrt(n)
    draws_cm = np.mean(j_star[:, :n_sample] ** 2, axis=1)
    draws_ks = np.abs(j_star).max(axis=1)
    p_cm = float(np.mean(draws_cm >= observed_cm))
    p_ks = float(np.mean(draws_ks >= observed_ks))
    return BootstrapResult(draws_cm=draws_cm, draws_ks=draws_ks,
                           p_cm=p_cm, p_ks=p_ks, b=b, seed=seed)
