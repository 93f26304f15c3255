"""End-to-end orchestration: weights -> theta -> process statistics -> bootstrap p-values."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .balance import BalanceFit, fit_weights
from .basis import BasisFamily, Composition, SieveSpec
from .dose_response import DoseResponseModel, InstrumentSpec, ResidualSpec, ThetaFit, fit_theta
from .errors import DoseTestError
from .influence import BootstrapResult, InfluenceComponents, estimate_influence, multiplier_bootstrap
from .model_select import CVResult, cross_validate, default_grid
from .teststat import TestStatistics, WeightFunctionSpec, compute_statistics


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to run one specification test, with a fixed seed."""

    residual: ResidualSpec = ResidualSpec()
    model: DoseResponseModel = field(default_factory=lambda: DoseResponseModel.polynomial(1))
    instrument: InstrumentSpec = InstrumentSpec()
    weight_fn: WeightFunctionSpec = WeightFunctionSpec()
    sieve: SieveSpec | None = None            # fixed sieve dimensions; None -> cross-validate
    cv_grid: list | None = None               # None -> default grid for the data dimension
    cv_folds: int = 10
    basis_family: BasisFamily = BasisFamily()
    composition: Composition = Composition.ADDITIVE
    boot_b: int = 500
    seed: int = 0
    balance_tol: float = 1e-8
    balance_max_iter: int = 100
    ridge: float = 1e-8
    density_bandwidth_scale: float = 1.0

    def with_sieve(self, k1: int, k2: int) -> "RunConfig":
        spec = SieveSpec(k1=k1, k2=k2, family=self.basis_family, composition=self.composition)
        return replace(self, sieve=spec)


@dataclass(frozen=True)
class TestRun:
    """All intermediate fits and the final p-values of one pipeline run."""

    sieve: SieveSpec
    cv: CVResult | None
    balance: BalanceFit
    theta: ThetaFit
    stats: TestStatistics
    influence: InfluenceComponents
    boot: BootstrapResult


class _Stage:
    """Context manager that tags raised package errors with the failing stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, DoseTestError) and not getattr(exc, "_staged", False):
            exc.args = (f"[{self.name}] {exc}",) + exc.args[1:]
            exc._staged = True
        return False


def select_sieve(dataset, config: RunConfig) -> tuple[SieveSpec, CVResult | None]:
    """Resolve sieve dimensions, cross-validating when they are not pinned."""
    if config.sieve is not None:
        return config.sieve, None
    grid = config.cv_grid if config.cv_grid is not None else default_grid(dataset.r)
    with _Stage("model_select"):
        cv = cross_validate(dataset, grid, config.residual, config.model,
                            config.instrument, folds=config.cv_folds, seed=config.seed,
                            family=config.basis_family, composition=config.composition,
                            balance_tol=config.balance_tol,
                            balance_max_iter=config.balance_max_iter)
    spec = SieveSpec(k1=cv.k1, k2=cv.k2, family=config.basis_family,
                     composition=config.composition)
    return spec, cv


def run_specification_test(dataset, config: RunConfig) -> TestRun:
    """Run the full pipeline on a dataset and return every fitted piece."""
    spec, cv = select_sieve(dataset, config)
    with _Stage("balance"):
        balance = fit_weights(dataset, spec, tol=config.balance_tol,
                              max_iter=config.balance_max_iter)
    with _Stage("dose_response"):
        theta = fit_theta(dataset, balance.weights, config.residual, config.model,
                          config.instrument)
    stats = compute_statistics(theta.residuals, dataset.t_std, config.weight_fn)
    with _Stage("null_approx"):
        influence = estimate_influence(dataset, balance, theta, config.residual,
                                       config.model, config.instrument, config.weight_fn,
                                       plugin_spec=spec, eval_points=stats.sup_points,
                                       ridge=config.ridge,
                                       density_bandwidth_scale=config.density_bandwidth_scale)
        boot = multiplier_bootstrap(influence.eta, influence.n_sample, stats.cm,
                                    stats.ks, b=config.boot_b, seed=config.seed)
    return TestRun(sieve=spec, cv=cv, balance=balance, theta=theta, stats=stats,
                   influence=influence, boot=boot)
