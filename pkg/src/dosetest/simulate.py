"""Simulation lab: benchmark data generating processes and Monte Carlo experiments.

Four processes drive the size/power experiments.  In all of them X is uniform
on [0, 1] and xi, eps are independent standard normals:

    DGP0-L   T = 1 + 0.2 X + xi,   Y = 1 + X + T + eps
    DGP0-NL  T = 0.1 X^2 + xi,     Y = X^2 + T + eps
    DGP1-L   T = 1 + 0.2 X + xi,   Y = 1 + X + 0.1 T^3 + eps
    DGP1-NL  T = 0.1 X^2 + xi,     Y = X^2 + 0.2 T^3 + eps

The linear working model theta_0 + theta_1 t is correct under the first two
and wrong under the last two.  A LOCAL variant adds a drift a * sin(2 pi t) /
sqrt(N) (on the standardized treatment scale) to the DGP0-L outcome, which
shrinks toward the null at the parametric rate.

Because T | X is Gaussian with known mean, the true stabilized weights are
available analytically: the conditional density is evaluated in closed form
and the marginal density by 2000-point Gauss-Legendre integration over X.
Replications derive independent deterministic substreams from
(seed, cell index, replication index), so results are reproducible under any
execution order.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .balance import fit_weights
from .data import Dataset
from .dose_response import DoseResponseModel, InstrumentSpec, ResidualSpec, fit_theta
from .errors import ConfigurationError, DataError, DoseTestError, UnsupportedOperationError
from .model_select import cross_validate, default_grid
from .pipeline import RunConfig, run_specification_test
from .teststat import TestStatistics, WeightFunctionSpec, compute_statistics, j_process

GL_NODES = 2000
_PI0_CHUNK = 4096


class DgpId(str, enum.Enum):
    DGP0_L = "DGP0-L"
    DGP0_NL = "DGP0-NL"
    DGP1_L = "DGP1-L"
    DGP1_NL = "DGP1-NL"
    LOCAL = "LOCAL"


@dataclass(frozen=True)
class DgpSpec:
    id: DgpId
    n: int
    drift_scale: float = 0.0  # LOCAL only: the a in a * sin(2 pi t) / sqrt(N)

    def __post_init__(self):
        if self.n < 10:
            raise ConfigurationError(f"simulated samples need N >= 10, got {self.n}")
        if self.drift_scale < 0:
            raise ConfigurationError("drift scale must be nonnegative")


@dataclass(frozen=True)
class GeneratedSample:
    """Dataset plus the hidden truth available only in simulation."""

    dataset: Dataset
    pi0: np.ndarray
    spec: DgpSpec
    true_adrf_theta: np.ndarray | None  # (intercept, slope) when the linear null holds


def _treatment_mean(dgp: DgpId, x: np.ndarray) -> np.ndarray:
    if dgp in (DgpId.DGP0_L, DgpId.DGP1_L, DgpId.LOCAL):
        return 1.0 + 0.2 * x
    return 0.1 * x ** 2


@lru_cache(maxsize=1)
def _gl_rule():
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
    return 0.5 * (nodes + 1.0), 0.5 * weights  # mapped from [-1, 1] to [0, 1]


def conditional_treatment_density(dgp: DgpId, t, x) -> np.ndarray:
    """f_{T|X}(t | x): normal with the DGP's conditional mean, unit variance."""
    return norm.pdf(np.asarray(t, dtype=float) - _treatment_mean(dgp, np.asarray(x, dtype=float)))


def marginal_treatment_density(dgp: DgpId, t) -> np.ndarray:
    """f_T(t) by Gauss-Legendre integration of f_{T|X}(t | x) over x in [0, 1]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes, weights = _gl_rule()
    mu = _treatment_mean(dgp, nodes)
    out = np.empty(t.shape[0])
    for lo in range(0, t.shape[0], _PI0_CHUNK):
        hi = min(lo + _PI0_CHUNK, t.shape[0])
        out[lo:hi] = norm.pdf(t[lo:hi, None] - mu[None, :]) @ weights
    return out


def stabilized_weights_truth(dgp: DgpId, t, x) -> np.ndarray:
    """True pi_0(T, X) = f_T(T) / f_{T|X}(T | X)."""
    return marginal_treatment_density(dgp, t) / conditional_treatment_density(dgp, t, x)


def generate(spec: DgpSpec, seed, *, zero_noise: bool = False) -> GeneratedSample:
    """Draw one sample; ``zero_noise`` forces xi = eps = 0 for deterministic checks."""
    rng = np.random.default_rng(seed)
    n = spec.n
    x = rng.uniform(0.0, 1.0, n)
    xi = np.zeros(n) if zero_noise else rng.standard_normal(n)
    eps = np.zeros(n) if zero_noise else rng.standard_normal(n)
    t = _treatment_mean(spec.id, x) + xi

    theta_star = None
    if spec.id is DgpId.DGP0_L:
        y = 1.0 + x + t + eps
        theta_star = np.array([1.5, 1.0])
    elif spec.id is DgpId.DGP0_NL:
        y = x ** 2 + t + eps
        theta_star = np.array([1.0 / 3.0, 1.0])
    elif spec.id is DgpId.DGP1_L:
        y = 1.0 + x + 0.1 * t ** 3 + eps
    elif spec.id is DgpId.DGP1_NL:
        y = x ** 2 + 0.2 * t ** 3 + eps
    else:  # LOCAL: null DGP plus a root-N drift on the standardized scale
        t_std = (t - t.min()) / (t.max() - t.min())
        y = 1.0 + x + t + eps + spec.drift_scale / np.sqrt(n) * np.sin(2.0 * np.pi * t_std)

    dataset = Dataset.from_arrays(t, x, y)
    pi0 = stabilized_weights_truth(spec.id, t, x)
    return GeneratedSample(dataset=dataset, pi0=pi0, spec=spec, true_adrf_theta=theta_star)


def infeasible_statistic(dataset, pi0, residual: ResidualSpec, model: DoseResponseModel,
                         instrument: InstrumentSpec,
                         wspec: WeightFunctionSpec) -> tuple[TestStatistics, np.ndarray]:
    """Oracle statistic built from the true stabilized weights.

    Only available in simulation; passing ``pi0=None`` (real data) raises.
    Returns the statistics and the oracle parameter estimate.
    """
    if pi0 is None:
        raise UnsupportedOperationError(
            "the infeasible statistic needs the true stabilized weights, which exist "
            "only for simulated data")
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != dataset.t.shape:
        raise DataError("pi0 length does not match the dataset")
    theta0 = fit_theta(dataset, pi0, residual, model, instrument)
    stats = compute_statistics(theta0.residuals, dataset.t_std, wspec)
    return stats, theta0.theta


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

RESIDUAL_KINDS = ("average", "median")


@dataclass(frozen=True)
class McCase:
    """One table cell: residual kind x DGP x sample size x weight function."""

    residual: str
    dgp: DgpId
    n: int
    weight_fn: str
    model_degree: int = 1
    drift_scale: float = 0.0

    def __post_init__(self):
        if self.residual not in RESIDUAL_KINDS:
            raise ConfigurationError(f"residual must be one of {RESIDUAL_KINDS}")

    def label(self) -> str:
        base = f"{self.residual}|{self.dgp.value}|N={self.n}|{self.weight_fn}"
        if self.dgp is DgpId.LOCAL:
            base += f"|a={self.drift_scale:g}"
        return base

    def residual_spec(self) -> ResidualSpec:
        if self.residual == "average":
            return ResidualSpec(kind="average")
        return ResidualSpec(kind="quantile", tau=0.5)


def sizes_cases(weight_fns=("logistic", "cosine_sine", "indicator")) -> list[McCase]:
    return [McCase(res, dgp, n, w)
            for res in RESIDUAL_KINDS
            for dgp in (DgpId.DGP0_L, DgpId.DGP0_NL)
            for n in (100, 200, 500)
            for w in weight_fns]


def power_cases(weight_fns=("logistic", "cosine_sine", "indicator")) -> list[McCase]:
    # the power table only reports N in {100, 200}
    return [McCase(res, dgp, n, w)
            for res in RESIDUAL_KINDS
            for dgp in (DgpId.DGP1_L, DgpId.DGP1_NL)
            for n in (100, 200)
            for w in weight_fns]


def _case_config(case: McCase, *, k1k2: tuple[int, int] | None, b: int,
                 seed: int, cv_grid=None) -> RunConfig:
    config = RunConfig(residual=case.residual_spec(),
                       model=DoseResponseModel.polynomial(case.model_degree),
                       instrument=InstrumentSpec(kind="grad_g"),
                       weight_fn=WeightFunctionSpec(kind=case.weight_fn),
                       boot_b=b, seed=seed, cv_grid=cv_grid)
    if k1k2 is not None:
        config = config.with_sieve(*k1k2)
    return config


def _replication_seeds(base_seed: int, cell_index: int, rep_index: int):
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(cell_index, rep_index))
    gen_ss, boot_ss = ss.spawn(2)
    return gen_ss, int(boot_ss.generate_state(1)[0])


def _select_cell_sieve(case: McCase, base_seed: int, cell_index: int,
                       folds: int = 10) -> tuple[int, int]:
    """Cross-validate (K1, K2) once, on the first replication's sample."""
    gen_ss, _ = _replication_seeds(base_seed, cell_index, 0)
    sample = generate(DgpSpec(case.dgp, case.n, case.drift_scale), gen_ss)
    cv = cross_validate(sample.dataset, default_grid(sample.dataset.r),
                        case.residual_spec(), DoseResponseModel.polynomial(case.model_degree),
                        InstrumentSpec(kind="grad_g"), folds=folds, seed=base_seed)
    return cv.selected


def _run_replication(case: McCase, k1k2, b: int, base_seed: int, cell_index: int,
                     rep_index: int, cv_every_rep: bool, folds: int):
    gen_ss, boot_seed = _replication_seeds(base_seed, cell_index, rep_index)
    try:
        sample = generate(DgpSpec(case.dgp, case.n, case.drift_scale), gen_ss)
        config = _case_config(case, k1k2=None if cv_every_rep else k1k2, b=b,
                              seed=boot_seed)
        if cv_every_rep:
            config = replace(config, cv_folds=folds)
        run = run_specification_test(sample.dataset, config)
        return run.boot.p_cm, run.boot.p_ks, None
    except DoseTestError as exc:
        return np.nan, np.nan, str(exc)


@dataclass(frozen=True)
class CellReport:
    case: McCase
    k1: int
    k2: int
    reps: int
    failures: int
    p_cm: np.ndarray = field(repr=False)
    p_ks: np.ndarray = field(repr=False)

    @property
    def flagged(self) -> bool:
        return self.failures >= 0.01 * self.reps and self.failures > 0

    def rate(self, statistic: str, level: float) -> float:
        p = self.p_cm if statistic == "cm" else self.p_ks
        p = p[np.isfinite(p)]
        return float(np.mean(p < level)) if p.size else float("nan")

    def mc_se(self, statistic: str, level: float) -> float:
        p = self.p_cm if statistic == "cm" else self.p_ks
        n = int(np.isfinite(p).sum())
        if n == 0:
            return float("nan")
        r = self.rate(statistic, level)
        return float(np.sqrt(r * (1.0 - r) / n))


@dataclass(frozen=True)
class McReport:
    cells: list
    levels: tuple
    reps: int
    b: int
    seed: int

    def to_text(self) -> str:
        cols = ["residual", "dgp", "n", "weight_fn", "drift", "k1", "k2", "stat"]
        for lev in self.levels:
            cols.append(f"rate@{lev:g}")
            cols.append(f"se@{lev:g}")
        cols += ["reps", "failures", "flagged"]
        lines = ["\t".join(cols)]
        for cell in self.cells:
            for stat in ("cm", "ks"):
                row = [cell.case.residual, cell.case.dgp.value, str(cell.case.n),
                       cell.case.weight_fn, f"{cell.case.drift_scale:g}",
                       str(cell.k1), str(cell.k2), stat]
                for lev in self.levels:
                    row.append(f"{cell.rate(stat, lev):.6f}")
                    row.append(f"{cell.mc_se(stat, lev):.6f}")
                row += [str(cell.reps), str(cell.failures), str(cell.flagged).lower()]
                lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def run_table(cases, *, reps: int, b: int = 500, levels=(0.01, 0.05, 0.10),
              seed: int = 0, cv_every_rep: bool = False, folds: int = 10,
              n_jobs: int = 1, progress=None) -> McReport:
    """Run the Monte Carlo over the given cells and collect rejection rates.

    Replication failures are excluded from the rates and counted; a cell is
    flagged when they reach 1% of the budget.
    """
    if reps < 1:
        raise ConfigurationError("need at least one replication")
    cells = []
    for ci, case in enumerate(cases):
        k1k2 = None if cv_every_rep else _select_cell_sieve(case, seed, ci, folds)
        args = [(case, k1k2, b, seed, ci, rep, cv_every_rep, folds)
                for rep in range(reps)]
        if n_jobs == 1:
            results = [_run_replication(*a) for a in args]
        else:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(_run_replication_star, args, chunksize=8))
        p_cm = np.array([r[0] for r in results])
        p_ks = np.array([r[1] for r in results])
        failures = int(sum(r[2] is not None for r in results))
        if cv_every_rep:
            k1, k2 = -1, -1
        else:
            k1, k2 = k1k2
        cells.append(CellReport(case=case, k1=k1, k2=k2, reps=reps,
                                failures=failures, p_cm=p_cm, p_ks=p_ks))
        if progress is not None:
            progress(case, cells[-1])
    return McReport(cells=cells, levels=tuple(levels), reps=reps, b=b, seed=seed)


def _run_replication_star(args):
    return _run_replication(*args)


def local_power_curve(a_values, *, n: int = 100, reps: int = 1000, b: int = 500,
                      weight_fn: str = "indicator", levels=(0.05,), seed: int = 0,
                      n_jobs: int = 1) -> McReport:
    """Rejection rates of the CM test along a grid of drift scales.

    Drift scale 0 reproduces DGP0-L, so the a=0 row measures size.
    """
    cases = [McCase("average", DgpId.LOCAL, n, weight_fn, drift_scale=float(a))
             for a in a_values]
    return run_table(cases, reps=reps, b=b, levels=levels, seed=seed, n_jobs=n_jobs)


def efficiency_experiment(*, dgp: DgpId = DgpId.DGP0_L, n: int = 200, reps: int = 1000,
                          residual: ResidualSpec | None = None, model_degree: int = 1,
                          weight_fn: str = "logistic", seed: int = 0):
    """Process values at the median treatment for the feasible and oracle statistics.

    Returns (j_feasible, j_oracle) arrays of length ``reps``; their variances
    compare the estimated-weight statistic against the true-weight one.
    """
    residual = residual if residual is not None else ResidualSpec()
    model = DoseResponseModel.polynomial(model_degree)
    instrument = InstrumentSpec(kind="grad_g")
    wspec = WeightFunctionSpec(kind=weight_fn)
    case = McCase("average" if residual.kind == "average" else "median",
                  dgp, n, weight_fn, model_degree=model_degree)
    k1, k2 = _select_cell_sieve(case, seed, 0)
    config = _case_config(case, k1k2=(k1, k2), b=1, seed=seed)

    j_feas = np.empty(reps)
    j_orac = np.empty(reps)
    for rep in range(reps):
        gen_ss, _ = _replication_seeds(seed, 0, rep)
        sample = generate(DgpSpec(dgp, n), gen_ss)
        dataset = sample.dataset
        t_med = float(np.median(dataset.t_std))
        balance = fit_weights(dataset, config.sieve, tol=config.balance_tol,
                              max_iter=config.balance_max_iter)
        theta = fit_theta(dataset, balance.weights, residual, model, instrument)
        j_feas[rep] = j_process(theta.residuals, dataset.t_std, wspec, [t_med])[0]
        theta0 = fit_theta(dataset, sample.pi0, residual, model, instrument)
        j_orac[rep] = j_process(theta0.residuals, dataset.t_std, wspec, [t_med])[0]
    return j_feas, j_orac
