"""F-fold cross-validation for the sieve dimensions (K1, K2).

For every candidate pair and every fold, weights and the model parameter are
fit on the complement, held-out weights are obtained by pushing held-out basis
values through the fitted dual map, and the squared fold-mean of the held-out
weighted residuals is accumulated.  The divisor of the training moment uses the
full sample size exactly as the criterion is written; this constant does not
move the arg-min over theta.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .balance import fit_weights_arrays, weights_from_dual
from .basis import BasisFamily, Composition, SieveSpec, constant_combo_u, constant_combo_v, eval_u_many, eval_v_many
from .dose_response import fit_theta
from .errors import ConfigurationError, DoseTestError


@dataclass(frozen=True)
class CVResult:
    scores: dict
    selected: tuple[int, int]
    folds: int
    invalid: dict

    @property
    def k1(self) -> int:
        return self.selected[0]

    @property
    def k2(self) -> int:
        return self.selected[1]

    def table_text(self) -> str:
        lines = ["k1\tk2\tscore"]
        for (k1, k2), score in sorted(self.scores.items()):
            lines.append(f"{k1}\t{k2}\t{score:.10e}")
        for (k1, k2), reason in sorted(self.invalid.items()):
            lines.append(f"{k1}\t{k2}\tinvalid: {reason}")
        lines.append(f"selected\t{self.selected[0]}\t{self.selected[1]}")
        return "\n".join(lines)


def default_grid(r: int) -> list[tuple[int, int]]:
    """K1 in 2..5 crossed with additive K2 = 1 + r*d for d in 1..4."""
    return [(k1, 1 + r * d) for k1 in range(2, 6) for d in range(1, 5)]


def fold_assignments(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic shuffled contiguous blocks; a function of (seed, n, folds)."""
    if folds < 2:
        raise ConfigurationError("cross-validation needs at least 2 folds")
    if folds > n:
        raise ConfigurationError(f"cannot split {n} rows into {folds} folds")
    rng = np.random.default_rng([seed, n, folds])
    perm = rng.permutation(n)
    return [np.sort(block) for block in np.array_split(perm, folds)]


def cross_validate(dataset, grid, residual, model, instrument, *, folds: int = 10,
                   seed: int = 0, family: BasisFamily | None = None,
                   composition: Composition = Composition.ADDITIVE,
                   balance_tol: float = 1e-8, balance_max_iter: int = 100) -> CVResult:
    """Score every (K1, K2) pair on held-out weighted residuals and pick the best.

    Pairs that are infeasible for the fold sizes, rank deficient, or fail to
    converge are excluded with a warning.  Ties break toward the smaller
    K1*K2, then the smaller K1.
    """
    grid = [(int(k1), int(k2)) for k1, k2 in grid]
    if not grid:
        raise ConfigurationError("cross-validation grid is empty")
    family = family if family is not None else BasisFamily()
    blocks = fold_assignments(dataset.n, folds, seed)
    all_idx = np.arange(dataset.n)

    scores: dict = {}
    invalid: dict = {}
    for k1, k2 in grid:
        try:
            spec = SieveSpec(k1=k1, k2=k2, family=family, composition=composition)
            total = 0.0
            for held in blocks:
                train = np.setdiff1d(all_idx, held, assume_unique=True)
                if spec.k > train.size:
                    raise ConfigurationError(
                        f"K1*K2 = {spec.k} exceeds the {train.size} training rows of a fold")
                tview = dataset.subset(train)
                U = eval_u_many(spec, tview.t_std)
                V = eval_v_many(spec, tview.x_std)
                lam0 = -np.outer(constant_combo_u(spec), constant_combo_v(spec))
                fit = fit_weights_arrays(U, V, tol=balance_tol,
                                         max_iter=balance_max_iter, lam0=lam0)
                theta = fit_theta(tview, fit.weights, residual, model, instrument)
                hview = dataset.subset(held)
                pi_out = weights_from_dual(fit.lam,
                                           eval_u_many(spec, hview.t_std),
                                           eval_v_many(spec, hview.x_std))
                m_out = residual.residuals(hview.y, model.value(hview.t, theta.theta))
                total += float(np.mean(pi_out * m_out)) ** 2
            scores[(k1, k2)] = total
        except DoseTestError as exc:
            invalid[(k1, k2)] = str(exc)
            warnings.warn(f"cross-validation skipped (K1={k1}, K2={k2}): {exc}",
                          stacklevel=2)
    if not scores:
        raise ConfigurationError("no feasible (K1, K2) pair in the cross-validation grid")
    selected = min(scores, key=lambda p: (scores[p], p[0] * p[1], p[0]))
    return CVResult(scores=scores, selected=selected, folds=folds, invalid=invalid)
