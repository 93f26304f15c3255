"""Command line interface: ``test``, ``cv``, ``simulate``, and ``report``.

Flags can also be supplied through a key=value config file (``--config``);
explicit flags win.  Every run writes a JSON manifest recording the resolved
configuration, the seed, and library versions, which is sufficient to
reproduce the outputs bit for bit.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence or
conditioning failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import BasisFamily, BasisKind, Composition
from .data import boxcox_outcome, load_csv
from .dose_response import DoseResponseModel, InstrumentSpec, ResidualSpec
from .errors import ConfigurationError, DoseTestError, FileError
from .model_select import default_grid
from .pipeline import RunConfig, run_specification_test, select_sieve
from .simulate import local_power_curve, power_cases, run_table, sizes_cases
from .teststat import WeightFunctionSpec

WEIGHT_FN_ALIASES = {"logistic": "logistic", "cossin": "cosine_sine",
                     "cosine_sine": "cosine_sine", "indicator": "indicator"}

# config-file key -> argparse destination
CONFIG_KEYS = {
    "balance.tol": "balance_tol",
    "balance.max_iter": "balance_max_iter",
    "basis.family": "basis",
    "basis.k1": "k1",
    "basis.k2": "k2",
    "basis.composition": "composition",
    "model.degree": "model_degree",
    "residual.kind": "residual",
    "residual.tau": "tau",
    "residual.bandwidth": "bandwidth",
    "instrument.kind": "instrument",
    "instrument.q": "instrument_q",
    "test.weight_fn": "weight_fn",
    "test.logistic_c": "logistic_c",
    "test.ks_grid": "ks_grid",
    "boot.B": "boot_b",
    "boot.seed": "seed",
    "plugin.ridge": "ridge",
    "plugin.density_bandwidth_scale": "density_bandwidth_scale",
    "cv.folds": "folds",
    "cv.grid": "cv_grid",
}


def _apply_config_file(args, parser, argv):
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise FileError(f"config file {path} does not exist")
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
        dest = CONFIG_KEYS[key]
        if not hasattr(args, dest) or dest in explicit:
            continue  # flag not used by this subcommand, or explicitly given
        current = getattr(args, dest)
        caster = type(current) if current is not None else str
        try:
            setattr(args, dest, caster(value) if caster is not bool
                    else value.lower() in ("1", "true", "yes"))
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return args


def _parse_cv_grid(text, r):
    if not text:
        return default_grid(r)
    pairs = []
    for chunk in text.split(","):
        k1, _, k2 = chunk.partition(":")
        try:
            pairs.append((int(k1), int(k2)))
        except ValueError:
            raise ConfigurationError(
                f"bad --cv-grid entry {chunk!r}; expected K1:K2 pairs like 2:3,3:3") from None
    return pairs


def _build_run_config(args, r) -> RunConfig:
    wkind = WEIGHT_FN_ALIASES.get(args.weight_fn)
    if wkind is None:
        raise ConfigurationError(f"unknown weight function {args.weight_fn!r}")
    residual = ResidualSpec(kind=args.residual, tau=args.tau,
                            bandwidth=args.bandwidth)
    instrument = InstrumentSpec(kind=args.instrument, q=args.instrument_q)
    family = BasisFamily(kind=BasisKind(args.basis))
    config = RunConfig(
        residual=residual,
        model=DoseResponseModel.polynomial(args.model_degree),
        instrument=instrument,
        weight_fn=WeightFunctionSpec(kind=wkind, c=args.logistic_c, ks_grid=args.ks_grid),
        cv_grid=_parse_cv_grid(args.cv_grid, r),
        cv_folds=args.folds,
        basis_family=family,
        composition=Composition(args.composition),
        boot_b=args.boot_b,
        seed=args.seed,
        balance_tol=args.balance_tol,
        balance_max_iter=args.balance_max_iter,
        ridge=args.ridge,
        density_bandwidth_scale=args.density_bandwidth_scale,
    )
    if args.k1 is not None or args.k2 is not None:
        if args.k1 is None or args.k2 is None:
            raise ConfigurationError("--k1 and --k2 must be given together")
        config = config.with_sieve(args.k1, args.k2)
    return config


def _manifest(args, extra=None) -> dict:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    payload["versions"] = {
        "dosetest": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }
    if extra:
        payload.update(extra)
    return payload


def _write_manifest(outdir: Path, args, extra=None):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "manifest.json").write_text(
        json.dumps(_manifest(args, extra), indent=2, sort_keys=True, default=str) + "\n")


def _format_p(p: float, b: int) -> str:
    return f"< {1.0 / b:g}" if p == 0.0 else f"{p:.6g}"


def _load_dataset(args):
    covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if not covariates:
        raise ConfigurationError("--covariates must name at least one column")
    dataset = load_csv(args.data, args.treatment, covariates, args.outcome)
    boxcox_params = None
    if args.boxcox_outcome:
        y2, boxcox_params = boxcox_outcome(dataset.y)
        from .data import Dataset
        dataset = Dataset.from_arrays(dataset.t, dataset.x, y2)
    return dataset, boxcox_params


def cmd_test(args) -> int:
    dataset, boxcox_params = _load_dataset(args)
    config = _build_run_config(args, dataset.r)
    run = run_specification_test(dataset, config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    lines = [
        f"n={dataset.n}",
        f"r={dataset.r}",
        f"k1={run.sieve.k1}",
        f"k2={run.sieve.k2}",
        "theta=" + ",".join(f"{v:.10g}" for v in run.theta.theta),
        f"theta_objective={run.theta.objective:.10g}",
        f"cm={run.stats.cm:.10g}",
        f"ks={run.stats.ks:.10g}",
        f"p_cm={_format_p(run.boot.p_cm, run.boot.b)}",
        f"p_ks={_format_p(run.boot.p_ks, run.boot.b)}",
        f"boot_b={run.boot.b}",
    ]
    if boxcox_params is not None:
        lines.append(f"boxcox_lambda1={boxcox_params.lambda1:.6g}")
        lines.append(f"boxcox_lambda2={boxcox_params.lambda2:.6g}")
    lines.append("-- balance diagnostics --")
    lines.append(run.balance.diagnostics_text())
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")

    with open(outdir / "jcurve.tsv", "w") as fh:
        fh.write("t_std\tt_original\tj\n")
        for ts, t, j in zip(dataset.t_std, dataset.t, run.stats.j_values):
            fh.write(f"{ts:.10g}\t{t:.10g}\t{j:.10g}\n")
    _write_manifest(outdir, args, {"selected_k": [run.sieve.k1, run.sieve.k2]})
    print(f"CM={run.stats.cm:.6g} (p {_format_p(run.boot.p_cm, run.boot.b)})  "
          f"KS={run.stats.ks:.6g} (p {_format_p(run.boot.p_ks, run.boot.b)})")
    return 0


def cmd_cv(args) -> int:
    dataset, _ = _load_dataset(args)
    config = _build_run_config(args, dataset.r)
    if config.sieve is not None:
        raise ConfigurationError("cv ignores --k1/--k2; provide --cv-grid instead")
    _, cv = select_sieve(dataset, config)
    print(cv.table_text())
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "cv.tsv").write_text(cv.table_text() + "\n")
        _write_manifest(outdir, args)
    return 0


def cmd_simulate(args) -> int:
    levels = tuple(float(s) for s in args.levels.split(","))
    reps = 200 if args.quick else args.reps
    weight_fns = tuple(WEIGHT_FN_ALIASES[w.strip()] for w in args.weight_fns.split(","))
    if args.table == "sizes":
        cases = sizes_cases(weight_fns)
    elif args.table == "power":
        cases = power_cases(weight_fns)
    elif args.table == "local":
        a_values = [float(s) for s in args.drift_grid.split(",")]
        report = local_power_curve(a_values, n=args.local_n, reps=reps,
                                   b=args.boot_b, weight_fn=weight_fns[0],
                                   levels=levels, seed=args.seed, n_jobs=args.n_jobs)
        return _emit_simulation(args, report)
    else:
        raise ConfigurationError(f"unknown table {args.table!r}")
    report = run_table(cases, reps=reps, b=args.boot_b, levels=levels, seed=args.seed,
                       cv_every_rep=args.cv_every_rep, n_jobs=args.n_jobs)
    return _emit_simulation(args, report)


def _emit_simulation(args, report) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "table.tsv").write_text(report.to_text())
    _write_manifest(outdir, args, {"reps": report.reps})
    print(report.to_text(), end="")
    return 0


def cmd_report(args) -> int:
    root = Path(args.runs)
    if not root.is_dir():
        raise FileError(f"{root} is not a directory")
    tables = sorted(root.glob("**/table.tsv"))
    if not tables:
        raise FileError(f"no simulation outputs (table.tsv) found under {root}")
    sections = []
    for path in tables:
        manifest = path.parent / "manifest.json"
        title = path.parent.name
        if manifest.exists():
            meta = json.loads(manifest.read_text())
            title = f"{title} (table={meta.get('table', '?')}, reps={meta.get('reps', '?')}, seed={meta.get('seed', '?')})"
        body = path.read_text().rstrip("\n")
        sections.append(f"## {title}\n\n```\n{body}\n```")
    text = "# Simulation report\n\n" + "\n\n".join(sections) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--treatment", required=True, help="treatment column name")
    p.add_argument("--covariates", required=True, help="comma-separated covariate columns")
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--boxcox-outcome", action="store_true",
                   help="Box-Cox transform the outcome (grid-searched) and shift its minimum to 0")


def _add_model_flags(p):
    p.add_argument("--residual", default="average", choices=["average", "quantile"])
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--bandwidth", type=float, default=None,
                   help="override the quantile smoothing bandwidth")
    p.add_argument("--model-degree", type=int, default=1,
                   help="polynomial degree of the working model g(t; theta)")
    p.add_argument("--instrument", default="grad_g", choices=["grad_g", "power"])
    p.add_argument("--instrument-q", type=int, default=None)
    p.add_argument("--weight-fn", default="logistic",
                   help="logistic | cossin | indicator")
    p.add_argument("--logistic-c", type=float, default=5.0)
    p.add_argument("--ks-grid", type=int, default=201)
    p.add_argument("--basis", default="power", choices=["power", "bspline"])
    p.add_argument("--composition", default="additive", choices=["additive", "tensor"])
    p.add_argument("--k1", type=int, default=None)
    p.add_argument("--k2", type=int, default=None)
    p.add_argument("--cv-grid", default=None, help="K1:K2 pairs, e.g. 2:2,3:3,4:5")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--boot-b", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance-tol", type=float, default=1e-8)
    p.add_argument("--balance-max-iter", type=int, default=100)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--density-bandwidth-scale", type=float, default=1.0)
    p.add_argument("--config", default=None, help="key=value config file; flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dosetest",
                                     description="Specification tests for continuous "
                                                 "treatment effect models")
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="run the specification test on a CSV file")
    _add_data_flags(p_test)
    _add_model_flags(p_test)
    p_test.add_argument("--out", required=True, help="output directory")
    p_test.set_defaults(func=cmd_test)

    p_cv = sub.add_parser("cv", help="cross-validate the sieve dimensions")
    _add_data_flags(p_cv)
    _add_model_flags(p_cv)
    p_cv.add_argument("--out", default=None)
    p_cv.set_defaults(func=cmd_cv)

    p_sim = sub.add_parser("simulate", help="Monte Carlo size/power/local-power tables")
    p_sim.add_argument("--table", required=True, choices=["sizes", "power", "local"])
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--quick", action="store_true", help="reps=200 shortcut")
    p_sim.add_argument("--boot-b", type=int, default=500)
    p_sim.add_argument("--levels", default="0.01,0.05,0.10")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--weight-fns", default="logistic,cossin,indicator")
    p_sim.add_argument("--cv-every-rep", action="store_true",
                       help="cross-validate (K1,K2) inside every replication")
    p_sim.add_argument("--drift-grid", default="0,2,4,8", help="local table only")
    p_sim.add_argument("--local-n", type=int, default=100, help="local table only")
    p_sim.add_argument("--n-jobs", type=int, default=1)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--config", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="consolidate simulation outputs")
    p_rep.add_argument("--runs", required=True, help="directory containing run outputs")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            args = _apply_config_file(args, parser, argv)
        return args.func(args)
    except DoseTestError as exc:
        print(f"dosetest: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
