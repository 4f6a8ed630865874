"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``evaluate``, ``experiment`` and
``oracles``.  Exit codes: 0 success, 1 usage or invalid input, 2 I/O or
file-format error, 3 numerical or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path


from . import __version__
from . import io as mio
from .dafl import TuningConfig
from .errors import DataValidityError, DimensionError, FitError, MEFMError, NumericalError
from .metrics import ReplicationReport, aggregate, block_scores, mse, space_distance
from .model import ModelConfig
from .pipeline import MEFMFit, fit_mefm, run_replication
from .simulate import SCENARIOS, DGPConfig, assemble_dataset, prop1_oracles, replication_seed, scenario

logger = logging.getLogger("sparse_mefm")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment's output."""

    name: str
    dgp: DGPConfig
    reps: int
    seed: int
    tuning: TuningConfig = field(default_factory=TuningConfig)
    output: Path = Path(".")
    k_r: int | None = None
    k_c: int | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise UsageError("replication count must be at least 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.k_r or self.dgp.k_r, self.k_c or self.dgp.k_c)


# -- argument handling -----------------------------------------------------

_GLOBAL_DEFAULTS = {"verbose": False, "seed": 0, "threads": None, "output": ".", "format": "csv"}


def _add_globals(p: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags appear before or after the subcommand
    g = p.add_argument_group("global options")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="parallel replications (default: available cores)")
    g.add_argument("-o", "--output", default=argparse.SUPPRESS, help="output directory (default .)")
    g.add_argument("--format", choices=("csv", "bin"), default=argparse.SUPPRESS,
                   help="tensor file format (default csv)")


def _add_tuning(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tuning")
    g.add_argument("--grid-size", type=int, default=30)
    g.add_argument("--lambda-min", type=float, default=1e-4)
    g.add_argument("--lambda-max", type=float, default=None, help="default: derived from each series")
    g.add_argument("--tol", type=float, default=1e-8, help="KKT tolerance")
    g.add_argument("--tuning", choices=("per-index", "aggregated"), default="per-index")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", default=None, help=f"preset name ({', '.join(SCENARIOS)})")
    src.add_argument("--config", default=None, help="key-value DGP config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-mefm", description="Sparse main effect matrix factor model toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw one dataset and write data and truth files")
    _add_scenario(p)
    _add_globals(p)

    p = sub.add_parser("fit", help="estimate the model from a tensor file")
    p.add_argument("input", help="observation tensor (csv or bin)")
    p.add_argument("--k-r", type=int, required=True)
    p.add_argument("--k-c", type=int, required=True)
    _add_tuning(p)
    _add_globals(p)

    p = sub.add_parser("evaluate", help="score fit output against simulated truth")
    p.add_argument("--estimate", required=True, help="directory written by 'fit'")
    p.add_argument("--truth", required=True, help="directory written by 'simulate'")
    _add_globals(p)

    p = sub.add_parser("experiment", help="simulate, fit and score many replications")
    _add_scenario(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--k-r", type=int, default=None, help="default: the DGP value")
    p.add_argument("--k-c", type=int, default=None, help="default: the DGP value")
    p.add_argument("--resume", action="store_true", help="skip replications with a saved report")
    _add_tuning(p)
    _add_globals(p)

    p = sub.add_parser("oracles", help="stationary zero probability and mean zero-run length")
    p.add_argument("--pi-s", type=float, required=True)
    p.add_argument("--pi-b", type=float, required=True)
    _add_globals(p)
    return parser


def _tuning(args) -> TuningConfig:
    try:
        return TuningConfig(grid_size=args.grid_size, lambda_min=args.lambda_min, lambda_max=args.lambda_max,
                            tol=args.tol, mode=args.tuning)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _dgp(args) -> tuple[str, DGPConfig]:
    if args.config:
        cfg = mio.read_config(args.config)
        return Path(args.config).stem, cfg.with_seed(args.seed)
    name = args.scenario or "Ia"
    try:
        return name, scenario(name, seed=args.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _outdir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tensor_path(directory: Path, stem: str) -> Path:
    for suffix in (".bin", ".csv"):
        path = directory / f"{stem}{suffix}"
        if path.exists():
            return path
    raise FileNotFoundError(f"no {stem}.bin or {stem}.csv in {directory}")


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return path


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    _, cfg = _dgp(args)
    out = _outdir(args)
    data = assemble_dataset(cfg)
    suffix = mio.tensor_suffix(args.format)
    mio.write_tensor(out / f"x{suffix}", data.x, args.format)
    mio.write_tensor(out / f"common{suffix}", data.truth.common, args.format)
    mio.write_effects_csv(out / "mu.csv", data.truth.mu)
    mio.write_effects_csv(out / "alpha.csv", data.truth.alpha)
    mio.write_effects_csv(out / "beta.csv", data.truth.beta)
    mio.write_blocks_csv(out / "blocks_alpha.csv", data.blocks_alpha)
    mio.write_blocks_csv(out / "blocks_beta.csv", data.blocks_beta)
    mio.write_matrix_csv(out / "A_r.csv", data.loadings["A_r"])
    mio.write_matrix_csv(out / "A_c.csv", data.loadings["A_c"])
    mio.write_config(out / "config.cfg", cfg)
    print(f"wrote dataset with dims {data.x.shape} to {out}")
    return EXIT_OK


def write_fit(out: Path, fit: MEFMFit, fmt: str) -> None:
    suffix = mio.tensor_suffix(fmt)
    mio.write_effects_csv(out / "mu.csv", fit.mu)
    mio.write_effects_csv(out / "alpha_init.csv", fit.alpha)
    mio.write_effects_csv(out / "beta_init.csv", fit.beta)
    mio.write_effects_csv(out / "alpha_final.csv", fit.alpha_final)
    mio.write_effects_csv(out / "beta_final.csv", fit.beta_final)
    mio.write_effects_csv(out / "theta_alpha.csv", fit.sparse.alpha.theta)
    mio.write_effects_csv(out / "theta_beta.csv", fit.sparse.beta.theta)
    mio.write_blocks_csv(out / "blocks_alpha.csv", fit.sparse.alpha.blocks)
    mio.write_blocks_csv(out / "blocks_beta.csv", fit.sparse.beta.blocks)
    mio.write_matrix_csv(out / "Q_r.csv", fit.factors.q_r)
    mio.write_matrix_csv(out / "Q_c.csv", fit.factors.q_c)
    mio.write_tensor(out / f"F_z{suffix}", fit.factors.f_z, fmt)
    mio.write_tensor(out / f"common{suffix}", fit.common, fmt)
    lam_lines = ["effect,index,lambda"]
    cp_lines = ["effect,index,lambda,cp"]
    for kind, eff in (("alpha", fit.sparse.alpha), ("beta", fit.sparse.beta)):
        for i, tr in enumerate(eff.tuning):
            lam_lines.append(f"{kind},{i + 1},{mio.fmt_float(tr.chosen_lambda)}")
            cp_lines += [f"{kind},{i + 1},{mio.fmt_float(g)},{mio.fmt_float(c)}" for g, c in zip(tr.lambda_grid, tr.cp_values)]
    (out / "lambdas.csv").write_text("\n".join(lam_lines) + "\n", encoding="utf-8")
    (out / "cp_curves.csv").write_text("\n".join(cp_lines) + "\n", encoding="utf-8")


def cmd_fit(args) -> int:
    x = mio.read_tensor(_require(Path(args.input)))
    try:
        model_cfg = ModelConfig(args.k_r, args.k_c)
        model_cfg.check_dims(x.shape[1], x.shape[2])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fit = fit_mefm(x, model_cfg, _tuning(args))
    out = _outdir(args)
    write_fit(out, fit, args.format)
    print(f"wrote estimates to {out}")
    return EXIT_OK


def _read_lambdas(path: Path) -> dict:
    lams: dict = {"alpha": [], "beta": []}
    if not path.exists():
        return lams
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "effect,index,lambda":
        raise mio.FileFormatError(f"{path}: expected header 'effect,index,lambda'")
    for line in lines[1:]:
        kind, _, value = line.split(",")
        lams.setdefault(kind, []).append(float(value))
    return lams


def evaluate_dirs(est: Path, truth: Path) -> ReplicationReport:
    """Score the files in ``est`` (from ``fit``) against ``truth`` (from ``simulate``)."""
    t_mu = mio.read_effects_csv(_require(truth / "mu.csv"))[:, 0]
    t_alpha = mio.read_effects_csv(_require(truth / "alpha.csv"))
    t_beta = mio.read_effects_csv(_require(truth / "beta.csv"))
    t_common = mio.read_tensor(_tensor_path(truth, "common"))
    T, p = t_alpha.shape
    q = t_beta.shape[1]
    blocks_a = mio.read_blocks_csv(_require(truth / "blocks_alpha.csv"), T, p)
    blocks_b = mio.read_blocks_csv(_require(truth / "blocks_beta.csv"), T, q)

    e_mu = mio.read_effects_csv(_require(est / "mu.csv"))[:, 0]
    e = {name: mio.read_effects_csv(_require(est / f"{name}.csv"))
         for name in ("alpha_init", "beta_init", "alpha_final", "beta_final")}
    e_common = mio.read_tensor(_tensor_path(est, "common"))

    sens_a, spec_a = block_scores(blocks_a, e["alpha_final"])
    sens_b, spec_b = block_scores(blocks_b, e["beta_final"])
    report = ReplicationReport(
        mse={
            "mu": mse(t_mu, e_mu),
            "alpha": mse(t_alpha, e["alpha_init"]),
            "beta": mse(t_beta, e["beta_init"]),
            "alpha_final": mse(t_alpha, e["alpha_final"]),
            "beta_final": mse(t_beta, e["beta_final"]),
            "common": mse(t_common, e_common),
        },
        sensitivity={"alpha": sens_a, "beta": sens_b},
        specificity={"alpha": spec_a, "beta": spec_b},
        lambdas=_read_lambdas(est / "lambdas.csv"),
    )
    if (truth / "A_r.csv").exists() and (est / "Q_r.csv").exists():
        report.space_distance = {
            "row": space_distance(mio.read_matrix_csv(truth / "A_r.csv"), mio.read_matrix_csv(est / "Q_r.csv")),
            "col": space_distance(mio.read_matrix_csv(truth / "A_c.csv"), mio.read_matrix_csv(est / "Q_c.csv")),
        }
    return report


def cmd_evaluate(args) -> int:
    report = evaluate_dirs(Path(args.estimate), Path(args.truth))
    out = _outdir(args)
    path = out / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK


def _run_one(spec: ExperimentSpec, rep: int) -> tuple[int, dict | None, str | None]:
    cfg = spec.dgp.with_seed(replication_seed(spec.seed, rep))
    try:
        report = run_replication(assemble_dataset(cfg), spec.model_config(), spec.tuning)
    except (FitError, NumericalError, DataValidityError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"
    report.replication = rep
    return rep, report.to_dict(), None


def _rep_path(spec: ExperimentSpec, rep: int) -> Path:
    return spec.output / "reps" / f"rep_{rep:05d}.json"


def _load_done(spec: ExperimentSpec) -> dict[int, ReplicationReport]:
    done = {}
    for rep in range(spec.reps):
        path = _rep_path(spec, rep)
        if path.exists():
            try:
                done[rep] = ReplicationReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
            except (ValueError, TypeError):
                logger.warning("ignoring unreadable report %s", path)
    return done


def format_summary(name: str, reports: list[ReplicationReport], n_failed: int, reps: int) -> str:
    """Summary CSV text; floats use the shortest exact representation."""
    def num(v):
        return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

    lines = ["scenario,metric,mean,sd,median,n"]
    if reports:
        for metric, s in aggregate(reports).items():
            lines.append(f"{name},{metric},{num(s.mean)},{num(s.sd)},{num(s.median)},{s.n}")
    lines.append(f"{name},failed_replications,{n_failed},nan,nan,{reps}")
    return "\n".join(lines) + "\n"


def run_experiment(spec: ExperimentSpec, threads: int = 1, resume: bool = False) -> tuple[list[ReplicationReport], dict]:
    """Run or resume every replication; returns reports in index order and failures."""
    (spec.output / "reps").mkdir(parents=True, exist_ok=True)
    done = _load_done(spec) if resume else {}
    todo = [r for r in range(spec.reps) if r not in done]
    failures: dict[int, str] = {}

    def record(rep, data, err):
        if err is not None:
            logger.warning("replication %d failed: %s", rep, err)
            failures[rep] = err
            return
        _rep_path(spec, rep).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        done[rep] = ReplicationReport.from_dict(data)

    if threads > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rep, data, err in pool.map(_run_one, [spec] * len(todo), todo):
                record(rep, data, err)
    else:
        for rep in todo:
            record(*_run_one(spec, rep))
            logger.info("replication %d of %d done", rep + 1, spec.reps)
    return [done[r] for r in sorted(done)], failures


def cmd_experiment(args) -> int:
    name, cfg = _dgp(args)
    spec = ExperimentSpec(name=name, dgp=cfg, reps=args.reps, seed=args.seed, tuning=_tuning(args),
                          output=_outdir(args), k_r=args.k_r, k_c=args.k_c)
    try:
        spec.model_config().check_dims(cfg.p, cfg.q)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    threads = args.threads or os.cpu_count() or 1
    reports, failures = run_experiment(spec, threads, args.resume)
    path = spec.output / "summary.csv"
    path.write_text(format_summary(name, reports, len(failures), spec.reps), encoding="utf-8")
    print(f"{len(reports)} of {spec.reps} replications done, {len(failures)} failed; wrote {path}")
    return EXIT_OK


def cmd_oracles(args) -> int:
    try:
        p_star, run_len = prop1_oracles(args.pi_s, args.pi_b)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"p_star = {p_star!r}")
    print(f"expected_block_len = {run_len!r}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "oracles": cmd_oracles,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, val in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sparse-mefm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DimensionError, DataValidityError) as exc:
        print(f"sparse-mefm: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        # FileFormatError is an OSError too
        print(f"sparse-mefm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FitError) as exc:
        print(f"sparse-mefm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MEFMError as exc:
        print(f"sparse-mefm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
