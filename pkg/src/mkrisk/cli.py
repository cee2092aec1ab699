"""Command-line interface.

Every subcommand reads either a fitted model (``--model``) or a CSV of
observations (``--input``, fitted on the fly), and writes a report to
``--output`` or standard output. Failures print one JSON error record on
standard error and exit with 1 (usage), 2 (data) or 3 (numerical).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytic
from .errors import DataError, MKRiskError, NumericalError, ParameterError
from .io import (
    Standardization,
    StandardizedMap,
    format_contours_csv,
    format_records,
    load_potential,
    potential_to_document,
    read_table,
    save_potential,
    write_csv,
)
from .maps import ContourKind, quantile_contour, rank_sign_batch
from .reference import ReferenceSpec, direction_grid
from .risk import (
    ScenarioKind,
    ScenarioSpec,
    default_direction_count,
    generate_scenario,
    rescaled_pair,
    risk_report,
)
from .solver import DEFAULT_EPSILON, PointCloud, SolveOptions, SolverMethod, solve_semidual
from .tails import TailEvalOptions, expected_shortfall, superquantile, tail_contour

__all__ = ["RunConfig", "build_parser", "parse_config", "run_command", "main"]

COMMANDS = (
    "fit", "quantile", "superquantile", "shortfall", "contour", "var", "cvar",
    "rank", "simulate", "analytic", "compare",
)

_DEFAULT_LEVELS = {
    "contour": (0.1, 0.3, 0.5, 0.7, 0.9),
    "quantile": (0.1, 0.3, 0.5, 0.7, 0.9),
    "superquantile": (0.1, 0.3, 0.5, 0.7, 0.9),
    "shortfall": (0.1, 0.3, 0.5, 0.7, 0.9),
    "var": (0.25, 0.5, 0.75),
    "cvar": (0.25, 0.5, 0.75),
    "compare": (0.75,),
    "analytic": (0.25, 0.5, 0.75),
}


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    input2: str | None = None
    model: str | None = None
    output: str | None = None
    reference: str = "ud"
    epsilon: float = DEFAULT_EPSILON
    method: str = "fixed"
    iters: int | None = None
    tol: float = 1e-7
    grid_size: int | None = None
    seed: int = 0
    levels: tuple = ()
    directions: int | None = None
    radial_steps: int = 128
    rmin: float = 1e-6
    rmax: float = 1.0 - 1e-6
    fmt: str = "table"
    standardize: bool = False
    at: tuple = ()
    scenario: str | None = None
    n: int = 2000
    params: dict = field(default_factory=dict)
    dim: int | None = None
    p: float | None = None
    univariate: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ParameterError(f"unknown command {self.command!r}")
        if not self.epsilon > 0:
            raise ParameterError("--epsilon must be > 0")
        if any(not 0.0 < a < 1.0 for a in self.levels):
            raise ParameterError("--levels must lie in (0, 1)")
        if self.fmt not in ("json", "table", "csv"):
            raise ParameterError(f"unknown --format {self.fmt!r}")
        if self.directions is not None and self.directions < 1:
            raise ParameterError("--directions must be >= 1")

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            method=SolverMethod(self.method),
            iterations=self.iters,
            batch_reference_size=self.grid_size,
            tolerance=self.tol,
            seed=self.seed,
        )

    def tail_options(self) -> TailEvalOptions:
        return TailEvalOptions(self.radial_steps, self.rmin, self.rmax)

    def level_list(self) -> tuple:
        return tuple(self.levels) or _DEFAULT_LEVELS.get(self.command, (0.5,))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(message)


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ParameterError(f"expected comma-separated numbers, got {text!r}") from None


def _points(text: str) -> tuple:
    return tuple(_float_list(chunk) for chunk in text.split(";") if chunk.strip())


def _param(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep:
        raise ParameterError(f"--param expects key=value, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise ParameterError(f"--param {key}: not a number: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mkrisk", description="Center-outward quantiles and multivariate risk measures.")
    parser.add_argument("--version", action="version", version="mkrisk 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--input", help="CSV of observations with a header row")
    common.add_argument("--model", help="fitted model written by `fit`")
    common.add_argument("--output", help="output path (default: standard output)")
    common.add_argument("--reference", default="ud", help="ud, ud-plus, udq:<p> or udq-plus:<p>")
    common.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    common.add_argument("--method", choices=["sgd", "fixed"], default="fixed")
    common.add_argument("--iters", type=int, default=None)
    common.add_argument("--tol", type=float, default=1e-7)
    common.add_argument("--grid-size", type=int, default=None, help="reference sample size for the solver")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--levels", type=_float_list, default=())
    common.add_argument("--directions", type=int, default=None)
    common.add_argument("--radial-steps", type=int, default=128)
    common.add_argument("--rmin", type=float, default=1e-6)
    common.add_argument("--rmax", type=float, default=1.0 - 1e-6)
    common.add_argument("--format", dest="fmt", choices=["json", "table", "csv"], default=None)
    common.add_argument("--standardize", action="store_true", help="fit on per-column standardized data")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("fit", parents=[common], help="fit and persist a model")
    for name in ("quantile", "superquantile", "shortfall"):
        p = sub.add_parser(name, parents=[common], help=f"{name} at points or along contours")
        p.add_argument("--at", type=_points, default=(), help="points as 'u0,u1;u0,u1'")
    sub.add_parser("contour", parents=[common], help="quantile, superquantile and shortfall contours")
    sub.add_parser("var", parents=[common], help="Vector-at-Risk per level")
    sub.add_parser("cvar", parents=[common], help="Conditional-Vector-at-Risk per level")
    sub.add_parser("rank", parents=[common], help="ranks and signs of the input rows")
    p = sub.add_parser("simulate", parents=[common], help="write a toy scenario to CSV")
    p.add_argument("scenario", choices=[k.value for k in ScenarioKind])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--param", type=_param, action="append", default=[])
    p = sub.add_parser("analytic", parents=[common], help="closed-form gamma-model or univariate oracles")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--at", type=_points, default=())
    p.add_argument("--univariate", action="store_true", help="univariate oracles on each --input column")
    p = sub.add_parser("compare", parents=[common], help="rescaled risk bars for two clouds")
    p.add_argument("--input2", help="second CSV")
    p.add_argument("--scenario", choices=[k.value for k in ScenarioKind if k is not ScenarioKind.BANANA])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--param", type=_param, action="append", default=[])
    return parser


def parse_config(argv=None) -> tuple[RunConfig, bool]:
    ns = build_parser().parse_args(argv)
    default_fmt = "csv" if ns.command in ("contour", "simulate") else "table"
    cfg = RunConfig(
        command=ns.command,
        input=ns.input,
        input2=getattr(ns, "input2", None),
        model=ns.model,
        output=ns.output,
        reference=ns.reference,
        epsilon=ns.epsilon,
        method=ns.method,
        iters=ns.iters,
        tol=ns.tol,
        grid_size=ns.grid_size,
        seed=ns.seed,
        levels=ns.levels,
        directions=ns.directions,
        radial_steps=ns.radial_steps,
        rmin=ns.rmin,
        rmax=ns.rmax,
        fmt=ns.fmt or default_fmt,
        standardize=ns.standardize,
        at=getattr(ns, "at", ()),
        scenario=getattr(ns, "scenario", None),
        n=getattr(ns, "n", 2000),
        params=dict(getattr(ns, "param", []) or []),
        dim=getattr(ns, "dim", None),
        p=getattr(ns, "p", None),
        univariate=getattr(ns, "univariate", False),
    )
    return cfg, ns.verbose


# ---------------------------------------------------------------------------
# helpers


def _fit_cloud(cfg: RunConfig, points: np.ndarray):
    std = Standardization.fit(points) if cfg.standardize else None
    work = points if std is None else std.forward(points)
    reference = ReferenceSpec.parse(cfg.reference, work.shape[1])
    potential = solve_semidual(PointCloud(work), reference, cfg.epsilon, cfg.solve_options())
    return potential, std


def _as_handle(potential, std):
    return potential if std is None else StandardizedMap(potential, std)


def _load_handle(cfg: RunConfig):
    """``(handle, columns)`` from ``--model`` or by fitting ``--input``."""
    if cfg.model:
        potential, std, columns = load_potential(cfg.model)
        columns = columns or tuple(f"x{j}" for j in range(potential.d))
        return _as_handle(potential, std), columns
    if not cfg.input:
        raise ParameterError(f"`{cfg.command}` needs --input or --model")
    table = read_table(cfg.input)
    if len(table.values) < 2:
        raise DataError(f"{cfg.input}: n < 2 (need at least two data rows)")
    potential, std = _fit_cloud(cfg, table.values)
    return _as_handle(potential, std), table.columns


def _grid(cfg: RunConfig, handle):
    m = cfg.directions or default_direction_count(handle.d)
    return direction_grid(handle.reference, m)


def _emit(cfg: RunConfig, text: str, out):
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        out.write(text)


def _contour_records(contours, columns):
    return [
        {"level": c.level, "kind": c.kind.value, "dir_index": j, **dict(zip(columns, map(float, vertex)))}
        for c in contours
        for j, vertex in enumerate(c.vertices)
    ]


def _render_contours(cfg, contours, columns) -> str:
    if cfg.fmt == "csv":
        return format_contours_csv(contours)
    return format_records(_contour_records(contours, columns), cfg.fmt)


def _contours(cfg, handle, kinds):
    grid = _grid(cfg, handle)
    opts = cfg.tail_options()
    out = []
    for alpha in cfg.level_list():
        for kind in kinds:
            if kind is ContourKind.QUANTILE:
                out.append(quantile_contour(handle, alpha, grid))
            else:
                out.append(tail_contour(handle, alpha, kind, grid, opts))
    return out


# ---------------------------------------------------------------------------
# commands


def _cmd_fit(cfg, out):
    if not cfg.input:
        raise ParameterError("`fit` needs --input")
    table = read_table(cfg.input)
    if len(table.values) < 2:
        raise DataError(f"{cfg.input}: n < 2 (need at least two data rows)")
    potential, std = _fit_cloud(cfg, table.values)
    if cfg.output:
        save_potential(cfg.output, potential, cfg.solve_options(), std, table.columns)
    else:
        doc = potential_to_document(potential, cfg.solve_options(), std, table.columns)
        out.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


_KIND_BY_COMMAND = {
    "quantile": ContourKind.QUANTILE,
    "superquantile": ContourKind.SUPERQUANTILE,
    "shortfall": ContourKind.EXPECTED_SHORTFALL,
}


def _cmd_evaluate(cfg, out):
    handle, columns = _load_handle(cfg)
    kind = _KIND_BY_COMMAND[cfg.command]
    if not cfg.at:
        _emit(cfg, _render_contours(cfg, _contours(cfg, handle, [kind]), columns), out)
        return
    u = np.array(cfg.at, dtype=float)
    if u.ndim != 2 or u.shape[1] != handle.d:
        raise ParameterError(f"--at points must have {handle.d} coordinates each")
    if kind is ContourKind.QUANTILE:
        values = np.atleast_2d(handle.quantile(u))
    elif kind is ContourKind.SUPERQUANTILE:
        values = np.atleast_2d(superquantile(handle, u, cfg.tail_options()))
    else:
        values = np.atleast_2d(expected_shortfall(handle, u, cfg.tail_options()))
    records = [
        {**{f"u_{j}": float(x) for j, x in enumerate(ui)}, **dict(zip(columns, map(float, vi)))}
        for ui, vi in zip(u, values)
    ]
    _emit(cfg, format_records(records, cfg.fmt), out)


def _cmd_contour(cfg, out):
    handle, columns = _load_handle(cfg)
    kinds = [ContourKind.QUANTILE, ContourKind.SUPERQUANTILE, ContourKind.EXPECTED_SHORTFALL]
    _emit(cfg, _render_contours(cfg, _contours(cfg, handle, kinds), columns), out)


def _cmd_risk(cfg, out):
    handle, columns = _load_handle(cfg)
    grid = _grid(cfg, handle)
    reports = [risk_report(handle, a, grid, cfg.tail_options()) for a in cfg.level_list()]
    conditional = cfg.command == "cvar"
    if cfg.fmt == "json":
        _emit(cfg, json.dumps([r.to_dict() for r in reports], indent=2) + "\n", out)
        return
    label = "CVaR" if conditional else "VaR"
    records = []
    for j, name in enumerate(columns):
        row = {"variable": name}
        for r in reports:
            vec = r.conditional_vector_at_risk if conditional else r.vector_at_risk
            row[f"{label}_{r.alpha:g}"] = float(vec[j])
        records.append(row)
    rho = {"variable": "rho_s" if conditional else "rho_q"}
    for r in reports:
        rho[f"{label}_{r.alpha:g}"] = r.rho_s if conditional else r.rho_q
    records.append(rho)
    _emit(cfg, format_records(records, cfg.fmt), out)


def _cmd_rank(cfg, out):
    handle, columns = _load_handle(cfg)
    if cfg.model and cfg.input:
        points = read_table(cfg.input).values
    else:
        points = handle.data.points
    ranks, signs, defined = rank_sign_batch(handle, points)
    records = [
        {"row": i, "rank": float(r), "defined": bool(ok), **{f"sign_{j}": float(s) for j, s in enumerate(sg)}}
        for i, (r, sg, ok) in enumerate(zip(ranks, signs, defined))
    ]
    _emit(cfg, format_records(records, cfg.fmt), out)


def _scenario(cfg) -> ScenarioSpec:
    return ScenarioSpec(ScenarioKind(cfg.scenario), n=cfg.n, seed=cfg.seed, params=cfg.params)


def _cmd_simulate(cfg, out):
    spec = _scenario(cfg)
    drawn = generate_scenario(spec)
    clouds = [drawn] if not spec.is_pair else list(drawn)
    if cfg.output:
        base = Path(cfg.output)
        paths = [base] if len(clouds) == 1 else [
            base.with_name(f"{base.stem}_{tag}{base.suffix}") for tag in ("first", "second")
        ]
        for path, cloud in zip(paths, clouds):
            write_csv(path, cloud, ["x0", "x1"])
        return
    if len(clouds) == 1:
        out.write(format_records([{"x0": float(a), "x1": float(b)} for a, b in clouds[0]], "csv"))
        return
    records = [
        {"cloud": k + 1, "x0": float(a), "x1": float(b)} for k, cloud in enumerate(clouds) for a, b in cloud
    ]
    out.write(format_records(records, "csv"))


def _cmd_analytic(cfg, out):
    if cfg.univariate:
        if not cfg.input:
            raise ParameterError("`analytic --univariate` needs --input")
        table = read_table(cfg.input)
        records = []
        for j, name in enumerate(table.columns):
            sample = analytic.UnivariateSample(table.values[:, j])
            for a in cfg.level_list():
                records.append({
                    "variable": name,
                    "alpha": a,
                    "quantile": analytic.univariate_quantile(sample, a),
                    "superquantile": analytic.univariate_superquantile(sample, a),
                    "shortfall": analytic.univariate_expected_shortfall(sample, a),
                })
        _emit(cfg, format_records(records, cfg.fmt), out)
        return
    model = analytic.GammaModel(cfg.dim, cfg.p)
    if cfg.at:
        u = np.array(cfg.at, dtype=float)
        if u.ndim != 2 or u.shape[1] != model.d:
            raise ParameterError(f"--at points must have {model.d} coordinates each")
    else:
        grid = direction_grid(model.reference(), cfg.directions or 8)
        u = np.concatenate([a * grid.directions for a in cfg.level_list()])
    q = analytic.gamma_mk_quantile(model, u)
    s = analytic.gamma_mk_superquantile(model, u)
    e = analytic.gamma_mk_expected_shortfall(model, u)
    records = []
    for i in range(len(u)):
        rec = {f"u_{j}": float(x) for j, x in enumerate(u[i])}
        rec.update({f"quantile_{j}": float(x) for j, x in enumerate(q[i])})
        rec.update({f"superquantile_{j}": float(x) for j, x in enumerate(s[i])})
        rec.update({f"shortfall_{j}": float(x) for j, x in enumerate(e[i])})
        records.append(rec)
    _emit(cfg, format_records(records, cfg.fmt), out)


def _cmd_compare(cfg, out):
    if cfg.scenario:
        first, second = generate_scenario(_scenario(cfg))
    else:
        if not (cfg.input and cfg.input2):
            raise ParameterError("`compare` needs --input and --input2, or --scenario")
        first, second = read_table(cfg.input).values, read_table(cfg.input2).values
        if first.shape[1] != second.shape[1]:
            raise DataError("the two inputs have different numbers of columns")
    handles = [_as_handle(*_fit_cloud(cfg, pts)) for pts in (first, second)]
    grid = _grid(cfg, handles[0])
    records = []
    for a in cfg.level_list():
        r1, r2 = (risk_report(h, a, grid, cfg.tail_options()) for h in handles)
        q1, q2 = rescaled_pair(r1.rho_q, r2.rho_q)
        s1, s2 = rescaled_pair(r1.rho_s, r2.rho_s)
        records += [
            {"alpha": a, "measure": "rho_q", "first": r1.rho_q, "second": r2.rho_q, "bar_first": q1, "bar_second": q2},
            {"alpha": a, "measure": "rho_s", "first": r1.rho_s, "second": r2.rho_s, "bar_first": s1, "bar_second": s2},
        ]
    _emit(cfg, format_records(records, cfg.fmt), out)


_DISPATCH = {
    "fit": _cmd_fit,
    "quantile": _cmd_evaluate,
    "superquantile": _cmd_evaluate,
    "shortfall": _cmd_evaluate,
    "contour": _cmd_contour,
    "var": _cmd_risk,
    "cvar": _cmd_risk,
    "rank": _cmd_rank,
    "simulate": _cmd_simulate,
    "analytic": _cmd_analytic,
    "compare": _cmd_compare,
}


def _error_record(exc: BaseException, code: int) -> str:
    return json.dumps({"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}})


def run_command(cfg: RunConfig, out=None, err=None) -> int:
    """Run one subcommand; returns the process exit status."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            with np.errstate(over="ignore", under="ignore"):
                _DISPATCH[cfg.command](cfg, out)
    except MKRiskError as exc:
        err.write(_error_record(exc, exc.exit_code) + "\n")
        return exc.exit_code
    except FloatingPointError as exc:
        err.write(_error_record(NumericalError(str(exc)), 3) + "\n")
        return 3
    except OSError as exc:
        err.write(_error_record(DataError(str(exc)), 2) + "\n")
        return 2
    return 0


def main(argv=None) -> int:
    try:
        cfg, verbose = parse_config(argv)
    except MKRiskError as exc:
        sys.stderr.write(_error_record(exc, exc.exit_code) + "\n")
        return exc.exit_code
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
