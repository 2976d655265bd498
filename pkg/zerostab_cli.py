#!/usr/bin/env python3
"""
Command line front end.

Subcommands: coeffs, deflate, analyze, simulate, sweep, convergence.
Reports go to stdout (or --out) as JSON with a top-level ``schema`` field, or
as CSV with --format csv. Diagnostics go to stderr.

Exit codes: 0 success, 1 domain error (JSON explanation on stdout),
2 usage error.

CSV columns:
  coeffs       n, ratio_0.., alpha_0..alpha_k, beta_k
  deflate      row, gamma_0..gamma_{k-1}
  simulate     n, t, y, u
  sweep        N, sup_y, sup_u, growth_rate, u_amplification
  convergence  N, error
  analyze      field, value
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from zerostab_errors import DomainError, UsageError, ZeroStabError
from zerostab_grid import (
    Grid,
    build_grid,
    constant_ratio_grid,
    parse_grid_map,
    regularity,
    uniform_grid,
)
from zerostab_method import (
    CoefficientRow,
    Normalization,
    bdf_alpha_batch,
    bdf_constant_row,
    bdf_variable_row,
    deflate_row,
    method_spec,
    ratio_array,
)
from zerostab_serialize import parse_number, to_csv, to_json, with_schema
from zerostab_sim import (
    boundedness_sweep,
    init_policy,
    quadrature_convergence,
    run_homogeneous,
)
from zerostab_stability import (
    analyze_alpha_row,
    bdf2_exact_ratio_bound,
    certify_grid,
    perturbation_matrices,
    stability_threshold,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
SUBCOMMANDS = ("coeffs", "deflate", "analyze", "simulate", "sweep", "convergence")
INTEGRANDS = ("exp", "cos", "monomial")


class Command(BaseModel):
    """One validated invocation, shared by the CLI and the MCP tools server."""

    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["coeffs", "deflate", "analyze", "simulate", "sweep", "convergence"]
    method: str = "bdf"
    k: int = Field(default=2, ge=1, le=6)
    grid: Optional[str] = None
    ratios: Optional[List[str]] = None
    uniform: Optional[int] = Field(default=None, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    alpha: Optional[List[str]] = None
    input: Optional[str] = None
    regularity: Optional[float] = Field(default=None, ge=0)
    init: Optional[List[str]] = None
    exact: bool = False
    normalization: Normalization = Normalization.CLASSICAL
    format: Literal["json", "csv"] = "json"
    out: Optional[str] = None
    nmin: int = Field(default=50, ge=1)
    nmax: Optional[int] = Field(default=None, ge=1)
    doublings: Optional[int] = Field(default=None, ge=0)
    ns: Optional[List[int]] = None
    seed: int = 0
    jobs: int = Field(default=1, ge=1)
    integrand: Literal["exp", "cos", "monomial"] = "exp"
    degree: Optional[int] = Field(default=None, ge=0)

    @field_validator("ratios", "alpha", "init", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if value is None:
            return None
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        return [str(part).strip() for part in value]

    @field_validator("ns", mode="before")
    @classmethod
    def _split_ints(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    @model_validator(mode="after")
    def _one_grid_form(self) -> "Command":
        forms = [name for name in ("grid", "ratios", "uniform") if getattr(self, name) is not None]
        if len(forms) > 1:
            raise ValueError(f"Give at most one grid specification, got {', '.join(forms)}")
        if self.alpha is not None and forms and self.subcommand == "analyze":
            raise ValueError("--alpha analyses a constant step row and takes no grid")
        return self


@dataclass
class CommandOutput:
    payload: dict
    csv_header: Optional[List[str]] = None
    csv_rows: Optional[list] = None

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            if self.csv_header is None:
                raise UsageError("This report has no CSV form")
            return to_csv(self.csv_header, self.csv_rows)
        return to_json(with_schema(self.payload))


def _numbers(values: List[str], exact: bool) -> list:
    return [parse_number(v, exact=exact) for v in values]


def sweep_sizes(cmd: Command) -> List[int]:
    """Explicit --ns, or nmin doubled --doublings times (default 3), or doubled up to --nmax."""
    if cmd.ns:
        return list(cmd.ns)
    if cmd.doublings is not None and cmd.nmax is not None:
        raise UsageError("Give either --doublings or --nmax, not both")
    if cmd.nmax is not None:
        if cmd.nmax < cmd.nmin:
            raise UsageError("--nmax must not be smaller than --nmin")
        sizes = [cmd.nmin]
        while sizes[-1] * 2 <= cmd.nmax:
            sizes.append(sizes[-1] * 2)
        return sizes
    doublings = 3 if cmd.doublings is None else cmd.doublings
    return [cmd.nmin * 2 ** i for i in range(doublings + 1)]


def resolve_grid(cmd: Command, N: Optional[int] = None) -> Grid:
    """A concrete grid from --grid (with --n), --uniform, or --ratios.

    A single ratio with --n gives a constant ratio grid; a full list gives the
    grid with those consecutive step ratios.
    """
    N = N or cmd.n
    if cmd.grid is not None:
        if N is None:
            raise UsageError("--grid needs --n to realise a grid")
        return build_grid(parse_grid_map(cmd.grid), N)
    if cmd.uniform is not None:
        return uniform_grid(N or cmd.uniform, exact=cmd.exact)
    if cmd.ratios is not None:
        ratios = _numbers(cmd.ratios, cmd.exact)
        if len(ratios) == 1 and N is not None:
            return constant_ratio_grid(ratios[0], N)
        steps = [Fraction(1) if cmd.exact else 1.0]
        for r in ratios:
            if not r > 0:
                raise DomainError(f"Step ratios must be positive, got {r}")
            steps.append(steps[-1] * r)
        return Grid.from_steps(steps, source="ratios")
    raise UsageError("A grid is required: use --grid, --uniform or --ratios")


def _grid_family(cmd: Command):
    """Grid source indexed by N for sweeps and convergence studies."""
    if cmd.grid is not None:
        return parse_grid_map(cmd.grid)
    if cmd.uniform is not None:
        return lambda N: uniform_grid(N)
    if cmd.ratios is not None:
        if len(cmd.ratios) != 1:
            raise UsageError("Sweeps take a single constant ratio in --ratios")
        r = parse_number(cmd.ratios[0])
        return lambda N: constant_ratio_grid(r, N)
    raise UsageError("A grid family is required: use --grid, --uniform or --ratios")


def _row_dict(row: CoefficientRow) -> dict:
    return {"ratios": list(row.ratios), "alpha": list(row.alpha), "beta": list(row.beta)}


def run_coeffs(cmd: Command) -> CommandOutput:
    spec = method_spec(cmd.k, cmd.method)
    if cmd.grid is not None or cmd.uniform is not None or (cmd.ratios is not None and cmd.n is not None):
        grid = resolve_grid(cmd)
        ratios = ratio_array(grid.stencil_ratios(spec.k), spec.k, exact=grid.exact)
        alpha, beta_k = bdf_alpha_batch(spec.k, ratios, cmd.normalization,
                                        unit=Fraction(1) if grid.exact else 1.0)
        rows = [CoefficientRow(alpha=tuple(a), beta=tuple([0 * b] * spec.k + [b]), ratios=tuple(r))
                for a, b, r in zip(alpha, beta_k, ratios)]
    elif cmd.ratios is not None:
        rows = [bdf_variable_row(spec, _numbers(cmd.ratios, cmd.exact), exact=cmd.exact,
                                 normalization=cmd.normalization)]
    else:
        rows = [bdf_constant_row(spec, exact=cmd.exact)]

    payload = {"method": spec.name, "k": spec.k, "normalization": cmd.normalization.value,
               "rows": [_row_dict(row) for row in rows]}
    header = (["n"] + [f"ratio_{i}" for i in range(spec.k - 1)]
              + [f"alpha_{j}" for j in range(spec.k + 1)] + ["beta_k"])
    csv_rows = [[n, *row.ratios, *row.alpha, row.beta[-1]] for n, row in enumerate(rows)]
    return CommandOutput(payload, header, csv_rows)


def _alpha_rows_from_input(cmd: Command) -> List[list]:
    if cmd.alpha is not None:
        return [_numbers(cmd.alpha, cmd.exact or any("/" in a for a in cmd.alpha))]
    if cmd.input is None:
        raise UsageError("deflate needs --alpha or --input")
    try:
        data = json.loads(Path(cmd.input).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"Cannot read coefficient file {cmd.input}: {e}") from e
    rows = data.get("rows") if isinstance(data, dict) else None
    if not isinstance(rows, list) or not rows:
        raise UsageError(f"{cmd.input} has no coefficient rows")
    out = []
    for i, row in enumerate(rows):
        values = row.get("alpha") if isinstance(row, dict) else None
        if not isinstance(values, list) or not values:
            raise UsageError(f"{cmd.input}: row {i} has no alpha list")
        exact = cmd.exact or any(isinstance(v, str) for v in values)
        out.append([parse_number(str(v), exact=exact) for v in values])
    return out


def run_deflate(cmd: Command) -> CommandOutput:
    rows = []
    for alpha in _alpha_rows_from_input(cmd):
        row = CoefficientRow(alpha=tuple(alpha), beta=tuple(0 * a for a in alpha), ratios=())
        rows.append(deflate_row(row).gamma)
    width = max(len(g) for g in rows)
    payload = {"rows": [{"gamma": list(g), "sum": sum(g)} for g in rows]}
    header = ["row"] + [f"gamma_{j}" for j in range(width)]
    return CommandOutput(payload, header, [[i, *g] for i, g in enumerate(rows)])


def run_analyze(cmd: Command) -> CommandOutput:
    if cmd.alpha is not None:
        payload = analyze_alpha_row(_numbers(cmd.alpha, True))
        return CommandOutput(payload, ["field", "value"], _flat_rows(payload))

    spec = method_spec(cmd.k, cmd.method)
    grid_info: dict = {}
    N = cmd.n
    if cmd.regularity is not None:
        reg = cmd.regularity
        grid_info["regularity_source"] = "given"
    elif cmd.grid is not None:
        estimate = regularity(parse_grid_map(cmd.grid))
        reg = estimate.value
        grid_info.update({"map": cmd.grid, "regularity_estimate": estimate.to_dict()})
    elif cmd.uniform is not None:
        reg = 0.0
        N = N or cmd.uniform
        grid_info["map"] = "identity"
    else:
        raise UsageError("analyze needs --grid, --uniform, --regularity or --alpha")

    pert = perturbation_matrices(spec) if spec.k >= 2 else None
    report = stability_threshold(spec, pert, reg, N=N)
    payload = {**report.model_dump(by_alias=True), **grid_info}
    if pert is not None:
        payload["perturbation"] = pert.to_dict()
    if spec.k == 2:
        payload["bdf2_window"] = bdf2_exact_ratio_bound(reg)
    if N is not None and (cmd.grid is not None or cmd.uniform is not None):
        payload["grid_certificate"] = certify_grid(spec, resolve_grid(cmd, N), pert).to_dict()
    return CommandOutput(payload, ["field", "value"], _flat_rows(payload))


def _flat_rows(payload: dict, prefix: str = "") -> list:
    rows = []
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flat_rows(value, prefix=f"{name}."))
        elif isinstance(value, (list, tuple)):
            rows.append([name, " ".join(str(v) for v in value)])
        else:
            rows.append([name, value])
    return rows


def run_simulate(cmd: Command) -> CommandOutput:
    spec = method_spec(cmd.k, cmd.method)
    grid = resolve_grid(cmd)
    if cmd.init is not None:
        init = _numbers(cmd.init, cmd.exact)
    else:
        init = init_policy(spec.k, seed=cmd.seed, n_random=0)[0]
        if grid.exact:
            init = [Fraction(int(x)) for x in init]
    result = run_homogeneous(spec, grid, init, cmd.normalization)
    payload = {"method": spec.name, "grid": grid.summary(), **result.summary()}
    rows = [[n, grid.t[n], result.y[n], result.u[n] if n < grid.N else None] for n in range(grid.N + 1)]
    return CommandOutput(payload, ["n", "t", "y", "u"], rows)


def run_sweep(cmd: Command) -> CommandOutput:
    spec = method_spec(cmd.k, cmd.method)
    sizes = sweep_sizes(cmd)
    result = boundedness_sweep(spec, _grid_family(cmd), sizes, seed=cmd.seed, jobs=cmd.jobs,
                               normalization=cmd.normalization)
    payload = {**result.to_dict(), "Ns": sizes, "seed": cmd.seed}
    return CommandOutput(payload, ["N", "sup_y", "sup_u", "growth_rate", "u_amplification"], result.rows())


def integrand_pair(name: str, k: int, degree: Optional[int] = None):
    """Integrand f and antiderivative F with F(0) = 0."""
    if name == "exp":
        return np.exp, lambda t: math.expm1(t)
    if name == "cos":
        w = 2 * math.pi
        return (lambda t: np.cos(w * t)), (lambda t: math.sin(w * t) / w)
    d = k - 1 if degree is None else degree
    return (lambda t: (d + 1) * t ** d), (lambda t: t ** (d + 1))


def run_convergence(cmd: Command) -> CommandOutput:
    spec = method_spec(cmd.k, cmd.method)
    f, F = integrand_pair(cmd.integrand, spec.k, cmd.degree)
    result = quadrature_convergence(spec, _grid_family(cmd), f, F, sweep_sizes(cmd), cmd.normalization)
    payload = {"method": spec.name, "integrand": cmd.integrand, **result.to_dict()}
    return CommandOutput(payload, ["N", "error"], result.rows())


HANDLERS = {
    "coeffs": run_coeffs,
    "deflate": run_deflate,
    "analyze": run_analyze,
    "simulate": run_simulate,
    "sweep": run_sweep,
    "convergence": run_convergence,
}


def execute(cmd: Command) -> CommandOutput:
    logger.debug(f"Executing {cmd.subcommand} with {cmd.model_dump(exclude_none=True)}")
    return HANDLERS[cmd.subcommand](cmd)


def error_payload(error: ZeroStabError) -> dict:
    return with_schema({"error": str(error), "kind": error.kind})


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--method", default="bdf", help="method family (bdf)")
    parser.add_argument("--k", type=int, default=2, help="step number, 1..6")
    grid = parser.add_mutually_exclusive_group()
    grid.add_argument("--grid", help="grid map family:params, e.g. exp:c=2")
    grid.add_argument("--ratios", help="comma separated step ratios, e.g. 1.1,0.9 or 1/2")
    grid.add_argument("--uniform", type=int, metavar="N", help="uniform grid with N steps")
    parser.add_argument("--n", type=int, help="grid size for --grid (or constant --ratios)")
    parser.add_argument("--exact", action="store_true", help="exact rational arithmetic")
    parser.add_argument("--normalization", choices=[m.value for m in Normalization],
                        default=Normalization.CLASSICAL.value)
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    parser.add_argument("--out", help="write the report to this file instead of stdout")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG diagnostics on stderr")


def _add_sizes(parser: argparse.ArgumentParser):
    parser.add_argument("--nmin", type=int, default=50)
    parser.add_argument("--nmax", type=int)
    parser.add_argument("--doublings", type=int)
    parser.add_argument("--ns", help="explicit comma separated grid sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zerostab",
        description="Zero-stability analysis of BDF methods on smooth nonuniform grids",
        epilog="CSV columns:" + __doc__.split("CSV columns:")[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    coeffs = sub.add_parser("coeffs", help="variable step coefficient rows")
    _add_common(coeffs)

    deflate = sub.add_parser("deflate", help="deflate alpha rows by the backward difference")
    _add_common(deflate)
    deflate.add_argument("--alpha", help="comma separated alpha row")
    deflate.add_argument("--input", help="JSON report written by coeffs")

    analyze = sub.add_parser("analyze", help="stability report and threshold N*")
    _add_common(analyze)
    analyze.add_argument("--alpha", help="analyse this constant step alpha row instead of BDF-k")
    analyze.add_argument("--regularity", type=float, help="use this ||phi'/phi|| instead of a map")

    simulate = sub.add_parser("simulate", help="run the homogeneous recursion once")
    _add_common(simulate)
    simulate.add_argument("--init", help="comma separated start values y_0..y_{k-1}")
    simulate.add_argument("--seed", type=int, default=0)

    sweep = sub.add_parser("sweep", help="boundedness verdict over N doublings")
    _add_common(sweep)
    _add_sizes(sweep)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")

    convergence = sub.add_parser("convergence", help="quadrature order study")
    _add_common(convergence)
    _add_sizes(convergence)
    convergence.add_argument("--integrand", choices=INTEGRANDS, default="exp")
    convergence.add_argument("--degree", type=int, help="degree of the monomial integrand")
    return parser


def command_from_args(args: argparse.Namespace) -> Command:
    values = {key: value for key, value in vars(args).items()
              if key != "verbose" and value is not None}
    return Command(**values)


def configure_logging(verbose: int = 0):
    level_name = os.environ.get("ZEROSTAB_LOG_LEVEL")
    if level_name:
        level = getattr(logging, level_name.upper(), logging.WARNING)
    else:
        level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _emit(text: str, out: Optional[str], stdout):
    if out:
        Path(out).write_text(text)
        logger.info(f"Wrote report to {out}")
    else:
        stdout.write(text)


def dispatch(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.verbose)
    out = getattr(args, "out", None)
    try:
        cmd = command_from_args(args)
        output = execute(cmd)
        text = output.render(cmd.format)
    except ValidationError as e:
        stderr.write(f"usage error: {e}\n")
        return 2
    except UsageError as e:
        stderr.write(f"usage error: {e}\n")
        return 2
    except DomainError as e:
        logger.error(f"{e.kind}: {e}")
        _emit(to_json(error_payload(e)), out, stdout)
        return 1

    _emit(text, out, stdout)
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
