"""Command-line front end: runs, convergence studies, sampling, CSV output.

Subcommands: `run` marches one scenario and writes diagnostics, `study`
sweeps mesh refinements and writes an error table, `peakon` marches the
traveling wave and writes cross-section profiles at requested times,
`energy` marches the homogeneous decay scenario.  Options can also come
from a key = value config file; explicit command-line flags win.

All CSV output is UTF-8 with a header row and 12-digit scientific
notation, so repeated runs with the same configuration are byte
identical.  Exit codes: 0 success, 2 configuration error, 3 solver
failure, 4 I/O failure.
"""

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import fem, forms, mesh, scenarios, solver, timestep

NUMBER_FORMAT = "%.12e"


class ConfigError(Exception):
    """Raised for malformed options, config files, or value combinations."""


@dataclass(frozen=True)
class RunConfig:
    """One run's knobs; mirrored one to one by the config file keys."""

    scenario: str = "mms"
    k: int = 2
    n: int = 8
    dt: float = 1e-3
    t_final: float = 1.0
    output_dir: str = "out"
    method: str = "condensed"
    output_every: int = 1
    tau_zpu_plus: float = -1.0
    tau_zpu_minus: float = -1.0
    tau_zpv_minus: float = 1.0
    tau_uqq: float = -0.25
    tau_f: float = 4.0
    adaptive: bool = False
    eps: float = 0.5


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


_FIELD_PARSERS = {
    "scenario": str,
    "k": int,
    "n": int,
    "dt": float,
    "t_final": float,
    "output_dir": str,
    "method": str,
    "output_every": int,
    "tau_zpu_plus": float,
    "tau_zpu_minus": float,
    "tau_zpv_minus": float,
    "tau_uqq": float,
    "tau_f": float,
    "adaptive": _parse_bool,
    "eps": float,
}


def parse_config_file(path) -> dict:
    """Typed values from a key = value file; '#' starts a comment.

    Keys are exactly the RunConfig field names; anything else is an
    error, as is a line without '='.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def _validate_config(cfg: RunConfig):
    if cfg.scenario not in scenarios.KINDS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    if cfg.k not in (1, 2, 3):
        raise ConfigError("k must be 1, 2, or 3")
    if cfg.n < 1:
        raise ConfigError("n must be positive")
    if cfg.method not in ("condensed", "monolithic"):
        raise ConfigError(f"unknown solver method {cfg.method!r}")
    if cfg.dt <= 0.0 or cfg.t_final <= 0.0:
        raise ConfigError("dt and t_final must be positive")
    if cfg.output_every < 1:
        raise ConfigError("output_every must be at least 1")


def merged_config(args) -> RunConfig:
    """Defaults, then subcommand implications, config file, CLI flags."""
    values = {f.name: f.default for f in fields(RunConfig)}
    if args.command == "energy":
        values["t_final"] = 0.2
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for name in values:
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given
    if args.command == "peakon":
        values["scenario"] = scenarios.PEAKON
    elif args.command == "energy":
        values["scenario"] = scenarios.ENERGY_DECAY
    cfg = RunConfig(**values)
    _validate_config(cfg)
    return cfg


def scenario_from_config(cfg: RunConfig):
    if cfg.scenario == scenarios.MMS:
        return scenarios.mms_scenario(cfg.t_final)
    if cfg.scenario == scenarios.PEAKON:
        return scenarios.peakon_scenario(cfg.t_final)
    return scenarios.energy_decay_scenario(cfg.t_final)


def stabilization_from_config(cfg: RunConfig):
    try:
        return forms.StabilizationParams(
            tau_zpu_plus=cfg.tau_zpu_plus,
            tau_zpu_minus=cfg.tau_zpu_minus,
            tau_zpv_minus=cfg.tau_zpv_minus,
            tau_uqq=cfg.tau_uqq,
            tau_f=cfg.tau_f,
            adaptive=cfg.adaptive,
            eps=cfg.eps,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid stabilization: {exc}") from exc


def _time_config(cfg: RunConfig) -> timestep.TimeConfig:
    try:
        return timestep.TimeConfig(dt=cfg.dt, t_final=cfg.t_final,
                                   output_every=cfg.output_every)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# error norms and refinement studies


def compute_errors(states, scenario, msh, t, n_quad=None):
    """Broken L2 errors of u_h and q_h against the exact fields at time t.

    The rule has two points more than the solve rule by default, so the
    error is not sampled only where the interpolant happens to agree.
    """
    k = states.shape[-1] - 1
    quad = fem.gauss_rule(n_quad or 2 * (k + 1) + 2)
    basis = fem.Basis1D(k)
    Vx = basis.eval(quad.nodes) * np.sqrt(2.0 / msh.hx)
    Vy = basis.eval(quad.nodes) * np.sqrt(2.0 / msh.hy)
    wx = quad.weights * 0.5 * msh.hx
    wy = quad.weights * 0.5 * msh.hy
    xc = 0.5 * (msh.x_nodes[:-1, None] + msh.x_nodes[1:, None])
    xq = np.repeat(xc + 0.5 * msh.hx * quad.nodes, msh.ny, axis=0)
    yc = 0.5 * (msh.y_nodes[:-1, None] + msh.y_nodes[1:, None])
    yq = np.tile(yc + 0.5 * msh.hy * quad.nodes, (msh.nx, 1))
    exact = scenarios.exact_fields(
        scenario, xq[:, :, None], yq[:, None, :], t)

    def err(field, name):
        vals = np.einsum("pm,emn,rn->epr", Vx, states[:, field], Vy,
                         optimize=True)
        diff = vals - exact[name]
        return float(np.sqrt(np.einsum("p,r,epr->", wx, wy, diff * diff)))

    return err(forms.U, "u"), err(forms.Q, "q")


@dataclass
class ErrorRow:
    n: int
    h: float
    err_u: float
    err_q: float
    order_u: float | None = None
    order_q: float | None = None


@dataclass
class ErrorReport:
    k: int
    rows: list
    aborted: str | None = None


def convergence_study(cfg: RunConfig, levels, out_path=None) -> ErrorReport:
    """Run the scenario over mesh levels and tabulate errors and orders.

    Levels must be at least two powers of two.  A failing level stops the
    sweep; the completed rows are kept and the failure recorded on the
    report.  The reported h is 1/N regardless of the physical cell size.
    """
    levels = sorted(levels)
    if len(levels) < 2:
        raise ConfigError("need at least two refinement levels")
    for n in levels:
        if n < 1 or n & (n - 1):
            raise ConfigError(f"study level {n} is not a power of two")
    scenario = scenario_from_config(cfg)
    if scenario.kind == scenarios.ENERGY_DECAY:
        raise ConfigError("study needs a scenario with an exact solution")
    params = stabilization_from_config(cfg)
    options = solver.NewtonOptions(method=cfg.method)
    tc = _time_config(cfg)
    rows, aborted = [], None
    for n in levels:
        msh = mesh.build_mesh(scenario.domain, n, n)
        try:
            states, _, _ = timestep.run(scenario, msh, cfg.k, tc,
                                        params=params, options=options)
        except solver.SolverError as exc:
            aborted = f"N = {n}: {exc}"
            break
        err_u, err_q = compute_errors(states, scenario, msh, cfg.t_final)
        rows.append(ErrorRow(n=n, h=1.0 / n, err_u=err_u, err_q=err_q))
    for prev, cur in zip(rows, rows[1:]):
        cur.order_u = float(np.log2(prev.err_u / cur.err_u))
        cur.order_q = float(np.log2(prev.err_q / cur.err_q))
    report = ErrorReport(k=cfg.k, rows=rows, aborted=aborted)
    if out_path is not None:
        write_error_csv(out_path, report)
    return report


def format_error_table(report: ErrorReport) -> str:
    lines = [f"{'k':>3} {'N':>5} {'h':>12} {'err_u':>14} {'order_u':>8} "
             f"{'err_q':>14} {'order_q':>8}"]
    for row in report.rows:
        ou = f"{row.order_u:8.2f}" if row.order_u is not None else f"{'-':>8}"
        oq = f"{row.order_q:8.2f}" if row.order_q is not None else f"{'-':>8}"
        lines.append(f"{report.k:>3} {row.n:>5} {row.h:12.4e} "
                     f"{row.err_u:14.6e} {ou} {row.err_q:14.6e} {oq}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# pointwise sampling


def _owning_cell(nodes, value) -> int:
    """Cell index owning a coordinate; boundary points go left/below."""
    return int(np.clip(np.searchsorted(nodes, value, side="left") - 1,
                       0, nodes.size - 2))


def sample_cross_section(states, msh, axis, value, n_samples):
    """u_h along the line axis = value; returns (coordinates, values).

    axis "x" fixes x and samples along y, axis "y" the other way around.
    Points on element boundaries are evaluated in the element left of or
    below the line.
    """
    domain = msh.domain
    if axis == "x":
        lo, hi = domain.x_left, domain.x_right
        span = (domain.y_bottom, domain.y_top)
    elif axis == "y":
        lo, hi = domain.y_bottom, domain.y_top
        span = (domain.x_left, domain.x_right)
    else:
        raise ValueError(f"unknown section axis {axis!r}")
    if not lo <= value <= hi:
        raise ValueError(f"section {axis} = {value} outside the domain")
    coords = np.linspace(span[0], span[1], n_samples)
    out = np.empty(n_samples)
    for idx, c in enumerate(coords):
        if axis == "x":
            i = _owning_cell(msh.x_nodes, value)
            j = _owning_cell(msh.y_nodes, c)
            x, y = value, c
        else:
            i = _owning_cell(msh.x_nodes, c)
            j = _owning_cell(msh.y_nodes, value)
            x, y = c, value
        rect = msh.cell_rect(i + 1, j + 1)
        out[idx] = fem.eval_field(states[i * msh.ny + j, forms.U], rect, x, y)
    return coords, out


def sample_surface(states, msh, n_samples):
    """u_h on an n by n point grid over the domain; returns (xs, ys, grid)."""
    domain = msh.domain
    xs = np.linspace(domain.x_left, domain.x_right, n_samples)
    ys = np.linspace(domain.y_bottom, domain.y_top, n_samples)
    grid = np.empty((n_samples, n_samples))
    for a, x in enumerate(xs):
        i = _owning_cell(msh.x_nodes, x)
        for b, y in enumerate(ys):
            j = _owning_cell(msh.y_nodes, y)
            rect = msh.cell_rect(i + 1, j + 1)
            grid[a, b] = fem.eval_field(states[i * msh.ny + j, forms.U],
                                        rect, x, y)
    return xs, ys, grid


# ---------------------------------------------------------------------------
# CSV output


def write_csv(path, header, rows):
    """UTF-8 CSV with a header row; floats in 12-digit scientific form."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for item in row:
            if item is None:
                cells.append("")
            elif isinstance(item, (int, np.integer)):
                cells.append(str(int(item)))
            else:
                cells.append(NUMBER_FORMAT % float(item))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_diagnostics_csv(path, records):
    write_csv(path, ("step", "t", "E_h", "norm_u", "norm_q", "newton_iters"),
              [(r.step, r.time, r.energy, r.norm_u, r.norm_q, r.newton_iters)
               for r in records])


def write_error_csv(path, report: ErrorReport):
    write_csv(path, ("k", "N", "h_reported", "err_u", "err_q", "order_u",
                     "order_q"),
              [(report.k, row.n, row.h, row.err_u, row.err_q, row.order_u,
                row.order_q) for row in report.rows])


def write_section_csv(path, coords, values):
    write_csv(path, ("coord", "value"), zip(coords, values))


def write_surface_csv(path, xs, ys, grid):
    rows = [(x, y, grid[a, b]) for a, x in enumerate(xs)
            for b, y in enumerate(ys)]
    write_csv(path, ("x", "y", "u_h"), rows)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(cfg: RunConfig, out: Path) -> int:
    scenario = scenario_from_config(cfg)
    msh = mesh.build_mesh(scenario.domain, cfg.n, cfg.n)
    tc = _time_config(cfg)
    params = stabilization_from_config(cfg)
    options = solver.NewtonOptions(method=cfg.method)
    try:
        states, _, records = timestep.run(scenario, msh, cfg.k, tc,
                                          params=params, options=options)
    except solver.SolverError as exc:
        partial = getattr(exc, "records", None)
        if partial:
            write_diagnostics_csv(out / "diagnostics.csv", partial)
        raise
    write_diagnostics_csv(out / "diagnostics.csv", records)
    line = (f"{cfg.scenario}: k={cfg.k} N={cfg.n} steps={tc.n_steps} "
            f"final energy {records[-1].energy:.6e}")
    if scenario.kind != scenarios.ENERGY_DECAY:
        err_u, err_q = compute_errors(states, scenario, msh, cfg.t_final)
        line += f" err_u {err_u:.6e} err_q {err_q:.6e}"
    print(line)
    return 0


def _cmd_study(cfg: RunConfig, args, out: Path) -> int:
    levels = _parse_levels(args.levels)
    report = convergence_study(cfg, levels, out_path=out / "errors.csv")
    print(format_error_table(report))
    if report.aborted:
        print(f"solver failure: {report.aborted}", file=sys.stderr)
        return 3
    return 0


def _cmd_peakon(cfg: RunConfig, args, out: Path) -> int:
    sections = _parse_sections(args.sections)
    times = _parse_times(args.times)
    scenario = scenario_from_config(cfg)
    msh = mesh.build_mesh(scenario.domain, cfg.n, cfg.n)
    tc = _time_config(cfg)
    snaps = _snap_steps(times, tc)
    params = stabilization_from_config(cfg)
    options = solver.NewtonOptions(method=cfg.method)
    system = solver.GlobalSystem(msh, cfg.k, params, scenario.kappa)
    states, tr = timestep.initialize(scenario, msh, cfg.k)

    def emit(t):
        for axis, value in sections:
            coords, vals = sample_cross_section(states, msh, axis, value,
                                                args.samples)
            write_section_csv(out / f"section_{axis}{value:g}_t{t:g}.csv",
                              coords, vals)
        if args.surface:
            xs, ys, grid = sample_surface(states, msh, args.surface)
            write_surface_csv(out / f"surface_t{t:g}.csv", xs, ys, grid)

    records = [timestep.make_record(0, 0.0, states, 0)]
    if 0 in snaps:
        emit(snaps[0])
    dt = tc.dt_effective
    for step in range(1, tc.n_steps + 1):
        t_new = tc.time_at(step)
        try:
            result = timestep.advance(system, scenario, states, tr, t_new,
                                      dt, options=options)
        except solver.SolverError:
            write_diagnostics_csv(out / "diagnostics.csv", records)
            raise
        if step % cfg.output_every == 0 or step == tc.n_steps:
            records.append(timestep.make_record(
                step, t_new, states, result.iterations,
                margin=result.margin, transmission=result.transmission))
        if step in snaps:
            emit(snaps[step])
    write_diagnostics_csv(out / "diagnostics.csv", records)
    print(f"peakon: k={cfg.k} N={cfg.n} steps={tc.n_steps} "
          f"{len(sections)} sections at {len(times)} times")
    return 0


def _parse_levels(text: str):
    try:
        if ".." in text:
            start, _, end = text.partition("..")
            start, end = int(start), int(end)
            levels = []
            n = start
            while n < end:
                levels.append(n)
                n *= 2
            levels.append(n)
            if n != end:
                raise ValueError(f"{end} is not a doubling of {start}")
            return levels
        return [int(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad levels {text!r}: {exc}") from exc


def _parse_sections(text: str):
    sections = []
    for tok in text.split(","):
        axis, eq, value = tok.partition("=")
        axis = axis.strip()
        if not eq or axis not in ("x", "y"):
            raise ConfigError(f"bad section {tok!r}: expected x=VAL or y=VAL")
        try:
            sections.append((axis, float(value)))
        except ValueError as exc:
            raise ConfigError(f"bad section {tok!r}: {exc}") from exc
    return sections


def _parse_times(text: str):
    try:
        return [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad times {text!r}: {exc}") from exc


def _snap_steps(times, tc: timestep.TimeConfig) -> dict:
    """Map step indices to requested output times, validating alignment."""
    dt = tc.dt_effective
    snaps = {}
    for t in times:
        step = round(t / dt)
        if step < 0 or step > tc.n_steps:
            raise ConfigError(f"output time {t} outside the run")
        if abs(step * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigError(f"output time {t} is not a step multiple")
        snaps[step] = t
    return snaps


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--k", type=int, help="polynomial degree, 1..3")
    common.add_argument("--N", "--n", dest="n", type=int,
                        help="cells per direction")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--t-final", dest="t_final", type=float,
                        help="final time")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--method", choices=("condensed", "monolithic"),
                        help="linear solve strategy")
    common.add_argument("--output-every", dest="output_every", type=int,
                        help="diagnostics cadence in steps")
    common.add_argument("--tau-f", dest="tau_f", type=float)
    common.add_argument("--tau-uqq", dest="tau_uqq", type=float)
    common.add_argument("--tau-zpu-plus", dest="tau_zpu_plus", type=float)
    common.add_argument("--tau-zpu-minus", dest="tau_zpu_minus", type=float)
    common.add_argument("--tau-zpv-minus", dest="tau_zpv_minus", type=float)
    common.add_argument("--adaptive", action=argparse.BooleanOptionalAction,
                        default=None, help="amplitude-adaptive tau_f")
    common.add_argument("--eps", type=float, help="adaptive tau_f headroom")

    parser = argparse.ArgumentParser(
        prog="chkp-hdg",
        description="Energy-stable HDG solver for a 2D dispersive wave "
                    "equation")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common],
                       help="march one scenario and write diagnostics")
    p.add_argument("--scenario", choices=scenarios.KINDS)
    p = sub.add_parser("study", parents=[common],
                       help="convergence study over mesh refinements")
    p.add_argument("--scenario", choices=(scenarios.MMS, scenarios.PEAKON))
    p.add_argument("--levels", default="2..16",
                   help="mesh sizes, as 2..16 or 2,4,8")
    p = sub.add_parser("peakon", parents=[common],
                       help="traveling-wave run with section profiles")
    p.add_argument("--sections", default="y=0",
                   help="comma list of x=VAL / y=VAL section lines")
    p.add_argument("--times", default="0,0.2,0.4,0.6,0.8,1.0",
                   help="comma list of output times")
    p.add_argument("--samples", type=int, default=201,
                   help="points per section")
    p.add_argument("--surface", type=int, default=0,
                   help="surface grid size per output time, 0 disables")
    sub.add_parser("energy", parents=[common],
                   help="homogeneous decay run with energy diagnostics")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = merged_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "study":
            return _cmd_study(cfg, args, out)
        if args.command == "peakon":
            return _cmd_peakon(cfg, args, out)
        return _cmd_run(cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except solver.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
