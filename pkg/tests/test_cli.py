"""CLI tests: config handling, error norms, studies, sampling, exit codes."""

import numpy as np
import pytest

from chkp_hdg import cli, fem, forms, mesh, scenarios, solver, timestep


def project_constant(msh, k, values):
    """States whose u field is a piecewise constant, values[i] in column i."""
    states = np.zeros((msh.n_elements, forms.N_FIELDS, k + 1, k + 1))
    for e, (i, j) in enumerate(msh.elements()):
        rect = msh.cell_rect(i, j)
        states[e, forms.U] = fem.tensor_project(
            lambda x, y, v=values[i - 1]: v + 0.0 * (x + y), rect, k)
    return states


# ---------------------------------------------------------------------------
# config files and flag merging


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# study setup\n"
        "scenario = mms\n"
        "k = 1\n"
        "n = 4\n"
        "dt = 1e-2   # coarse\n"
        "t_final = 2e-2\n"
        "adaptive = true\n",
        encoding="utf-8")
    values = cli.parse_config_file(cfg)
    assert values == {"scenario": "mms", "k": 1, "n": 4,
                      "dt": 1e-2, "t_final": 2e-2, "adaptive": True}


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("cells = 4\n")
    with pytest.raises(cli.ConfigError, match="cells"):
        cli.parse_config_file(cfg)


def test_config_file_rejects_malformed_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("k 2\n")
    with pytest.raises(cli.ConfigError, match="bad.cfg:1"):
        cli.parse_config_file(cfg)


def test_config_file_rejects_bad_value(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dt = fast\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config_file(cfg)


def test_cli_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("k = 1\nn = 4\n")
    parser = cli._build_parser()
    args = parser.parse_args(["run", "--config", str(cfg), "--k", "2"])
    merged = cli.merged_config(args)
    assert merged.k == 2
    assert merged.n == 4


def test_merged_config_validates_ranges():
    parser = cli._build_parser()
    with pytest.raises(cli.ConfigError):
        cli.merged_config(parser.parse_args(["run", "--k", "7"]))
    with pytest.raises(cli.ConfigError):
        cli.merged_config(parser.parse_args(["run", "--dt", "0"]))


def test_subcommands_force_their_scenario():
    parser = cli._build_parser()
    cfg = cli.merged_config(parser.parse_args(["energy"]))
    assert cfg.scenario == "energy_decay"
    assert cfg.t_final == 0.2
    cfg = cli.merged_config(parser.parse_args(["peakon"]))
    assert cfg.scenario == "peakon"


def test_adaptive_flag_reaches_stabilization():
    parser = cli._build_parser()
    cfg = cli.merged_config(parser.parse_args(["run", "--adaptive"]))
    assert cfg.adaptive is True
    params = cli.stabilization_from_config(cfg)
    assert params.adaptive
    cfg = cli.merged_config(parser.parse_args(["run"]))
    assert cli.stabilization_from_config(cfg).adaptive is False


# ---------------------------------------------------------------------------
# error norms


def test_zero_state_error_is_the_exact_norm():
    # ||sin x sin y|| = ||cos x sin y|| = pi over (0, 2 pi)^2
    sc = scenarios.mms_scenario()
    msh = mesh.build_mesh(sc.domain, 4, 4)
    states = np.zeros((msh.n_elements, forms.N_FIELDS, 3, 3))
    err_u, err_q = cli.compute_errors(states, sc, msh, 0.0)
    assert err_u == pytest.approx(np.pi, rel=1e-10)
    assert err_q == pytest.approx(np.pi, rel=1e-10)


@pytest.mark.parametrize("k", [1, 2])
def test_projection_error_matches_pythagoras(k):
    # for the L2 projection, ||u - Pu||^2 = ||u||^2 - ||Pu||^2, and with an
    # orthonormal basis ||Pu||^2 is the plain coefficient norm; the separable
    # initial state lets the tensor projection factor into 1D projections
    sc = scenarios.mms_scenario()
    msh = mesh.build_mesh(sc.domain, 4, 4)
    quad = fem.gauss_rule(10)
    states = np.zeros((msh.n_elements, forms.N_FIELDS, k + 1, k + 1))
    for e, (i, j) in enumerate(msh.elements()):
        (x0, x1), (y0, y1) = msh.cell_rect(i, j)
        cx = fem.l2_project_1d(np.sin, (x0, x1), k, quad=quad)
        cy = fem.l2_project_1d(np.sin, (y0, y1), k, quad=quad)
        states[e, forms.U] = np.outer(cx, cy)
    err_u, _ = cli.compute_errors(states, sc, msh, 0.0)
    coeff_sq = float(np.sum(states[:, forms.U] ** 2))
    assert err_u == pytest.approx(np.sqrt(np.pi ** 2 - coeff_sq), rel=1e-8)


def test_error_quadrature_is_aliasing_safe():
    # enriched rule and solve rule agree to better than 1% on smooth fields
    sc = scenarios.mms_scenario()
    msh = mesh.build_mesh(sc.domain, 8, 8)
    k = 2
    states, _ = timestep.initialize(sc, msh, k)
    rich_u, rich_q = cli.compute_errors(states, sc, msh, 0.0)
    base_u, base_q = cli.compute_errors(states, sc, msh, 0.0,
                                        n_quad=2 * (k + 1))
    assert abs(rich_u - base_u) < 0.01 * rich_u
    assert abs(rich_q - base_q) < 0.01 * rich_q


# ---------------------------------------------------------------------------
# convergence studies


def test_convergence_study_rows_and_orders(tmp_path):
    cfg = cli.RunConfig(scenario="mms", k=1, dt=1e-2, t_final=2e-2)
    out = tmp_path / "errors.csv"
    report = cli.convergence_study(cfg, [4, 2], out_path=out)
    assert report.aborted is None
    assert [row.n for row in report.rows] == [2, 4]
    assert report.rows[0].order_u is None
    assert report.rows[1].h == 0.25
    expected = np.log2(report.rows[0].err_u / report.rows[1].err_u)
    assert report.rows[1].order_u == pytest.approx(expected, rel=1e-12)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "k,N,h_reported,err_u,err_q,order_u,order_q"
    assert len(lines) == 3
    assert lines[1].split(",")[5] == ""


def test_convergence_study_validates_levels():
    cfg = cli.RunConfig(scenario="mms", k=1, dt=1e-2, t_final=2e-2)
    with pytest.raises(cli.ConfigError):
        cli.convergence_study(cfg, [4])
    with pytest.raises(cli.ConfigError):
        cli.convergence_study(cfg, [2, 3])
    bad = cli.RunConfig(scenario="energy_decay", dt=1e-2, t_final=2e-2)
    with pytest.raises(cli.ConfigError):
        cli.convergence_study(bad, [2, 4])


def test_convergence_study_keeps_partial_rows_on_failure(monkeypatch):
    cfg = cli.RunConfig(scenario="mms", k=1, dt=1e-2, t_final=2e-2)
    real_run = timestep.run

    def flaky(scenario, msh, k, tc, **kwargs):
        if msh.nx == 4:
            raise solver.NonConvergenceError("stalled")
        return real_run(scenario, msh, k, tc, **kwargs)

    monkeypatch.setattr(cli.timestep, "run", flaky)
    report = cli.convergence_study(cfg, [2, 4])
    assert len(report.rows) == 1
    assert report.rows[0].n == 2
    assert "N = 4" in report.aborted


# ---------------------------------------------------------------------------
# sampling


def test_cross_section_of_constant_field_is_constant():
    msh = mesh.build_mesh(mesh.Domain2D(0.0, 1.0, 0.0, 1.0), 2, 2)
    states = project_constant(msh, 1, [3.0, 3.0])
    coords, vals = cli.sample_cross_section(states, msh, "y", 0.5, 11)
    assert coords[0] == 0.0 and coords[-1] == 1.0
    assert np.allclose(vals, 3.0, atol=1e-12)
    _, vals = cli.sample_cross_section(states, msh, "x", 1.0, 5)
    assert np.allclose(vals, 3.0, atol=1e-12)


def test_boundary_samples_use_left_owner():
    # jump at x = 0.5: the shared point belongs to the cell on its left
    msh = mesh.build_mesh(mesh.Domain2D(0.0, 1.0, 0.0, 1.0), 2, 1)
    states = project_constant(msh, 1, [1.0, 2.0])
    coords, vals = cli.sample_cross_section(states, msh, "y", 0.5, 3)
    assert coords[1] == 0.5
    assert vals[1] == pytest.approx(1.0, abs=1e-12)
    assert vals[2] == pytest.approx(2.0, abs=1e-12)


def test_surface_sampling_grid_shape_and_ownership():
    msh = mesh.build_mesh(mesh.Domain2D(0.0, 1.0, 0.0, 1.0), 2, 1)
    states = project_constant(msh, 1, [1.0, 2.0])
    xs, ys, grid = cli.sample_surface(states, msh, 3)
    assert grid.shape == (3, 3)
    assert np.allclose(grid[0], 1.0, atol=1e-12)
    assert np.allclose(grid[1], 1.0, atol=1e-12)  # x = 0.5 owned on the left
    assert np.allclose(grid[2], 2.0, atol=1e-12)


def test_sampling_rejects_bad_requests():
    msh = mesh.build_mesh(mesh.Domain2D(0.0, 1.0, 0.0, 1.0), 2, 2)
    states = project_constant(msh, 1, [0.0, 0.0])
    with pytest.raises(ValueError):
        cli.sample_cross_section(states, msh, "x", 2.0, 5)
    with pytest.raises(ValueError):
        cli.sample_cross_section(states, msh, "z", 0.5, 5)


def test_peakon_initial_section_peaks_near_zero():
    sc = scenarios.peakon_scenario()
    msh = mesh.build_mesh(sc.domain, 16, 16)
    states, _ = timestep.initialize(sc, msh, 2)
    coords, vals = cli.sample_cross_section(states, msh, "y", 0.0, 401)
    top = int(np.argmax(vals))
    assert abs(coords[top]) <= msh.hx + 1e-12
    assert vals[top] == pytest.approx(1.0, abs=0.1)


# ---------------------------------------------------------------------------
# output files and exit codes


def run_argv(out, extra=()):
    return ["run", "--scenario", "mms", "--k", "1", "--N", "2",
            "--dt", "1e-2", "--t-final", "2e-2", "--out", str(out),
            *extra]


def test_run_writes_diagnostics(tmp_path):
    assert cli.main(run_argv(tmp_path / "a")) == 0
    lines = (tmp_path / "a" / "diagnostics.csv").read_text().splitlines()
    assert lines[0] == "step,t,E_h,norm_u,norm_q,newton_iters"
    assert len(lines) == 4
    last = lines[-1].split(",")
    assert int(last[0]) == 2
    assert float(last[1]) == pytest.approx(2e-2)


def test_csv_output_is_deterministic(tmp_path):
    assert cli.main(run_argv(tmp_path / "a")) == 0
    assert cli.main(run_argv(tmp_path / "b")) == 0
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert a == b


def test_energy_subcommand_reports_decay(tmp_path):
    code = cli.main(["energy", "--N", "2", "--k", "1", "--dt", "1e-2",
                     "--t-final", "3e-2", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "diagnostics.csv").read_text().splitlines()
    energies = [float(line.split(",")[2]) for line in lines[1:]]
    assert len(energies) == 4
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


def test_study_subcommand_writes_error_table(tmp_path, capsys):
    code = cli.main(["study", "--k", "1", "--levels", "2,4", "--dt", "1e-2",
                     "--t-final", "2e-2", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "errors.csv").read_text().splitlines()
    assert len(lines) == 3
    assert "order_u" in capsys.readouterr().out


def test_peakon_subcommand_writes_sections(tmp_path):
    code = cli.main(["peakon", "--N", "4", "--k", "1", "--dt", "5e-3",
                     "--t-final", "1e-2", "--sections", "x=0,y=0",
                     "--times", "0,0.01", "--samples", "9",
                     "--surface", "5", "--out", str(tmp_path)])
    assert code == 0
    for name in ("section_x0_t0.csv", "section_y0_t0.csv",
                 "section_x0_t0.01.csv", "section_y0_t0.01.csv",
                 "surface_t0.csv", "surface_t0.01.csv", "diagnostics.csv"):
        assert (tmp_path / name).exists(), name
    lines = (tmp_path / "section_y0_t0.csv").read_text().splitlines()
    assert lines[0] == "coord,value"
    assert len(lines) == 10
    surface = (tmp_path / "surface_t0.csv").read_text().splitlines()
    assert surface[0] == "x,y,u_h"
    assert len(surface) == 26


def test_exit_code_2_on_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("cells = 4\n")
    out = str(tmp_path / "o")
    assert cli.main(["run", "--config", str(bad), "--out", out]) == 2
    assert cli.main(["study", "--levels", "2,3", "--out", out]) == 2
    assert cli.main(["run", "--dt", "1.0", "--t-final", "0.5",
                     "--out", out]) == 2
    assert cli.main(["peakon", "--times", "0.0003", "--out", out]) == 2


def test_exit_code_2_on_unknown_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["run", "--cells", "4"])
    assert excinfo.value.code == 2
    capsys.readouterr()


def test_exit_code_3_on_solver_failure(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise solver.NonConvergenceError("stalled")

    monkeypatch.setattr(cli.timestep, "run", boom)
    assert cli.main(run_argv(tmp_path)) == 3


def test_partial_diagnostics_survive_midrun_failure(tmp_path, monkeypatch):
    real_advance = timestep.advance
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise solver.NonConvergenceError("stalled")
        return real_advance(*args, **kwargs)

    monkeypatch.setattr(timestep, "advance", flaky)
    code = cli.main(["run", "--scenario", "mms", "--k", "1", "--N", "2",
                     "--dt", "1e-2", "--t-final", "3e-2",
                     "--out", str(tmp_path)])
    assert code == 3
    lines = (tmp_path / "diagnostics.csv").read_text().splitlines()
    # header, the initial record, and the two completed steps
    assert len(lines) == 4
    assert lines[-1].split(",")[0] == "2"


def test_exit_code_4_on_io_failure(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    assert cli.main(run_argv(blocker / "sub")) == 4


def test_level_range_expansion():
    assert cli._parse_levels("2..16") == [2, 4, 8, 16]
    assert cli._parse_levels("4,2,8") == [4, 2, 8]
    with pytest.raises(cli.ConfigError):
        cli._parse_levels("2..12")
