"""Session fixtures: memoized scenario runs shared across test modules."""

import pytest

from chkp_hdg import cli, forms, mesh, scenarios, solver, timestep


@pytest.fixture(scope="session")
def mms_run():
    """Memoized manufactured-solution run keyed by (k, N, dt, t_final).

    Each entry holds the final states, the per-step diagnostics records,
    and the final-time errors of u_h and q_h.
    """
    cache = {}

    def get(k, N, dt, t_final=1.0):
        key = (k, N, dt, t_final)
        if key not in cache:
            scenario = scenarios.mms_scenario(t_final)
            msh = mesh.build_mesh(scenario.domain, N, N)
            cfg = timestep.TimeConfig(dt=dt, t_final=t_final)
            states, _, records = timestep.run(scenario, msh, k, cfg)
            err_u, err_q = cli.compute_errors(states, scenario, msh, t_final)
            cache[key] = {"states": states, "records": records,
                          "err_u": err_u, "err_q": err_q}
        return cache[key]

    return get


@pytest.fixture(scope="session")
def peakon_run():
    """Memoized peakon march with y = 0 cross sections at the plot times."""
    cache = {}
    times = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

    def get(dt, N=32, k=2, n_samples=401):
        key = (dt, N, k, n_samples)
        if key not in cache:
            scenario = scenarios.peakon_scenario()
            msh = mesh.build_mesh(scenario.domain, N, N)
            tc = timestep.TimeConfig(dt=dt, t_final=1.0)
            system = solver.GlobalSystem(msh, k, forms.StabilizationParams(),
                                         scenario.kappa)
            states, tr = timestep.initialize(scenario, msh, k)
            snap_steps = {round(t / tc.dt_effective): t for t in times}
            sections = {}

            def snap(step):
                if step in snap_steps:
                    sections[snap_steps[step]] = cli.sample_cross_section(
                        states, msh, "y", 0.0, n_samples)

            snap(0)
            records = [timestep.make_record(0, 0.0, states, 0)]
            for step in range(1, tc.n_steps + 1):
                t_new = tc.time_at(step)
                result = timestep.advance(system, scenario, states, tr,
                                          t_new, tc.dt_effective)
                records.append(timestep.make_record(
                    step, t_new, states, result.iterations,
                    margin=result.margin,
                    transmission=result.transmission))
                snap(step)
            err_u, err_q = cli.compute_errors(states, scenario, msh, 1.0)
            cache[key] = {"sections": sections, "records": records,
                          "times": times, "err_u": err_u, "err_q": err_q}
        return cache[key]

    return get


@pytest.fixture(scope="session")
def energy_run():
    """Memoized homogeneous-decay run at the reference resolution.

    Newton is tightened to 1e-12 here so the stepwise energy comparison
    is not polluted by leftover algebraic residual.
    """
    cache = {}

    def get():
        if "result" not in cache:
            scenario = scenarios.energy_decay_scenario(t_final=0.2)
            msh = mesh.build_mesh(scenario.domain, 16, 16)
            tc = timestep.TimeConfig(dt=1e-3, t_final=0.2)
            opts = solver.NewtonOptions(tol=1e-12)
            states, _, records = timestep.run(scenario, msh, 2, tc,
                                              options=opts)
            cache["result"] = {"states": states, "records": records}
        return cache["result"]

    return get
