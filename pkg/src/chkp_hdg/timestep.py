"""Implicit time marching: consistent start, stepping, and diagnostics.

The march is backward Euler with a Newton solve per step.  The start is
made consistent with the discrete kinematic relations: u is the
elementwise L2 projection of the initial surface, then q, s, and v are
solved exactly from their derivative equations given u and the t = 0
boundary data, and the skeleton traces are seeded from the element
traces.  p, z, and r begin at zero; the first implicit solve produces
them.  Starting from a discrete state that satisfies the q-equation is
what makes the stepwise energy bound hold from the first step on.

The discrete energy is 0.5 (|u_h|^2 + |q_h|^2) in the broken L2 norm;
with the orthonormal element basis both norms are plain coefficient
norms.
"""

from dataclasses import dataclass

import numpy as np

from . import fem, forms, mesh, scenarios, solver


@dataclass(frozen=True)
class TimeConfig:
    """Uniform implicit-Euler march to t_final.

    The step count is round(t_final / dt) and the effective step is
    t_final / n_steps, so the march always lands on t_final exactly.
    Diagnostics are recorded every output_every steps, plus the initial
    and final times.
    """

    dt: float
    t_final: float
    output_every: int = 1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least dt")
        if self.output_every < 1:
            raise ValueError("output_every must be at least 1")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_final / self.dt))

    @property
    def dt_effective(self) -> float:
        return self.t_final / self.n_steps

    def time_at(self, step: int) -> float:
        if step == self.n_steps:
            return self.t_final
        return self.t_final * step / self.n_steps


@dataclass
class DiagnosticsRecord:
    """One diagnostics row of a run.

    margin and transmission come from the Newton solve that produced the
    state and are absent on the initial record; err_u and err_q are
    filled only when the caller supplies an error function.
    """

    step: int
    time: float
    energy: float
    norm_u: float
    norm_q: float
    newton_iters: int
    margin: float | None = None
    transmission: dict | None = None
    err_u: float | None = None
    err_q: float | None = None


def energy(states) -> float:
    """Discrete energy 0.5 (|u_h|^2 + |q_h|^2) of a state batch."""
    return 0.5 * float(np.sum(states[:, forms.U] ** 2)
                       + np.sum(states[:, forms.Q] ** 2))


def boundary_data(scenario, msh, k: int, t: float) -> dict:
    """Projected Dirichlet data for every constrained trace slot at time t.

    Returns the dict consumed by TraceSet.fill_dirichlet: u and q along
    the vertical boundaries, u along the bottom, v on the right and top.
    """

    def vertical(i, datum):
        return np.stack([
            scenarios.boundary_values(
                scenario, msh, mesh.vertical_face(msh, i, j), datum, t, k)
            for j in range(1, msh.ny + 1)])

    def horizontal(j, datum):
        return np.stack([
            scenarios.boundary_values(
                scenario, msh, mesh.horizontal_face(msh, i, j), datum, t, k)
            for i in range(1, msh.nx + 1)])

    return {
        "u_L": vertical(0, "u"),
        "u_R": vertical(msh.nx, "u"),
        "q_L": vertical(0, "q"),
        "q_R": vertical(msh.nx, "q"),
        "u_B": horizontal(0, "u"),
        "v_R": vertical(msh.nx, "v"),
        "v_T": horizontal(msh.ny, "v"),
    }


def scenario_source(scenario):
    """Volume source closure of a scenario, or None when it has none."""
    if scenario.kind == scenarios.MMS:
        kappa = scenario.kappa
        return lambda x, y, t: scenarios.mms_source(x, y, t, kappa)
    return None


def initialize(scenario, msh, k: int):
    """Consistent discrete start: a (ne, 7, k1, k1) state batch and traces.

    u is the elementwise projection of the initial surface.  Interior
    vertical traces of u and q are the average of the two element traces;
    the bottom traces of u and the right/top traces of v are one-sided,
    matching the transmission conditions exactly.  q and s come from
    their derivative relations, and v from a rightmost-column-first sweep
    of the one-sided weak derivative v_x = s, anchored by the right
    boundary datum.
    """
    ops = forms.ElementOperators.build(k, msh.hx, msh.hy)
    nx, ny, k1 = msh.nx, msh.ny, k + 1
    ne = nx * ny
    u0 = scenarios.initial_condition(scenario)
    u = np.empty((ne, k1, k1))
    for e, (i, j) in enumerate(msh.elements()):
        u[e] = fem.tensor_project(u0, msh.cell_rect(i, j), k)

    tr = solver.TraceSet.zeros(nx, ny, k)
    tr.fill_dirichlet(boundary_data(scenario, msh, k, 0.0))
    ugrid = u.reshape(nx, ny, k1, k1)
    tr.UV[1:nx] = 0.5 * (ops.trace_xR(ugrid)[: nx - 1]
                         + ops.trace_xL(ugrid)[1:])
    tr.UB[:, 1:] = ops.trace_yT(ugrid)[:, : ny - 1]

    uhat_L = tr.UV[0:nx].reshape(ne, k1)
    uhat_R = tr.UV[1:nx + 1].reshape(ne, k1)
    q = -(ops.CX @ u
          + np.einsum("m,en->emn", ops.eL, uhat_L)
          - np.einsum("m,en->emn", ops.eR, uhat_R))
    qgrid = q.reshape(nx, ny, k1, k1)
    tr.QV[1:nx] = 0.5 * (ops.trace_xR(qgrid)[: nx - 1]
                         + ops.trace_xL(qgrid)[1:])

    uhat_B = tr.UB.reshape(ne, k1)
    s = -(np.einsum("emb,nb->emn", u, ops.CY)
          + np.einsum("em,n->emn", uhat_B, ops.fB)
          - np.einsum("em,n->emn", ops.trace_yT(u), ops.fT))

    # sweep v leftward from the right boundary: per y-mode the one-sided
    # weak derivative gives (CX + eL eL^T) v = eR vhat_R - s per element
    sweep = np.linalg.inv(ops.CX + np.outer(ops.eL, ops.eL))
    sgrid = s.reshape(nx, ny, k1, k1)
    vgrid = np.empty((nx, ny, k1, k1))
    vhat_R = tr.VR[nx - 1]
    for col in range(nx - 1, -1, -1):
        rhs = np.einsum("m,jn->jmn", ops.eR, vhat_R) - sgrid[col]
        vgrid[col] = np.einsum("ma,jan->jmn", sweep, rhs)
        vhat_R = ops.trace_xL(vgrid[col])
    tr.VR[: nx - 1] = ops.trace_xL(vgrid)[1:]
    tr.VT[:, : ny - 1] = ops.trace_yB(vgrid)[:, 1:]

    states = np.zeros((ne, forms.N_FIELDS, k1, k1))
    states[:, forms.U] = u
    states[:, forms.Q] = q
    states[:, forms.S] = s
    states[:, forms.V] = vgrid.reshape(ne, k1, k1)
    return states, tr


def advance(system, scenario, states, tr, t_new, dt, options=None,
            source=None):
    """One implicit step to t_new, in place; returns the NewtonResult.

    Boundary data and the volume source are evaluated at the new time
    level.  A failed solve raises with the failing time in the message.
    """
    prev_u = states[:, forms.U].copy()
    prev_uv = tr.UV.copy()
    tr.fill_dirichlet(boundary_data(scenario, system.mesh, system.k, t_new))
    sources = system.source_values(source, t_new)
    try:
        return system.newton(states, tr, prev_u, prev_uv, dt,
                             sources=sources, options=options)
    except solver.NonConvergenceError as exc:
        raise solver.NonConvergenceError(
            f"step to t = {t_new:.6g}: {exc}", exc.history) from exc


def run(scenario, msh, k: int, config: TimeConfig, params=None, options=None,
        error_fn=None):
    """March a scenario to t_final; returns (states, traces, records).

    error_fn, when given, maps (states, t) to an (err_u, err_q) pair
    stored on each record.  On solver failure the partial record list is
    attached to the raised exception as .records before it propagates.
    """
    if params is None:
        params = forms.StabilizationParams()
    system = solver.GlobalSystem(msh, k, params, scenario.kappa)
    states, tr = initialize(scenario, msh, k)
    source = scenario_source(scenario)
    dt = config.dt_effective
    records = [make_record(0, 0.0, states, 0, error_fn=error_fn)]
    for step in range(1, config.n_steps + 1):
        t_new = config.time_at(step)
        try:
            result = advance(system, scenario, states, tr, t_new, dt,
                             options=options, source=source)
        except solver.SolverError as exc:
            exc.records = records
            raise
        if step % config.output_every == 0 or step == config.n_steps:
            records.append(make_record(
                step, t_new, states, result.iterations,
                margin=result.margin, transmission=result.transmission,
                error_fn=error_fn))
    return states, tr, records


def make_record(step, t, states, iters, margin=None, transmission=None,
                error_fn=None):
    """Diagnostics row for the current state of a march."""
    err_u = err_q = None
    if error_fn is not None:
        err_u, err_q = error_fn(states, t)
    return DiagnosticsRecord(
        step=step, time=t, energy=energy(states),
        norm_u=float(np.linalg.norm(states[:, forms.U])),
        norm_q=float(np.linalg.norm(states[:, forms.Q])),
        newton_iters=iters, margin=margin, transmission=transmission,
        err_u=err_u, err_q=err_q,
    )
