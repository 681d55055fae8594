"""Acceptance gate: headline convergence numbers and solver invariants.

One test per criterion (split by polynomial degree where the runs are
expensive); each prints a single PASS or FAIL line with the measured
quantities.  The T=1 convergence marches are shared through the session
fixtures in conftest, so the full ladder is marched once.
"""

import numpy as np
import pytest
from numpy.random import default_rng

from chkp_hdg import cli, fem, forms, mesh, scenarios, solver, timestep

DT = 1e-3

# reference final-time L2 errors for the manufactured solution
# (decaying sine product, kappa = -1/2, T = 1, dt = 1e-3), per level N
REFERENCE_U = {
    1: {2: 1.77, 4: 6.53e-1, 8: 1.54e-1, 16: 3.41e-2, 32: 8.09e-3},
    2: {2: 3.76e-1, 4: 1.26e-1, 8: 1.37e-2, 16: 1.64e-3},
    3: {2: 2.47e-1, 4: 7.85e-3, 8: 8.74e-4, 16: 5.31e-5},
}
REFERENCE_Q = {2: {8: 2.15e-2, 16: 2.92e-3}}


def report(capsys, name, ok, detail):
    # disable capture so the line lands in the log for passing tests too
    with capsys.disabled():
        print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})",
              flush=True)
    assert ok, f"{name}: {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2, 3])
def test_criterion1_u_error_bands(capsys, mms_run, k):
    parts = []
    ok = True
    for n, ref in sorted(REFERENCE_U[k].items()):
        err = mms_run(k, n, DT)["err_u"]
        inside = ref / 2.0 <= err <= ref * 2.0
        ok = ok and inside
        parts.append(f"N={n} {err:.3e} vs {ref:.3e}"
                     + ("" if inside else " OUT"))
    report(capsys, f"criterion 1, u-error bands k={k}", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion2_q_errors_and_orders(capsys, mms_run):
    parts = []
    ok = True
    for n, ref in sorted(REFERENCE_Q[2].items()):
        err = mms_run(2, n, DT)["err_q"]
        inside = ref / 2.0 <= err <= ref * 2.0
        ok = ok and inside
        parts.append(f"k=2 N={n} {err:.3e} vs {ref:.3e}"
                     + ("" if inside else " OUT"))
    for k in (1, 2, 3):
        ns = sorted(REFERENCE_U[k])
        coarse = mms_run(k, ns[-2], DT)["err_q"]
        fine = mms_run(k, ns[-1], DT)["err_q"]
        order = float(np.log2(coarse / fine))
        gate = k + 0.7
        good = order >= gate
        ok = ok and good
        parts.append(f"k={k} q-order {order:.2f} (gate {gate:.1f})"
                     + ("" if good else " OUT"))
    report(capsys, "criterion 2, q errors and orders", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion3_energy_nonincreasing(capsys, energy_run):
    records = energy_run()["records"]
    energies = np.array([r.energy for r in records])
    assert energies.size == 201
    ok = bool(np.all(energies[1:] <= energies[:-1] * (1.0 + 1e-12)))
    worst = float(np.max(energies[1:] / energies[:-1]))
    drop = energies[-1] / energies[0]
    report(capsys, "criterion 3, stepwise energy decay", ok,
           f"max step ratio {worst:.15f}, total decay {drop:.6f}")


@pytest.mark.slow
def test_criterion4_peakon_amplitude_position_overshoot(capsys, peakon_run):
    fine = peakon_run(1e-3)
    coarse = peakon_run(1e-2)
    amps = {t: float(vals.max())
            for t, (_, vals) in sorted(fine["sections"].items())}
    amp_ok = all(abs(a - 1.0) <= 0.05 for a in amps.values())
    coords, vals = fine["sections"][1.0]
    x_peak = float(coords[int(np.argmax(vals))])
    cell = 2.0 / 32
    pos_ok = abs(x_peak - 1.0) <= cell + 1e-12
    over_fine = max(float(v.max()) for _, v in fine["sections"].values()) - 1.0
    over_coarse = (max(float(v.max()) for _, v in coarse["sections"].values())
                   - 1.0)
    over_ok = over_coarse > over_fine
    ok = amp_ok and pos_ok and over_ok
    amp_txt = ", ".join(f"t={t:g}:{a:.3f}" for t, a in amps.items())
    report(capsys, "criterion 4, peakon transport", ok,
           f"amps {amp_txt}; x_peak {x_peak:.4f}; overshoot "
           f"dt=1e-2 {over_coarse:.3e} vs dt=1e-3 {over_fine:.3e}")


@pytest.mark.parametrize("k", [1, 2])
def test_criterion5_condensed_matches_monolithic(capsys, k):
    sc = scenarios.mms_scenario(t_final=1e-2)
    msh = mesh.build_mesh(sc.domain, 4, 4)
    tc = timestep.TimeConfig(dt=1e-3, t_final=1e-2)
    results = {}
    for method in ("condensed", "monolithic"):
        opts = solver.NewtonOptions(method=method)
        states, tr, _ = timestep.run(sc, msh, k, tc, options=opts)
        results[method] = (states, tr.pack_free())
    d_states = float(np.abs(results["condensed"][0]
                            - results["monolithic"][0]).max())
    d_traces = float(np.abs(results["condensed"][1]
                            - results["monolithic"][1]).max())
    ok = d_states <= 1e-9 and d_traces <= 1e-9
    report(capsys, f"criterion 5, condensed vs monolithic k={k}", ok,
           f"max coefficient diff {d_states:.2e}, trace diff {d_traces:.2e}")


@pytest.mark.parametrize("k", [1, 2, 3])
def test_criterion6_jacobian_vector_products(capsys, k):
    msh = mesh.build_mesh(mesh.Domain2D(0.0, 1.0, 0.0, 1.0), 3, 2)
    system = solver.GlobalSystem(msh, k, forms.StabilizationParams(), -0.5)
    rng = default_rng(1000 + k)
    dt, h = 0.1, 1e-6
    worst = 0.0
    for _ in range(20):
        states = rng.standard_normal((system.ne, forms.N_FIELDS,
                                      system.k1, system.k1)) * 0.3
        tr = solver.TraceSet.zeros(system.nx, system.ny, k)
        for name in ("UV", "QV", "UB", "VR", "VT"):
            arr = getattr(tr, name)
            arr += rng.standard_normal(arr.shape) * 0.3
        prev_u = rng.standard_normal((system.ne, system.k1, system.k1)) * 0.3
        prev_uv = rng.standard_normal(tr.UV.shape) * 0.3

        def residual_of(x):
            st = x[: system.n_bulk].reshape(states.shape)
            t2 = tr.copy()
            t2.set_free(x[system.n_bulk:])
            r, _, _ = system.residual(st, t2, prev_u, prev_uv, dt)
            return r

        x0 = np.concatenate([states.reshape(-1), tr.pack_free()])
        A, Bf, C, D, _ = system.jacobian_values(states, tr, dt)
        J = system.monolithic_matrix(A, Bf, C, D)
        d = rng.standard_normal(x0.size)
        d /= np.linalg.norm(d)
        fd = (residual_of(x0 + h * d) - residual_of(x0 - h * d)) / (2.0 * h)
        jv = J @ d
        rel = np.linalg.norm(jv - fd) / max(1.0, np.linalg.norm(jv))
        worst = max(worst, float(rel))
    ok = worst <= 1e-6
    report(capsys, f"criterion 6, jacobian products k={k}", ok,
           f"worst relative deviation {worst:.2e} over 20 states")


@pytest.mark.parametrize("k", [1, 2, 3])
def test_criterion7_projection_properties(capsys, k):
    rect = ((0.0, 1.2), (0.0, 0.7))
    f = lambda x, y: np.exp(x) * np.cos(y)
    quad = fem.make_quadrature(k)
    (x0, x1), (y0, y1) = rect
    xs = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * quad.nodes
    ys = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * quad.nodes

    # moment orthogonality of the plain tensor projection
    coeffs = fem.tensor_project(f, rect, k, "P")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    resid = f(X, Y) - fem.eval_field(coeffs, rect, X.ravel(),
                                     Y.ravel()).reshape(X.shape)
    wx = quad.weights * 0.5 * (x1 - x0)
    wy = quad.weights * 0.5 * (y1 - y0)
    Vx = fem.Basis1D(k).eval(quad.nodes) * np.sqrt(2.0 / (x1 - x0))
    Vy = fem.Basis1D(k).eval(quad.nodes) * np.sqrt(2.0 / (y1 - y0))
    m_orth = float(np.abs(np.einsum("i,j,ij,im,jn->mn", wx, wy, resid,
                                    Vx, Vy)).max())

    # edge identity: the composite one-sided projection is exact at the
    # matched corner and orthogonal to lower-degree traces on that edge
    minus = fem.tensor_project(f, rect, k, "PiMinus")
    trace = fem.eval_field(minus, rect, np.full_like(ys, x1), ys)
    edge_resid = f(x1, ys) - trace
    m_edge = max(abs(float((wy * edge_resid * ys ** j).sum()))
                 for j in range(k)) if k > 0 else 0.0
    corner = fem.eval_field(minus, rect, np.array([x1]), np.array([y1]))[0]
    m_edge = max(m_edge, abs(float(corner - f(x1, y1))))

    # idempotence of all three projection kinds
    m_idem = 0.0
    for kind in ("P", "PiMinus", "PiPlus"):
        c1 = fem.tensor_project(f, rect, k, kind)
        c2 = fem.tensor_project(
            lambda x, y: fem.eval_field(c1, rect, x, y), rect, k, kind)
        m_idem = max(m_idem, float(np.abs(c1 - c2).max()))

    # O(h^{k+1}) decay of the projection error under mesh refinement
    sc = scenarios.mms_scenario()
    errs = []
    ns = (4, 8, 16)
    for n in ns:
        msh = mesh.build_mesh(sc.domain, n, n)
        states, _ = timestep.initialize(sc, msh, k)
        errs.append(cli.compute_errors(states, sc, msh, 0.0)[0])
    slope = float(-np.polyfit(np.log(ns), np.log(errs), 1)[0])

    ok = (m_orth < 1e-12 and m_edge < 1e-12 and m_idem < 1e-12
          and slope >= k + 0.9)
    report(capsys, f"criterion 7, projection properties k={k}", ok,
           f"orthogonality {m_orth:.1e}, edge {m_edge:.1e}, "
           f"idempotence {m_idem:.1e}, decay order {slope:.2f}")


@pytest.mark.slow
def test_criterion8_transmission_residuals(capsys, mms_run):
    worst = 0.0
    where = ""
    for k, table in REFERENCE_U.items():
        for n in table:
            for rec in mms_run(k, n, DT)["records"][1:]:
                m = max(rec.transmission.values())
                if m > worst:
                    worst, where = m, f"k={k} N={n} step {rec.step}"
    ok = worst <= 1e-9
    report(capsys, "criterion 8, transmission residuals", ok,
           f"max over all accepted steps {worst:.2e} at {where}")
