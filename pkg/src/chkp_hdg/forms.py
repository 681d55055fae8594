"""Element-local weak forms, numerical traces, and their linearizations.

The seven coupled fields per element are ordered (u, q, p, s, v, z, r):
q = u_x, p = (u q)_x, s = u_y, v_x = s, z = r_x, r collects the spatial
operator, and u_t + r = 0 closes the system.  All kernels work on batches
of elements at once; states are arrays of shape (ne, 7, k1, k1) in the
orthonormal tensor basis, so every mass matrix is the identity.

Traces on the element boundary are P_k polynomials in the face coordinate.
Vertical faces carry the globally coupled u-hat and q-hat (plus v-hat on
the right), horizontal faces carry u-hat below and v-hat above.  On faces
where no trace unknown lives, the numerical trace is the element's own
one-sided value: u on the top, v on the left and bottom.

The nonlinear flux is f(u) = 2 kappa u + (3/2) u^2.  Its stabilization
uses the exact flux average tilde-tau, which for this quadratic f has the
closed form -n_x (kappa + (u_hat + 2 u) / 2).
"""

from dataclasses import dataclass

import numpy as np

from . import fem

U, Q, P, S, V, Z, R = range(7)
N_FIELDS = 7
FIELD_NAMES = ("u", "q", "p", "s", "v", "z", "r")

TRACE_SLOTS = (
    "uhat_L",
    "uhat_R",
    "qhat_L",
    "qhat_R",
    "uhat_B",
    "vhat_R",
    "vhat_T",
)


def flux_f(u, kappa):
    return 2.0 * kappa * u + 1.5 * u * u


def flux_f_prime(u, kappa):
    return 2.0 * kappa + 3.0 * u


def compute_tilde_tau(u_hat, u, n_x, kappa):
    """Exact average of (f(s) - f(u)) over the segment from u_hat to u.

    For the quadratic flux the defining integral divided by (u_hat - u)^2
    collapses to the closed form below; at u_hat = u it reduces to
    -n_x f'(u) / 2, so no degenerate division occurs.
    """
    return -n_x * (kappa + 0.5 * (u_hat + 2.0 * u))


def adaptive_tau_f(u_hat, u, kappa, eps):
    """Stabilization sup |f'| / 2 + eps over the segment from u_hat to u."""
    sup = np.maximum(
        np.abs(flux_f_prime(u_hat, kappa)), np.abs(flux_f_prime(u, kappa))
    )
    return 0.5 * sup + eps


@dataclass(frozen=True)
class StabilizationParams:
    """Face stabilization coefficients.

    Defaults are the reference values tau_zpu_plus = tau_zpu_minus = -1,
    tau_zpv_minus = 1, tau_uqq = -1/4, tau_f = 4.  With adaptive=True the
    flux stabilization becomes sup |f'|/2 + eps per quadrature point and
    tau_f is ignored.
    """

    tau_zpu_plus: float = -1.0
    tau_zpu_minus: float = -1.0
    tau_zpv_minus: float = 1.0
    tau_uqq: float = -0.25
    tau_f: float = 4.0
    adaptive: bool = False
    eps: float = 0.5

    def __post_init__(self):
        if not -self.tau_zpu_plus >= 0.0:
            raise ValueError("require tau_zpu_plus <= 0")
        if not -self.tau_zpu_minus >= 0.0:
            raise ValueError("require tau_zpu_minus <= 0")
        if not self.tau_zpv_minus**2 <= -2.0 * self.tau_zpu_minus:
            raise ValueError("require tau_zpv_minus^2 <= -2 tau_zpu_minus")
        if not -self.tau_uqq >= 0.0:
            raise ValueError("require tau_uqq <= 0")
        if self.adaptive and self.eps <= 0.0:
            raise ValueError("adaptive stabilization needs eps > 0")


def _tau_f_terms(params, u_hat, u, kappa):
    """Pointwise tau_f and its derivatives along both arguments."""
    if not params.adaptive:
        return params.tau_f, 0.0, 0.0
    fp_hat = flux_f_prime(u_hat, kappa)
    fp_u = flux_f_prime(u, kappa)
    hat_branch = np.abs(fp_hat) > np.abs(fp_u)
    tf = 0.5 * np.where(hat_branch, np.abs(fp_hat), np.abs(fp_u)) + params.eps
    d_hat = np.where(hat_branch, 1.5 * np.sign(fp_hat), 0.0)
    d_u = np.where(hat_branch, 0.0, 1.5 * np.sign(fp_u))
    return tf, d_hat, d_u


def assumption_margin(params, kappa, u_hat_vals, u_vals):
    """Worst-case tau_f - |tilde tau| over paired trace values.

    Positive margin certifies the stabilization assumption on the sampled
    faces: |tilde tau| <= sup |f'| / 2 over the segment, and f' is linear,
    so endpoint values bound the segment.
    """
    u_hat_vals = np.asarray(u_hat_vals, dtype=float)
    u_vals = np.asarray(u_vals, dtype=float)
    sup = np.maximum(
        np.abs(flux_f_prime(u_hat_vals, kappa)),
        np.abs(flux_f_prime(u_vals, kappa)),
    )
    if params.adaptive:
        tf = 0.5 * sup + params.eps
    else:
        tf = params.tau_f
    margin = tf - 0.5 * sup
    return float(np.min(margin)) if margin.size else float(np.min(tf))


@dataclass(frozen=True)
class ElementOperators:
    """Quadrature and basis tables for one uniform element size.

    All elements of a uniform mesh share one instance.  Tables are scaled
    to the physical cell, so the basis is orthonormal in the physical L2
    inner products and the volume mass matrix is the identity.
    """

    k: int
    hx: float
    hy: float
    nq: int
    wx: np.ndarray  # physical x quadrature weights (nq,)
    wy: np.ndarray
    Vx: np.ndarray  # basis values at x quadrature nodes (nq, k1)
    Vy: np.ndarray
    Dx: np.ndarray  # basis x-derivatives at quadrature nodes (nq, k1)
    Dy: np.ndarray
    CX: np.ndarray  # advection (c, dx phi): CX[m, a] = (psi_a, dx psi_m)
    CY: np.ndarray
    eL: np.ndarray  # basis traces at the left/right cell edge (k1,)
    eR: np.ndarray
    fB: np.ndarray  # basis traces at the bottom/top cell edge (k1,)
    fT: np.ndarray
    nodes: np.ndarray  # reference quadrature nodes on (-1, 1)

    @classmethod
    def build(cls, k: int, hx: float, hy: float) -> "ElementOperators":
        quad = fem.make_quadrature(k)
        basis = fem.Basis1D(k)
        nq = quad.nodes.size
        sx, sy = np.sqrt(2.0 / hx), np.sqrt(2.0 / hy)
        Vx = basis.eval(quad.nodes) * sx
        Vy = basis.eval(quad.nodes) * sy
        Dx = basis.eval_deriv(quad.nodes) * sx * (2.0 / hx)
        Dy = basis.eval_deriv(quad.nodes) * sy * (2.0 / hy)
        wx = quad.weights * 0.5 * hx
        wy = quad.weights * 0.5 * hy
        CX = Dx.T @ (wx[:, None] * Vx)
        CY = Dy.T @ (wy[:, None] * Vy)
        return cls(
            k=k, hx=hx, hy=hy, nq=nq, wx=wx, wy=wy, Vx=Vx, Vy=Vy,
            Dx=Dx, Dy=Dy, CX=CX, CY=CY,
            eL=basis.at_left() * sx, eR=basis.at_right() * sx,
            fB=basis.at_left() * sy, fT=basis.at_right() * sy,
            nodes=quad.nodes.copy(),
        )

    @property
    def k1(self) -> int:
        return self.k + 1

    @property
    def n_local(self) -> int:
        return N_FIELDS * self.k1 * self.k1

    # -- face value helpers (batched over leading axes) --

    def yvals(self, coeffs):
        """P_k(y) coefficients to values at the nq face nodes."""
        return coeffs @ self.Vy.T

    def xvals(self, coeffs):
        return coeffs @ self.Vx.T

    def yproj(self, vals):
        """Values at face nodes to P_k(y) coefficients (L2 projection)."""
        return vals @ (self.wy[:, None] * self.Vy)

    def xproj(self, vals):
        return vals @ (self.wx[:, None] * self.Vx)

    def my(self, dvals):
        """Face mass sandwich: (..., nq) diagonal to (..., k1, k1) block."""
        return np.einsum("p,pn,pb,...p->...nb", self.wy, self.Vy, self.Vy, dvals)

    def trace_xL(self, c):
        return np.einsum("m,...mn->...n", self.eL, c)

    def trace_xR(self, c):
        return np.einsum("m,...mn->...n", self.eR, c)

    def trace_yB(self, c):
        return np.einsum("n,...mn->...m", self.fB, c)

    def trace_yT(self, c):
        return np.einsum("n,...mn->...m", self.fT, c)


# ---------------------------------------------------------------------------
# numerical traces on vertical faces


def uq_flux(params, u_vals, q_vals, qhat_vals, n_x, linear_only=False):
    """Advective trace u (q_hat + q)/2 + tau_uqq (q_hat - q) n_x.

    Returns pointwise values and derivative diagonals with respect to the
    element u and q traces and the q-hat unknown.
    """
    tau = params.tau_uqq
    if linear_only:
        vals = n_x * tau * (qhat_vals - q_vals)
        zero = np.zeros_like(q_vals)
        return vals, zero, -n_x * tau + zero, n_x * tau + zero
    vals = 0.5 * u_vals * (qhat_vals + q_vals) + n_x * tau * (qhat_vals - q_vals)
    d_du = 0.5 * (qhat_vals + q_vals)
    d_dq = 0.5 * u_vals - n_x * tau
    d_dqhat = 0.5 * u_vals + n_x * tau
    return vals, d_du, d_dq, d_dqhat


def g_flux(params, kappa, z_vals, p_vals, u_vals, v_vals, uhat_vals,
           vhat_vals, side, linear_only=False):
    """Stabilized trace of z - p + f(u) on a vertical face.

    side "L" is the element's left face (n_x = -1), where the trace reads
    z - p - tau_zpu_plus (u_hat - u) + f(u) + tau_f (u_hat - u); side "R"
    (n_x = +1) adds the v coupling tau_zpv_minus (v_hat - v) and flips the
    stabilization signs.  Returns values and derivative diagonals.
    """
    if linear_only:
        fu = 2.0 * kappa * u_vals
        fpu = 2.0 * kappa + np.zeros_like(u_vals)
    else:
        fu = flux_f(u_vals, kappa)
        fpu = flux_f_prime(u_vals, kappa)
    tf, dtf_dhat, dtf_du = _tau_f_terms(params, uhat_vals, u_vals, kappa)
    diff = uhat_vals - u_vals
    if side == "L":
        tau = params.tau_zpu_plus
        vals = z_vals - p_vals - tau * diff + fu + tf * diff
        d_du = tau + fpu - tf + dtf_du * diff
        d_duhat = -tau + tf + dtf_dhat * diff
        d_dv = np.zeros_like(u_vals)
        d_dvhat = np.zeros_like(u_vals)
    elif side == "R":
        tau = params.tau_zpu_minus
        tau_v = params.tau_zpv_minus
        vals = (z_vals - p_vals + tau * diff + tau_v * (vhat_vals - v_vals)
                + fu - tf * diff)
        d_du = -tau + fpu + tf - dtf_du * diff
        d_duhat = tau - tf - dtf_dhat * diff
        d_dv = -tau_v + np.zeros_like(u_vals)
        d_dvhat = tau_v + np.zeros_like(u_vals)
    else:
        raise ValueError(f"side must be L or R, got {side!r}")
    return vals, {"z": 1.0, "p": -1.0, "u": d_du, "uhat": d_duhat,
                  "v": d_dv, "vhat": d_dvhat}


def _face_state(ops, params, kappa, states, traces, linear_only):
    """All vertical-face values and flux data shared by the kernels."""
    u, q, p, v, z = (states[:, i] for i in (U, Q, P, V, Z))
    fs = {}
    for side, tx in (("L", ops.trace_xL), ("R", ops.trace_xR)):
        fs[f"u_{side}"] = ops.yvals(tx(u))
        fs[f"q_{side}"] = ops.yvals(tx(q))
        fs[f"p_{side}"] = ops.yvals(tx(p))
        fs[f"v_{side}"] = ops.yvals(tx(v))
        fs[f"z_{side}"] = ops.yvals(tx(z))
        fs[f"uhat_{side}"] = ops.yvals(traces[f"uhat_{side}"])
        fs[f"qhat_{side}"] = ops.yvals(traces[f"qhat_{side}"])
    fs["vhat_R"] = ops.yvals(traces["vhat_R"])
    n_x = {"L": -1.0, "R": 1.0}
    for side in ("L", "R"):
        vals, d_du, d_dq, d_dqhat = uq_flux(
            params, fs[f"u_{side}"], fs[f"q_{side}"], fs[f"qhat_{side}"],
            n_x[side], linear_only,
        )
        fs[f"uq_{side}"] = vals
        fs[f"uq_{side}_du"] = d_du
        fs[f"uq_{side}_dq"] = d_dq
        fs[f"uq_{side}_dqhat"] = d_dqhat
    gl, dl = g_flux(params, kappa, fs["z_L"], fs["p_L"], fs["u_L"], fs["v_L"],
                    fs["uhat_L"], None, "L", linear_only)
    gr, dr = g_flux(params, kappa, fs["z_R"], fs["p_R"], fs["u_R"], fs["v_R"],
                    fs["uhat_R"], fs["vhat_R"], "R", linear_only)
    fs["g_L"], fs["g_L_d"] = gl, dl
    fs["g_R"], fs["g_R_d"] = gr, dr
    return fs


def _lift_x(vec, coeffs):
    """Outer lift of face coefficients: vec[m] * coeffs[e, n]."""
    return np.einsum("m,en->emn", vec, coeffs)


def _lift_y(coeffs, vec):
    return np.einsum("em,n->emn", coeffs, vec)


def batched_residual(ops, params, kappa, dt, states, traces, u_prev,
                     sources=None, linear_only=False, face_state=None):
    """Galerkin residuals of the seven local equations for a batch.

    states: (ne, 7, k1, k1); traces: dict of (ne, k1) per TRACE_SLOTS plus
    uhat_prev_L / uhat_prev_R; u_prev: (ne, k1, k1); sources: optional
    volume values of the manufactured source at quadrature points
    (ne, nq, nq), subtracted from the r-equation.  Returns (ne, 7, k1, k1)
    plus the face-state dict for reuse in skeleton assembly.
    """
    ne = states.shape[0]
    k1 = ops.k1
    fs = face_state
    if fs is None:
        fs = _face_state(ops, params, kappa, states, traces, linear_only)
    res = np.zeros_like(states)
    u, q, p, s, v, z, r = (states[:, i] for i in range(7))

    # q = u_x
    res[:, Q] = (states[:, Q] + ops.CX @ u
                 + _lift_x(ops.eL, traces["uhat_L"])
                 - _lift_x(ops.eR, traces["uhat_R"]))

    # p = (u q)_x
    if linear_only:
        vol_uq = 0.0
    else:
        u_vol = np.einsum("pm,emn,rn->epr", ops.Vx, u, ops.Vy, optimize=True)
        q_vol = np.einsum("pm,emn,rn->epr", ops.Vx, q, ops.Vy, optimize=True)
        vol_uq = np.einsum("p,r,epr,pm,rn->emn", ops.wx, ops.wy,
                           u_vol * q_vol, ops.Dx, ops.Vy, optimize=True)
    res[:, P] = (states[:, P] + vol_uq
                 + _lift_x(ops.eL, ops.yproj(fs["uq_L"]))
                 - _lift_x(ops.eR, ops.yproj(fs["uq_R"])))

    # s = u_y (trace unknown below, own trace above)
    res[:, S] = (states[:, S] + np.einsum("emb,nb->emn", u, ops.CY)
                 + _lift_y(traces["uhat_B"], ops.fB)
                 - _lift_y(ops.trace_yT(u), ops.fT))

    # v_x = s (own trace left, trace unknown right)
    res[:, V] = (states[:, S] + ops.CX @ v
                 + _lift_x(ops.eL, ops.trace_xL(v))
                 - _lift_x(ops.eR, traces["vhat_R"]))

    # z = r_x with the time-derivative trace r_hat = -(u_hat_new - u_hat_prev)/dt
    rhat_L = -(traces["uhat_L"] - traces["uhat_prev_L"]) / dt
    rhat_R = -(traces["uhat_R"] - traces["uhat_prev_R"]) / dt
    res[:, Z] = (states[:, Z] + ops.CX @ r
                 + _lift_x(ops.eL, rhat_L) - _lift_x(ops.eR, rhat_R))

    # r-equation: r = (z - p + f(u) + q^2/2)_x + v_y
    if linear_only:
        u_vol = np.einsum("pm,emn,rn->epr", ops.Vx, u, ops.Vy, optimize=True)
        flux_vol = 2.0 * kappa * u_vol
        qhalf_L = 0.0 * fs["qhat_L"]
        qhalf_R = 0.0 * fs["qhat_R"]
    else:
        q_vol = np.einsum("pm,emn,rn->epr", ops.Vx, q, ops.Vy, optimize=True)
        u_vol = np.einsum("pm,emn,rn->epr", ops.Vx, u, ops.Vy, optimize=True)
        flux_vol = flux_f(u_vol, kappa) + 0.5 * q_vol * q_vol
        qhalf_L = 0.5 * fs["qhat_L"] ** 2
        qhalf_R = 0.5 * fs["qhat_R"] ** 2
    res[:, R] = (states[:, R] + ops.CX @ (z - p)
                 + np.einsum("p,r,epr,pm,rn->emn", ops.wx, ops.wy, flux_vol,
                             ops.Dx, ops.Vy, optimize=True)
                 + _lift_x(ops.eL, ops.yproj(fs["g_L"] + qhalf_L))
                 - _lift_x(ops.eR, ops.yproj(fs["g_R"] + qhalf_R))
                 + np.einsum("emb,nb->emn", v, ops.CY)
                 + _lift_y(ops.trace_yB(v), ops.fB)
                 - _lift_y(traces["vhat_T"], ops.fT))
    if sources is not None:
        res[:, R] -= np.einsum("p,r,epr,pm,rn->emn", ops.wx, ops.wy,
                               sources, ops.Vx, ops.Vy, optimize=True)

    # backward Euler time equation
    res[:, U] = (u - u_prev) / dt + r
    return res, fs


def _kron4(mx, my):
    return np.einsum("ma,nb->mnab", mx, my)


def batched_jacobian(ops, params, kappa, dt, states, traces,
                     linear_only=False, face_state=None):
    """Analytic derivatives of batched_residual.

    Returns (A, B, fs): A of shape (ne, 7, k1, k1, 7, k1, k1) holds the
    element-state derivatives, B maps TRACE_SLOTS to (ne, 7, k1, k1, k1)
    trace derivatives, and fs is the face-state dict.
    """
    ne = states.shape[0]
    k1 = ops.k1
    fs = face_state
    if fs is None:
        fs = _face_state(ops, params, kappa, states, traces, linear_only)
    E = np.eye(k1)
    LL = np.outer(ops.eL, ops.eL)
    RR = np.outer(ops.eR, ops.eR)
    BB = np.outer(ops.fB, ops.fB)
    TT = np.outer(ops.fT, ops.fT)
    EE = _kron4(E, E)

    A = np.zeros((ne, 7, k1, k1, 7, k1, k1))
    A[:, Q, :, :, Q] += EE
    A[:, Q, :, :, U] += _kron4(ops.CX, E)
    A[:, P, :, :, P] += EE
    A[:, S, :, :, S] += EE
    A[:, S, :, :, U] += _kron4(E, ops.CY) - _kron4(E, TT)
    A[:, V, :, :, S] += EE
    A[:, V, :, :, V] += _kron4(ops.CX + LL, E)
    A[:, Z, :, :, Z] += EE
    A[:, Z, :, :, R] += _kron4(ops.CX, E)
    A[:, R, :, :, R] += EE
    A[:, R, :, :, Z] += _kron4(ops.CX + LL - RR, E)
    A[:, R, :, :, P] -= _kron4(ops.CX + LL - RR, E)
    A[:, R, :, :, V] += (_kron4(E, ops.CY + BB)
                         + params.tau_zpv_minus * _kron4(RR, E))
    A[:, U, :, :, U] += EE / dt
    A[:, U, :, :, R] += EE

    # state-dependent volume blocks: d/dc (a b, dx phi) for products
    u, q = states[:, U], states[:, Q]
    u_vol = np.einsum("pm,emn,rn->epr", ops.Vx, u, ops.Vy, optimize=True)

    def volx(vals):
        return np.einsum("p,r,epr,pm,rn,pa,rb->emnab", ops.wx, ops.wy, vals,
                         ops.Dx, ops.Vy, ops.Vx, ops.Vy, optimize=True)

    if not linear_only:
        q_vol = np.einsum("pm,emn,rn->epr", ops.Vx, q, ops.Vy, optimize=True)
        A[:, P, :, :, U] += volx(q_vol)
        A[:, P, :, :, Q] += volx(u_vol)
        A[:, R, :, :, U] += volx(flux_f_prime(u_vol, kappa))
        A[:, R, :, :, Q] += volx(q_vol)
    else:
        A[:, R, :, :, U] += volx(2.0 * kappa * np.ones_like(u_vol))

    def face_block_L(dvals):
        return np.einsum("ma,enb->emnab", LL, ops.my(dvals))

    def face_block_R(dvals):
        return np.einsum("ma,enb->emnab", RR, ops.my(dvals))

    zero = np.zeros((ne, ops.nq))
    A[:, P, :, :, U] += face_block_L(zero + fs["uq_L_du"])
    A[:, P, :, :, U] -= face_block_R(zero + fs["uq_R_du"])
    A[:, P, :, :, Q] += face_block_L(zero + fs["uq_L_dq"])
    A[:, P, :, :, Q] -= face_block_R(zero + fs["uq_R_dq"])
    A[:, R, :, :, U] += face_block_L(zero + fs["g_L_d"]["u"])
    A[:, R, :, :, U] -= face_block_R(zero + fs["g_R_d"]["u"])

    B = {}

    def lift3_x(vec, block):
        return np.einsum("m,enb->emnb", vec, block)

    eye_face = np.broadcast_to(E, (ne, k1, k1))
    B["uhat_L"] = np.zeros((ne, 7, k1, k1, k1))
    B["uhat_L"][:, Q] += lift3_x(ops.eL, eye_face)
    B["uhat_L"][:, Z] -= lift3_x(ops.eL, eye_face) / dt
    B["uhat_L"][:, R] += lift3_x(ops.eL, ops.my(zero + fs["g_L_d"]["uhat"]))
    B["uhat_R"] = np.zeros((ne, 7, k1, k1, k1))
    B["uhat_R"][:, Q] -= lift3_x(ops.eR, eye_face)
    B["uhat_R"][:, Z] += lift3_x(ops.eR, eye_face) / dt
    B["uhat_R"][:, R] -= lift3_x(ops.eR, ops.my(zero + fs["g_R_d"]["uhat"]))

    B["qhat_L"] = np.zeros((ne, 7, k1, k1, k1))
    B["qhat_L"][:, P] += lift3_x(ops.eL, ops.my(zero + fs["uq_L_dqhat"]))
    B["qhat_R"] = np.zeros((ne, 7, k1, k1, k1))
    B["qhat_R"][:, P] -= lift3_x(ops.eR, ops.my(zero + fs["uq_R_dqhat"]))
    if not linear_only:
        B["qhat_L"][:, R] += lift3_x(ops.eL, ops.my(fs["qhat_L"]))
        B["qhat_R"][:, R] -= lift3_x(ops.eR, ops.my(fs["qhat_R"]))

    B["uhat_B"] = np.zeros((ne, 7, k1, k1, k1))
    B["uhat_B"][:, S] += np.einsum("ma,n->mna", E, ops.fB)[None, :, :, :]
    B["vhat_R"] = np.zeros((ne, 7, k1, k1, k1))
    B["vhat_R"][:, V] -= lift3_x(ops.eR, eye_face)
    B["vhat_R"][:, R] -= params.tau_zpv_minus * lift3_x(ops.eR, eye_face)
    B["vhat_T"] = np.zeros((ne, 7, k1, k1, k1))
    B["vhat_T"][:, R] -= np.einsum("ma,n->mna", E, ops.fT)[None, :, :, :]
    return A, B, fs


# ---------------------------------------------------------------------------
# single-element wrappers


@dataclass
class ElementState:
    """Seven stacked coefficient blocks (7, k1, k1) for one element."""

    coeffs: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "ElementState":
        return cls(np.zeros((N_FIELDS, k + 1, k + 1)))

    def field(self, name: str) -> np.ndarray:
        return self.coeffs[FIELD_NAMES.index(name)]


@dataclass
class FaceTraceValues:
    """Trace polynomials on the four faces of one element.

    Vertical-face entries are P_k in y, horizontal ones P_k in x.  The
    previous-step u traces feed the backward-difference time trace.
    """

    uhat_L: np.ndarray
    uhat_R: np.ndarray
    qhat_L: np.ndarray
    qhat_R: np.ndarray
    uhat_B: np.ndarray
    vhat_R: np.ndarray
    vhat_T: np.ndarray
    uhat_prev_L: np.ndarray
    uhat_prev_R: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "FaceTraceValues":
        z = lambda: np.zeros(k + 1)
        return cls(z(), z(), z(), z(), z(), z(), z(), z(), z())

    def as_batch(self) -> dict:
        out = {}
        for name in TRACE_SLOTS + ("uhat_prev_L", "uhat_prev_R"):
            out[name] = np.asarray(getattr(self, name))[None, :]
        return out


def local_residual(ops, rect, state: ElementState, traces: FaceTraceValues,
                   u_prev, dt, params, kappa, source=None,
                   linear_only=False) -> np.ndarray:
    """Residual of the seven local equations for a single element.

    rect gives the element's physical bounds for evaluating the optional
    source term at the new time level.  Returns a flat vector of length
    7 (k+1)^2.
    """
    sources = None
    if source is not None:
        (x0, x1), (y0, y1) = rect
        xs = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * ops.nodes
        ys = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * ops.nodes
        sources = np.asarray(source(xs[:, None], ys[None, :]), dtype=float)[None]
    res, _ = batched_residual(
        ops, params, kappa, dt, state.coeffs[None], traces.as_batch(),
        np.asarray(u_prev)[None], sources=sources, linear_only=linear_only,
    )
    return res[0].reshape(-1)


def local_jacobian(ops, state: ElementState, traces: FaceTraceValues,
                   dt, params, kappa, linear_only=False):
    """Dense element Jacobian and per-face trace blocks for one element."""
    A, B, _ = batched_jacobian(
        ops, params, kappa, dt, state.coeffs[None], traces.as_batch(),
        linear_only=linear_only,
    )
    n = ops.n_local
    k1 = ops.k1
    A_flat = A[0].reshape(n, n)
    B_flat = {name: B[name][0].reshape(n, k1) for name in B}
    return A_flat, B_flat
