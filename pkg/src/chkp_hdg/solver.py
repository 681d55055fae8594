"""Global coupled system: trace unknowns, skeleton continuity, Newton.

Unknown ordering is element blocks first (7 fields of (k+1)^2 modes per
element, elements in column-major i-then-j order), then the free trace
coefficients family by family:

  UV  u-hat on vertical faces (interior ones are unknown, the rest data)
  QV  q-hat on vertical faces
  UB  u-hat on each element's bottom face (unknown above the first row)
  VR  v-hat on each element's right face (unknown left of the last column)
  VT  v-hat on each element's top face (unknown below the last row)

Skeleton rows pair with those slots positionally: continuity of the
advective trace u q, continuity of the stabilized z - p + f trace, and
one-sided matching for u below, v right, and v top.  Boundary faces carry
projected data instead of unknowns and produce no skeleton row.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import forms
from .forms import N_FIELDS, TRACE_SLOTS

TRANSMISSION_FAMILIES = ("uq", "zpf", "u_bottom", "v_right", "v_top")

C_GROUPS = ("t1_L", "t1_R", "t2_L", "t2_R", "t3_T", "t4_L", "t5_B")


class SolverError(RuntimeError):
    """Raised when a linear operator in the solve is unusable."""


class NonConvergenceError(SolverError):
    """Raised when Newton fails to reach the requested tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class TraceSet:
    """Trace coefficient arrays for the five skeleton families.

    Shapes: UV and QV are (nx+1, ny, k+1) over vertical faces, UB, VR and
    VT are (nx, ny, k+1) indexed by the owning element.  Entries on the
    Dirichlet part hold projected boundary data; free_mask marks the rest.
    """

    nx: int
    ny: int
    k: int
    UV: np.ndarray
    QV: np.ndarray
    UB: np.ndarray
    VR: np.ndarray
    VT: np.ndarray

    @classmethod
    def zeros(cls, nx, ny, k):
        k1 = k + 1
        return cls(
            nx=nx, ny=ny, k=k,
            UV=np.zeros((nx + 1, ny, k1)),
            QV=np.zeros((nx + 1, ny, k1)),
            UB=np.zeros((nx, ny, k1)),
            VR=np.zeros((nx, ny, k1)),
            VT=np.zeros((nx, ny, k1)),
        )

    def copy(self):
        return TraceSet(self.nx, self.ny, self.k, self.UV.copy(),
                        self.QV.copy(), self.UB.copy(), self.VR.copy(),
                        self.VT.copy())

    def free_mask(self):
        m = {name: np.zeros_like(getattr(self, name), dtype=bool)
             for name in ("UV", "QV", "UB", "VR", "VT")}
        m["UV"][1:self.nx] = True
        m["QV"][1:self.nx] = True
        m["UB"][:, 1:] = True
        m["VR"][: self.nx - 1] = True
        m["VT"][:, : self.ny - 1] = True
        return m

    def pack_free(self):
        return np.concatenate([
            self.UV[1:self.nx].ravel(),
            self.QV[1:self.nx].ravel(),
            self.UB[:, 1:].ravel(),
            self.VR[: self.nx - 1].ravel(),
            self.VT[:, : self.ny - 1].ravel(),
        ])

    def add_free(self, vec, scale=1.0):
        nx, ny, k1 = self.nx, self.ny, self.k + 1
        sizes = [
            (nx - 1) * ny * k1, (nx - 1) * ny * k1, nx * (ny - 1) * k1,
            (nx - 1) * ny * k1, nx * (ny - 1) * k1,
        ]
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        self.UV[1:nx] += scale * parts[0].reshape(nx - 1, ny, k1)
        self.QV[1:nx] += scale * parts[1].reshape(nx - 1, ny, k1)
        self.UB[:, 1:] += scale * parts[2].reshape(nx, ny - 1, k1)
        self.VR[: nx - 1] += scale * parts[3].reshape(nx - 1, ny, k1)
        self.VT[:, : ny - 1] += scale * parts[4].reshape(nx, ny - 1, k1)

    def set_free(self, vec):
        self.add_free(vec - self.pack_free())

    def fill_dirichlet(self, data):
        """Write projected boundary data into the constrained slots.

        data keys: u_L, u_R (ny, k+1) vertical u traces; q_L, q_R same
        shape; u_B (nx, k+1); v_R (ny, k+1); v_T (nx, k+1).
        """
        self.UV[0] = data["u_L"]
        self.UV[self.nx] = data["u_R"]
        self.QV[0] = data["q_L"]
        self.QV[self.nx] = data["q_R"]
        self.UB[:, 0] = data["u_B"]
        self.VR[self.nx - 1] = data["v_R"]
        self.VT[:, self.ny - 1] = data["v_T"]


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 30
    max_halvings: int = 8
    method: str = "condensed"

    def __post_init__(self):
        if self.method not in ("condensed", "monolithic"):
            raise ValueError(f"unknown linear solve method {self.method!r}")


@dataclass
class NewtonResult:
    converged: bool
    iterations: int
    residual_norms: list
    transmission: dict
    margin: float


class GlobalSystem:
    """Assembled residual and Jacobian for one mesh, order, and parameters."""

    def __init__(self, mesh, k, params, kappa):
        self.mesh = mesh
        self.k = k
        self.params = params
        self.kappa = kappa
        self.ops = forms.ElementOperators.build(k, mesh.hx, mesh.hy)
        nx, ny, k1 = mesh.nx, mesh.ny, k + 1
        self.nx, self.ny, self.k1 = nx, ny, k1
        self.ne = nx * ny
        self.n_local = self.ops.n_local
        self.n_bulk = self.ne * self.n_local
        nf = (nx - 1) * ny * k1
        nh = nx * (ny - 1) * k1
        self.o_uv = self.n_bulk
        self.o_qv = self.o_uv + nf
        self.o_ub = self.o_qv + nf
        self.o_vr = self.o_ub + nh
        self.o_vt = self.o_vr + nf
        self.n_total = self.o_vt + nh
        self.n_trace = self.n_total - self.n_bulk

        ii, jj = np.meshgrid(np.arange(1, nx + 1), np.arange(1, ny + 1),
                             indexing="ij")
        self.ei = ii.ravel()
        self.ej = jj.ravel()
        self._init_trace_columns()
        self._init_row_groups()
        self._init_scatter()
        self._init_quadrature_points()

    # -- static index maps ---------------------------------------------

    def _uv_base(self, iface, j):
        return self.o_uv + ((iface - 1) * self.ny + (j - 1)) * self.k1

    def _qv_base(self, iface, j):
        return self.o_qv + ((iface - 1) * self.ny + (j - 1)) * self.k1

    def _ub_base(self, i, jface):
        return self.o_ub + ((i - 1) * (self.ny - 1) + (jface - 1)) * self.k1

    def _vr_base(self, iface, j):
        return self.o_vr + ((iface - 1) * self.ny + (j - 1)) * self.k1

    def _vt_base(self, i, jface):
        return self.o_vt + ((i - 1) * (self.ny - 1) + (jface - 1)) * self.k1

    def _init_trace_columns(self):
        """Per-element global column base of each trace slot, -1 if data."""
        i, j = self.ei, self.ej
        base = {}
        base["uhat_L"] = np.where(i >= 2, self._uv_base(i - 1, j), -1)
        base["uhat_R"] = np.where(i <= self.nx - 1, self._uv_base(i, j), -1)
        base["qhat_L"] = np.where(i >= 2, self._qv_base(i - 1, j), -1)
        base["qhat_R"] = np.where(i <= self.nx - 1, self._qv_base(i, j), -1)
        base["uhat_B"] = np.where(j >= 2, self._ub_base(i, j - 1), -1)
        base["vhat_R"] = np.where(i <= self.nx - 1, self._vr_base(i, j), -1)
        base["vhat_T"] = np.where(j <= self.ny - 1, self._vt_base(i, j), -1)
        self.slot_base = base

    def _init_row_groups(self):
        """Per-element global row base of each skeleton row it influences."""
        i, j = self.ei, self.ej
        g = {}
        g["t1_L"] = np.where(i >= 2, self._uv_base(i - 1, j), -1)
        g["t1_R"] = np.where(i <= self.nx - 1, self._uv_base(i, j), -1)
        g["t2_L"] = np.where(i >= 2, self._qv_base(i - 1, j), -1)
        g["t2_R"] = np.where(i <= self.nx - 1, self._qv_base(i, j), -1)
        g["t3_T"] = np.where(j <= self.ny - 1, self._ub_base(i, j), -1)
        g["t4_L"] = np.where(i >= 2, self._vr_base(i - 1, j), -1)
        g["t5_B"] = np.where(j >= 2, self._vt_base(i, j - 1), -1)
        self.row_base = g

    def _init_scatter(self):
        k1, nl, ne = self.k1, self.n_local, self.ne
        rows, cols = [], []
        ebase = np.arange(ne) * nl
        # element blocks
        r = (ebase[:, None, None] + np.arange(nl)[None, :, None])
        c = (ebase[:, None, None] + np.arange(nl)[None, None, :])
        rows.append(np.broadcast_to(r, (ne, nl, nl)).ravel())
        cols.append(np.broadcast_to(c, (ne, nl, nl)).ravel())
        # trace couplings of element rows
        self.slot_sel = {}
        for slot in TRACE_SLOTS:
            base = self.slot_base[slot]
            sel = np.flatnonzero(base >= 0)
            self.slot_sel[slot] = sel
            r = (ebase[sel, None, None] + np.arange(nl)[None, :, None])
            c = (base[sel, None, None] + np.arange(k1)[None, None, :])
            rows.append(np.broadcast_to(r, (sel.size, nl, k1)).ravel())
            cols.append(np.broadcast_to(c, (sel.size, nl, k1)).ravel())
        # element couplings of skeleton rows
        self.group_sel = {}
        for group in C_GROUPS:
            base = self.row_base[group]
            sel = np.flatnonzero(base >= 0)
            self.group_sel[group] = sel
            r = (base[sel, None, None] + np.arange(k1)[None, :, None])
            c = (ebase[sel, None, None] + np.arange(nl)[None, None, :])
            rows.append(np.broadcast_to(r, (sel.size, k1, nl)).ravel())
            cols.append(np.broadcast_to(c, (sel.size, k1, nl)).ravel())
        # trace couplings of skeleton rows (block diagonals by face)
        iface, jf = np.meshgrid(np.arange(1, self.nx), np.arange(1, self.ny + 1),
                                indexing="ij")
        iface, jf = iface.ravel(), jf.ravel()
        t1_rows = self._uv_base(iface, jf)
        t2_rows = self._qv_base(iface, jf)
        qv_cols = self._qv_base(iface, jf)
        uv_cols = self._uv_base(iface, jf)
        vr_cols = self._vr_base(iface, jf)
        ih, jh = np.meshgrid(np.arange(1, self.nx + 1), np.arange(1, self.ny),
                             indexing="ij")
        ih, jh = ih.ravel(), jh.ravel()
        ub_diag = self._ub_base(ih, jh)
        vt_diag = self._vt_base(ih, jh)
        vr_diag_rows = self._vr_base(iface, jf)
        self._d_pieces = [
            ("t1_qv", t1_rows, qv_cols),
            ("t2_uv", t2_rows, uv_cols),
            ("t2_vr", t2_rows, vr_cols),
            ("t3", ub_diag, ub_diag),
            ("t4", vr_diag_rows, vr_cols),
            ("t5", vt_diag, vt_diag),
        ]
        for _, rbase, cbase in self._d_pieces:
            r = (rbase[:, None, None] + np.arange(k1)[None, :, None])
            c = (cbase[:, None, None] + np.arange(k1)[None, None, :])
            rows.append(np.broadcast_to(r, (rbase.size, k1, k1)).ravel())
            cols.append(np.broadcast_to(c, (rbase.size, k1, k1)).ravel())
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    def _init_quadrature_points(self):
        xs = self.mesh.x_nodes
        ys = self.mesh.y_nodes
        ref = self.ops.nodes
        xq = 0.5 * (xs[:-1, None] + xs[1:, None]) + 0.5 * self.mesh.hx * ref
        yq = 0.5 * (ys[:-1, None] + ys[1:, None]) + 0.5 * self.mesh.hy * ref
        # element order is i-major, j-minor
        self.xq = np.repeat(xq, self.ny, axis=0)
        self.yq = np.tile(yq, (self.nx, 1))

    # -- assembly ------------------------------------------------------

    def source_values(self, source, t):
        """Volume quadrature values of a source function at time t."""
        if source is None:
            return None
        return np.asarray(source(self.xq[:, :, None], self.yq[:, None, :], t),
                          dtype=float)

    def gather_traces(self, tr: TraceSet, prev_uv):
        nx = self.nx
        flat = lambda a: a.reshape(self.ne, self.k1)
        return {
            "uhat_L": flat(tr.UV[0:nx]),
            "uhat_R": flat(tr.UV[1:nx + 1]),
            "qhat_L": flat(tr.QV[0:nx]),
            "qhat_R": flat(tr.QV[1:nx + 1]),
            "uhat_B": flat(tr.UB),
            "vhat_R": flat(tr.VR),
            "vhat_T": flat(tr.VT),
            "uhat_prev_L": flat(prev_uv[0:nx]),
            "uhat_prev_R": flat(prev_uv[1:nx + 1]),
        }

    def residual(self, states, tr, prev_u, prev_uv, dt, sources=None,
                 linear_only=False, face_state=None):
        """Full residual vector, face state, and transmission norms."""
        ops, nx, ny, k1 = self.ops, self.nx, self.ny, self.k1
        batch = self.gather_traces(tr, prev_uv)
        res_bulk, fs = forms.batched_residual(
            ops, self.params, self.kappa, dt, states, batch, prev_u,
            sources=sources, linear_only=linear_only, face_state=face_state,
        )
        r = np.empty(self.n_total)
        r[: self.n_bulk] = res_bulk.reshape(-1)

        grid = lambda a: a.reshape(nx, ny, -1)
        uqR, uqL = grid(fs["uq_R"]), grid(fs["uq_L"])
        gR, gL = grid(fs["g_R"]), grid(fs["g_L"])
        t1 = ops.yproj((uqR[: nx - 1] - uqL[1:]).reshape(-1, ops.nq))
        t2 = ops.yproj((gR[: nx - 1] - gL[1:]).reshape(-1, ops.nq))
        u_top = grid(ops.trace_yT(states[:, forms.U]))
        v_left = grid(ops.trace_xL(states[:, forms.V]))
        v_bottom = grid(ops.trace_yB(states[:, forms.V]))
        t3 = tr.UB[:, 1:] - u_top[:, : ny - 1]
        t4 = tr.VR[: nx - 1] - v_left[1:]
        t5 = tr.VT[:, : ny - 1] - v_bottom[:, 1:]
        r[self.o_uv:self.o_qv] = t1.ravel()
        r[self.o_qv:self.o_ub] = t2.ravel()
        r[self.o_ub:self.o_vr] = t3.ravel()
        r[self.o_vr:self.o_vt] = t4.ravel()
        r[self.o_vt:] = t5.ravel()

        def norm(a):
            return float(np.max(np.abs(a))) if a.size else 0.0

        tnorms = {
            "uq": norm(t1), "zpf": norm(t2), "u_bottom": norm(t3),
            "v_right": norm(t4), "v_top": norm(t5),
        }
        return r, fs, tnorms

    def _c_blocks(self, fs):
        """Skeleton-row derivative blocks with respect to element fields.

        Returns per group an array (nsel, k1, 7, k1, k1) over the selected
        elements, laid out as rows x (field, x-mode, y-mode).
        """
        ops, k1 = self.ops, self.k1
        E = np.eye(k1)
        tau_v = self.params.tau_zpv_minus
        out = {}

        sel = self.group_sel["t1_L"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        blk[:, :, forms.U] = -np.einsum("a,fnb->fnab", ops.eL,
                                        ops.my(fs["uq_L_du"][sel]))
        blk[:, :, forms.Q] = -np.einsum("a,fnb->fnab", ops.eL,
                                        ops.my(fs["uq_L_dq"][sel]))
        out["t1_L"] = blk

        sel = self.group_sel["t1_R"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        blk[:, :, forms.U] = np.einsum("a,fnb->fnab", ops.eR,
                                       ops.my(fs["uq_R_du"][sel]))
        blk[:, :, forms.Q] = np.einsum("a,fnb->fnab", ops.eR,
                                       ops.my(fs["uq_R_dq"][sel]))
        out["t1_R"] = blk

        sel = self.group_sel["t2_L"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        kronL = np.einsum("a,nb->nab", ops.eL, E)
        blk[:, :, forms.Z] = -kronL
        blk[:, :, forms.P] = kronL
        blk[:, :, forms.U] = -np.einsum("a,fnb->fnab", ops.eL,
                                        ops.my(fs["g_L_d"]["u"][sel]))
        out["t2_L"] = blk

        sel = self.group_sel["t2_R"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        kronR = np.einsum("a,nb->nab", ops.eR, E)
        blk[:, :, forms.Z] = kronR
        blk[:, :, forms.P] = -kronR
        blk[:, :, forms.U] = np.einsum("a,fnb->fnab", ops.eR,
                                       ops.my(fs["g_R_d"]["u"][sel]))
        blk[:, :, forms.V] = -tau_v * kronR
        out["t2_R"] = blk

        sel = self.group_sel["t3_T"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        blk[:, :, forms.U] = -np.einsum("ma,b->mab", E, ops.fT)
        out["t3_T"] = blk

        sel = self.group_sel["t4_L"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        blk[:, :, forms.V] = -np.einsum("a,nb->nab", ops.eL, E)
        out["t4_L"] = blk

        sel = self.group_sel["t5_B"]
        blk = np.zeros((sel.size, k1, N_FIELDS, k1, k1))
        blk[:, :, forms.V] = -np.einsum("ma,b->mab", E, ops.fB)
        out["t5_B"] = blk
        return out

    def _d_values(self, fs):
        """Skeleton-row derivative blocks with respect to trace unknowns."""
        ops, nx, ny, k1 = self.ops, self.nx, self.ny, self.k1
        E = np.eye(k1)
        grid = lambda a: a.reshape(nx, ny, -1)
        nfv = (nx - 1) * ny

        def facepair(key_L, key_R):
            right_of_left = grid(fs[key_R])[: nx - 1].reshape(nfv, ops.nq)
            left_of_right = grid(fs[key_L])[1:].reshape(nfv, ops.nq)
            return right_of_left, left_of_right

        a, b = facepair("uq_L_dqhat", "uq_R_dqhat")
        d_t1 = ops.my(a - b)
        a, b = facepair("g_L_d_uhat_arr", "g_R_d_uhat_arr")
        d_t2 = ops.my(a - b)
        tau_v = self.params.tau_zpv_minus
        d_t2_vr = np.broadcast_to(tau_v * E, (nfv, k1, k1))
        eye_h = np.broadcast_to(E, (nx * (ny - 1), k1, k1))
        eye_v = np.broadcast_to(E, (nfv, k1, k1))
        return [d_t1, d_t2, d_t2_vr, eye_h, eye_v, eye_h]

    def jacobian_values(self, states, tr, dt, fs=None, linear_only=False,
                        prev_uv=None):
        """All Jacobian blocks, aligned with the precomputed scatter."""
        batch = self.gather_traces(tr, prev_uv if prev_uv is not None
                                   else tr.UV)
        A, B, fs = forms.batched_jacobian(
            self.ops, self.params, self.kappa, dt, states, batch,
            linear_only=linear_only, face_state=fs,
        )
        ne, nl, k1 = self.ne, self.n_local, self.k1
        zero = np.zeros((ne, self.ops.nq))
        fs = dict(fs)
        fs["g_L_d_uhat_arr"] = zero + fs["g_L_d"]["uhat"]
        fs["g_R_d_uhat_arr"] = zero + fs["g_R_d"]["uhat"]
        for key in ("uq_L_du", "uq_L_dq", "uq_R_du", "uq_R_dq",
                    "uq_L_dqhat", "uq_R_dqhat"):
            fs[key] = zero + fs[key]
        A = A.reshape(ne, nl, nl)
        Bf = {slot: B[slot].reshape(ne, nl, k1) for slot in TRACE_SLOTS}
        C = self._c_blocks(fs)
        D = self._d_values(fs)
        return A, Bf, C, D, fs

    def assemble_values(self, A, Bf, C, D):
        vals = [A.ravel()]
        for slot in TRACE_SLOTS:
            vals.append(Bf[slot][self.slot_sel[slot]].ravel())
        for group in C_GROUPS:
            vals.append(C[group].reshape(C[group].shape[0], self.k1,
                                         self.n_local).ravel())
        for blk in D:
            vals.append(np.asarray(blk).ravel())
        return np.concatenate(vals)

    def monolithic_matrix(self, A, Bf, C, D):
        vals = self.assemble_values(A, Bf, C, D)
        mat = sp.coo_matrix((vals, (self._rows, self._cols)),
                            shape=(self.n_total, self.n_total))
        return mat.tocsc()

    # -- linear solves -------------------------------------------------

    def solve_monolithic(self, A, Bf, C, D, rhs):
        mat = self.monolithic_matrix(A, Bf, C, D)
        try:
            lu = splu(mat)
        except RuntimeError as exc:
            raise SolverError(f"monolithic factorization failed: {exc}") from exc
        return lu.solve(rhs)

    def solve_condensed(self, A, Bf, C, D, rhs):
        """Eliminate element blocks, solve the trace Schur complement."""
        ne, nl, k1 = self.ne, self.n_local, self.k1
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError as exc:
            bad = [e for e in range(ne)
                   if abs(np.linalg.det(A[e])) < 1e-300]
            raise SolverError(
                f"singular element blocks at indices {bad[:5]}") from exc
        r_bulk = rhs[: self.n_bulk].reshape(ne, nl)
        r_trace = rhs[self.n_bulk:]
        if self.n_trace == 0:
            out = np.empty(self.n_total)
            out[: self.n_bulk] = np.einsum("eij,ej->ei", Ainv, r_bulk).reshape(-1)
            return out
        n_slots = len(TRACE_SLOTS)
        Ball = np.zeros((ne, nl, n_slots * k1))
        colbase = np.full((ne, n_slots), -1, dtype=int)
        for s, slot in enumerate(TRACE_SLOTS):
            sel = self.slot_sel[slot]
            Ball[sel, :, s * k1:(s + 1) * k1] = Bf[slot][sel]
            colbase[sel, s] = self.slot_base[slot][sel]
        Call = np.zeros((ne, len(C_GROUPS) * k1, nl))
        rowbase = np.full((ne, len(C_GROUPS)), -1, dtype=int)
        for g, group in enumerate(C_GROUPS):
            sel = self.group_sel[group]
            Call[sel, g * k1:(g + 1) * k1, :] = (
                C[group].reshape(sel.size, k1, nl))
            rowbase[sel, g] = self.row_base[group][sel]
        AinvB = Ainv @ Ball
        Ainvr = np.einsum("eij,ej->ei", Ainv, r_bulk)
        schur = Call @ AinvB           # (ne, n_rows, n_cols)
        srhs = np.einsum("eri,ei->er", Call, Ainvr)

        # scatter the Schur pieces onto trace dofs; bases of -1 mark
        # absent rows and Dirichlet columns
        ng = len(C_GROUPS)
        row_ok = rowbase >= 0
        col_ok = colbase >= 0
        trace_rows = rowbase[:, :, None] + np.arange(k1)[None, None, :]
        trace_cols = colbase[:, :, None] + np.arange(k1)[None, None, :]
        rr = np.broadcast_to(trace_rows[:, :, :, None, None],
                             (ne, ng, k1, n_slots, k1)).reshape(-1)
        cc = np.broadcast_to(trace_cols[:, None, None, :, :],
                             (ne, ng, k1, n_slots, k1)).reshape(-1)
        vv = -schur.reshape(ne, ng, k1, n_slots, k1).reshape(-1)
        keep = np.broadcast_to(
            row_ok[:, :, None, None, None] & col_ok[:, None, None, :, None],
            (ne, ng, k1, n_slots, k1)).reshape(-1)
        rows = [rr[keep] - self.n_bulk]
        cols = [cc[keep] - self.n_bulk]
        vals = [vv[keep]]
        for (name, rbase, cbase), blk in zip(self._d_pieces, D):
            r = (rbase[:, None, None] + np.arange(k1)[None, :, None])
            c = (cbase[:, None, None] + np.arange(k1)[None, None, :])
            rows.append(np.broadcast_to(r, blk.shape).reshape(-1) - self.n_bulk)
            cols.append(np.broadcast_to(c, blk.shape).reshape(-1) - self.n_bulk)
            vals.append(np.asarray(blk).ravel())
        S = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_trace, self.n_trace)).tocsc()
        rhs_S = r_trace.copy()
        flat_rows = trace_rows.reshape(-1)
        keep = np.broadcast_to(row_ok[:, :, None],
                               (ne, ng, k1)).reshape(-1)
        np.subtract.at(rhs_S, flat_rows[keep] - self.n_bulk,
                       srhs.reshape(-1)[keep])
        try:
            lu = splu(S)
        except RuntimeError as exc:
            raise SolverError(f"trace factorization failed: {exc}") from exc
        d_trace = lu.solve(rhs_S)
        # back substitution: dx = Ainv (r_bulk - B dlam) with the sign of
        # solving J dx = rhs
        lam_flat = np.zeros((ne, n_slots * k1))
        gcols = trace_cols.reshape(ne, n_slots * k1)
        valid = np.broadcast_to(col_ok[:, :, None],
                                (ne, n_slots, k1)).reshape(ne, n_slots * k1)
        lam_flat[valid] = d_trace[gcols[valid] - self.n_bulk]
        dx_bulk = Ainvr - np.einsum("eij,ej->ei", AinvB, lam_flat)
        out = np.empty(self.n_total)
        out[: self.n_bulk] = dx_bulk.reshape(-1)
        out[self.n_bulk:] = d_trace
        return out

    def solve_linear(self, A, Bf, C, D, rhs, method):
        if method == "monolithic":
            return self.solve_monolithic(A, Bf, C, D, rhs)
        return self.solve_condensed(A, Bf, C, D, rhs)

    # -- Newton --------------------------------------------------------

    def newton(self, states, tr, prev_u, prev_uv, dt, sources=None,
               options=None, linear_only=False):
        """Solve one implicit step in place; returns a NewtonResult.

        states and tr are the initial guess and are updated to the
        solution.  prev_u and prev_uv hold the previous time level.
        """
        opts = options or NewtonOptions()
        r, fs, tnorms = self.residual(states, tr, prev_u, prev_uv, dt,
                                      sources, linear_only)
        norm0 = float(np.max(np.abs(r)))
        target = opts.tol * max(1.0, norm0)
        history = [norm0]
        cur = norm0
        for it in range(opts.max_iter):
            if cur <= target:
                margin = self._margin(fs)
                return NewtonResult(True, it, history, tnorms, margin)
            A, Bf, C, D, fs = self.jacobian_values(
                states, tr, dt, fs=fs, linear_only=linear_only)
            delta = self.solve_linear(A, Bf, C, D, -r, opts.method)
            alpha = 1.0
            for halving in range(opts.max_halvings + 1):
                self._apply_update(states, tr, delta, alpha)
                r_new, fs_new, tnorms_new = self.residual(
                    states, tr, prev_u, prev_uv, dt, sources, linear_only)
                new_norm = float(np.max(np.abs(r_new)))
                if new_norm <= target or new_norm < cur or not np.isfinite(cur):
                    break
                self._apply_update(states, tr, delta, -alpha)
                if halving == opts.max_halvings:
                    raise NonConvergenceError(
                        f"line search stalled at residual {cur:.3e}",
                        history)
                alpha *= 0.5
            r, fs, tnorms, cur = r_new, fs_new, tnorms_new, new_norm
            history.append(cur)
        if cur <= target:
            margin = self._margin(fs)
            return NewtonResult(True, opts.max_iter, history, tnorms, margin)
        raise NonConvergenceError(
            f"no convergence in {opts.max_iter} iterations "
            f"(residual {cur:.3e}, target {target:.3e})", history)

    def _apply_update(self, states, tr, delta, alpha):
        states += alpha * delta[: self.n_bulk].reshape(states.shape)
        tr.add_free(delta[self.n_bulk:], alpha)

    def _margin(self, fs):
        u_hat = np.concatenate([fs["uhat_L"].ravel(), fs["uhat_R"].ravel()])
        u_own = np.concatenate([fs["u_L"].ravel(), fs["u_R"].ravel()])
        return forms.assumption_margin(self.params, self.kappa, u_hat, u_own)
