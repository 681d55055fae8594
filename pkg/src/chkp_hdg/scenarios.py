"""Exact solutions, boundary data, and source terms for the built-in runs.

Three scenarios are provided: a manufactured smooth solution on (0, 2pi)^2
used for convergence studies, a traveling peakon on (-1, 1)^2, and a
decaying bump with homogeneous boundary data used to observe energy decay.

Fields follow the first-order splitting of the evolution equation: q = u_x,
s = u_y, v is the x-primitive of u_y, p = (u q)_x, r = -u_t, z = r_x.  The
manufactured run anchors its primitive at the right boundary, v(x_R) = 0.
The peakon run takes its primitive from the decaying whole-space solution,
for which v = u; all its boundary data are traces of the traveling wave.
"""

from dataclasses import dataclass

import numpy as np

from . import fem, mesh

MMS = "mms"
PEAKON = "peakon"
ENERGY_DECAY = "energy_decay"

KINDS = (MMS, PEAKON, ENERGY_DECAY)

# data allowed on each boundary segment: u is Dirichlet everywhere except
# the top, q only on the vertical boundaries, v on the right and top
_DATUM_FACES = {
    "u": (mesh.LEFT, mesh.RIGHT, mesh.BOTTOM),
    "q": (mesh.LEFT, mesh.RIGHT),
    "v": (mesh.RIGHT, mesh.TOP),
}


@dataclass(frozen=True)
class Scenario:
    kind: str
    domain: mesh.Domain2D
    kappa: float
    t_final: float
    speed: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")


def mms_scenario(t_final: float = 1.0) -> Scenario:
    domain = mesh.Domain2D(0.0, 2.0 * np.pi, 0.0, 2.0 * np.pi)
    return Scenario(MMS, domain, -0.5, t_final)


def peakon_scenario(t_final: float = 1.0, speed: float = 1.0) -> Scenario:
    domain = mesh.Domain2D(-1.0, 1.0, -1.0, 1.0)
    return Scenario(PEAKON, domain, -0.5, t_final, speed)


def energy_decay_scenario(t_final: float = 0.2) -> Scenario:
    domain = mesh.Domain2D(-1.0, 1.0, -1.0, 1.0)
    return Scenario(ENERGY_DECAY, domain, -0.5, t_final)


def exact_fields(scenario: Scenario, x, y, t: float) -> dict:
    """Closed-form fields of the scenario at points (x, y) and time t.

    Returns a dict with keys u, q, s, v; the manufactured scenario also
    carries p, z, r.  The energy-decay run has no closed-form solution.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if scenario.kind == MMS:
        decay = np.exp(-t)
        sx, cx = np.sin(x), np.cos(x)
        sy, cy = np.sin(y), np.cos(y)
        u = decay * sx * sy
        return {
            "u": u,
            "q": decay * cx * sy,
            "s": decay * sx * cy,
            "v": decay * cy * (1.0 - cx),
            "p": decay**2 * np.cos(2.0 * x) * sy**2,
            "z": decay * cx * sy,
            "r": u,
        }
    if scenario.kind == PEAKON:
        c = scenario.speed
        xi = x + y - c * t
        u = c * np.exp(-np.abs(xi))
        slope = -np.sign(xi) * u
        return {"u": u, "q": slope, "s": slope, "v": u}
    raise ValueError(f"scenario {scenario.kind!r} has no closed-form solution")


def mms_source(x, y, t: float, kappa: float):
    """Source for the r-equation making the manufactured fields exact."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    decay = np.exp(-t)
    sx, cx = np.sin(x), np.cos(x)
    sy = np.sin(y)
    return (
        2.0 * decay * sx * sy
        - 2.0 * kappa * decay * cx * sy
        - 3.0 * decay**2 * np.sin(2.0 * x) * sy**2
        + decay * sy * (1.0 - cx)
    )


def initial_condition(scenario: Scenario):
    """The initial surface u0(x, y) of a scenario."""
    if scenario.kind == ENERGY_DECAY:
        return energy_decay_initial()
    return lambda x, y: exact_fields(scenario, x, y, 0.0)["u"]


def energy_decay_initial():
    """Compactly supported bump on (-1, 1)^2, flat at the boundary."""

    def u0(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.cos(0.5 * np.pi * x) ** 2 * np.cos(0.5 * np.pi * y) ** 2

    return u0


def boundary_function(scenario: Scenario, boundary: str, datum: str, t: float):
    """Closed-form boundary datum as a function of the face coordinate.

    boundary names a domain side (mesh.LEFT/RIGHT/BOTTOM/TOP); datum is
    "u", "q", or "v".  The returned callable takes y on vertical sides and
    x on horizontal ones.  Requesting a datum the scheme does not prescribe
    on that side is an error.
    """
    if datum not in _DATUM_FACES:
        raise ValueError(f"unknown datum {datum!r}")
    if boundary not in _DATUM_FACES[datum]:
        raise ValueError(f"datum {datum!r} is not prescribed on {boundary!r}")
    if scenario.kind == ENERGY_DECAY:
        return lambda s: np.zeros_like(np.asarray(s, dtype=float))
    domain = scenario.domain
    if boundary in (mesh.LEFT, mesh.RIGHT):
        x0 = domain.x_left if boundary == mesh.LEFT else domain.x_right
        return lambda s: exact_fields(scenario, np.full_like(
            np.asarray(s, dtype=float), x0), s, t)[datum]
    y0 = domain.y_bottom if boundary == mesh.BOTTOM else domain.y_top
    return lambda s: exact_fields(scenario, s, np.full_like(
        np.asarray(s, dtype=float), y0), t)[datum]


def boundary_values(
    scenario: Scenario,
    msh: mesh.CartesianMesh,
    face: mesh.Face,
    datum: str,
    t: float,
    k: int,
) -> np.ndarray:
    """P_k coefficients of a boundary datum on one face, by L2 projection."""
    if not face.is_boundary:
        raise ValueError("boundary data requested on an interior face")
    g = boundary_function(scenario, face.boundary, datum, t)
    if face.orientation == mesh.VERTICAL:
        interval = (float(msh.y_nodes[face.j - 1]), float(msh.y_nodes[face.j]))
    else:
        interval = (float(msh.x_nodes[face.i - 1]), float(msh.x_nodes[face.i]))
    return fem.face_project(g, interval, k)
