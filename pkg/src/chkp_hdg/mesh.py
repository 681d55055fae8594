"""Axis-aligned Cartesian meshes with oriented faces and boundary tags.

Elements are indexed (i, j) with 1 <= i <= nx, 1 <= j <= ny, element (i, j)
occupying (x_nodes[i-1], x_nodes[i]) x (y_nodes[j-1], y_nodes[j]).  Vertical
faces live on the lines x = x_nodes[i] (i = 0..nx) and are indexed by
(i, j) with j the 1-based row of the cell column they bound; horizontal
faces mirror this with (i, j), j = 0..ny.
"""

from dataclasses import dataclass

import numpy as np

INTERIOR = "interior"
LEFT = "left"
RIGHT = "right"
BOTTOM = "bottom"
TOP = "top"

VERTICAL = "vertical"
HORIZONTAL = "horizontal"


@dataclass(frozen=True)
class Domain2D:
    """Open rectangle (x_left, x_right) x (y_bottom, y_top)."""

    x_left: float
    x_right: float
    y_bottom: float
    y_top: float

    def __post_init__(self):
        if not self.x_left < self.x_right:
            raise ValueError("require x_left < x_right")
        if not self.y_bottom < self.y_top:
            raise ValueError("require y_bottom < y_top")

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def height(self) -> float:
        return self.y_top - self.y_bottom


@dataclass(frozen=True)
class Face:
    """One mesh face with its grid indices and boundary classification.

    For a vertical face, i in 0..nx names the node line x = x_nodes[i] and
    j in 1..ny the row.  For a horizontal face, i in 1..nx names the column
    and j in 0..ny the node line y = y_nodes[j].  elements holds the
    adjacent (i, j) element pairs, minus side first (left of a vertical
    face, below a horizontal one).
    """

    orientation: str
    i: int
    j: int
    boundary: str
    elements: tuple

    @property
    def is_boundary(self) -> bool:
        return self.boundary != INTERIOR


@dataclass(frozen=True)
class CartesianMesh:
    domain: Domain2D
    nx: int
    ny: int
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    h: float

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def hy(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    def cell_rect(self, i: int, j: int):
        """Bounding intervals ((x0, x1), (y0, y1)) of element (i, j)."""
        _check_element(self, i, j)
        return (
            (float(self.x_nodes[i - 1]), float(self.x_nodes[i])),
            (float(self.y_nodes[j - 1]), float(self.y_nodes[j])),
        )

    def elements(self):
        """All (i, j) element indices, column-major in i then j."""
        for i in range(1, self.nx + 1):
            for j in range(1, self.ny + 1):
                yield (i, j)


def build_mesh(domain: Domain2D, nx: int, ny: int) -> CartesianMesh:
    """Uniform nx-by-ny mesh of the domain."""
    if nx < 1 or ny < 1:
        raise ValueError("cell counts must be positive")
    x_nodes = np.linspace(domain.x_left, domain.x_right, nx + 1)
    y_nodes = np.linspace(domain.y_bottom, domain.y_top, ny + 1)
    h = max(np.diff(x_nodes).max(), np.diff(y_nodes).max())
    return CartesianMesh(domain, nx, ny, x_nodes, y_nodes, float(h))


def _check_element(mesh: CartesianMesh, i: int, j: int):
    if not (1 <= i <= mesh.nx and 1 <= j <= mesh.ny):
        raise IndexError(f"element ({i}, {j}) outside 1..{mesh.nx} x 1..{mesh.ny}")


def vertical_face(mesh: CartesianMesh, i: int, j: int) -> Face:
    """Face on the line x = x_nodes[i] bounding row j."""
    if not (0 <= i <= mesh.nx and 1 <= j <= mesh.ny):
        raise IndexError(f"vertical face ({i}, {j}) out of range")
    if i == 0:
        return Face(VERTICAL, i, j, LEFT, ((1, j),))
    if i == mesh.nx:
        return Face(VERTICAL, i, j, RIGHT, ((mesh.nx, j),))
    return Face(VERTICAL, i, j, INTERIOR, ((i, j), (i + 1, j)))


def horizontal_face(mesh: CartesianMesh, i: int, j: int) -> Face:
    """Face on the line y = y_nodes[j] bounding column i."""
    if not (1 <= i <= mesh.nx and 0 <= j <= mesh.ny):
        raise IndexError(f"horizontal face ({i}, {j}) out of range")
    if j == 0:
        return Face(HORIZONTAL, i, j, BOTTOM, ((i, 1),))
    if j == mesh.ny:
        return Face(HORIZONTAL, i, j, TOP, ((i, mesh.ny),))
    return Face(HORIZONTAL, i, j, INTERIOR, ((i, j), (i, j + 1)))


def all_faces(mesh: CartesianMesh):
    """Every face in the canonical (orientation, i, j) order."""
    faces = []
    for i in range(mesh.nx + 1):
        for j in range(1, mesh.ny + 1):
            faces.append(vertical_face(mesh, i, j))
    for i in range(1, mesh.nx + 1):
        for j in range(mesh.ny + 1):
            faces.append(horizontal_face(mesh, i, j))
    return faces


def element_faces(mesh: CartesianMesh, i: int, j: int):
    """The four faces of element (i, j) with outward normals.

    Returns ((face, normal), ...) ordered left, right, bottom, top with
    normals (-1, 0), (1, 0), (0, -1), (0, 1).
    """
    _check_element(mesh, i, j)
    return (
        (vertical_face(mesh, i - 1, j), (-1.0, 0.0)),
        (vertical_face(mesh, i, j), (1.0, 0.0)),
        (horizontal_face(mesh, i, j - 1), (0.0, -1.0)),
        (horizontal_face(mesh, i, j), (0.0, 1.0)),
    )


def face_neighbors(mesh: CartesianMesh, face: Face):
    """Adjacent elements as (minus, plus); a missing side is None.

    The minus side is the element left of a vertical face or below a
    horizontal one.
    """
    if face.orientation == VERTICAL:
        minus = (face.i, face.j) if face.i > 0 else None
        plus = (face.i + 1, face.j) if face.i < mesh.nx else None
    else:
        minus = (face.i, face.j) if face.j > 0 else None
        plus = (face.i, face.j + 1) if face.j < mesh.ny else None
    return minus, plus


def face_measure(mesh: CartesianMesh, face: Face) -> float:
    """Length of a face segment."""
    if face.orientation == VERTICAL:
        return float(mesh.y_nodes[face.j] - mesh.y_nodes[face.j - 1])
    return float(mesh.x_nodes[face.i] - mesh.x_nodes[face.i - 1])
