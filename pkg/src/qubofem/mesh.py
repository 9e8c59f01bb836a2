"""Finite element meshes, quadrature and kinematic matrices.

Supported element kinds are 2-node lines (``line2``, d=1) and bilinear
quadrilaterals (``quad4``, d=2).  Strain vectors use the full row-major
tensor flattening ``[eps]_{i*d+j} = eps_ij`` (not Voigt), so the gradient
matrix ``B`` of an element has ``d*d`` rows and ``d*n_nodes`` columns.

Units are mm for lengths throughout.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "QuadratureRule",
    "KinematicTables",
    "MeshError",
    "MeshQualityError",
    "build_line_mesh",
    "build_grid_mesh",
    "quadrature_rule",
    "kinematic_tables",
    "read_mesh",
    "write_mesh",
]

# reference (point, weight) data of the minimal Gauss rules used per kind
_GAUSS_1D_1PT = (np.array([[0.0]]), np.array([2.0]))
_G = 1.0 / np.sqrt(3.0)
_GAUSS_2D_2X2 = (
    np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]]),
    np.array([1.0, 1.0, 1.0, 1.0]),
)

ELEMENT_DIMENSION = {"line2": 1, "quad4": 2}
ELEMENT_NODES = {"line2": 2, "quad4": 4}


class MeshError(ValueError):
    """Invalid mesh definition (bad connectivity, bad sets, bad input)."""


class MeshQualityError(MeshError):
    """Degenerate element geometry (non-positive Jacobian)."""


@dataclass
class Mesh:
    """Nodes, connectivity and named boundary sets of a discretisation.

    Attributes
    ----------
    dimension : int
        Spatial dimension d (1 or 2).
    nodes : ndarray, shape (n_nodes, d)
        Node coordinates in mm.
    elements : ndarray, shape (n_elements, nodes_per_element)
        Ordered node indices per element.
    kind : str
        Element kind, ``line2`` or ``quad4``.
    node_sets : dict[str, ndarray]
        Named node sets (Dirichlet tagging).
    face_sets : dict[str, ndarray]
        Named (element, local_face) pairs (Neumann tagging).
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    kind: str
    node_sets: dict = field(default_factory=dict)
    face_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dimension)
        self.elements = np.asarray(self.elements, dtype=int)
        if self.kind not in ELEMENT_DIMENSION:
            raise MeshError(f"unknown element kind {self.kind!r}")
        if ELEMENT_DIMENSION[self.kind] != self.dimension:
            raise MeshError(
                f"element kind {self.kind!r} is {ELEMENT_DIMENSION[self.kind]}D, "
                f"mesh says dimension {self.dimension}"
            )
        if self.elements.ndim != 2 or self.elements.shape[1] != ELEMENT_NODES[self.kind]:
            raise MeshError(f"{self.kind!r} connectivity must have "
                            f"{ELEMENT_NODES[self.kind]} nodes per element")
        if self.elements.size and (self.elements.min() < 0
                                   or self.elements.max() >= self.n_nodes):
            raise MeshError("element connectivity references a missing node")
        for name, nset in self.node_sets.items():
            nset = np.asarray(nset, dtype=int)
            if nset.size and (nset.min() < 0 or nset.max() >= self.n_nodes):
                raise MeshError(f"node set {name!r} references a missing node")
            self.node_sets[name] = nset
        n_faces = ELEMENT_NODES[self.kind]  # faces per element == corner count
        for name, fset in self.face_sets.items():
            fset = np.asarray(fset, dtype=int).reshape(-1, 2)
            for e, f in fset:
                if not (0 <= e < self.n_elements):
                    raise MeshError(f"face set {name!r} references missing element {e}")
                if not (0 <= f < n_faces):
                    raise MeshError(f"face set {name!r} references invalid face {f}")
            self.face_sets[name] = fset

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_coords(self, e):
        """Coordinates of the nodes of element ``e``, shape (n_e, d)."""
        return self.nodes[self.elements[e]]

    def face_nodes(self, e, f):
        """Global node indices of local face ``f`` of element ``e``."""
        conn = self.elements[e]
        if self.kind == "line2":
            return conn[[f]]
        return conn[[f, (f + 1) % 4]]


@dataclass
class QuadratureRule:
    """Reference points and physical weights of the element quadrature.

    ``weights[e, q]`` already contains the Jacobian determinant, so sums of
    weights approximate physical integrals directly.
    """

    points_ref: np.ndarray       # (m, d) shared reference coordinates
    weights: np.ndarray          # (n_elements, m) physical weights
    weights_ref: np.ndarray      # (m,) reference weights

    @property
    def n_points(self):
        return self.points_ref.shape[0]


@dataclass
class KinematicTables:
    """Per-quadrature-point interpolation and gradient matrices.

    ``n_mats[e, q]`` maps elementary nodal displacements to the displacement
    at the point (d rows); ``b_mats[e, q]`` maps them to the flattened
    symmetric strain (d*d rows).  ``coords[e, q]`` holds the physical
    position of the point.
    """

    n_mats: np.ndarray   # (n_elements, m, d, d*n_e)
    b_mats: np.ndarray   # (n_elements, m, d*d, d*n_e)
    coords: np.ndarray   # (n_elements, m, d)


def shape_functions(kind, xi):
    """Shape function values and reference-coordinate gradients.

    Returns ``(N, dN)`` with ``N`` of shape (n_e,) and ``dN`` of shape
    (n_e, d) at the reference point ``xi``.
    """
    if kind == "line2":
        x = xi[0]
        n = np.array([0.5 * (1.0 - x), 0.5 * (1.0 + x)])
        dn = np.array([[-0.5], [0.5]])
        return n, dn
    if kind == "quad4":
        x, y = xi
        corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        n = 0.25 * (1.0 + corners[:, 0] * x) * (1.0 + corners[:, 1] * y)
        dn = 0.25 * np.column_stack([
            corners[:, 0] * (1.0 + corners[:, 1] * y),
            corners[:, 1] * (1.0 + corners[:, 0] * x),
        ])
        return n, dn
    raise MeshError(f"unknown element kind {kind!r}")


def build_line_mesh(length, n_elements):
    """Uniform 1D bar mesh on [0, length].

    Node 0 carries the Dirichlet set ``fixed``; the element face at
    x = length carries the Neumann set ``free_end``.
    """
    if length <= 0.0:
        raise MeshError(f"length must be positive, got {length}")
    if n_elements < 1:
        raise MeshError(f"need at least one element, got {n_elements}")
    nodes = np.linspace(0.0, length, n_elements + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return Mesh(
        dimension=1,
        nodes=nodes,
        elements=elements,
        kind="line2",
        node_sets={"fixed": np.array([0])},
        face_sets={"free_end": np.array([[n_elements - 1, 1]])},
    )


def build_grid_mesh(lx, ly, nx, ny):
    """Structured quad4 mesh of an lx-by-ly rectangle.

    Node sets: ``left`` (x=0), ``right`` (x=lx), ``corner`` (node at the
    origin).  The driving scenario fixes the left edge in x, pins the corner
    in y and prescribes the x-displacement of the right edge.
    """
    if lx <= 0.0 or ly <= 0.0:
        raise MeshError(f"side lengths must be positive, got {lx} x {ly}")
    if nx < 1 or ny < 1:
        raise MeshError(f"need at least one element per direction, got {nx} x {ny}")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])  # node id = j*(nx+1) + i

    elements = []
    for j in range(ny):
        for i in range(nx):
            n0 = j * (nx + 1) + i
            elements.append([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    elements = np.array(elements, dtype=int)

    all_ids = np.arange((nx + 1) * (ny + 1))
    left = all_ids[nodes[:, 0] == 0.0]
    right = all_ids[nodes[:, 0] == xs[-1]]
    right_faces = np.array([[j * nx + (nx - 1), 1] for j in range(ny)])
    return Mesh(
        dimension=2,
        nodes=nodes,
        elements=elements,
        kind="quad4",
        node_sets={"left": left, "right": right, "corner": np.array([0])},
        face_sets={"right": right_faces},
    )


def quadrature_rule(mesh):
    """Minimal Gauss rule per element kind: 1-point (line2), 2x2 (quad4)."""
    points_ref, weights_ref = _GAUSS_1D_1PT if mesh.kind == "line2" else _GAUSS_2D_2X2
    m = points_ref.shape[0]
    weights = np.empty((mesh.n_elements, m))
    for e in range(mesh.n_elements):
        xe = mesh.element_coords(e)
        for q in range(m):
            _, dn = shape_functions(mesh.kind, points_ref[q])
            jac = xe.T @ dn  # (d, d)
            det = float(np.linalg.det(jac))
            if det <= 0.0:
                raise MeshQualityError(
                    f"element {e} has non-positive Jacobian ({det:.3e}) "
                    f"at quadrature point {q}"
                )
            weights[e, q] = weights_ref[q] * det
    return QuadratureRule(points_ref=points_ref, weights=weights,
                          weights_ref=weights_ref)


def kinematic_tables(mesh, rule):
    """Assemble N and B matrices at every quadrature point.

    ``B`` rows follow the row-major tensor flattening: row i*d+j holds the
    symmetrised gradient component 0.5*(du_i/dx_j + du_j/dx_i).
    """
    d = mesh.dimension
    ne = ELEMENT_NODES[mesh.kind]
    m = rule.n_points
    n_mats = np.zeros((mesh.n_elements, m, d, d * ne))
    b_mats = np.zeros((mesh.n_elements, m, d * d, d * ne))
    coords = np.zeros((mesh.n_elements, m, d))
    for e in range(mesh.n_elements):
        xe = mesh.element_coords(e)
        for q in range(m):
            n, dn = shape_functions(mesh.kind, rule.points_ref[q])
            jac = xe.T @ dn
            det = float(np.linalg.det(jac))
            if det <= 0.0:
                raise MeshQualityError(
                    f"element {e} has non-positive Jacobian ({det:.3e}) "
                    f"at quadrature point {q}"
                )
            dndx = dn @ np.linalg.inv(jac)  # (n_e, d) physical gradients
            coords[e, q] = n @ xe
            for a in range(ne):
                for i in range(d):
                    n_mats[e, q, i, a * d + i] = n[a]
                for i in range(d):
                    for j in range(d):
                        row = i * d + j
                        b_mats[e, q, row, a * d + i] += 0.5 * dndx[a, j]
                        b_mats[e, q, row, a * d + j] += 0.5 * dndx[a, i]
    return KinematicTables(n_mats=n_mats, b_mats=b_mats, coords=coords)


# ---------------------------------------------------------------------------
# line-oriented text format
#
#   dimension <d>
#   nodes <count>
#   <x> [y]            (one line per node)
#   elements <kind> <count>
#   <n0> <n1> ...      (one line per element)
#   nodeset <name> <i> <i> ...
#   faceset <name> <elem> <face> <elem> <face> ...
#
# '#' starts a comment; blank lines are ignored.
# ---------------------------------------------------------------------------

def write_mesh(mesh, path_or_file):
    """Write a mesh in the plain text format described in the module docs."""
    if hasattr(path_or_file, "write"):
        _write_mesh_stream(mesh, path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            _write_mesh_stream(mesh, fh)


def _write_mesh_stream(mesh, fh):
    fh.write(f"dimension {mesh.dimension}\n")
    fh.write(f"nodes {mesh.n_nodes}\n")
    for xyz in mesh.nodes:
        fh.write(" ".join(repr(float(c)) for c in xyz) + "\n")
    fh.write(f"elements {mesh.kind} {mesh.n_elements}\n")
    for conn in mesh.elements:
        fh.write(" ".join(str(int(i)) for i in conn) + "\n")
    for name in sorted(mesh.node_sets):
        ids = " ".join(str(int(i)) for i in mesh.node_sets[name])
        fh.write(f"nodeset {name} {ids}\n")
    for name in sorted(mesh.face_sets):
        pairs = " ".join(f"{int(e)} {int(f)}" for e, f in mesh.face_sets[name])
        fh.write(f"faceset {name} {pairs}\n")


def read_mesh(path_or_file):
    """Parse the plain text mesh format; raises MeshError with line numbers."""
    if hasattr(path_or_file, "read"):
        lines = path_or_file.read().splitlines()
    else:
        with open(path_or_file) as fh:
            lines = fh.read().splitlines()

    tokens = []  # (line_number, fields)
    for i, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            tokens.append((i, text.split()))
    pos = 0

    def fail(lineno, msg):
        raise MeshError(f"line {lineno}: {msg}")

    def take(expect=None):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshError(f"unexpected end of file (expected {expect})")
        lineno, fields = tokens[pos]
        pos += 1
        if expect is not None and fields[0] != expect:
            fail(lineno, f"expected {expect!r}, got {fields[0]!r}")
        return lineno, fields

    lineno, fields = take("dimension")
    try:
        d = int(fields[1])
    except (IndexError, ValueError):
        fail(lineno, "dimension must be an integer")
    lineno, fields = take("nodes")
    try:
        n_nodes = int(fields[1])
    except (IndexError, ValueError):
        fail(lineno, "node count must be an integer")
    nodes = []
    for _ in range(n_nodes):
        lineno, fields = take()
        if len(fields) != d:
            fail(lineno, f"expected {d} coordinates, got {len(fields)}")
        try:
            nodes.append([float(c) for c in fields])
        except ValueError:
            fail(lineno, "coordinates must be numbers")
    lineno, fields = take("elements")
    if len(fields) != 3:
        fail(lineno, "expected 'elements <kind> <count>'")
    kind = fields[1]
    if kind not in ELEMENT_NODES:
        fail(lineno, f"unknown element kind {kind!r}")
    try:
        n_elements = int(fields[2])
    except ValueError:
        fail(lineno, "element count must be an integer")
    elements = []
    for _ in range(n_elements):
        lineno, fields = take()
        if len(fields) != ELEMENT_NODES[kind]:
            fail(lineno, f"expected {ELEMENT_NODES[kind]} node indices")
        try:
            elements.append([int(i) for i in fields])
        except ValueError:
            fail(lineno, "connectivity must be integers")
    node_sets, face_sets = {}, {}
    while pos < len(tokens):
        lineno, fields = take()
        if fields[0] == "nodeset":
            if len(fields) < 2:
                fail(lineno, "nodeset needs a name")
            try:
                node_sets[fields[1]] = np.array([int(i) for i in fields[2:]])
            except ValueError:
                fail(lineno, "nodeset entries must be integers")
        elif fields[0] == "faceset":
            if len(fields) < 2 or len(fields) % 2 != 0:
                fail(lineno, "faceset needs a name and (element, face) pairs")
            try:
                pairs = [int(i) for i in fields[2:]]
            except ValueError:
                fail(lineno, "faceset entries must be integers")
            face_sets[fields[1]] = np.array(pairs).reshape(-1, 2)
        else:
            fail(lineno, f"unknown directive {fields[0]!r}")
    try:
        return Mesh(dimension=d, nodes=np.array(nodes, dtype=float),
                    elements=np.array(elements, dtype=int).reshape(n_elements, -1),
                    kind=kind, node_sets=node_sets, face_sets=face_sets)
    except MeshError:
        raise
    except Exception as exc:  # malformed shapes etc.
        raise MeshError(str(exc)) from exc


def mesh_to_string(mesh):
    """Serialise a mesh to the text format, mainly for tests and docs."""
    buf = io.StringIO()
    _write_mesh_stream(mesh, buf)
    return buf.getvalue()
