"""Structured quad/hex meshes, boundary tagging and sensor grids.

Nodes are numbered lexicographically with x running fastest, then y, then z.
Cells store their corner nodes in VTK order (counter-clockwise bottom face,
then the top face for hexahedra).  Boundary faces store their nodes in tensor
order along the face's intrinsic axes, which is what the face quadrature
expects.

Mapped meshes (the annulus used by the tube family) keep the underlying box
in ``ref_nodes`` and a vectorised ``mapping`` from box to physical
coordinates; sensor selection and interpolation happen in box coordinates.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, NotFoundError

# (axis, side) -> tag.  "top" is always the upper end of the last axis.
_TAGS_2D = {(0, 0): "left", (0, 1): "right", (1, 0): "bottom", (1, 1): "top"}
_TAGS_3D = {
    (0, 0): "left", (0, 1): "right",
    (1, 0): "front", (1, 1): "back",
    (2, 0): "bottom", (2, 1): "top",
}

# Reference corner coordinates in VTK order.
QUAD_CORNERS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
HEX_CORNERS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)


@dataclass(frozen=True)
class BoundaryPart:
    """A set of exterior faces sharing one tag.

    ``normal_axis``/``side`` locate the parent box face in reference space;
    ``axes`` are the intrinsic (in-face) axes.
    """

    faces: np.ndarray
    normal_axis: int
    side: int
    axes: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    dim: int
    divisions: tuple[int, ...]
    extent: tuple[float, ...]
    nodes: np.ndarray
    cells: np.ndarray
    boundary: dict[str, BoundaryPart]
    ref_nodes: np.ndarray
    mapping: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    kind: str = "box"

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        """Nodes per axis."""
        return tuple(d + 1 for d in self.divisions)

    @property
    def cell_size(self) -> tuple[float, ...]:
        return tuple(e / d for e, d in zip(self.extent, self.divisions))

    @property
    def tags(self) -> list[str]:
        return list(self.boundary)

    @property
    def boundary_tags(self) -> dict[tuple[int, ...], str]:
        """Map from face (sorted node tuple) to its tag."""
        out = {}
        for tag, part in self.boundary.items():
            for face in part.faces:
                out[tuple(sorted(int(i) for i in face))] = tag
        return out

    def part(self, tag: str) -> BoundaryPart:
        try:
            return self.boundary[tag]
        except KeyError:
            raise NotFoundError(f"unknown boundary tag {tag!r}; known: {sorted(self.boundary)}") from None

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        ref_points = np.asarray(ref_points, dtype=float)
        if self.mapping is None:
            return ref_points.copy()
        return self.mapping(ref_points)

    def split_tag(self, tag: str, new_tag: str, predicate: Callable[[np.ndarray], np.ndarray]) -> "StructuredMesh":
        """Move faces of ``tag`` whose reference centroid satisfies ``predicate`` to ``new_tag``.

        Returns a new mesh; the receiver is left untouched.
        """
        part = self.part(tag)
        if new_tag in self.boundary:
            raise InvalidArgumentError(f"tag {new_tag!r} already exists")
        centroids = self.ref_nodes[part.faces].mean(axis=1)
        moved = np.asarray(predicate(centroids), dtype=bool)
        if not moved.any() or moved.all():
            raise InvalidArgumentError(f"split of {tag!r} must leave both parts non-empty")
        boundary = dict(self.boundary)
        boundary[tag] = replace(part, faces=_frozen(part.faces[~moved]))
        boundary[new_tag] = replace(part, faces=_frozen(part.faces[moved]))
        return replace(self, boundary=boundary)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _lex_index(shape: tuple[int, ...]) -> np.ndarray:
    """Array of node ids indexed [i, j(, k)] for x-fastest lexicographic ordering."""
    n = int(np.prod(shape))
    # reshape in reverse axis order then transpose so that x runs fastest
    return np.arange(n).reshape(shape[::-1]).transpose()


def build_structured_grid(dim: int, divisions, extent) -> StructuredMesh:
    """Uniform box mesh of bilinear quads (2D) or trilinear hexes (3D)."""
    if dim not in (2, 3):
        raise InvalidArgumentError(f"dim must be 2 or 3, got {dim}")
    divisions = tuple(int(d) for d in divisions)
    extent = tuple(float(e) for e in extent)
    if len(divisions) != dim or len(extent) != dim:
        raise InvalidArgumentError("divisions and extent need one entry per axis")
    if any(d < 1 for d in divisions):
        raise InvalidArgumentError(f"divisions must be >= 1, got {divisions}")
    if any(not e > 0 for e in extent):
        raise InvalidArgumentError(f"extent must be > 0, got {extent}")

    shape = tuple(d + 1 for d in divisions)
    axes = [np.linspace(0.0, e, n) for e, n in zip(extent, shape)]
    grids = np.meshgrid(*axes[::-1], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids[::-1]], axis=1)

    idx = _lex_index(shape)
    if dim == 2:
        a = idx[:-1, :-1]
        corners = [a, idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]]
        # flatten in node-lexicographic cell order (x fastest)
        cells = np.stack([c.T.ravel() for c in corners], axis=1)
    else:
        c000 = idx[:-1, :-1, :-1]
        corners = [
            c000, idx[1:, :-1, :-1], idx[1:, 1:, :-1], idx[:-1, 1:, :-1],
            idx[:-1, :-1, 1:], idx[1:, :-1, 1:], idx[1:, 1:, 1:], idx[:-1, 1:, 1:],
        ]
        cells = np.stack([c.transpose(2, 1, 0).ravel() for c in corners], axis=1)

    names = _TAGS_2D if dim == 2 else _TAGS_3D
    boundary = {}
    for (axis, side), tag in names.items():
        boundary[tag] = BoundaryPart(
            faces=_frozen(_box_faces(idx, axis, side)),
            normal_axis=axis,
            side=side,
            axes=tuple(a for a in range(dim) if a != axis),
        )
    nodes = _frozen(nodes)
    return StructuredMesh(
        dim=dim,
        divisions=divisions,
        extent=extent,
        nodes=nodes,
        cells=_frozen(cells.astype(np.int64)),
        boundary=boundary,
        ref_nodes=nodes,
    )


def _box_faces(idx: np.ndarray, axis: int, side: int) -> np.ndarray:
    plane = np.take(idx, -1 if side else 0, axis=axis)
    if plane.ndim == 1:
        return np.stack([plane[:-1], plane[1:]], axis=1)
    # tensor order over the two in-face axes, first in-face axis fastest
    corners = [plane[:-1, :-1], plane[1:, :-1], plane[:-1, 1:], plane[1:, 1:]]
    return np.stack([c.T.ravel() for c in corners], axis=1)


def annulus_mesh(divisions, r_inner: float, r_outer: float, theta_span: float = np.pi) -> StructuredMesh:
    """Polar-mapped 2D mesh of an annular sector starting at theta = 0.

    Reference axis 0 is radial (r - r_inner), axis 1 is the angle.  Tags:
    ``inner``, ``outer``, ``cut_start`` (theta = 0) and ``cut_end``.
    """
    if not 0 < r_inner < r_outer:
        raise InvalidArgumentError("need 0 < r_inner < r_outer")
    if not 0 < theta_span <= 2 * np.pi:
        raise InvalidArgumentError("theta_span must be in (0, 2 pi]")
    box = build_structured_grid(2, divisions, (r_outer - r_inner, theta_span))

    def mapping(ref):
        ref = np.asarray(ref, dtype=float)
        r = r_inner + ref[..., 0]
        th = ref[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    rename = {"left": "inner", "right": "outer", "bottom": "cut_start", "top": "cut_end"}
    boundary = {rename[k]: v for k, v in box.boundary.items()}
    return replace(
        box,
        nodes=_frozen(mapping(box.ref_nodes)),
        boundary=boundary,
        mapping=mapping,
        kind="annulus",
    )


def boundary_nodes(mesh: StructuredMesh, tag: str) -> np.ndarray:
    """Sorted node ids on faces carrying ``tag``."""
    return np.unique(mesh.part(tag).faces)


@dataclass(frozen=True, eq=False)
class SensorGrid:
    locations: np.ndarray
    ref_locations: np.ndarray
    source: str
    counts: tuple[int, ...]

    @property
    def count(self) -> int:
        return self.locations.shape[0]


def _spaced(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


def select_sensor_grid(mesh: StructuredMesh, per_axis_counts, source: str = "domain") -> SensorGrid:
    """Equally spaced sensor locations spanning the domain or one boundary part.

    A count of one on an axis places the single sensor at the midpoint.
    """
    counts = tuple(int(c) for c in np.atleast_1d(per_axis_counts))
    if any(c < 1 for c in counts):
        raise InvalidArgumentError(f"sensor counts must be >= 1, got {counts}")

    if source == "domain":
        if len(counts) != mesh.dim:
            raise InvalidArgumentError(f"domain sensors need {mesh.dim} counts, got {len(counts)}")
        axes = [_spaced(0.0, e, c) for e, c in zip(mesh.extent, counts)]
        fixed = {}
    else:
        part = mesh.part(source)
        if len(counts) != len(part.axes):
            raise InvalidArgumentError(
                f"boundary {source!r} needs {len(part.axes)} counts, got {len(counts)}"
            )
        ref = mesh.ref_nodes[np.unique(part.faces)]
        axes = [_spaced(ref[:, a].min(), ref[:, a].max(), c) for a, c in zip(part.axes, counts)]
        fixed = {part.normal_axis: mesh.extent[part.normal_axis] if part.side else 0.0}

    grids = np.meshgrid(*axes[::-1], indexing="ij")
    pts = np.stack([g.ravel() for g in grids[::-1]], axis=1)
    ref = np.empty((pts.shape[0], mesh.dim))
    free = [a for a in range(mesh.dim) if a not in fixed]
    ref[:, free] = pts
    for a, v in fixed.items():
        ref[:, a] = v
    return SensorGrid(
        locations=_frozen(mesh.to_physical(ref)),
        ref_locations=_frozen(ref),
        source=source,
        counts=counts,
    )


def interpolation_matrix(mesh: StructuredMesh, ref_points: np.ndarray) -> sp.csr_matrix:
    """Sparse [n_points, n_nodes] operator evaluating nodal fields by multilinear interpolation.

    Points are given in reference (box) coordinates, which makes this the
    isoparametric interpolation on mapped meshes too.
    """
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    h = np.array(mesh.cell_size)
    div = np.array(mesh.divisions)
    s = ref_points / h
    cell = np.clip(np.floor(s).astype(int), 0, div - 1)
    local = s - cell
    if np.any(local < -1e-9) or np.any(local > 1 + 1e-9):
        raise InvalidArgumentError("interpolation point outside the mesh")
    shape = mesh.shape
    strides = np.cumprod((1,) + shape[:-1])
    rows, cols, vals = [], [], []
    for offs in itertools.product((0, 1), repeat=mesh.dim):
        offs = np.array(offs)
        w = np.prod(np.where(offs == 1, local, 1.0 - local), axis=1)
        node = ((cell + offs) * strides).sum(axis=1)
        rows.append(np.arange(len(ref_points)))
        cols.append(node)
        vals.append(w)
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(ref_points), mesh.n_nodes),
    )
    return m.tocsr()


def sensor_matrix(mesh: StructuredMesh, grid: SensorGrid) -> sp.csr_matrix:
    return interpolation_matrix(mesh, grid.ref_locations)
