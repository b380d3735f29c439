"""Quadrature and shape-function kernels for bilinear quads / trilinear hexes.

Everything is vectorised over cells: arrays are shaped ``[cell, qp, ...]``.
Results are cached per mesh object.
"""
from __future__ import annotations

import itertools
import weakref
from dataclasses import dataclass

import numpy as np

from ..errors import AssemblyError
from ..mesh import HEX_CORNERS, QUAD_CORNERS, StructuredMesh

GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _gauss_points(dim: int) -> np.ndarray:
    return np.array(list(itertools.product(GAUSS_2, repeat=dim)))[:, ::-1]


def shape_functions(corners: np.ndarray, xi: np.ndarray):
    """Multilinear shape functions and reference gradients.

    ``corners[a]`` are the +-1 reference corners, ``xi[q]`` reference points.
    Returns ``N[q, a]`` and ``dN[q, a, j]``.
    """
    dim = corners.shape[1]
    fac = 0.5 * (1.0 + corners[None, :, :] * xi[:, None, :])  # [q, a, j]
    N = fac.prod(axis=2)
    dN = np.empty(fac.shape)
    for j in range(dim):
        others = np.delete(fac, j, axis=2).prod(axis=2)
        dN[:, :, j] = 0.5 * corners[None, :, j] * others
    return N, dN


@dataclass(frozen=True)
class CellQuadrature:
    N: np.ndarray        # [q, a]
    dNdx: np.ndarray     # [c, q, a, i]
    wdet: np.ndarray     # [c, q]
    xq: np.ndarray       # [c, q, d] physical quadrature points


@dataclass(frozen=True)
class FaceQuadrature:
    faces: np.ndarray    # [f, a] node ids
    N: np.ndarray        # [q, a]
    wdet: np.ndarray     # [f, q]
    xq: np.ndarray       # [f, q, d]


_cell_cache: "weakref.WeakKeyDictionary[StructuredMesh, CellQuadrature]" = weakref.WeakKeyDictionary()
_face_cache: "weakref.WeakKeyDictionary[StructuredMesh, dict]" = weakref.WeakKeyDictionary()


def cell_quadrature(mesh: StructuredMesh) -> CellQuadrature:
    cached = _cell_cache.get(mesh)
    if cached is not None:
        return cached
    corners = QUAD_CORNERS if mesh.dim == 2 else HEX_CORNERS
    xi = _gauss_points(mesh.dim)
    N, dN = shape_functions(corners, xi)
    X = mesh.nodes[mesh.cells]                         # [c, a, i]
    J = np.einsum("cai,qaj->cqij", X, dN)              # dx_i / dxi_j
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = int(np.argwhere(det <= 0)[0, 0])
        raise AssemblyError(f"cell {bad} has a non-positive Jacobian determinant")
    invJ = np.linalg.inv(J)                            # dxi_j / dx_i  as [c, q, j, i]
    dNdx = np.einsum("qaj,cqji->cqai", dN, invJ)
    xq = np.einsum("qa,cai->cqi", N, X)
    out = CellQuadrature(N=N, dNdx=dNdx, wdet=det, xq=xq)
    _cell_cache[mesh] = out
    return out


def face_quadrature(mesh: StructuredMesh, tag: str) -> FaceQuadrature:
    per_mesh = _face_cache.setdefault(mesh, {})
    if tag in per_mesh:
        return per_mesh[tag]
    faces = mesh.part(tag).faces
    fdim = mesh.dim - 1
    # face nodes are in tensor order: first in-face axis fastest
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=fdim)))[:, ::-1]
    xi = _gauss_points(fdim)
    N, dN = shape_functions(corners, xi)
    X = mesh.nodes[faces]                              # [f, a, i]
    T = np.einsum("fai,qaj->fqij", X, dN)              # tangents as columns
    if fdim == 1:
        wdet = np.linalg.norm(T[..., 0], axis=-1)
    else:
        wdet = np.linalg.norm(np.cross(T[..., 0], T[..., 1]), axis=-1)
    xq = np.einsum("qa,fai->fqi", N, X)
    out = FaceQuadrature(faces=faces, N=N, wdet=wdet, xq=xq)
    per_mesh[tag] = out
    return out
