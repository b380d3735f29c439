"""Sparse assembly of the coupled and mechanics-only systems (implicit Euler).

Unknown ordering is block-wise: displacement dofs first (node-interleaved,
``node * dim + component``), then one scalar dof per node for the coupled
field.  Dirichlet conditions are removed by symmetric row/column elimination
with the usual right-hand-side correction.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import AssemblyError, InvalidArgumentError
from ..mesh import StructuredMesh, boundary_nodes
from .element import cell_quadrature, face_quadrature
from .loads import LoadSpec
from .materials import PoroMaterial, ThermoMaterial
from .state import TransientState


# ------------------------------------------------------------------ operators

@dataclass(frozen=True)
class Operators:
    """Material-independent global matrices of one mesh."""

    K_lam: sp.csr_matrix   # int lam * div(w) div(u)
    K_mu: sp.csr_matrix    # int mu * (grad w : grad u + grad w : grad u^T)
    C: sp.csr_matrix       # int div(w) * phi   [n_u, n_n]
    M: sp.csr_matrix       # int phi_a phi_b
    L: sp.csr_matrix       # int grad phi_a . grad phi_b


_op_cache: "weakref.WeakKeyDictionary[StructuredMesh, Operators]" = weakref.WeakKeyDictionary()


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    m.sum_duplicates()
    return m


def operators(mesh: StructuredMesh) -> Operators:
    cached = _op_cache.get(mesh)
    if cached is not None:
        return cached
    q = cell_quadrature(mesh)
    d = mesh.dim
    nn = mesh.n_nodes
    nu = nn * d
    dN, N, w = q.dNdx, q.N, q.wdet
    nen = N.shape[1]

    klam = np.einsum("cq,cqai,cqbj->caibj", w, dN, dN)
    gg = np.einsum("cq,cqak,cqbk->cab", w, dN, dN)
    kmu = np.einsum("cab,ij->caibj", gg, np.eye(d)) + np.einsum("cq,cqaj,cqbi->caibj", w, dN, dN)
    cpl = np.einsum("cq,cqai,qb->caib", w, dN, N)
    mass = np.einsum("cq,qa,qb->cab", w, N, N)

    udof = (mesh.cells[:, :, None] * d + np.arange(d)[None, None, :]).reshape(-1, nen * d)
    ur = np.repeat(udof[:, :, None], nen * d, axis=2)
    uc = np.repeat(udof[:, None, :], nen * d, axis=1)
    sr = np.repeat(mesh.cells[:, :, None], nen, axis=2)
    sc = np.repeat(mesh.cells[:, None, :], nen, axis=1)
    cr = np.repeat(udof[:, :, None], nen, axis=2)
    cc = np.repeat(mesh.cells[:, None, :], nen * d, axis=1)

    shp = (-1, nen * d, nen * d)
    ops = Operators(
        K_lam=_scatter(ur, uc, klam.reshape(shp), (nu, nu)),
        K_mu=_scatter(ur, uc, kmu.reshape(shp), (nu, nu)),
        C=_scatter(cr, cc, cpl.reshape(-1, nen * d, nen), (nu, nn)),
        M=_scatter(sr, sc, mass, (nn, nn)),
        L=_scatter(sr, sc, gg, (nn, nn)),
    )
    _op_cache[mesh] = ops
    return ops


def stiffness(mesh: StructuredMesh, lam: float, mu: float) -> sp.csr_matrix:
    ops = operators(mesh)
    return (lam * ops.K_lam + mu * ops.K_mu).tocsr()


def element_stiffness(mesh: StructuredMesh, cell: int, lam: float, mu: float) -> np.ndarray:
    """Dense elasticity matrix of one cell, dofs ordered (node, component)."""
    q = cell_quadrature(mesh)
    dN, w = q.dNdx[cell], q.wdet[cell]
    d = mesh.dim
    klam = np.einsum("q,qai,qbj->aibj", w, dN, dN)
    gg = np.einsum("q,qak,qbk->ab", w, dN, dN)
    kmu = np.einsum("ab,ij->aibj", gg, np.eye(d)) + np.einsum("q,qaj,qbi->aibj", w, dN, dN)
    n = dN.shape[1] * d
    return (lam * klam + mu * kmu).reshape(n, n)


# ------------------------------------------------------------------ load vectors

def body_vector(mesh: StructuredMesh, fn, t: float) -> np.ndarray:
    q = cell_quadrature(mesh)
    val = np.asarray(fn(q.xq, t), dtype=float)                 # [c, q, d]
    fe = np.einsum("cq,qa,cqi->cai", q.wdet, q.N, val)
    out = np.zeros((mesh.n_nodes, mesh.dim))
    np.add.at(out, mesh.cells, fe)
    return out.ravel()


def scalar_source_vector(mesh: StructuredMesh, fn, t: float) -> np.ndarray:
    q = cell_quadrature(mesh)
    val = np.asarray(fn(q.xq, t), dtype=float)                 # [c, q]
    fe = np.einsum("cq,qa,cq->ca", q.wdet, q.N, np.broadcast_to(val, q.wdet.shape))
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells, fe)
    return out


def gradient_source_vector(mesh: StructuredMesh, vec) -> np.ndarray:
    """int grad(phi_a) . vec for a constant vector."""
    q = cell_quadrature(mesh)
    fe = np.einsum("cq,cqai,i->ca", q.wdet, q.dNdx, np.asarray(vec, dtype=float))
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells, fe)
    return out


def face_vector(mesh: StructuredMesh, tag: str, fn, t: float, components: int = 0) -> np.ndarray:
    """Boundary integral of a scalar (components=0) or vector field against the shape functions."""
    fq = face_quadrature(mesh, tag)
    val = np.asarray(fn(fq.xq, t), dtype=float)
    if components:
        fe = np.einsum("fq,qa,fqi->fai", fq.wdet, fq.N, val)
        out = np.zeros((mesh.n_nodes, components))
        np.add.at(out, fq.faces, fe)
        return out.ravel()
    fe = np.einsum("fq,qa,fq->fa", fq.wdet, fq.N, np.broadcast_to(val, fq.wdet.shape))
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, fq.faces, fe)
    return out


def mechanical_rhs(mesh: StructuredMesh, loads: LoadSpec, t: float) -> np.ndarray:
    f = np.zeros(mesh.n_nodes * mesh.dim)
    if loads.body_force is not None:
        f += body_vector(mesh, loads.body_force, t)
    for tag, fn in loads.traction.items():
        f += face_vector(mesh, tag, fn, t, components=mesh.dim)
    return f


# ------------------------------------------------------------------ systems

@dataclass
class DofMap:
    n_total: int
    fixed: np.ndarray
    fixed_values: np.ndarray
    free: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.ones(self.n_total, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.empty(self.n_total)
        x[self.free] = x_free
        x[self.fixed] = self.fixed_values
        return x

    @classmethod
    def unconstrained(cls, n: int) -> "DofMap":
        return cls(n, np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass(eq=False)
class SparseSystem:
    """Constrained linear system plus the bookkeeping to expand its solution."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    symmetric: bool = False
    n_dim: int = 0
    n_nodes: int = 0
    blocks: tuple[str, ...] = ()
    full_matrix: sp.csr_matrix | None = None
    full_rhs: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        """Assembled size before constraint elimination."""
        return self.dofmap.n_total

    @classmethod
    def from_matrix(cls, matrix, rhs, symmetric=None) -> "SparseSystem":
        matrix = sp.csr_matrix(matrix, dtype=float)
        rhs = np.asarray(rhs, dtype=float)
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != rhs.shape[0]:
            raise InvalidArgumentError(f"system shapes {matrix.shape} / {rhs.shape} disagree")
        if symmetric is None:
            symmetric = abs(matrix - matrix.T).max() <= 1e-14 * max(abs(matrix).max(), 1.0)
        return cls(matrix, rhs, DofMap.unconstrained(rhs.shape[0]), bool(symmetric))


def _collect_dirichlet(mesh, loads: LoadSpec, t: float, with_z: bool, z_offset: int):
    d = mesh.dim
    values: dict[int, float] = {}
    comp = {"ux": 0, "uy": 1, "uz": 2}
    for bc in loads.dirichlet:
        if bc.field == "z" and not with_z:
            continue
        nodes = boundary_nodes(mesh, bc.tag)
        v = bc.evaluate(mesh.nodes[nodes], t, d)
        if bc.field == "u":
            dofs = (nodes[:, None] * d + np.arange(d)).ravel()
            v = v.ravel()
        elif bc.field == "z":
            dofs = z_offset + nodes
        else:
            c = comp[bc.field]
            if c >= d:
                raise InvalidArgumentError(f"field {bc.field} does not exist in {d}D")
            dofs = nodes * d + c
        values.update(zip(dofs.tolist(), v.tolist()))
    fixed = np.array(sorted(values), dtype=np.int64)
    return fixed, np.array([values[i] for i in fixed], dtype=float)


_MODE_NAMES_2D = ("translation along x", "translation along y", "rotation about z")
_MODE_NAMES_3D = ("translation along x", "translation along y", "translation along z",
                  "rotation about x", "rotation about y", "rotation about z")


def _check_rigid_modes(mesh: StructuredMesh, fixed_u: np.ndarray):
    """Raise if some rigid-body displacement survives the Dirichlet conditions."""
    d = mesh.dim
    x = mesh.nodes - mesh.nodes.mean(axis=0)
    nn = mesh.n_nodes
    modes = []
    for i in range(d):
        m = np.zeros((nn, d))
        m[:, i] = 1.0
        modes.append(m.ravel())
    if d == 2:
        modes.append(np.stack([-x[:, 1], x[:, 0]], axis=1).ravel())
        names = _MODE_NAMES_2D
    else:
        z = np.zeros(nn)
        modes += [np.stack([z, -x[:, 2], x[:, 1]], axis=1).ravel(),
                  np.stack([x[:, 2], z, -x[:, 0]], axis=1).ravel(),
                  np.stack([-x[:, 1], x[:, 0], z], axis=1).ravel()]
        names = _MODE_NAMES_3D
    R = np.stack(modes, axis=1)
    R /= np.linalg.norm(R, axis=0)
    Rc = R[fixed_u]
    if Rc.shape[0] == 0:
        raise AssemblyError(f"singular system: unconstrained {names[0]} (no displacement Dirichlet conditions)")
    _, s, vt = np.linalg.svd(Rc, full_matrices=True)
    s_full = np.zeros(R.shape[1])
    s_full[: len(s)] = s
    tol = 1e-10 * np.sqrt(R.shape[0])
    weak = np.flatnonzero(s_full <= tol)
    if weak.size:
        v = vt[weak[0]]
        raise AssemblyError(f"singular system: unconstrained rigid-body mode ({names[int(np.argmax(np.abs(v)))]})")


def _constrain(A: sp.csr_matrix, b: np.ndarray, fixed, values, **meta) -> SparseSystem:
    dm = DofMap(A.shape[0], fixed, values)
    A = A.tocsr()
    rhs = b[dm.free] - A[dm.free][:, dm.fixed] @ values if fixed.size else b[dm.free]
    Aff = A[dm.free][:, dm.free].tocsr() if fixed.size else A
    return SparseSystem(Aff, np.asarray(rhs, dtype=float), dm, full_matrix=A, full_rhs=b, **meta)


def _check_state(mesh, state: TransientState, dt: float):
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    if state.u.shape != (mesh.n_nodes, mesh.dim) or state.z.shape != (mesh.n_nodes,):
        raise InvalidArgumentError("state fields do not match the mesh")


def assemble_thermoelastic_monolithic(mesh, mat: ThermoMaterial, state_n: TransientState,
                                      loads: LoadSpec, dt: float) -> SparseSystem:
    """Implicit-Euler system for (u, T) at t_{n+1} = t_n + dt.

    ``z`` carries the absolute temperature; the thermal strain uses T - T0.
    """
    _check_state(mesh, state_n, dt)
    loads.validate(mesh)
    ops = operators(mesh)
    t = state_n.time + dt
    K = stiffness(mesh, mat.lam, mat.mu)
    beta = mat.beta
    Ctm = (mat.heat_capacity / dt) * ops.M + mat.k_cond * ops.L
    A = sp.bmat([[K, -beta * ops.C],
                 [(beta * mat.t_ref / dt) * ops.C.T, Ctm]], format="csr")
    nn = mesh.n_nodes
    b_u = mechanical_rhs(mesh, loads, t) - beta * (ops.C @ np.full(nn, mat.t_ref))
    b_t = (mat.heat_capacity / dt) * (ops.M @ state_n.z) + (beta * mat.t_ref / dt) * (ops.C.T @ state_n.u.ravel())
    if loads.heat_source is not None:
        b_t += scalar_source_vector(mesh, loads.heat_source, t)
    for tag, fn in loads.boundary_heat_flux.items():
        b_t -= face_vector(mesh, tag, fn, t)
    fixed, vals = _collect_dirichlet(mesh, loads, t, True, nn * mesh.dim)
    _check_rigid_modes(mesh, fixed[fixed < nn * mesh.dim])
    return _constrain(A, np.concatenate([b_u, b_t]), fixed, vals, symmetric=False,
                      n_dim=mesh.dim, n_nodes=nn, blocks=("u", "z"))


def assemble_poroelastic_monolithic(mesh, mat: PoroMaterial, state_n: TransientState,
                                    loads: LoadSpec, dt: float) -> SparseSystem:
    """Implicit-Euler system for (u, p) at t_{n+1} = t_n + dt."""
    _check_state(mesh, state_n, dt)
    loads.validate(mesh)
    ops = operators(mesh)
    t = state_n.time + dt
    a = mat.biot_alpha
    K = stiffness(mesh, mat.lam, mat.mu)
    Cpp = (mat.biot_modulus_inv / dt) * ops.M + mat.mobility * ops.L
    A = sp.bmat([[K, -a * ops.C],
                 [(a / dt) * ops.C.T, Cpp]], format="csr")
    nn = mesh.n_nodes
    b_u = mechanical_rhs(mesh, loads, t)
    b_p = (mat.biot_modulus_inv / dt) * (ops.M @ state_n.z) + (a / dt) * (ops.C.T @ state_n.u.ravel())
    b_p += _fluid_rhs(mesh, mat, loads, t)
    fixed, vals = _collect_dirichlet(mesh, loads, t, True, nn * mesh.dim)
    _check_rigid_modes(mesh, fixed[fixed < nn * mesh.dim])
    return _constrain(A, np.concatenate([b_u, b_p]), fixed, vals, symmetric=False,
                      n_dim=mesh.dim, n_nodes=nn, blocks=("u", "z"))


def _fluid_rhs(mesh, mat: PoroMaterial, loads: LoadSpec, t: float) -> np.ndarray:
    b = np.zeros(mesh.n_nodes)
    if mat.gravity_dir is not None:
        b -= gradient_source_vector(mesh, mat.hydraulic_conductivity * np.asarray(mat.gravity_dir))
    for tag, fn in loads.boundary_fluid_flux.items():
        b -= face_vector(mesh, tag, fn, t)
    if loads.fluid_source is not None:
        b += scalar_source_vector(mesh, loads.fluid_source, t)
    return b


def assemble_mechanics_only(mesh, mat, state_n: TransientState, prescribed_z_next: np.ndarray,
                            loads: LoadSpec, dt: float) -> SparseSystem:
    """Symmetric displacement-only system with the coupled field moved to the right-hand side."""
    _check_state(mesh, state_n, dt)
    loads.validate(mesh)
    z = np.asarray(prescribed_z_next, dtype=float)
    if z.shape != (mesh.n_nodes,):
        raise InvalidArgumentError(f"prescribed field needs one value per node, got {z.shape}")
    ops = operators(mesh)
    t = state_n.time + dt
    K = stiffness(mesh, mat.lam, mat.mu)
    b = mechanical_rhs(mesh, loads, t)
    if isinstance(mat, ThermoMaterial):
        b = b + mat.beta * (ops.C @ (z - mat.t_ref))
    elif isinstance(mat, PoroMaterial):
        b = b + mat.biot_alpha * (ops.C @ z)
    else:
        raise InvalidArgumentError(f"unsupported material {type(mat).__name__}")
    fixed, vals = _collect_dirichlet(mesh, loads, t, False, 0)
    _check_rigid_modes(mesh, fixed)
    return _constrain(K, b, fixed, vals, symmetric=True,
                      n_dim=mesh.dim, n_nodes=mesh.n_nodes, blocks=("u",))


def assemble_poroelastic_steady(mesh, mat: PoroMaterial, loads: LoadSpec, t: float = 0.0) -> SparseSystem:
    """Drained steady state (no storage): the hydrostatic initial condition."""
    loads.validate(mesh)
    ops = operators(mesh)
    a = mat.biot_alpha
    K = stiffness(mesh, mat.lam, mat.mu)
    nn = mesh.n_nodes
    Z = sp.csr_matrix((nn, nn * mesh.dim))
    A = sp.bmat([[K, -a * ops.C], [Z, mat.mobility * ops.L]], format="csr")
    b = np.concatenate([mechanical_rhs(mesh, loads, t), _fluid_rhs(mesh, mat, loads, t)])
    fixed, vals = _collect_dirichlet(mesh, loads, t, True, nn * mesh.dim)
    if not np.any(fixed >= nn * mesh.dim):
        raise AssemblyError("singular system: unconstrained constant pressure mode (no pressure Dirichlet conditions)")
    _check_rigid_modes(mesh, fixed[fixed < nn * mesh.dim])
    return _constrain(A, b, fixed, vals, symmetric=False, n_dim=mesh.dim, n_nodes=nn, blocks=("u", "z"))


def split_solution(system: SparseSystem, x: np.ndarray):
    """Full solution vector -> (u[n_nodes, dim], z[n_nodes] or None)."""
    nu = system.n_nodes * system.n_dim
    u = x[:nu].reshape(system.n_nodes, system.n_dim)
    z = x[nu:] if "z" in system.blocks else None
    return u, z
