"""Derived nodal fields and discrete balance audits."""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..mesh import StructuredMesh
from .assembly import SparseSystem, face_vector, operators, scalar_source_vector
from .element import cell_quadrature
from .loads import LoadSpec
from .materials import ThermoMaterial
from .state import TransientState

_lumped_cache: "weakref.WeakKeyDictionary[StructuredMesh, np.ndarray]" = weakref.WeakKeyDictionary()


def lumped_mass(mesh: StructuredMesh) -> np.ndarray:
    m = _lumped_cache.get(mesh)
    if m is None:
        m = np.asarray(operators(mesh).M.sum(axis=1)).ravel()
        _lumped_cache[mesh] = m
    return m


def strain_trace_field(mesh: StructuredMesh, u: np.ndarray) -> np.ndarray:
    """Nodal tr(eps) = div u by lumped L2 projection of quadrature values."""
    u = np.asarray(u, dtype=float)
    if u.size != mesh.n_nodes * mesh.dim:
        raise InvalidArgumentError(f"displacement has {u.size} entries, expected {mesh.n_nodes * mesh.dim}")
    u = u.reshape(mesh.n_nodes, mesh.dim)
    q = cell_quadrature(mesh)
    div = np.einsum("cqai,cai->cq", q.dNdx, u[mesh.cells])
    rhs = np.zeros(mesh.n_nodes)
    np.add.at(rhs, mesh.cells, np.einsum("cq,qa,cq->ca", q.wdet, q.N, div))
    return rhs / lumped_mass(mesh)


@dataclass(frozen=True)
class EnergyBalance:
    """Per-step heat budget (W per unit depth in 2D).

    ``source - storage - coupling`` should equal ``neumann_out + dirichlet_out``.
    """

    source: float
    storage: float
    coupling: float
    neumann_out: float
    dirichlet_out: float

    @property
    def imbalance(self) -> float:
        return self.source - self.storage - self.coupling - self.neumann_out - self.dirichlet_out

    @property
    def relative_imbalance(self) -> float:
        scale = max(abs(self.source), abs(self.storage), abs(self.coupling),
                    abs(self.neumann_out), abs(self.dirichlet_out), 1e-300)
        return abs(self.imbalance) / scale


def thermal_energy_balance(mesh, mat: ThermoMaterial, loads: LoadSpec, system: SparseSystem,
                           state_n: TransientState, state_np1: TransientState, dt: float) -> EnergyBalance:
    """Audit one implicit-Euler step of the thermoelastic solve.

    The conductive term drops out of the column sum because the shape
    functions form a partition of unity; the heat leaving through Dirichlet
    boundaries is read off the reaction of the constrained rows.
    """
    ops = operators(mesh)
    t = state_np1.time
    ones = np.ones(mesh.n_nodes)
    storage = mat.heat_capacity / dt * ones @ (ops.M @ (state_np1.z - state_n.z))
    du = (state_np1.u - state_n.u).ravel()
    coupling = mat.beta * mat.t_ref / dt * ones @ (ops.C.T @ du)
    source = float(scalar_source_vector(mesh, loads.heat_source, t).sum()) if loads.heat_source else 0.0
    neumann = sum(float(face_vector(mesh, tag, fn, t).sum()) for tag, fn in loads.boundary_heat_flux.items())
    x = np.concatenate([state_np1.u.ravel(), state_np1.z])
    reaction = system.full_matrix @ x - system.full_rhs
    nu = mesh.n_nodes * mesh.dim
    fixed_t = system.dofmap.fixed[system.dofmap.fixed >= nu]
    dirichlet_out = -float(reaction[fixed_t].sum())
    return EnergyBalance(float(source), float(storage), float(coupling), neumann, dirichlet_out)
