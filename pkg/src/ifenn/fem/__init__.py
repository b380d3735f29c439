"""Finite-element assembly and time stepping for coupled thermo-/poroelasticity."""
from .assembly import (
    DofMap,
    SparseSystem,
    assemble_mechanics_only,
    assemble_poroelastic_monolithic,
    assemble_poroelastic_steady,
    assemble_thermoelastic_monolithic,
    element_stiffness,
    operators,
    split_solution,
)
from .io import read_vtk_point_data, write_csv, write_vtk
from .loads import Dirichlet, LoadSpec, constant
from .materials import PoroMaterial, ThermoMaterial
from .postprocess import EnergyBalance, strain_trace_field, thermal_energy_balance
from .solve import pcg, solve_sparse
from .state import TransientState
from .transient import (
    initial_state,
    mechanics_step,
    monolithic_step,
    run_monolithic_transient,
    steady_poro_state,
    z_reference,
)

__all__ = [
    "DofMap", "SparseSystem", "assemble_mechanics_only", "assemble_poroelastic_monolithic",
    "assemble_poroelastic_steady", "assemble_thermoelastic_monolithic", "element_stiffness",
    "operators", "split_solution", "read_vtk_point_data", "write_csv", "write_vtk", "Dirichlet",
    "LoadSpec", "constant", "PoroMaterial", "ThermoMaterial", "EnergyBalance", "strain_trace_field",
    "thermal_energy_balance", "pcg", "solve_sparse", "TransientState", "initial_state",
    "mechanics_step", "monolithic_step", "run_monolithic_transient", "steady_poro_state", "z_reference",
]
