"""Physical setups of the three case studies (mesh, material, loads, sensors, BCs).

Sizes are arguments so the same builders serve desk-scale defaults and the
larger profiles selected from the command line.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..errors import InvalidArgumentError
from ..fem import Dirichlet, LoadSpec, PoroMaterial, ThermoMaterial, initial_state, steady_poro_state, z_reference
from ..fem.state import TransientState
from ..fem.transient import problem_of
from ..mesh import SensorGrid, StructuredMesh, annulus_mesh, build_structured_grid, select_sensor_grid
from ..operatornet import BcEnforcement, BcPart, ramp_distance
from .sampling import DewateringFamily, GaussianBodyFamily, LoadCase, TubeFluxFamily

ALUMINIUM = ThermoMaterial(lam=40e9, mu=27e9, alpha=2.31e-5, rho=2700.0, c_eps=910.0, k_cond=237.0, t_ref=293.0)


def excavation_soil(n_dim: int = 2) -> PoroMaterial:
    up = (0.0, 1.0) if n_dim == 2 else (0.0, 0.0, 1.0)
    return PoroMaterial(lam=8.375e6, mu=5.58e6, k_solid=55556e6, k_fluid=2200e6, porosity=0.4,
                        hydraulic_conductivity=1e-4, gravity_dir=up, n_dim=n_dim)


@dataclass(eq=False)
class ExperimentSetup:
    """Everything needed to label a case and to drive I-FENN on it."""

    name: str
    mesh: StructuredMesh
    material: object
    dt: float
    n_steps: int
    family: object
    loads_for: Callable[[LoadCase], LoadSpec]
    load_values_at: Callable[[LoadCase, np.ndarray], np.ndarray]   # [N_t, N_l]
    n_load_sensors: int
    strain_sensors: SensorGrid
    bc: BcEnforcement | None = None
    hydrostatic_start: bool = False

    @property
    def problem(self) -> str:
        return problem_of(self.material)

    @property
    def times(self) -> np.ndarray:
        """Times of steps 1..n_steps (the label/prediction instants)."""
        return self.dt * np.arange(1, self.n_steps + 1)

    @property
    def z_reference(self) -> float:
        return z_reference(self.material)

    def load_values(self, case: LoadCase) -> np.ndarray:
        """Load-branch input: row ``t`` holds the load at ``t_{t+1}``."""
        return np.asarray(self.load_values_at(case, self.times), dtype=float).reshape(self.n_steps, -1)

    def initial_state(self, loads: LoadSpec) -> TransientState:
        if self.hydrostatic_start:
            at_rest = LoadSpec(body_force=loads.body_force, traction=dict(loads.traction),
                               dirichlet=list(loads.dirichlet))
            return steady_poro_state(self.mesh, self.material, at_rest)
        return initial_state(self.mesh, self.material)


def cube_bc(mesh: StructuredMesh, ramp_time: float = 1800.0, slope: float = 10.0) -> BcEnforcement:
    """Hard constraints T~ = 0 on the left face and T~ = slope * x * gamma(t) on the top face."""
    h = mesh.cell_size[0]
    top_y = mesh.extent[1]
    left = BcPart("left", ramp_distance(lambda x: x[:, 0], h), lambda x, t: np.zeros(len(x)))
    top = BcPart("top", ramp_distance(lambda x: top_y - x[:, 1], h),
                 lambda x, t: slope * x[:, 0] * min(t / ramp_time, 1.0))
    return BcEnforcement((left, top), f"left=0; top={slope:g}*x*min(t/{ramp_time:g},1)")


def cube_setup(nodes_per_axis: int = 11, dt: float = 180.0, n_steps: int = 20, load_sensors: int = 4,
               strain_sensors: int = 4, family: GaussianBodyFamily | None = None,
               ramp_time: float = 1800.0, slope: float = 10.0, dim: int = 2) -> ExperimentSetup:
    """Unit square (or cube) heated by a random body source; left face clamped at T0,
    top-face temperature ramps linearly in x."""
    if nodes_per_axis < 2:
        raise InvalidArgumentError("nodes_per_axis must be >= 2")
    mesh = build_structured_grid(dim, [nodes_per_axis - 1] * dim, [1.0] * dim)
    mat = ALUMINIUM if dim == 2 else replace(ALUMINIUM, n_dim=3)
    family = family or GaussianBodyFamily(extent=(1.0,) * dim, t_end=dt * n_steps)
    t0 = mat.t_ref

    def top_temperature(x, t):
        return t0 + slope * x[:, 0] * min(t / ramp_time, 1.0)

    def loads_for(case: LoadCase) -> LoadSpec:
        return LoadSpec(heat_source=family.field(case.parameters),
                        dirichlet=[Dirichlet("left", "u"), Dirichlet("left", "z", t0),
                                   Dirichlet("top", "z", top_temperature)])

    sensors = select_sensor_grid(mesh, [load_sensors] * dim)

    def load_values_at(case, times):
        fn = family.field(case.parameters)
        return np.stack([fn(sensors.locations, t) for t in times])

    return ExperimentSetup("cube", mesh, mat, dt, n_steps, family, loads_for, load_values_at,
                           sensors.count, select_sensor_grid(mesh, [strain_sensors] * dim),
                           bc=cube_bc(mesh, ramp_time, slope))


def tube_setup(divisions=(6, 16), dt: float = 3000.0, n_steps: int = 20, wall_sensors: int = 8,
               strain_sensors=(4, 8), family: TubeFluxFamily | None = None) -> ExperimentSetup:
    """Half annulus (radii 1 and 2) with sinusoidal wall heat fluxes; the theta = 0 cut is clamped."""
    mesh = annulus_mesh(divisions, 1.0, 2.0, np.pi)
    family = family or TubeFluxFamily(t_end=dt * n_steps)
    inner = select_sensor_grid(mesh, [wall_sensors], source="inner")
    outer = select_sensor_grid(mesh, [wall_sensors], source="outer")

    def loads_for(case: LoadCase) -> LoadSpec:
        return LoadSpec(boundary_heat_flux={"inner": family.flux(case.parameters, "in"),
                                            "outer": family.flux(case.parameters, "out")},
                        dirichlet=[Dirichlet("cut_start", "u")])

    def load_values_at(case, times):
        fi, fo = family.flux(case.parameters, "in"), family.flux(case.parameters, "out")
        return np.stack([np.concatenate([fi(inner.locations, t), fo(outer.locations, t)]) for t in times])

    return ExperimentSetup("tube", mesh, ALUMINIUM, dt, n_steps, family, loads_for, load_values_at,
                           inner.count + outer.count, select_sensor_grid(mesh, list(strain_sensors)))


def excavation_setup(divisions=(16, 8), width: float = 40.0, depth: float = 20.0, pit_width: float = 10.0,
                     dt: float = 1.5e5, n_steps: int = 20, strain_sensors=(8, 4),
                     family: DewateringFamily | None = None) -> ExperimentSetup:
    """Saturated soil block under gravity.  Water is pumped out through the pit floor
    (top boundary, x < pit_width); the rest of the surface is drained (p = 0)."""
    mesh = build_structured_grid(2, divisions, (width, depth))
    mesh = mesh.split_tag("top", "pit", lambda c: c[:, 0] < pit_width)
    mat = excavation_soil(2)
    family = family or DewateringFamily(t_end=dt * n_steps)

    def loads_for(case: LoadCase) -> LoadSpec:
        q = family.history(case.parameters)
        return LoadSpec(boundary_fluid_flux={"pit": lambda x, t: np.full(x.shape[:-1], q(t))},
                        dirichlet=[Dirichlet("left", "ux"), Dirichlet("right", "ux"),
                                   Dirichlet("bottom", "u"), Dirichlet("top", "z", 0.0)])

    def load_values_at(case, times):
        q = family.history(case.parameters)
        return np.array([[q(t)] for t in times])

    return ExperimentSetup("excavation", mesh, mat, dt, n_steps, family, loads_for, load_values_at, 1,
                           select_sensor_grid(mesh, list(strain_sensors)), hydrostatic_start=True)


SETUPS = {"cube": cube_setup, "tube": tube_setup, "excavation": excavation_setup}
