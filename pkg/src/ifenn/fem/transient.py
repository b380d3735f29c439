"""Implicit-Euler time loops for the monolithic problems."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import IfennError, InvalidArgumentError
from .assembly import (
    SparseSystem,
    assemble_mechanics_only,
    assemble_poroelastic_monolithic,
    assemble_poroelastic_steady,
    assemble_thermoelastic_monolithic,
    split_solution,
)
from .loads import LoadSpec
from .materials import PoroMaterial, ThermoMaterial
from .postprocess import strain_trace_field
from .solve import solve_reduced, system_residual
from .state import TransientState

PROBLEMS = ("thermo", "poro")


def problem_of(mat) -> str:
    if isinstance(mat, ThermoMaterial):
        return "thermo"
    if isinstance(mat, PoroMaterial):
        return "poro"
    raise InvalidArgumentError(f"unsupported material {type(mat).__name__}")


def z_reference(mat) -> float:
    """Value of the coupled field in the unloaded reference state."""
    return mat.t_ref if isinstance(mat, ThermoMaterial) else 0.0


def initial_state(mesh, mat, time: float = 0.0) -> TransientState:
    n = mesh.n_nodes
    return TransientState(0, time, np.zeros((n, mesh.dim)), np.full(n, z_reference(mat)), np.zeros(n))


def steady_poro_state(mesh, mat: PoroMaterial, loads: LoadSpec, time: float = 0.0) -> TransientState:
    """Drained equilibrium under the time-``time`` loads (e.g. hydrostatic start)."""
    sys_ = assemble_poroelastic_steady(mesh, mat, loads, time)
    u, z = split_solution(sys_, sys_.dofmap.expand(solve_reduced(sys_)))
    return TransientState(0, time, u.copy(), z.copy(), strain_trace_field(mesh, u))


def assemble_monolithic(mesh, mat, state_n, loads, dt) -> SparseSystem:
    if isinstance(mat, ThermoMaterial):
        return assemble_thermoelastic_monolithic(mesh, mat, state_n, loads, dt)
    if isinstance(mat, PoroMaterial):
        return assemble_poroelastic_monolithic(mesh, mat, state_n, loads, dt)
    raise InvalidArgumentError(f"unsupported material {type(mat).__name__}")


def monolithic_step(mesh, mat, state_n: TransientState, loads: LoadSpec, dt: float):
    """Advance one step; returns (new state, system, relative residual)."""
    sys_ = assemble_monolithic(mesh, mat, state_n, loads, dt)
    xf = solve_reduced(sys_)
    res = system_residual(sys_, xf)
    u, z = split_solution(sys_, sys_.dofmap.expand(xf))
    state = TransientState(state_n.step + 1, state_n.time + dt, u.copy(), z.copy(), strain_trace_field(mesh, u))
    return state, sys_, res


def mechanics_step(mesh, mat, state_n: TransientState, z_next: np.ndarray, loads: LoadSpec, dt: float):
    """Displacement-only step with the coupled field prescribed."""
    sys_ = assemble_mechanics_only(mesh, mat, state_n, z_next, loads, dt)
    xf = solve_reduced(sys_)
    res = system_residual(sys_, xf)
    u, _ = split_solution(sys_, sys_.dofmap.expand(xf))
    z = np.asarray(z_next, dtype=float).copy()
    state = TransientState(state_n.step + 1, state_n.time + dt, u.copy(), z, strain_trace_field(mesh, u))
    return state, sys_, res


def run_monolithic_transient(mesh, mat, loads: LoadSpec, dt: float, n_steps: int,
                             problem: str | None = None, initial: TransientState | None = None,
                             on_step: Callable[[TransientState, SparseSystem, float], None] | None = None,
                             ) -> list[TransientState]:
    """States ``[initial, step 1, ..., step n_steps]`` of the fully coupled solve."""
    if problem is not None and problem not in PROBLEMS:
        raise InvalidArgumentError(f"problem must be one of {PROBLEMS}")
    if problem is not None and problem != problem_of(mat):
        raise InvalidArgumentError(f"material {type(mat).__name__} does not match problem {problem!r}")
    if int(n_steps) < 1:
        raise InvalidArgumentError("n_steps must be at least 1")
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    state = initial.copy() if initial is not None else initial_state(mesh, mat)
    states = [state]
    for k in range(1, int(n_steps) + 1):
        try:
            state, sys_, res = monolithic_step(mesh, mat, state, loads, dt)
        except IfennError as exc:
            exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        if on_step is not None:
            on_step(state, sys_, res)
        states.append(state)
    return states
