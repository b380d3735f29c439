"""Staggered hybrid loop: network predicts the coupled field, FEM solves mechanics.

Per step n -> n+1 the driver sends the normalised input history (loads up to
t_{n+1}, strain traces up to state n) to the network side, receives the
coupled field at n+1 in label units, adds the reference value and solves the
displacement-only problem.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import difftensor as dt
from ..errors import ConfigError, IfennError, InvalidArgumentError
from ..fem import mechanics_step, run_monolithic_transient, write_vtk
from ..fem.state import TransientState
from ..mesh import sensor_matrix
from ..operatornet import OperatorModel, Scaling, model_forward
from ..training.experiments import ExperimentSetup
from ..training.metrics import MetricReport, compute_metrics
from ..training.sampling import LoadCase
from .channel import CouplingChannel, FileTransport, InProcessTransport


# ------------------------------------------------------------------ network side

class ModelPredictor:
    """Wraps a trained model; inputs arrive normalised, output leaves in label units."""

    def __init__(self, model: OperatorModel, coords: np.ndarray, times: np.ndarray, n_load: int):
        self.model = model
        self.scaling = model.scaling
        self.coords = np.asarray(coords, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.n_load = int(n_load)

    def predict(self, step: int, inputs: np.ndarray) -> np.ndarray:
        t = inputs.shape[0]
        with dt.no_grad():
            out = model_forward(self.model, inputs[None, :, :self.n_load], inputs[None, :, self.n_load:],
                                self.coords, self.times[:t])
        return out.data[0, -1, :, 0]


def predictor_for(model: OperatorModel, setup: ExperimentSetup) -> ModelPredictor:
    """ModelPredictor after checking the model was built for this setup's sensors and mesh."""
    sizes = {"load": setup.n_load_sensors, "strain": setup.strain_sensors.count}
    for b in model.branches:
        want = sizes.get(b.config.name)
        if want is not None and b.config.input_size != want:
            sym = "N_l" if b.config.name == "load" else "N_s"
            raise ConfigError(f"{b.config.name} branch takes {b.config.input_size} inputs but the "
                              f"{setup.name} setup provides {sym} = {want}")
    if model.trunk_config.input_size != setup.mesh.dim:
        raise ConfigError(f"trunk takes {model.trunk_config.input_size} coordinates, mesh has "
                          f"N_d = {setup.mesh.dim}")
    return ModelPredictor(model, setup.mesh.nodes, setup.times, setup.n_load_sensors)


class OraclePredictor:
    """Returns the reference solution's coupled field (isolates the coupling loop from model error)."""

    scaling = Scaling()

    def __init__(self, states: list[TransientState], z_ref: float):
        self.states = states
        self.z_ref = float(z_ref)

    def predict(self, step: int, inputs: np.ndarray) -> np.ndarray:
        return self.states[step].z - self.z_ref


class ConstantPredictor:
    scaling = Scaling()

    def __init__(self, n_nodes: int, value: float = 0.0):
        self.field = np.full(n_nodes, float(value))

    def predict(self, step: int, inputs: np.ndarray) -> np.ndarray:
        return self.field.copy()


def _normalize(scaling: Scaling, loads: np.ndarray, strains: np.ndarray) -> np.ndarray:
    ls, lm = scaling.load
    ss, sm = scaling.strain
    return np.hstack([(loads - lm) / ls, (strains - sm) / ss])


def serve(channel: CouplingChannel, predictor, steps: int):
    """Network-side loop: answer ``steps`` strain payloads with predicted fields."""
    for _ in range(int(steps)):
        inputs = channel.receive_strain()
        channel.send_field(predictor.predict(inputs.shape[0], inputs))


# ------------------------------------------------------------------ driver

@dataclass(eq=False)
class IfennConfig:
    setup: ExperimentSetup
    case: LoadCase
    predictor: object
    n_steps: int | None = None
    transport: str = "in-process"
    channel_dir: Path | None = None


@dataclass
class IfennResult:
    states: list[TransientState]
    residuals: list[float] = field(default_factory=list)
    input_lengths: list[int] = field(default_factory=list)
    system_dims: list[int] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    exchanges: int = 0
    strain_writes: int = 0
    field_reads: int = 0


def _annotate(exc: IfennError, k: int):
    exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]


def run_ifenn(config: IfennConfig) -> IfennResult:
    """Hybrid transient; the network side runs inline on the same channel."""
    setup = config.setup
    n = int(config.n_steps or setup.n_steps)
    if not 1 <= n <= setup.n_steps:
        raise InvalidArgumentError(f"n_steps must lie in [1, {setup.n_steps}]")
    if config.transport == "in-process":
        transport = InProcessTransport()
    elif config.transport == "file":
        if config.channel_dir is None:
            raise InvalidArgumentError("file transport needs channel_dir")
        transport = FileTransport(config.channel_dir)
    else:
        raise InvalidArgumentError(f"unknown transport {config.transport!r}")
    channel = CouplingChannel(transport, "both")
    S = sensor_matrix(setup.mesh, setup.strain_sensors)
    loads = setup.loads_for(config.case)
    load_hist = setup.load_values(config.case)
    channel.register("strain", load_hist.shape[1] + S.shape[0])
    channel.register("field", setup.mesh.n_nodes)
    mech_loads = loads.mechanical_only()
    state = setup.initial_state(loads)
    result = IfennResult([state])
    strains = [S @ state.strain_trace]
    for k in range(1, n + 1):
        t0 = time.perf_counter()
        payload = _normalize(config.predictor.scaling, load_hist[:k], np.stack(strains))
        channel.send_strain(payload)
        inputs = channel.receive_strain()
        channel.send_field(config.predictor.predict(k, inputs))
        z_tilde = channel.receive_field()
        try:
            state, sys_, res = mechanics_step(setup.mesh, setup.material, state, z_tilde + setup.z_reference,
                                              mech_loads, setup.dt)
        except IfennError as exc:
            _annotate(exc, k)
            raise
        strains.append(S @ state.strain_trace)
        result.states.append(state)
        result.residuals.append(res)
        result.input_lengths.append(payload.shape[0])
        result.system_dims.append(sys_.dimension)
        result.step_seconds.append(time.perf_counter() - t0)
    result.exchanges, result.strain_writes, result.field_reads = (channel.exchanges, channel.strain_writes,
                                                                  channel.field_reads)
    return result


def monolithic_reference(setup: ExperimentSetup, case: LoadCase, n_steps: int | None = None):
    loads = setup.loads_for(case)
    return run_monolithic_transient(setup.mesh, setup.material, loads, setup.dt, int(n_steps or setup.n_steps),
                                    initial=setup.initial_state(loads))


# ------------------------------------------------------------------ comparison

def state_components(states: list[TransientState], z_ref: float) -> tuple[np.ndarray, tuple[str, ...]]:
    """``[T, N_n, 1 + dim]`` array of (z - z_ref, u_x, u_y[, u_z]) for steps 1..T."""
    dim = states[0].u.shape[1]
    arr = np.stack([np.column_stack([s.z - z_ref, s.u]) for s in states[1:]])
    return arr, ("z",) + tuple("u" + "xyz"[i] for i in range(dim))


def compare_vs_monolithic(ifenn_states, monolithic_states, z_ref: float = 0.0) -> MetricReport:
    """Per-component errors of the hybrid run against the monolithic reference."""
    if len(ifenn_states) != len(monolithic_states):
        raise InvalidArgumentError(f"step counts differ: {len(ifenn_states)} vs {len(monolithic_states)}")
    if ifenn_states[0].u.shape != monolithic_states[0].u.shape:
        raise InvalidArgumentError("states belong to different meshes")
    pred, names = state_components(ifenn_states, z_ref)
    true, _ = state_components(monolithic_states, z_ref)
    return compute_metrics(pred, true, names)


def write_error_vtk(path, mesh, report: MetricReport, step: int, cap: float = 0.05) -> Path:
    """Absolute relative error per component at ``step`` (1-based), clipped at ``cap``."""
    data = {f"eps_rel_{name}": np.minimum(np.abs(report.eps_rel[0, step - 1, :, i]), cap)
            for i, name in enumerate(report.components)}
    return write_vtk(path, mesh, data, title=f"relative error step {step} (capped at {cap:g})")


# ------------------------------------------------------------------ stability harness

@dataclass
class StabilityResult:
    z_error: np.ndarray        # per-step L2^t of the predicted coupled field
    strain_error: np.ndarray   # per-step L2^t of the hybrid strain trace
    switch_field: int
    switch_strain: int
    states: list[TransientState]


def _step_error(pred: np.ndarray, true: np.ndarray) -> float:
    yn = np.linalg.norm(true)
    en = np.linalg.norm(true - pred)
    return float(en / yn) if yn > 0 else float(en)


def run_stability_study(setup: ExperimentSetup, case: LoadCase, predictor, oracle_states,
                        switch_field: int, switch_strain: int) -> StabilityResult:
    """Teacher-forcing harness in three phases.

    Steps ``k <= switch_field`` solve mechanics with the reference field; later
    steps use the prediction.  Predictions for ``k <= switch_strain`` see the
    reference strain history; later ones see the hybrid run's own strains.
    The network is queried at every step so its error is tracked throughout.
    """
    n = len(oracle_states) - 1
    if not 1 <= switch_field <= switch_strain <= n + 1:
        raise InvalidArgumentError(f"need 1 <= switch_field <= switch_strain <= {n + 1}")
    S = sensor_matrix(setup.mesh, setup.strain_sensors)
    loads = setup.loads_for(case)
    mech = loads.mechanical_only()
    load_hist = setup.load_values(case)
    zr = setup.z_reference
    state = oracle_states[0].copy()
    states = [state]
    z_err, s_err = np.zeros(n), np.zeros(n)
    for k in range(1, n + 1):
        source = states if k > switch_strain else oracle_states
        strains = np.stack([S @ s.strain_trace for s in source[:k]])
        pred = predictor.predict(k, _normalize(predictor.scaling, load_hist[:k], strains))
        true_z = oracle_states[k].z
        z_err[k - 1] = _step_error(pred, true_z - zr)
        z_used = pred + zr if k > switch_field else true_z
        try:
            state, _, _ = mechanics_step(setup.mesh, setup.material, state, z_used, mech, setup.dt)
        except IfennError as exc:
            _annotate(exc, k)
            raise
        states.append(state)
        s_err[k - 1] = _step_error(state.strain_trace, oracle_states[k].strain_trace)
    return StabilityResult(z_err, s_err, switch_field, switch_strain, states)
