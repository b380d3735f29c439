import threading

import numpy as np
import pytest

from ifenn.coupling import (
    ConstantPredictor,
    CouplingChannel,
    FileTransport,
    IfennConfig,
    OraclePredictor,
    channel_roundtrip,
    compare_vs_monolithic,
    monolithic_reference,
    predictor_for,
    run_ifenn,
    run_stability_study,
    serve,
    write_error_vtk,
)
from ifenn.errors import ConfigError, InvalidArgumentError, ProtocolError, SolverError
from ifenn.fem import read_vtk_point_data
from ifenn.fem.state import TransientState
from ifenn.operatornet import BranchConfig, TrunkConfig, build_model
from ifenn.training import GaussianBodyFamily, cube_setup, excavation_setup, sample_load_cases


def small_cube(**kw):
    args = dict(nodes_per_axis=5, n_steps=6, dt=300.0, load_sensors=2, strain_sensors=3)
    args.update(kw)
    return cube_setup(**args)


# ---------------------------------------------------------------- channel

@pytest.mark.parametrize("transport", ["memory", "file"])
def test_channel_roundtrip_is_bit_exact(tmp_path, transport):
    ch = CouplingChannel(FileTransport(tmp_path) if transport == "file" else None)
    ch.register("strain", 7)
    ch.register("field", 7)
    rng = np.random.default_rng(0)
    block = rng.normal(size=(3, 7)) * 10.0 ** rng.integers(-300, 300, size=(3, 7))
    out = channel_roundtrip(ch, block)
    assert out.tobytes() == block.tobytes()
    assert ch.exchanges == 1
    channel_roundtrip(ch, block[:1])
    assert ch.exchanges == 2
    if transport == "file":
        names = sorted(p.name for p in tmp_path.iterdir())
        assert {"strain_001.bin", "strain_001.ready", "field_002.bin", "field_002.ready"} <= set(names)
        assert (tmp_path / "field_001.ready").read_bytes() == b"\x01"


def test_channel_rejects_misuse():
    ch = CouplingChannel()
    with pytest.raises(ProtocolError, match="registered"):
        ch.send_strain(np.zeros((1, 3)))
    ch.register("strain", 3)
    ch.register("field", 2)
    ch.send_strain(np.zeros((1, 3)))
    with pytest.raises(ProtocolError, match="out-of-order"):
        ch.send_strain(np.zeros((1, 3)))
    ch2 = CouplingChannel()
    ch2.register("strain", 3)
    with pytest.raises(ProtocolError):
        ch2.receive_field()
    with pytest.raises(ProtocolError, match="width"):
        ch2.send_strain(np.zeros((1, 4)))
    driver = CouplingChannel(role="driver")
    with pytest.raises(ProtocolError, match="not allowed"):
        driver.receive_strain()
    with pytest.raises(InvalidArgumentError):
        CouplingChannel(role="observer")


def test_file_transport_between_two_threads(tmp_path):
    s = small_cube()
    case = sample_load_cases(s.family, 1, 2)[0]
    ref = monolithic_reference(s, case)
    net = CouplingChannel(FileTransport(tmp_path, timeout=20), role="network")
    net.register("field", s.mesh.n_nodes)
    worker = threading.Thread(target=serve, args=(net, OraclePredictor(ref, s.z_reference), s.n_steps))
    worker.start()
    drv = CouplingChannel(FileTransport(tmp_path, timeout=20), role="driver")
    drv.register("strain", 1)
    got = []
    for k in range(1, s.n_steps + 1):
        drv.send_strain(np.zeros((k, 1)))
        got.append(drv.receive_field())
    worker.join()
    for k, z in enumerate(got, start=1):
        np.testing.assert_array_equal(z, ref[k].z - s.z_reference)
    assert drv.exchanges == net.exchanges == s.n_steps


def test_channel_times_out_without_a_partner(tmp_path):
    ch = CouplingChannel(FileTransport(tmp_path, timeout=0.05), role="driver")
    ch.register("strain", 1)
    ch.send_strain(np.zeros((1, 1)))
    with pytest.raises(ProtocolError, match="timed out"):
        ch.receive_field()


# ---------------------------------------------------------------- driver

@pytest.mark.parametrize("make", [small_cube, lambda: excavation_setup(divisions=(8, 4), n_steps=5)])
def test_oracle_driver_matches_monolithic(make):
    s = make()
    case = sample_load_cases(s.family, 1, 4)[0]
    ref = monolithic_reference(s, case)
    res = run_ifenn(IfennConfig(s, case, OraclePredictor(ref, s.z_reference)))
    for a, b in zip(res.states[1:], ref[1:]):
        assert np.abs(a.u - b.u).max() <= 1e-8 * np.abs(b.u).max()
        np.testing.assert_array_equal(a.z, b.z)
    n = s.n_steps
    assert res.input_lengths == list(range(1, n + 1))
    assert res.exchanges == res.strain_writes == res.field_reads == n
    mono_dim = (s.mesh.dim + 1) * s.mesh.n_nodes
    assert all(d * (s.mesh.dim + 1) == mono_dim * s.mesh.dim for d in res.system_dims)
    assert max(res.residuals) < 1e-10


def test_file_transport_driver_matches_in_process(tmp_path):
    s = small_cube()
    case = sample_load_cases(s.family, 1, 4)[0]
    ref = monolithic_reference(s, case)
    a = run_ifenn(IfennConfig(s, case, OraclePredictor(ref, s.z_reference)))
    b = run_ifenn(IfennConfig(s, case, OraclePredictor(ref, s.z_reference), transport="file", channel_dir=tmp_path))
    for x, y in zip(a.states, b.states):
        np.testing.assert_array_equal(x.u, y.u)
    assert len(list(tmp_path.glob("strain_*.ready"))) == s.n_steps


def test_zero_load_zero_model_stays_at_rest():
    s = small_cube(family=GaussianBodyFamily(mean=0.0, std=0.0), slope=0.0)
    case = sample_load_cases(s.family, 1, 0)[0]
    res = run_ifenn(IfennConfig(s, case, ConstantPredictor(s.mesh.n_nodes, 0.0)))
    for st in res.states:
        assert np.all(st.u == 0.0) and np.all(st.z == s.z_reference) and np.all(st.strain_trace == 0.0)


def test_model_predictor_sees_growing_history():
    s = small_cube()
    case = sample_load_cases(s.family, 1, 4)[0]
    model = build_model([BranchConfig("load", 4, hidden=4, out_size=2),
                         BranchConfig("strain", 9, hidden=4, norm_channels=2, out_size=2)],
                        TrunkConfig(2, fc_layers=2, hidden=4, out_size=4), bc=s.bc)
    pred = predictor_for(model, s)
    seen = []
    inner = pred.predict
    pred.predict = lambda k, x: (seen.append(x.shape), inner(k, x))[1]
    res = run_ifenn(IfennConfig(s, case, pred))
    assert seen == [(k, 4 + 9) for k in range(1, s.n_steps + 1)]
    # hard constraints survive the full loop
    left = s.mesh.nodes[:, 0] == 0.0
    for st in res.states[1:]:
        np.testing.assert_allclose(st.z[left], s.z_reference, atol=1e-12)
    bad = build_model([BranchConfig("load", 5, hidden=4, out_size=2)], TrunkConfig(2, fc_layers=2, hidden=4, out_size=2))
    with pytest.raises(ConfigError, match="load branch"):
        predictor_for(bad, s)


def test_driver_errors_carry_the_step():
    s = small_cube()
    case = sample_load_cases(s.family, 1, 4)[0]

    class Broken:
        scaling = ConstantPredictor.scaling

        def predict(self, k, x):
            return np.full(s.mesh.n_nodes, np.nan if k == 3 else 0.0)

    with pytest.raises(SolverError, match="^step 3: "):
        run_ifenn(IfennConfig(s, case, Broken()))
    with pytest.raises(InvalidArgumentError):
        run_ifenn(IfennConfig(s, case, Broken(), n_steps=99))
    with pytest.raises(InvalidArgumentError):
        run_ifenn(IfennConfig(s, case, Broken(), transport="pipe"))


# ---------------------------------------------------------------- comparison

def _state(z, u):
    z = np.asarray(z, dtype=float)
    return TransientState(1, 1.0, np.asarray(u, dtype=float), z, np.zeros_like(z))


def test_compare_hand_example(tmp_path):
    init = _state([0, 0], [[0, 0], [0, 0]])
    true = [init, _state([3.0, 4.0], [[1.0, 0.0], [0.0, 2.0]])]
    pred = [init, _state([3.0, 3.0], [[1.0, 0.0], [0.0, 2.2]])]
    rep = compare_vs_monolithic(pred, true)
    assert rep.components == ("z", "ux", "uy")
    np.testing.assert_allclose(rep.l2_t[0, 0], [1.0 / 5.0, 0.0, 0.2 / 2.0], atol=1e-12)
    np.testing.assert_allclose(rep.eps_rel[0, 0, 1, 0], 1.0 / (4.0 + 4e-5), rtol=1e-12)
    same = compare_vs_monolithic(true, true)
    assert np.all(same.l2_t == 0) and np.all(same.eps_rel == 0)
    with pytest.raises(InvalidArgumentError):
        compare_vs_monolithic(pred[:1], true)
    from ifenn.mesh import build_structured_grid
    mesh = build_structured_grid(2, [1, 1], [1, 1])
    four = [_state(np.zeros(4), np.zeros((4, 2))), _state([1, 1, 1, 1], np.zeros((4, 2)))]
    off = [four[0], _state([1, 1.5, 1, 1.01], np.zeros((4, 2)))]
    path = write_error_vtk(tmp_path / "e.vtk", mesh, compare_vs_monolithic(off, four), 1)
    data = read_vtk_point_data(path)
    np.testing.assert_allclose(data["eps_rel_z"], [0.0, 0.05, 0.0, 0.01 / (1 + 1e-5)], rtol=1e-6)


# ---------------------------------------------------------------- stability harness

class BiasedOracle(OraclePredictor):
    """Reference field plus a fixed relative bias: a stand-in for an imperfect network."""

    def __init__(self, states, z_ref, bias=0.05):
        super().__init__(states, z_ref)
        self.bias = bias

    def predict(self, step, inputs):
        return (1.0 + self.bias) * super().predict(step, inputs)


def test_stability_pure_teacher_forcing():
    s = small_cube()
    case = sample_load_cases(s.family, 1, 1)[0]
    ref = monolithic_reference(s, case)
    res = run_stability_study(s, case, OraclePredictor(ref, s.z_reference), ref, s.n_steps + 1, s.n_steps + 1)
    assert res.strain_error.max() < 1e-9
    assert res.z_error.max() == 0.0


def test_stability_phase_two_onset():
    s = small_cube(n_steps=9)
    case = sample_load_cases(s.family, 1, 1)[0]
    ref = monolithic_reference(s, case)
    res = run_stability_study(s, case, BiasedOracle(ref, s.z_reference), ref, 3, 6)
    plateau = res.strain_error[:3].max()
    assert plateau < 1e-9
    assert res.strain_error[3:6].max() > plateau
    assert res.strain_error[3] > plateau          # rises on the first predicted step
    with pytest.raises(InvalidArgumentError):
        run_stability_study(s, case, BiasedOracle(ref, s.z_reference), ref, 6, 3)
    with pytest.raises(InvalidArgumentError):
        run_stability_study(s, case, BiasedOracle(ref, s.z_reference), ref, 0, 3)
