import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ifenn.difftensor as dt
from ifenn.errors import InvalidArgumentError
from ifenn.mesh import boundary_nodes, build_structured_grid
from ifenn.operatornet import (
    BcEnforcement,
    BcPart,
    BranchConfig,
    GruCell,
    Scaling,
    TrunkConfig,
    apply_bc_enforcement,
    branch_forward,
    build_model,
    gru_cell_step,
    load_model,
    merge_and_reduce,
    model_forward,
    ramp_distance,
    save_model,
)


def _cell(d, h, fill=None, seed=0):
    cell = GruCell.init(d, h, np.random.default_rng(seed))
    if fill is not None:
        for p in cell.parameters():
            p.data[...] = fill
    return cell


def test_gru_step_examples():
    zero = _cell(3, 2, fill=0.0)
    np.testing.assert_array_equal(gru_cell_step(zero, np.ones(3), np.zeros(2)).data, 0.0)

    one = _cell(1, 1, fill=1.0)
    for b in (one.b_r, one.b_z, one.b_h):
        b.data[...] = 0.0
    h = gru_cell_step(one, np.array([1.0]), np.array([0.0])).item()
    s = 1 / (1 + np.exp(-1))
    assert h == pytest.approx((1 - s) * np.tanh(1), rel=1e-14)
    assert h == pytest.approx(0.20482, abs=1e-5)

    with pytest.raises(InvalidArgumentError):
        gru_cell_step(one, np.ones(2), np.zeros(1))


def test_gru_step_gradient_matches_fd():
    cell = _cell(3, 4, seed=2)
    x = np.random.default_rng(0).uniform(-1, 1, 3)
    h0 = np.random.default_rng(1).uniform(-1, 1, 4)
    params = cell.parameters()
    grads = dt.gradients(dt.square(gru_cell_step(cell, x, h0)).sum(), params)
    for p, g in zip(params, grads):
        fd = np.zeros_like(p.data)
        for i in np.ndindex(p.shape):
            old = p.data[i]
            p.data[i] = old + 1e-6
            fp = np.sum(gru_cell_step(cell, x, h0).data ** 2)
            p.data[i] = old - 1e-6
            fm = np.sum(gru_cell_step(cell, x, h0).data ** 2)
            p.data[i] = old
            fd[i] = (fp - fm) / 2e-6
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_gate_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    cell = _cell(3, 5, seed=seed)
    for p in cell.parameters():
        p.data *= scale
    x = rng.normal(size=(4, 3)) * scale
    h_prev = rng.uniform(-2, 2, size=(4, 5))
    r = dt.sigmoid(dt.linear(x, cell.w_xr, cell.b_r) + dt.matmul(h_prev, cell.w_hr)).data
    z = dt.sigmoid(dt.linear(x, cell.w_xz, cell.b_z) + dt.matmul(h_prev, cell.w_hz)).data
    assert np.all((r >= 0) & (r <= 1)) and np.all((z >= 0) & (z <= 1))
    h = gru_cell_step(cell, x, h_prev).data
    assert np.all(np.abs(h) <= np.maximum(np.abs(h_prev), 1.0) + 1e-12)


def test_fused_and_unrolled_routes_agree():
    model = build_model([BranchConfig("load", 3, gru_layers=2, hidden=4, fc_layers=2, out_size=3)],
                        TrunkConfig(2, fc_layers=2, hidden=4, out_size=3), seed=5)
    b = model.branches[0]
    x = np.random.default_rng(0).normal(size=(2, 5, 3))
    fused = branch_forward(b, x, fused=True)
    unrolled = branch_forward(b, x, fused=False)
    np.testing.assert_allclose(fused.data, unrolled.data, rtol=1e-12, atol=1e-14)
    ps = b.parameters()
    g1 = dt.gradients(dt.square(fused).sum(), ps)
    g2 = dt.gradients(dt.square(unrolled).sum(), ps)
    for a, c in zip(g1, g2):
        np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-12)


def test_branch_converges_on_constant_input():
    model = build_model([BranchConfig("load", 2, hidden=6, out_size=3)], TrunkConfig(2, out_size=3), seed=1)
    x = np.tile(np.array([[0.4, -0.7]]), (1, 200, 1))[None].reshape(1, 200, 2)
    out = branch_forward(model.branches[0], x).data[0]
    diffs = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert diffs[-1] < 1e-6 and diffs[-1] < 1e-3 * diffs[0]


def test_disabled_norm_path_is_transparent():
    cfg_off = BranchConfig("strain", 4, hidden=6, norm_channels=0, out_size=2)
    cfg_on = BranchConfig("strain", 4, hidden=6, norm_channels=3, out_size=2)
    m_off = build_model([cfg_off], TrunkConfig(2, out_size=2), seed=3)
    m_on = build_model([cfg_on], TrunkConfig(2, out_size=2), seed=3)
    x = np.random.default_rng(0).normal(size=(2, 3, 4))
    b_off, b_on = m_off.branches[0], m_on.branches[0]
    assert b_off.gamma is None and b_on.gamma.shape == (3,)
    manual = b_on.mlp.forward(b_on.gru.forward(x))   # same weights, normalisation removed by hand
    np.testing.assert_array_equal(branch_forward(b_off, x).data, manual.data)
    with pytest.raises(InvalidArgumentError):
        BranchConfig("strain", 4, hidden=6, norm_channels=4)


def test_full_scale_strain_branch_shape():
    cfg = BranchConfig("strain", 512, gru_layers=2, hidden=50, norm_channels=25, fc_layers=1, out_size=50)
    m = build_model([cfg], TrunkConfig(3, out_size=50), seed=0)
    out = branch_forward(m.branches[0], np.zeros((2, 3, 512)))
    assert out.shape == (2, 3, 50)


def _brute_merge(branches, trunk, C, b0):
    parts = [b.reshape(b.shape[0], b.shape[1], -1, C) for b in branches]
    cat = np.concatenate(parts, axis=2)
    tr = trunk.reshape(trunk.shape[0], -1, C)
    B, T, D, _ = cat.shape
    out = np.zeros((B, T, trunk.shape[0], C))
    for b in range(B):
        for t in range(T):
            for n in range(trunk.shape[0]):
                for c in range(C):
                    out[b, t, n, c] = sum(cat[b, t, k, c] * tr[n, k, c] for k in range(D)) + b0[c]
    return out


def test_merge_examples():
    rng = np.random.default_rng(0)
    b1, b2 = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 2))
    out = merge_and_reduce([b1, b2], np.ones((4, 5)), 1, np.array([0.5]))
    np.testing.assert_allclose(out.data[..., 0], (b1.sum(-1) + b2.sum(-1) + 0.5)[:, :, None] * np.ones(4))
    trunk = rng.normal(size=(4, 5))
    np.testing.assert_allclose(merge_and_reduce([b1, b2], trunk, 1, np.array([0.1])).data,
                               _brute_merge([b1, b2], trunk, 1, [0.1]), rtol=1e-14)
    with pytest.raises(InvalidArgumentError):
        merge_and_reduce([b1, b2], np.ones((4, 6)), 1, np.zeros(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.integers(1, 3), st.integers(0, 999))
def test_merge_matches_brute_force(d1, d2, C, n, seed):
    rng = np.random.default_rng(seed)
    b1, b2 = rng.normal(size=(2, 2, d1 * C)), rng.normal(size=(2, 2, d2 * C))
    trunk = rng.normal(size=(n, (d1 + d2) * C))
    b0 = rng.normal(size=C)
    np.testing.assert_allclose(merge_and_reduce([b1, b2], trunk, C, b0).data,
                               _brute_merge([b1, b2], trunk, C, b0), rtol=1e-12, atol=1e-12)


def test_surrogate_four_components():
    m = build_model([BranchConfig("load", 6, hidden=8, out_size=5)], TrunkConfig(2, out_size=5), n_components=4)
    out = model_forward(m, np.zeros((3, 2, 6)), None, np.zeros((7, 2)), [1.0, 2.0])
    assert out.shape == (3, 2, 7, 4)


def cube_bc(mesh):
    h = mesh.cell_size[0]
    left = BcPart("left", ramp_distance(lambda x: x[:, 0], h), lambda x, t: np.zeros(len(x)))
    top = BcPart("top", ramp_distance(lambda x: 1.0 - x[:, 1], h),
                 lambda x, t: 10 * x[:, 0] * min(t / 1800.0, 1.0))
    return BcEnforcement((left, top), "cube")


def test_bc_examples():
    mesh = build_structured_grid(2, [10, 10], [1, 1])
    bc = cube_bc(mesh)
    x = mesh.nodes
    raw = np.full((1, 1, mesh.n_nodes, 1), 17.0)
    out = apply_bc_enforcement(raw, bc, x, [1800.0]).data[0, 0, :, 0]
    left = boundary_nodes(mesh, "left")
    np.testing.assert_array_equal(out[left], 0.0)
    top = boundary_nodes(mesh, "top")
    np.testing.assert_allclose(out[top], 10 * x[top, 0], rtol=1e-14)

    interior = np.flatnonzero((x[:, 0] > 0) & (x[:, 0] < 0.1) & (x[:, 1] > 0.9) & (x[:, 1] < 1))
    rng = np.random.default_rng(0)
    raw2 = rng.normal(size=(1, 1, mesh.n_nodes, 1))
    o2 = apply_bc_enforcement(raw2, bc, x, [900.0]).data[0, 0, :, 0]
    l1 = np.minimum(1, x[:, 0] / 0.1)
    l2 = np.minimum(1, (1 - x[:, 1]) / 0.1)
    direct = raw2[0, 0, :, 0] * l1 * l2 + (1 - l2) * 10 * x[:, 0] * 0.5
    np.testing.assert_allclose(o2, direct, rtol=1e-14)
    # slope with respect to raw is the product of the ramps
    o3 = apply_bc_enforcement(raw2 + 1.0, bc, x, [900.0]).data[0, 0, :, 0]
    np.testing.assert_allclose((o3 - o2)[interior], (l1 * l2)[interior], rtol=1e-12)


def test_bc_idempotent_and_ramps_in_range():
    mesh = build_structured_grid(2, [10, 10], [1, 1])
    bc = cube_bc(mesh)
    raw = np.random.default_rng(1).normal(size=(1, 2, mesh.n_nodes, 1)) * 50
    once = apply_bc_enforcement(raw, bc, mesh.nodes, [600.0, 1200.0]).data
    twice = apply_bc_enforcement(once, bc, mesh.nodes, [600.0, 1200.0]).data
    dirichlet = np.union1d(boundary_nodes(mesh, "left"), boundary_nodes(mesh, "top"))
    np.testing.assert_allclose(twice[:, :, dirichlet], once[:, :, dirichlet], rtol=1e-14, atol=1e-14)
    pts = np.random.default_rng(2).uniform(0, 1, size=(500, 2))
    for part in bc.parts:
        ell = part.ell(pts)
        assert np.all((ell > 0) & (ell <= 1))
    # away from the shared corner each ramp is 1 on the other part's interior
    top_interior = mesh.nodes[boundary_nodes(mesh, "top")]
    top_interior = top_interior[top_interior[:, 0] >= 0.1]
    np.testing.assert_array_equal(bc.parts[0].ell(top_interior), 1.0)


def _mini_model(bc=None, seed=0):
    return build_model(
        [BranchConfig("load", 3, hidden=4, out_size=2), BranchConfig("strain", 4, hidden=4, norm_channels=2, out_size=2)],
        TrunkConfig(2, fc_layers=2, hidden=4, out_size=4), bc=bc, seed=seed)


def test_model_forward_shapes_and_permutation():
    m = _mini_model()
    rng = np.random.default_rng(0)
    out = model_forward(m, rng.normal(size=(1, 1, 3)), rng.normal(size=(1, 1, 4)), rng.uniform(size=(5, 2)), [1.0])
    assert out.shape == (1, 1, 5, 1) and np.all(np.isfinite(out.data))
    load, strain, xy = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3, 4)), rng.uniform(size=(6, 2))
    base = model_forward(m, load, strain, xy, [1, 2, 3]).data
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_allclose(model_forward(m, load[perm], strain[perm], xy, [1, 2, 3]).data, base[perm],
                               rtol=1e-13)
    # without boundary enforcement the forward pass is the raw merge output
    raw = model_forward(m, load, strain, xy, [1, 2, 3], denormalize=False).data
    np.testing.assert_array_equal(base, raw)


def test_full_scale_config_on_3d_cube():
    cube = build_structured_grid(3, [10, 10, 10], [1, 1, 1])
    m = build_model([BranchConfig("load", 512, 2, 50, 0, 1, 50), BranchConfig("strain", 512, 2, 50, 25, 1, 50)],
                    TrunkConfig(3, 4, 50, 100))
    out = model_forward(m, np.zeros((1, 2, 512)), np.zeros((1, 2, 512)), cube.nodes, [1.0, 2.0])
    assert out.shape == (1, 2, 1331, 1)


def test_full_model_gradient_matches_fd():
    mesh = build_structured_grid(2, [2, 2], [1, 1])
    bc = cube_bc(mesh)
    m = _mini_model(bc, seed=4)
    m.scaling = Scaling(output=(np.array([2.0]), np.array([0.5])))
    rng = np.random.default_rng(3)
    load, strain = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 4))
    times = [600.0, 1200.0, 1800.0]
    f = lambda: model_forward(m, load, strain, mesh.nodes, times).sum()
    params = m.parameters()
    grads = dt.gradients(f(), params)
    for p, g in zip(params, grads):
        fd = np.zeros_like(p.data)
        for i in np.ndindex(p.shape):
            old = p.data[i]
            p.data[i] = old + 1e-6
            with dt.no_grad():
                fp = f().item()
            p.data[i] = old - 1e-6
            with dt.no_grad():
                fm = f().item()
            p.data[i] = old
            fd[i] = (fp - fm) / 2e-6
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(np.max(np.abs(fd)), 1e-6)


def test_build_model_validation():
    with pytest.raises(InvalidArgumentError):
        build_model([BranchConfig("load", 3, out_size=2)], TrunkConfig(2, out_size=3))
    with pytest.raises(InvalidArgumentError):
        build_model([], TrunkConfig(2, out_size=3))
    m = _mini_model()
    with pytest.raises(InvalidArgumentError):
        model_forward(m, np.zeros((1, 2, 3)), None, np.zeros((3, 2)), [1, 2])


def test_save_and_load_roundtrip(tmp_path):
    mesh = build_structured_grid(2, [2, 2], [1, 1])
    m = _mini_model(cube_bc(mesh), seed=9)
    m.scaling = Scaling(load=(np.array([2.0]), np.array([1.0])), output=(np.array([3.0]), np.array([-1.0])))
    path = save_model(m, tmp_path / "model.ckpt")
    sidecar = path.with_suffix(".txt").read_text()
    assert "branch = name=strain" in sidecar and "norm_channels=2" in sidecar
    back = load_model(path, bc=cube_bc(mesh))
    rng = np.random.default_rng(0)
    args = (rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 4)), mesh.nodes, [100.0, 200.0])
    np.testing.assert_array_equal(model_forward(m, *args).data, model_forward(back, *args).data)
