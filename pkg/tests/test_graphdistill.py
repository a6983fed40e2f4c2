import numpy as np
import pytest

from cco.graphdistill import (CHANNELS, DEFAULT_CHANNELS, ChannelRegistry, build_graph,
                              cell_health, compute_affinity, distill, distill_cells,
                              load_local_tensor, load_tensors, save_local_tensor, save_tensors,
                              select_fov, select_top_k)
from cco.netsim import CellConfig, NetworkState, UserEquipment, compute_measurements, model_a
from cco.scenario import generate_network, model_a_spec
from conftest import small_network


def _graph(state):
    return build_graph(state, compute_measurements(state))


# -- graph -----------------------------------------------------------------------
def test_single_cell_graph():
    s = small_network(1, 12, seed=3)
    g = _graph(s)
    assert g.cell_edges() == []
    assert g.detected.shape == (12, 1)
    assert g.detected.sum(axis=1).tolist() == [1] * 12


def test_serving_edge_always_detected():
    s = small_network(3, 20, seed=0)
    g = build_graph(s, compute_measurements(s), detection_floor=1e9)
    assert (g.detected.sum(axis=1) == 1).all()
    assert g.detected[np.arange(20), g.serving].all()


def test_colocated_identical_cells_symmetric_coupling():
    # identical co-sited cells facing away from each other over a mirrored UE layout;
    # facing the same way every UE would tie and go to cell 0
    cells = (CellConfig(0, (0.0, 0.0), azimuth=90.0), CellConfig(1, (0.0, 0.0), azimuth=270.0))
    rng = np.random.default_rng(0)
    half = rng.uniform([50, -800], [800, 800], size=(25, 2))
    pts = np.vstack([half, half * [-1, 1]])
    ues = tuple(UserEquipment(j, (float(x), float(y))) for j, (x, y) in enumerate(pts))
    s = NetworkState(cells, ues, model_a(shadowing_sigma=0.0))
    g = _graph(s)
    assert g.served_count.tolist() == [25, 25]
    assert g.coupling[0, 1] == pytest.approx(g.coupling[1, 0], rel=1e-9)
    assert g.distance[0, 1] == 0.0


def test_coupling_matches_bruteforce(net3_shadowed):
    m = compute_measurements(net3_shadowed)
    g = build_graph(net3_shadowed, m)
    oracle = np.zeros((3, 3))
    for j in range(net3_shadowed.n_ues):
        for k in range(3):
            oracle[m.serving[j], k] += 10.0 ** (m.rsrp[j, k] / 10.0)
    np.testing.assert_allclose(g.coupling, oracle, rtol=1e-12)


# -- affinity ------------------------------------------------------------------------
def test_affinity_limits():
    s = small_network(5, 60, seed=2, sigma=4.0)
    g = _graph(s)
    # far, uncoupled pair -> 0
    g.distance[0, 1] = 1e9
    g.coupling[0, 1] = 0.0
    from cco.graphdistill import affinity_matrix
    aff = affinity_matrix(g.distance, g.coupling)
    assert aff[0, 1] == pytest.approx(0.0, abs=1e-12)
    # co-sited, unique maximal coupling -> 1
    g.distance[0, 2] = 0.0
    g.coupling[0, 2] = g.coupling[0].max() * 10 + 1.0
    aff = affinity_matrix(g.distance, g.coupling)
    assert aff[0, 2] == pytest.approx(1.0)


def test_affinity_rejects_self(net3):
    with pytest.raises(ValueError):
        compute_affinity(_graph(net3), 1, 1)


def test_affinity_ranking_matches_oracle():
    s = small_network(5, 80, seed=7, sigma=6.0)
    m = compute_measurements(s)
    g = build_graph(s, m)
    pos = np.array([c.position for c in s.cells])
    for i in range(5):
        vals = {}
        cpl = {}
        for j in range(5):
            if j != i:
                cpl[j] = sum(10 ** (m.rsrp[u, j] / 10) for u in range(s.n_ues) if m.serving[u] == i)
        peak = max(cpl.values())
        for j in cpl:
            d = float(np.hypot(*(pos[i] - pos[j])))
            vals[j] = 0.5 * np.exp(-d / 500.0) + 0.5 * (cpl[j] / peak if peak > 0 else 0.0)
            assert compute_affinity(g, i, j) == pytest.approx(vals[j], rel=1e-9, abs=1e-15)
        oracle = sorted(vals, key=lambda j: (-vals[j], j))
        assert list(select_fov(g, i, 31).members[1:]) == oracle


# -- field of view ------------------------------------------------------------------
def test_fov_sizes():
    s = generate_network(model_a_spec(cell_count_range=(40, 40)), 0)
    g = _graph(s)
    fov = select_fov(g, 5, 31)
    assert fov.valid == 32 and fov.members[0] == 5 and len(set(fov.members)) == 32
    g3 = _graph(small_network(3, 10))
    assert select_fov(g3, 0, 31).valid == 3


def test_fov_ties_by_id(net3):
    g = _graph(net3)
    g.affinity[:] = 0.25
    assert select_fov(g, 1, 31).members == (1, 0, 2)


# -- top-K ----------------------------------------------------------------------------
def test_top_k_all_cells_sorted_by_health():
    s = small_network(6, 80, seed=5, sigma=6.0)
    m = compute_measurements(s)
    h = cell_health(m, 6)
    top = select_top_k(s, m, 6)
    assert sorted(top) == list(range(6))
    assert all(h[a] <= h[b] for a, b in zip(top, top[1:]))


def test_top_k_health_oracle():
    s = small_network(6, 120, seed=9, sigma=8.0, side=3000.0)
    m = compute_measurements(s)
    health = []
    for c in range(6):
        served = [j for j in range(s.n_ues) if m.serving[j] == c]
        ok = [j for j in served if m.rsrp[j, c] >= -105 and m.sinr[j] >= -3]
        health.append(len(ok) / len(served) if served else 1.0)
    oracle = sorted(range(6), key=lambda c: (health[c], c))
    assert select_top_k(s, m, 6) == oracle
    assert select_top_k(s, m, 2) == oracle[:2]


def test_unhealthy_cell_ranked_first():
    cells = (CellConfig(0, (0.0, 0.0), azimuth=0.0, tx_power=15.0),
             CellConfig(1, (40000.0, 0.0), azimuth=0.0, tx_power=15.0),
             CellConfig(2, (80000.0, 0.0), azimuth=0.0, tx_power=15.0))
    ues = (UserEquipment(0, (0.0, 200.0)), UserEquipment(1, (40000.0, 200.0)),
           UserEquipment(2, (80000.0, 9000.0)))
    s = NetworkState(cells, ues, model_a(shadowing_sigma=0.0))
    m = compute_measurements(s)
    assert m.serving.tolist() == [0, 1, 2]
    assert select_top_k(s, m, 1) == [2]
    with pytest.raises(ValueError):
        select_top_k(s, m, 0)


# -- tensors ----------------------------------------------------------------------------
def test_default_shape_and_range():
    s = generate_network(model_a_spec(), 1)
    m = compute_measurements(s)
    tensors, fovs, _ = distill_cells(s, m, [0, 7])
    assert tensors[0].shape == (32, 32, len(DEFAULT_CHANNELS))
    d = tensors[0].data
    assert np.isfinite(d).all() and d.min() >= -1 and d.max() <= 1
    assert tensors[0].names[0] == "mask"


def test_padding_rows_zero():
    s = small_network(3, 20, seed=0)
    t = distill_cells(s, compute_measurements(s), [1])[0][0]
    assert (t.data[3:] == 0).all() and (t.data[:, 3:] == 0).all()
    assert (t.data[:3, :3, 0] == 1).all()


def test_cell_channels_only_on_diagonal():
    s = small_network(4, 40, seed=0, sigma=3.0)
    t = distill_cells(s, compute_measurements(s), [2])[0][0].data
    for m, name in enumerate(DEFAULT_CHANNELS):
        if CHANNELS[name][1] == "cell":
            off = t[:, :, m] - np.diag(np.diag(t[:, :, m]))
            assert (off == 0).all(), name


def _permuted(state, rng):
    cells = [state.cells[i] for i in rng.permutation(state.n_cells)]
    ues = [state.ues[i] for i in rng.permutation(state.n_ues)]
    return NetworkState(tuple(cells), tuple(ues), state.propagation, state.noise_floor,
                        state.shadowing_seed, state.tilt_limits)


def test_permutation_invariance_bitwise():
    s = generate_network(model_a_spec(), 4)
    p = _permuted(s, np.random.default_rng(0))
    a = distill_cells(s, compute_measurements(s), [0, 3, 9])[0]
    b = distill_cells(p, compute_measurements(p), [0, 3, 9])[0]
    for x, y in zip(a, b):
        assert x.data.tobytes() == y.data.tobytes()


@pytest.mark.parametrize("n", [3, 30, 120])
def test_shape_constant_across_sizes(n):
    s = generate_network(model_a_spec(cell_count_range=(n, n), ue_count_range=(300, 300)), n)
    t = distill_cells(s, compute_measurements(s), [0])[0][0]
    assert t.shape == (32, 32, 22)


def test_registry_validation():
    assert len(ChannelRegistry()) == 22
    with pytest.raises(ValueError):
        ChannelRegistry(("tilt", "mask"))
    with pytest.raises(ValueError):
        ChannelRegistry(("mask", "bogus"))
    with pytest.raises(ValueError):
        ChannelRegistry(("mask", "tilt", "tilt"))
    s = small_network(3, 10)
    t = distill_cells(s, compute_measurements(s), [0], 8, ChannelRegistry(("mask", "tilt")))[0][0]
    assert t.shape == (8, 8, 2)


def test_tensor_io(tmp_path):
    s = small_network(4, 30, seed=2, sigma=6.0)
    ts = distill_cells(s, compute_measurements(s), [0, 1], 8)[0]
    save_local_tensor(tmp_path / "one.bin", ts[1])
    back = load_local_tensor(tmp_path / "one.bin")
    assert back.center == 1 and back.names == ts[1].names
    np.testing.assert_array_equal(back.data, ts[1].data.astype(np.float32))
    save_tensors(tmp_path / "many.bin", [t.data for t in ts], ts[0].names, [0, 1], {"labels": [3, 4]})
    arr, meta = load_tensors(tmp_path / "many.bin")
    assert arr.shape == (2, 8, 8, 22) and meta["labels"] == [3, 4]
    raw = (tmp_path / "many.bin").read_bytes()
    (tmp_path / "many.bin").write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="expected"):
        load_tensors(tmp_path / "many.bin")
