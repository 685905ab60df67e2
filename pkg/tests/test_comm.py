"""Collectives, ledger accounting, and the two transports."""

import numpy as np
import pytest

from gdml import comm as gc
from gdml.errors import ConfigError, TransportError


def _sim_nodes(topology, nodes, wire_dtype=np.float32):
    net = gc._SimNet(topology)
    return net, {n: gc.SimComm(n, topology, net, wire_dtype) for n in nodes}


EXTERNAL2 = gc.Topology(P=2, slaves_per_dc=(1, 1), global_master_dc=gc.EXTERNAL_DC)


def test_topology_node_layout():
    top = gc.Topology(P=2, slaves_per_dc=(2, 3))
    assert top.n_nodes == 1 + 2 + 5
    assert top.master(0) == 1 and top.master(1) == 2
    assert top.slaves(0) == [3, 4]
    assert top.slaves(1) == [5, 6, 7]
    assert top.dc_of(0) == 0  # global master co-located with DC 0 by default
    assert top.dc_of(4) == 0 and top.dc_of(5) == 1
    assert top.gcg_xdc_edges() == 1
    assert EXTERNAL2.gcg_xdc_edges() == 2


def test_topology_validation():
    with pytest.raises(ConfigError):
        gc.Topology(P=0, slaves_per_dc=())
    with pytest.raises(ConfigError):
        gc.Topology(P=2, slaves_per_dc=(1,))
    with pytest.raises(ConfigError):
        gc.Topology(P=1, slaves_per_dc=(0,))
    with pytest.raises(ConfigError):
        gc.Topology(P=1, slaves_per_dc=(1,), xdc_bandwidth=0)
    with pytest.raises(ConfigError):
        gc.Topology(P=1, slaves_per_dc=(1,), global_master_dc=5)


def test_topology_from_file(tmp_path):
    path = tmp_path / "topo.cfg"
    path.write_text(
        "# two data centers\n"
        "P = 2\n"
        "slaves_per_dc = 2,3\n"
        "xdc_bandwidth = 12.5e6\n"
        "xdc_latency = 0.05\n"
        "global_master_dc = -1\n")
    top = gc.Topology.from_file(path)
    assert top.P == 2 and top.slaves_per_dc == (2, 3)
    assert top.global_master_dc == gc.EXTERNAL_DC
    bad = tmp_path / "bad.cfg"
    bad.write_text("slaves_per_dc = 1\n")
    with pytest.raises(ConfigError):
        gc.Topology.from_file(bad)


def test_broadcast_single_member_group_no_traffic():
    top = gc.Topology(P=1, slaves_per_dc=(1,))
    net, comms = _sim_nodes(top, [0])
    group = gc.CommGroup("global", (0,), 0)
    out = comms[0].broadcast(group, np.array([1.0, 2.0]), "gvec", 0)
    assert np.array_equal(out, [1.0, 2.0])
    assert net.ledger.entries == []
    assert comms[0].now() == 0.0


def test_gcg_broadcast_byte_formula_external_master():
    # payload of 10 f32 values: 4*10 + 16 = 56 bytes per edge, both edges X-DC
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    payload = np.arange(10, dtype=np.float64)
    group = EXTERNAL2.gcg()
    comms[0].broadcast(group, payload, "gvec", 0)
    for n in (1, 2):
        out = comms[n].broadcast(group, None, "gvec", 0)
        assert np.array_equal(out, payload)
    assert len(net.ledger.entries) == 2
    assert all(e.bytes == 56 and e.link_class == "X-DC" for e in net.ledger.entries)


def test_reduce_elementwise_sum_fixed_order():
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    group = EXTERNAL2.gcg()
    comms[1].reduce(group, np.array([1.0, 2.0]), "grad", 0)
    comms[2].reduce(group, np.array([3.0, 4.0]), "grad", 0)
    total = comms[0].reduce(group, np.zeros(2), "grad", 0)
    assert np.array_equal(total, [4.0, 6.0])


def test_reduce_scalar_bytes():
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    group = EXTERNAL2.gcg()
    comms[1].reduce_scalar(group, 1.5, "loss", 0)
    comms[2].reduce_scalar(group, 2.5, "loss", 0)
    total = comms[0].reduce_scalar(group, 0.0, "loss", 0)
    assert total == 4.0
    assert len(net.ledger.entries) == 2
    assert all(e.bytes == 20 and e.link_class == "X-DC" for e in net.ledger.entries)


def test_reduce_all_zero_payloads_still_ledgered():
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    group = EXTERNAL2.gcg()
    comms[1].reduce(group, np.zeros(3), "grad", 0)
    comms[2].reduce(group, np.zeros(3), "grad", 0)
    total = comms[0].reduce(group, np.zeros(3), "grad", 0)
    assert np.all(total == 0.0)
    assert sum(e.bytes for e in net.ledger.entries) == 2 * (4 * 3 + 16)


def test_reduce_length_mismatch():
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    group = EXTERNAL2.gcg()
    comms[1].reduce(group, np.zeros(3), "grad", 0)
    comms[2].reduce(group, np.zeros(4), "grad", 0)
    with pytest.raises(TransportError):
        comms[0].reduce(group, np.zeros(3), "grad", 0)


def test_simulated_clock_delay_model():
    # one GCG reduce edge, d=1e6 f32, 100 Mbit/s X-DC, 50 ms latency
    top = gc.Topology(P=2, slaves_per_dc=(1, 1), global_master_dc=gc.EXTERNAL_DC,
                      xdc_bandwidth=12.5e6, xdc_latency=0.05)
    net, comms = _sim_nodes(top, [0, 1, 2])
    group = top.gcg()
    d = 10**6
    comms[1].reduce(group, np.zeros(d), "grad", 0)
    comms[2].reduce(group, np.zeros(d), "grad", 0)
    comms[0].reduce(group, np.zeros(d), "grad", 0)
    expected = 0.05 + (4 * d + 16) / 12.5e6
    assert comms[0].now() == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.370, abs=1e-3)


def test_zero_latency_infinite_bandwidth_zero_time():
    top = gc.Topology(P=2, slaves_per_dc=(1, 1), global_master_dc=gc.EXTERNAL_DC,
                      xdc_bandwidth=float("inf"), xdc_latency=0.0,
                      indc_bandwidth=float("inf"), indc_latency=0.0)
    net, comms = _sim_nodes(top, [0, 1, 2])
    group = top.gcg()
    comms[1].reduce(group, np.zeros(100), "grad", 0)
    comms[2].reduce(group, np.zeros(100), "grad", 0)
    comms[0].reduce(group, np.zeros(100), "grad", 0)
    assert comms[0].now() == 0.0


def test_wire_rounding_applied_at_root_too():
    net, comms = _sim_nodes(EXTERNAL2, [0, 1, 2])
    group = EXTERNAL2.gcg()
    value = np.array([0.1])  # not representable in f32
    out_root = comms[0].broadcast(group, value, "gvec", 0)
    out_member = comms[1].broadcast(group, None, "gvec", 0)
    assert out_root[0] == out_member[0] == np.float32(0.1)
    assert out_root[0] != 0.1


def _tree_program(comm, slave_part, d):
    value = np.full(d, float(comm.node)) if comm.is_slave else np.zeros(d)
    total = gc.tree_reduce(comm, value, "grad", 0, np.zeros(d))
    out = gc.tree_broadcast(comm, total if comm.is_global_master else None, "gvec", 0)
    return out


def test_tree_collective_xdc_bytes_independent_of_slaves():
    results = []
    for slaves in [(1, 1), (4, 4), (2, 6)]:
        top = gc.Topology(P=2, slaves_per_dc=slaves)
        out, ledger = gc.run_spmd(top, _tree_program, args=(10,))
        total = sum(float(n) for p in range(2) for n in top.slaves(p))
        assert out[0] == total
        results.append(ledger.xdc_bytes)
    assert results[0] == results[1] == results[2]


def test_tree_ledger_conservation_and_classification():
    top = gc.Topology(P=2, slaves_per_dc=(2, 2))
    d = 10
    out, ledger = gc.run_spmd(top, _tree_program, args=(d,))
    # edges: 4 slave->master, 2 master->global (reduce); same back (broadcast)
    n_edges = 2 * (4 + 2)
    assert sum(e.bytes for e in ledger.entries) == n_edges * (4 * d + 16)
    for e in ledger.entries:
        crosses = top.dc_of(e.src) != top.dc_of(e.dst)
        assert (e.link_class == "X-DC") == crosses
    # co-located global master: only the DC-1 <-> global edges cross
    assert ledger.xdc_bytes == 2 * (4 * d + 16)


def test_spmd_determinism_across_runs():
    top = gc.Topology(P=3, slaves_per_dc=(2, 1, 3))
    out1, led1 = gc.run_spmd(top, _tree_program, args=(7,))
    out2, led2 = gc.run_spmd(top, _tree_program, args=(7,))
    assert np.array_equal(out1, out2)
    assert [e for e in led1.entries] == [e for e in led2.entries]


def test_socket_transport_matches_simulated():
    top = gc.Topology(P=2, slaves_per_dc=(2, 2))
    out_sim, led_sim = gc.run_spmd(top, _tree_program, args=(5,), transport="simulated")
    out_sock, led_sock = gc.run_spmd(top, _tree_program, args=(5,), transport="socket")
    assert np.array_equal(out_sim, out_sock)
    key = lambda e: (e.epoch, e.src, e.seq, e.dst, e.bytes, e.link_class, e.tag)
    assert [key(e) for e in led_sim.entries] == [key(e) for e in led_sock.entries]


def test_scalar_traffic_negligible_vs_vector():
    d = 10**6
    one_vector = 4 * d + 16
    hundred_scalars = 100 * (4 + 16)
    assert hundred_scalars < 0.001 * one_vector


def test_node_failure_propagates():
    def bad_program(comm, slave_part):
        if comm.is_slave and comm.node == comm.topology.slaves(0)[0]:
            raise TransportError("synthetic node failure")
        return _tree_program(comm, slave_part, 3)

    top = gc.Topology(P=2, slaves_per_dc=(2, 2))
    with pytest.raises(TransportError):
        gc.run_spmd(top, bad_program)


def test_unknown_transport_rejected():
    top = gc.Topology(P=1, slaves_per_dc=(1,))
    with pytest.raises(ConfigError):
        gc.run_spmd(top, _tree_program, transport="carrier-pigeon", args=(3,))
    with pytest.raises(ConfigError):
        gc.make_transport("smoke-signal", top)


def test_ledger_csv_format(tmp_path):
    top = gc.Topology(P=2, slaves_per_dc=(1, 1))
    _, ledger = gc.run_spmd(top, _tree_program, args=(3,))
    path = tmp_path / "ledger.csv"
    ledger.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "src,dst,bytes,link_class,tag,sim_time"
    assert len(lines) == len(ledger.entries) + 1
    first = lines[1].split(",")
    assert len(first) == 6 and first[3] in ("in-DC", "X-DC")
