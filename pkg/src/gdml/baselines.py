"""Comparison methods: centralized copy-then-train and a
communication-heavy distributed truncated-Newton baseline.

The truncated-Newton baseline performs every CG Hessian-vector product
as a global collective, so each inner iteration crosses data centers;
the centralized variants first ship all remote shards to one site and
then train entirely inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gdml import comm as gc
from gdml import loss as gl
from gdml.data import DcShard
from gdml.errors import ConfigError
from gdml.fadl import (
    FadlConfig,
    TrainReport,
    _exchange_grad_loss,
    _finalize_report,
    _init_state,
    _slave_hv_loop,
    _tree_line_search,
    cg_solve,
    fadl_train,
    infer_dim,
    split_for_slaves,
)

METHODS = ("centralized-stream", "centralized-bulk", "distributed", "distributed-fadl")

COPY_EPOCH = -1  # ledger epoch reserved for the pre-training data copy


@dataclass(frozen=True)
class CompressionModel:
    """Wire-size model for shipping raw examples: bytes per (index,value)
    pair, shrunk by a constant compression ratio."""

    ratio: float = 1.0
    bytes_per_nonzero: int = 8

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ConfigError("compression ratio must lie in (0, 1]")
        if self.bytes_per_nonzero <= 0:
            raise ConfigError("bytes_per_nonzero must be positive")

    def shard_bytes(self, shard: DcShard) -> int:
        return int(round(shard.nnz_total * self.bytes_per_nonzero * self.ratio))


# ---------------------------------------------------------------------------
# distributed truncated Newton (every Hv crosses data centers)
# ---------------------------------------------------------------------------


def _global_cg(node, state, cfg, epoch):
    """CG at the global master; each iteration broadcasts the probe vector
    down both tree levels and reduces the Hessian-vector product back up."""
    dim = state["dim"]
    is_g = node.is_global_master

    def apply_a(v):
        gc.tree_broadcast_scalar(node, 1.0, "ctl", epoch)
        v_wire = gc.tree_broadcast(node, v, "hvq", epoch)
        hv = gc.tree_reduce(node, np.zeros(dim), "hvr", epoch, np.zeros(dim))
        return cfg.lam * v_wire + hv

    try:
        delta, iters = cg_solve(apply_a, -state["g_full"], cfg.cg_tol, cfg.cg_max_iter)
    finally:
        gc.tree_broadcast_scalar(node, 0.0, "ctl", epoch)
    state["cg_rounds"] += iters
    return delta if is_g else None


def _follow_global_cg(node, state, epoch):
    if node.is_slave:
        curv = gl.curvature_from_margins(state["m"])
    while True:
        if gc.tree_broadcast_scalar(node, None, "ctl", epoch) == 0.0:
            return
        v = gc.tree_broadcast(node, None, "hvq", epoch)
        part = gl.hessian_vec_from_curvature(state["X"], curv, v) if node.is_slave \
            else np.zeros(state["dim"])
        gc.tree_reduce(node, part, "hvr", epoch, np.zeros(state["dim"]))


def _tron_node(node, slave_part, dim, cfg):
    state = _init_state(node, slave_part, dim)
    r = 0
    for r in range(cfg.max_outer + 1):
        if not _exchange_grad_loss(node, state, r, cfg):
            break
        if node.is_global_master:
            delta = _global_cg(node, state, cfg, r)
        else:
            _follow_global_cg(node, state, r)
            delta = None
        state["d_r"] = gc.tree_broadcast(node, delta, "dir", r)
        if node.is_slave:
            state["m_d"] = state["X"] @ state["d_r"]
        _tree_line_search(node, state, r, cfg)
    if node.is_global_master:
        return state["w"], TrainReport(rows=state["rows"], t_outer=r,
                                       converged=state["converged"],
                                       ls_trials=state["ls_trials"],
                                       cg_rounds=state["cg_rounds"])
    return None


def run_distributed_tron(shards, topology: gc.Topology, cfg: FadlConfig,
                         dim: int = None, transport: str = "simulated",
                         wire_dtype=np.float32):
    """Truncated-Newton training where the inner solver is global."""
    if len(shards) != topology.P:
        raise ConfigError(f"expected {topology.P} shards, got {len(shards)}")
    if dim is None:
        dim = infer_dim(shards)
    slave_data = {}
    for shard in shards:
        slave_data.update(split_for_slaves(shard, topology, dim))
    result, ledger = gc.run_spmd(topology, _tron_node, slave_data, transport,
                                 wire_dtype, args=(dim, cfg))
    return _finalize_report(result, ledger)


# ---------------------------------------------------------------------------
# centralized variants
# ---------------------------------------------------------------------------


def pick_destination(shards) -> int:
    """Largest shard's DC minimizes the copy volume."""
    return int(max(range(len(shards)), key=lambda p: (shards[p].n_p, -p)))


def copy_plan(shards, destination, compression: CompressionModel):
    """Per-source byte counts for centralizing the dataset."""
    return {s.dc_id: compression.shard_bytes(s)
            for s in shards if s.dc_id != destination and s.n_p > 0}


def run_centralized(shards, topology: gc.Topology, cfg: FadlConfig,
                    variant: str = "stream",
                    compression: CompressionModel = CompressionModel(),
                    dim: int = None, destination: int = None,
                    transport: str = "simulated", wire_dtype=np.float32,
                    dataset_bytes_override: int = None):
    """Ship all shards to one data center, then train there.

    ``stream`` assumes the copy already happened (zero copy time);
    ``bulk`` charges latency + bytes/bandwidth before iteration 0. Both
    record identical copy bytes in the ledger. ``dataset_bytes_override``
    replaces the nnz-based size estimate with an externally known
    compressed dataset size (copy bytes are then prorated by shard).
    """
    if variant not in ("stream", "bulk"):
        raise ConfigError(f"unknown centralized variant {variant!r}")
    if len(shards) != topology.P:
        raise ConfigError(f"expected {topology.P} shards, got {len(shards)}")
    if dim is None:
        dim = infer_dim(shards)
    dest = pick_destination(shards) if destination is None else destination
    if not 0 <= dest < topology.P:
        raise ConfigError(f"destination dc {dest} out of range")

    plan = copy_plan(shards, dest, compression)
    if dataset_bytes_override is not None:
        n_total = sum(s.n_p for s in shards)
        plan = {p: int(round(dataset_bytes_override * shards[p].n_p / n_total))
                for p in plan}
    copy_bytes_total = sum(plan.values())

    # copy entries: sources share the destination's ingress, so transfers
    # are serialized; arrival times accumulate along that link
    copy_entries = []
    clock = topology.xdc_latency if plan else 0.0
    for seq, (src_dc, nbytes) in enumerate(sorted(plan.items()), start=1):
        clock += nbytes / topology.xdc_bandwidth
        copy_entries.append(gc.LedgerEntry(
            src=topology.master(src_dc), dst=topology.master(dest), bytes=nbytes,
            link_class="X-DC", tag="copy", sim_time=clock, epoch=COPY_EPOCH, seq=seq))
    copy_time = clock if variant == "bulk" else 0.0

    # training runs entirely inside the destination DC
    merged = DcShard(0, [ex for s in shards for ex in s.examples])
    local_top = gc.Topology(
        P=1, slaves_per_dc=(topology.slaves_per_dc[dest],),
        xdc_bandwidth=topology.xdc_bandwidth, xdc_latency=topology.xdc_latency,
        indc_bandwidth=topology.indc_bandwidth, indc_latency=topology.indc_latency,
        global_master_dc=0)
    w, report = fadl_train([merged], local_top, cfg, dim=dim,
                           transport=transport, wire_dtype=wire_dtype)

    if copy_time > 0.0:
        for row in report.rows:
            row.sim_time += copy_time
        shifted = [replace(e, sim_time=e.sim_time + copy_time)
                   for e in report.ledger.entries]
        report.ledger = gc.TransferLedger(shifted)
    report.ledger.extend(copy_entries)
    report.ledger.finalize()
    report.copy_time = copy_time
    report.copy_bytes = copy_bytes_total
    for row in report.rows:
        row.xdc_bytes_cum += copy_bytes_total
    return w, report


def run_method(method: str, shards, topology, cfg, dim=None,
               compression: CompressionModel = CompressionModel(),
               transport: str = "simulated", wire_dtype=np.float32,
               destination: int = None, dataset_bytes_override: int = None):
    """Dispatch one of the four training strategies."""
    if method == "distributed-fadl":
        return fadl_train(shards, topology, cfg, dim, transport, wire_dtype)
    if method == "distributed":
        return run_distributed_tron(shards, topology, cfg, dim, transport, wire_dtype)
    if method in ("centralized-stream", "centralized-bulk"):
        return run_centralized(shards, topology, cfg, method.split("-", 1)[1],
                               compression, dim, destination, transport, wire_dtype,
                               dataset_bytes_override)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
