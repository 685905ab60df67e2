"""Two-level master/slave collectives with an exact transfer ledger.

One global master coordinates P data-center masters (the global
communication group, GCG); each DC master coordinates its slaves (a
local communication group, LCG). Broadcast and Reduce fan out in a star
inside each group. Every message is recorded in the ledger with its
byte size (payload + 16-byte header) and link class: a message is X-DC
iff source and destination live in different data centers.

Two interchangeable transports run the same node programs:
  simulated  one thread per node, in-memory queues, a virtual clock
             advancing by latency + bytes/bandwidth per edge;
  socket     one process per node, length-prefixed frames over TCP
             (frame = u32 payload length, u32 tag, u64 epoch, payload
             of little-endian floats), wall-clock timestamps.

Payloads are cast to the wire dtype (single precision by default) at
the transport boundary in both transports, so results are bit-identical
across them.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
import traceback
from dataclasses import dataclass

import multiprocessing as mp

import numpy as np

from gdml.errors import ConfigError, TransportError

HEADER_BYTES = 16
GLOBAL_MASTER = 0
EXTERNAL_DC = -1  # global master hosted outside every data center

_FRAME = struct.Struct("<IIQ")

# message tags (wire code <-> name)
TAG_CODES = {
    "grad": 1,     # gradient reduce
    "loss": 2,     # scalar loss reduce
    "ctl": 3,      # control flags (continue/stop, CG continue)
    "gvec": 4,     # aggregated gradient broadcast
    "hvq": 5,      # Hessian-vector query (vector down)
    "hvr": 6,      # Hessian-vector result (vector up)
    "dir": 7,      # search direction reduce/broadcast
    "step": 8,     # line-search step scalars
    "copy": 9,     # centralized data copy
}
TAG_NAMES = {v: k for k, v in TAG_CODES.items()}


@dataclass(frozen=True)
class Topology:
    """P data centers, their slave counts, and the two link classes."""

    P: int
    slaves_per_dc: tuple
    xdc_bandwidth: float = 12.5e6   # bytes/sec (100 Mbit/s)
    xdc_latency: float = 0.05
    indc_bandwidth: float = 1.25e9  # bytes/sec (10 Gbit/s)
    indc_latency: float = 0.0005
    global_master_dc: int = 0

    def __post_init__(self):
        object.__setattr__(self, "slaves_per_dc", tuple(int(s) for s in self.slaves_per_dc))
        if self.P < 1:
            raise ConfigError("P must be >= 1")
        if len(self.slaves_per_dc) != self.P:
            raise ConfigError("slaves_per_dc must list one count per data center")
        if any(s < 1 for s in self.slaves_per_dc):
            raise ConfigError("each data center needs at least one slave")
        if self.xdc_bandwidth <= 0 or self.indc_bandwidth <= 0:
            raise ConfigError("bandwidths must be positive")
        if self.xdc_latency < 0 or self.indc_latency < 0:
            raise ConfigError("latencies must be non-negative")
        if not (self.global_master_dc == EXTERNAL_DC or 0 <= self.global_master_dc < self.P):
            raise ConfigError("global_master_dc must be -1 (external) or a valid dc id")

    # node id layout: 0 = global master, 1..P = dc masters, then slaves
    def master(self, p: int) -> int:
        return 1 + p

    def slaves(self, p: int):
        base = 1 + self.P + sum(self.slaves_per_dc[:p])
        return list(range(base, base + self.slaves_per_dc[p]))

    @property
    def n_nodes(self) -> int:
        return 1 + self.P + sum(self.slaves_per_dc)

    def dc_of(self, node: int) -> int:
        if node == GLOBAL_MASTER:
            return self.global_master_dc
        if node <= self.P:
            return node - 1
        off = node - 1 - self.P
        for p, count in enumerate(self.slaves_per_dc):
            if off < count:
                return p
            off -= count
        raise ValueError(f"no such node {node}")

    def link_class(self, src: int, dst: int) -> str:
        return "in-DC" if self.dc_of(src) == self.dc_of(dst) else "X-DC"

    def gcg(self):
        return CommGroup("global", tuple([GLOBAL_MASTER] + [self.master(p) for p in range(self.P)]),
                         GLOBAL_MASTER)

    def lcg(self, p: int):
        return CommGroup("local", tuple([self.master(p)] + self.slaves(p)), self.master(p))

    def gcg_xdc_edges(self) -> int:
        """Number of GCG star edges crossing data centers."""
        return sum(1 for p in range(self.P) if self.global_master_dc != p)

    @classmethod
    def from_file(cls, path):
        """Plain key=value topology file; slaves_per_dc is comma-separated."""
        kv = {}
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"bad topology line {raw!r}")
                k, v = (s.strip() for s in line.split("=", 1))
                kv[k] = v
        try:
            return cls(
                P=int(kv["P"]),
                slaves_per_dc=[int(s) for s in kv["slaves_per_dc"].split(",")],
                xdc_bandwidth=float(kv.get("xdc_bandwidth", cls.xdc_bandwidth)),
                xdc_latency=float(kv.get("xdc_latency", cls.xdc_latency)),
                indc_bandwidth=float(kv.get("indc_bandwidth", cls.indc_bandwidth)),
                indc_latency=float(kv.get("indc_latency", cls.indc_latency)),
                global_master_dc=int(kv.get("global_master_dc", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"topology file missing key {e}") from None


@dataclass(frozen=True)
class CommGroup:
    kind: str        # "global" or "local"
    members: tuple   # sorted node ids, root included
    root: int


@dataclass(frozen=True)
class LedgerEntry:
    src: int
    dst: int
    bytes: int
    link_class: str
    tag: str
    sim_time: float
    epoch: int
    seq: int


class TransferLedger:
    """Append-only record of every message, split by link class."""

    def __init__(self, entries=None):
        self.entries = list(entries) if entries else []
        self._lock = threading.Lock()

    def add(self, entry: LedgerEntry):
        with self._lock:
            self.entries.append(entry)

    def extend(self, entries):
        with self._lock:
            self.entries.extend(entries)

    def finalize(self):
        """Deterministic order: by epoch, then sender, then send sequence."""
        self.entries.sort(key=lambda e: (e.epoch, e.src, e.seq, e.dst))

    def bytes_by_class(self):
        totals = {"in-DC": 0, "X-DC": 0}
        for e in self.entries:
            totals[e.link_class] += e.bytes
        return totals

    @property
    def xdc_bytes(self) -> int:
        return self.bytes_by_class()["X-DC"]

    @property
    def indc_bytes(self) -> int:
        return self.bytes_by_class()["in-DC"]

    def cumulative_through_epoch(self, epoch: int):
        xdc = indc = 0
        for e in self.entries:
            if e.epoch <= epoch:
                if e.link_class == "X-DC":
                    xdc += e.bytes
                else:
                    indc += e.bytes
        return xdc, indc

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("src,dst,bytes,link_class,tag,sim_time\n")
            for e in self.entries:
                fh.write(f"{e.src},{e.dst},{e.bytes},{e.link_class},{e.tag},{e.sim_time:.9f}\n")


def message_bytes(n_elements: int, elsize: int) -> int:
    return HEADER_BYTES + elsize * n_elements


class _CommBase:
    """Per-node collective operations; transport subclasses move the bytes."""

    def __init__(self, node: int, topology: Topology, wire_dtype=np.float32):
        self.node = node
        self.topology = topology
        self.wire_dtype = np.dtype(wire_dtype)
        self.elsize = self.wire_dtype.itemsize
        self._seq = 0

    # --- role helpers -------------------------------------------------
    @property
    def is_global_master(self) -> bool:
        return self.node == GLOBAL_MASTER

    @property
    def is_dc_master(self) -> bool:
        return 1 <= self.node <= self.topology.P

    @property
    def is_slave(self) -> bool:
        return self.node > self.topology.P

    @property
    def dc(self) -> int:
        return self.topology.dc_of(self.node)

    # --- transport hooks ----------------------------------------------
    def now(self) -> float:
        raise NotImplementedError

    def _deliver(self, dst, wire_arr, tag_code, epoch, nbytes):
        raise NotImplementedError

    def _fetch(self, src):
        raise NotImplementedError

    def _record(self, entry: LedgerEntry):
        raise NotImplementedError

    # --- point to point -------------------------------------------------
    def _send(self, dst: int, arr: np.ndarray, tag: str, epoch: int):
        wire = np.ascontiguousarray(arr, dtype=self.wire_dtype)
        nbytes = message_bytes(wire.size, self.elsize)
        self._seq += 1
        sim_time = self._deliver(dst, wire, TAG_CODES[tag], epoch, nbytes)
        self._record(LedgerEntry(self.node, dst, nbytes, self.topology.link_class(self.node, dst),
                                 tag, sim_time, epoch, self._seq))

    def _recv(self, src: int) -> np.ndarray:
        return self._fetch(src)

    # --- collectives ----------------------------------------------------
    def broadcast(self, group: CommGroup, payload, tag: str, epoch: int) -> np.ndarray:
        """Root's payload delivered to every member; returns the wire-rounded
        copy everywhere (including at the root)."""
        if self.node == group.root:
            wire = np.ascontiguousarray(payload, dtype=self.wire_dtype)
            for m in group.members:
                if m != group.root:
                    self._send(m, wire, tag, epoch)
        else:
            wire = self._recv(group.root)
        return wire.astype(np.float64)

    def reduce(self, group: CommGroup, payload, tag: str, epoch: int):
        """Elementwise sum at the root, accumulated in fixed member-id order.
        Returns the sum at the root, None elsewhere."""
        wire = np.ascontiguousarray(payload, dtype=self.wire_dtype)
        if self.node == group.root:
            total = wire.astype(np.float64)
            for m in sorted(group.members):
                if m == group.root:
                    continue
                part = self._recv(m)
                if part.size != total.size:
                    raise TransportError(
                        f"reduce length mismatch: {part.size} vs {total.size}")
                total = total + part.astype(np.float64)
            return total
        self._send(group.root, wire, tag, epoch)
        return None

    def broadcast_scalar(self, group, value, tag, epoch) -> float:
        out = self.broadcast(group, np.array([0.0 if value is None else value]), tag, epoch)
        return float(out[0])

    def reduce_scalar(self, group, value, tag, epoch):
        out = self.reduce(group, np.array([value], dtype=np.float64), tag, epoch)
        return None if out is None else float(out[0])


# ---------------------------------------------------------------------------
# simulated transport: threads + queues + virtual clock
# ---------------------------------------------------------------------------

_ERR = "__node_error__"


class _SimNet:
    def __init__(self, topology: Topology):
        self.queues = {}
        for p in range(topology.P):
            m = topology.master(p)
            for a, b in [(GLOBAL_MASTER, m), (m, GLOBAL_MASTER)]:
                self.queues[(a, b)] = queue.Queue()
            for s in topology.slaves(p):
                self.queues[(m, s)] = queue.Queue()
                self.queues[(s, m)] = queue.Queue()
        self.ledger = TransferLedger()


class SimComm(_CommBase):
    """In-process node endpoint with a per-node virtual clock."""

    def __init__(self, node, topology, net: _SimNet, wire_dtype=np.float32,
                 clock_start: float = 0.0):
        super().__init__(node, topology, wire_dtype)
        self.net = net
        self.clock = clock_start

    def now(self) -> float:
        return self.clock

    def _edge_delay(self, dst, nbytes):
        if self.topology.link_class(self.node, dst) == "X-DC":
            return self.topology.xdc_latency + nbytes / self.topology.xdc_bandwidth
        return self.topology.indc_latency + nbytes / self.topology.indc_bandwidth

    def _deliver(self, dst, wire_arr, tag_code, epoch, nbytes):
        try:
            q = self.net.queues[(self.node, dst)]
        except KeyError:
            raise TransportError(f"no channel {self.node}->{dst}") from None
        arrival = self.clock + self._edge_delay(dst, nbytes)
        q.put((wire_arr.copy(), tag_code, epoch, arrival))
        return arrival

    def _fetch(self, src):
        try:
            q = self.net.queues[(src, self.node)]
        except KeyError:
            raise TransportError(f"no channel {src}->{self.node}") from None
        msg = q.get()
        if isinstance(msg[0], str) and msg[0] == _ERR:
            raise TransportError(f"node {msg[1]} failed: {msg[2]}")
        arr, _tag, _epoch, arrival = msg
        if arrival > self.clock:
            self.clock = arrival
        return arr

    def _record(self, entry):
        self.net.ledger.add(entry)

    def fail(self, message: str):
        """Poison every outgoing channel so peers unblock with an error."""
        for (src, dst), q in self.net.queues.items():
            if src == self.node:
                q.put((_ERR, self.node, message, 0.0))


# ---------------------------------------------------------------------------
# socket transport: one process per node, TCP frames
# ---------------------------------------------------------------------------


class SocketComm(_CommBase):
    def __init__(self, node, topology, conns, wire_dtype=np.float32, t0=None):
        super().__init__(node, topology, wire_dtype)
        self.conns = conns  # peer node id -> connected socket
        self.t0 = time.monotonic() if t0 is None else t0
        self.entries = []

    def now(self) -> float:
        return time.monotonic() - self.t0

    def _deliver(self, dst, wire_arr, tag_code, epoch, nbytes):
        try:
            conn = self.conns[dst]
        except KeyError:
            raise TransportError(f"node {self.node} has no connection to {dst}") from None
        payload = wire_arr.astype(self.wire_dtype.newbyteorder("<")).tobytes()
        try:
            conn.sendall(_FRAME.pack(len(payload), tag_code, epoch) + payload)
        except OSError as e:
            raise TransportError(f"send to node {dst} failed: {e}") from None
        return self.now()

    def _fetch(self, src):
        try:
            conn = self.conns[src]
        except KeyError:
            raise TransportError(f"node {self.node} has no connection to {src}") from None
        header = _recv_exact(conn, _FRAME.size, src)
        length, _tag, _epoch = _FRAME.unpack(header)
        payload = _recv_exact(conn, length, src)
        return np.frombuffer(payload, dtype=self.wire_dtype.newbyteorder("<")).astype(self.wire_dtype)

    def _record(self, entry):
        self.entries.append(entry)


def _recv_exact(conn, n, peer):
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise TransportError(f"connection to node {peer} closed")
        buf += chunk
    return buf


# ---------------------------------------------------------------------------
# launchers
# ---------------------------------------------------------------------------


def _slave_parts_for(node, slave_data):
    return slave_data.get(node) if slave_data else None


def _run_spmd_simulated(topology, program, slave_data, wire_dtype, args, clock_start):
    net = _SimNet(topology)
    errors = {}

    def worker(node):
        comm = SimComm(node, topology, net, wire_dtype, clock_start)
        try:
            program(comm, _slave_parts_for(node, slave_data), *args)
        except BaseException as e:  # noqa: BLE001 - propagate to driver
            errors[node] = e
            comm.fail(repr(e))

    threads = []
    for node in range(1, topology.n_nodes):
        t = threading.Thread(target=worker, args=(node,), daemon=True)
        threads.append(t)
        t.start()
    root_comm = SimComm(GLOBAL_MASTER, topology, net, wire_dtype, clock_start)
    root_error = None
    try:
        result = program(root_comm, None, *args)
    except BaseException as e:  # noqa: BLE001
        root_error = e
        result = None
        root_comm.fail(repr(e))
    for t in threads:
        t.join(timeout=120)
    if root_error is not None:
        raise root_error
    for node, e in sorted(errors.items()):
        raise e
    net.ledger.finalize()
    return result, net.ledger


def _parents_children(topology, node):
    if node == GLOBAL_MASTER:
        return None, [topology.master(p) for p in range(topology.P)]
    if node <= topology.P:
        return GLOBAL_MASTER, topology.slaves(node - 1)
    return topology.master(topology.dc_of(node)), []


def _socket_worker(node, topology, listeners, addr_map, slave_part, program,
                   wire_dtype, args, out_queue, t0):
    try:
        own = listeners[node]
        for other, sock in listeners.items():
            if other != node:
                sock.close()
        parent, children = _parents_children(topology, node)
        conns = {}
        conn, _ = own.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conns[parent] = conn
        own.close()
        for child in children:
            s = socket.create_connection(addr_map[child], timeout=30)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conns[child] = s
        comm = SocketComm(node, topology, conns, wire_dtype, t0)
        program(comm, slave_part, *args)
        out_queue.put(("ok", node, [tuple(e.__dict__.values()) for e in comm.entries]))
        for s in conns.values():
            s.close()
    except BaseException:  # noqa: BLE001 - report to driver
        out_queue.put(("err", node, traceback.format_exc()))


def _run_spmd_socket(topology, program, slave_data, wire_dtype, args, clock_start):
    listeners = {}
    addr_map = {}
    for node in range(1, topology.n_nodes):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind(("127.0.0.1", 0))
        s.listen(4)
        listeners[node] = s
        addr_map[node] = s.getsockname()
    ctx = mp.get_context("fork")
    out_queue = ctx.Queue()
    t0 = time.monotonic() - clock_start
    procs = []
    for node in range(1, topology.n_nodes):
        p = ctx.Process(target=_socket_worker,
                        args=(node, topology, listeners, addr_map,
                              _slave_parts_for(node, slave_data), program,
                              wire_dtype, args, out_queue, t0))
        p.start()
        procs.append(p)
    conns = {}
    try:
        for node in listeners:
            listeners[node].close()
        for p_idx in range(topology.P):
            m = topology.master(p_idx)
            s = socket.create_connection(addr_map[m], timeout=30)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conns[m] = s
        comm = SocketComm(GLOBAL_MASTER, topology, conns, wire_dtype, t0)
        result = program(comm, None, *args)
        ledger = TransferLedger(comm.entries)
        failures = []
        for _ in procs:
            status, node, payload = out_queue.get(timeout=120)
            if status == "ok":
                ledger.extend(LedgerEntry(*vals) for vals in payload)
            else:
                failures.append((node, payload))
        if failures:
            node, tb = failures[0]
            raise TransportError(f"node {node} failed:\n{tb}")
        ledger.finalize()
        return result, ledger
    finally:
        for s in conns.values():
            s.close()
        for p in procs:
            p.join(timeout=30)
            if p.is_alive():
                p.terminate()


def run_spmd(topology: Topology, program, slave_data=None, transport: str = "simulated",
             wire_dtype=np.float32, args=(), clock_start: float = 0.0):
    """Run the same node program at every node of the tree.

    ``program(comm, slave_part, *args)`` is executed once per node;
    ``slave_data`` maps slave node ids to their data. Returns the global
    master's return value and the merged transfer ledger.
    """
    if transport == "simulated":
        return _run_spmd_simulated(topology, program, slave_data, wire_dtype, args, clock_start)
    if transport == "socket":
        return _run_spmd_socket(topology, program, slave_data, wire_dtype, args, clock_start)
    raise ConfigError(f"unknown transport {transport!r}")


class Transport:
    """Handle pairing a topology with a transport kind (see make_transport)."""

    def __init__(self, kind, topology, wire_dtype=np.float32):
        if kind not in ("simulated", "socket"):
            raise ConfigError(f"unknown transport kind {kind!r}")
        self.kind = kind
        self.topology = topology
        self.wire_dtype = wire_dtype

    def run(self, program, slave_data=None, args=(), clock_start: float = 0.0):
        return run_spmd(self.topology, program, slave_data, self.kind,
                        self.wire_dtype, args, clock_start)


def make_transport(kind: str, topology: Topology, wire_dtype=np.float32) -> Transport:
    return Transport(kind, topology, wire_dtype)


# ---------------------------------------------------------------------------
# tree helpers shared by the training protocols
# ---------------------------------------------------------------------------


def tree_reduce(comm: _CommBase, value, tag, epoch, zeros):
    """Slaves -> DC masters -> global master. Returns the sum at the global
    master, None elsewhere. Non-contributing nodes pass ``zeros``."""
    top = comm.topology
    if comm.is_slave:
        comm.reduce(top.lcg(comm.dc), value, tag, epoch)
        return None
    if comm.is_dc_master:
        local = comm.reduce(top.lcg(comm.dc), zeros, tag, epoch)
        comm.reduce(top.gcg(), local, tag, epoch)
        return None
    return comm.reduce(top.gcg(), zeros, tag, epoch)


def tree_reduce_scalar(comm, value, tag, epoch):
    out = tree_reduce(comm, np.array([value], dtype=np.float64), tag, epoch,
                      np.zeros(1))
    return None if out is None else float(out[0])


def tree_broadcast(comm: _CommBase, payload, tag, epoch) -> np.ndarray:
    """Global master -> DC masters -> slaves. Returns the wire-rounded
    payload at every node."""
    top = comm.topology
    if comm.is_global_master:
        return comm.broadcast(top.gcg(), payload, tag, epoch)
    if comm.is_dc_master:
        value = comm.broadcast(top.gcg(), None, tag, epoch)
        return comm.broadcast(top.lcg(comm.dc), value, tag, epoch)
    return comm.broadcast(top.lcg(comm.dc), None, tag, epoch)


def tree_broadcast_scalar(comm, value, tag, epoch) -> float:
    out = tree_broadcast(comm, np.array([0.0 if value is None else value]), tag, epoch)
    return float(out[0])
