"""Communication-efficient distributed training.

Outer loop: aggregate the global gradient (one cross-DC vector round
trip), let every data center minimize a gradient-consistent local
quadratic model of the full objective with conjugate gradients (in-DC
traffic only), average the local directions (a second cross-DC vector
round trip), then pick the step size by backtracking line search using
scalar reductions only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from gdml import comm as gc
from gdml import loss as gl
from gdml.data import DcShard, max_index, to_csr
from gdml.errors import ConfigError, LineSearchError, OptimizationError


@dataclass(frozen=True)
class FadlConfig:
    lam: float = 1.0
    eps_g: float = 1e-4
    max_outer: int = 100
    cg_tol: float = 0.1
    cg_max_iter: int = 50
    ls_c1: float = 1e-4
    ls_backtrack: float = 0.5
    ls_max_steps: int = 30

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("lambda must be > 0")
        if not 0 < self.eps_g < 1:
            raise ConfigError("eps_g must lie in (0, 1)")
        if not 0 < self.ls_c1 < 0.5:
            raise ConfigError("ls_c1 must lie in (0, 0.5)")
        if not 0 < self.ls_backtrack < 1:
            raise ConfigError("ls_backtrack must lie in (0, 1)")
        if min(self.max_outer, self.cg_max_iter, self.ls_max_steps) < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.cg_tol <= 0:
            raise ConfigError("cg_tol must be > 0")

    _KEYS = ("lambda", "eps_g", "max_outer", "cg_tol", "cg_max_iter",
             "ls_c1", "ls_backtrack", "ls_max_steps")

    @classmethod
    def from_mapping(cls, mapping) -> "FadlConfig":
        kwargs = {}
        for key, value in mapping.items():
            if key not in cls._KEYS:
                raise ConfigError(f"unknown optimizer key {key!r}")
            kwargs["lam" if key == "lambda" else key] = value
        return cls(**kwargs)


@dataclass
class IterRow:
    iter: int
    f: float
    grad_norm: float
    xdc_bytes_cum: int
    indc_bytes_cum: int
    sim_time: float
    wall_time: float


@dataclass
class TrainReport:
    """Per-outer-iteration trace of one training run."""

    rows: list
    t_outer: int
    converged: bool
    ls_trials: int
    cg_rounds: int = 0
    ledger: gc.TransferLedger = None
    copy_time: float = 0.0
    copy_bytes: int = 0

    @property
    def final_f(self) -> float:
        return self.rows[-1].f

    @property
    def total_sim_time(self) -> float:
        return self.rows[-1].sim_time

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,f,grad_norm,xdc_bytes_cum,indc_bytes_cum,sim_time,wall_time\n")
            for row in self.rows:
                fh.write(f"{row.iter},{row.f!r},{row.grad_norm!r},{row.xdc_bytes_cum},"
                         f"{row.indc_bytes_cum},{row.sim_time:.9f},{row.wall_time:.6f}\n")


# ---------------------------------------------------------------------------
# local quadratic model and its standalone solver
# ---------------------------------------------------------------------------


class LocalQuadraticModel:
    """Per-DC model: lambda/2 ||w||^2 + g.(w - w_r) + P/2 (w - w_r)' H_p (w - w_r).

    ``g`` is the aggregated loss gradient at w_r, so the model gradient at
    w_r equals the full objective gradient (gradient consistency).
    """

    def __init__(self, shard, w_r, g_r, lam, P):
        self.shard = shard
        self.w_r = np.asarray(w_r, dtype=np.float64)
        self.g_r = np.asarray(g_r, dtype=np.float64)
        self.lam = lam
        self.P = P

    def gradient(self, w):
        w = np.asarray(w, dtype=np.float64)
        return self.lam * w + self.g_r + self.P * self.loss_hess_vec(w - self.w_r)

    def hess_vec(self, u):
        u = np.asarray(u, dtype=np.float64)
        return self.lam * u + self.P * self.loss_hess_vec(u)

    def loss_hess_vec(self, u):
        if np.all(u == 0.0):
            return np.zeros_like(self.w_r)
        return gl.local_hessian_vec(self.shard, self.w_r, u)


def build_local_model(shard, w_r, g_r, lam, P) -> LocalQuadraticModel:
    return LocalQuadraticModel(shard, w_r, g_r, lam, P)


def cg_solve(apply_a, rhs, tol, max_iter):
    """Conjugate gradients for A x = rhs from x = 0; A must be positive
    definite. Stops at relative residual ``tol``. Returns (x, iterations)."""
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rs = float(r @ r)
    b_norm = np.sqrt(float(rhs @ rhs))
    if b_norm == 0.0:
        return x, 0
    threshold = (tol * b_norm) ** 2
    p = r.copy()
    iters = 0
    while rs > threshold and iters < max_iter:
        ap = apply_a(p)
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap <= 0:
            raise OptimizationError(f"CG curvature {pap!r} is not positive definite")
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise OptimizationError("CG residual diverged")
        p = r + (rs_new / rs) * p
        rs = rs_new
        iters += 1
    return x, iters


def cg_minimize(model: LocalQuadraticModel, cg_tol: float, cg_max_iter: int):
    """Minimize the local model from w_r; returns (w_p, cg_iterations)."""
    rhs = -model.gradient(model.w_r)
    delta, iters = cg_solve(model.hess_vec, rhs, cg_tol, cg_max_iter)
    return model.w_r + delta, iters


def line_search(w_r, d_r, f_r, g_full, cfg: FadlConfig, evaluate):
    """Backtracking Armijo from t=1; ``evaluate(w)`` returns the objective."""
    slope = float(np.asarray(g_full) @ np.asarray(d_r))
    if slope >= 0:
        raise LineSearchError(f"not a descent direction (slope {slope:.3e})")
    t = 1.0
    for _ in range(cfg.ls_max_steps):
        if evaluate(w_r + t * d_r) <= f_r + cfg.ls_c1 * t * slope:
            return t
        t *= cfg.ls_backtrack
    raise LineSearchError(f"no acceptable step within {cfg.ls_max_steps} trials")


# ---------------------------------------------------------------------------
# SPMD node program
# ---------------------------------------------------------------------------


def _master_local_solve(node, lcg, w, g_loss, cfg, P, epoch):
    """CG on the DC master; every Hessian-vector product is one LCG
    broadcast + reduce (in-DC traffic only)."""
    d = w.size
    rhs = -(cfg.lam * w + g_loss)

    def apply_a(v):
        node.broadcast_scalar(lcg, 1.0, "ctl", epoch)
        v_wire = node.broadcast(lcg, v, "hvq", epoch)
        hv = node.reduce(lcg, np.zeros(d), "hvr", epoch)
        return cfg.lam * v_wire + P * hv

    try:
        delta, iters = cg_solve(apply_a, rhs, cfg.cg_tol, cfg.cg_max_iter)
    finally:
        node.broadcast_scalar(lcg, 0.0, "ctl", epoch)
    return delta, iters


def _slave_hv_loop(node, lcg, X, curv, epoch):
    while True:
        flag = node.broadcast_scalar(lcg, None, "ctl", epoch)
        if flag == 0.0:
            return
        v = node.broadcast(lcg, None, "hvq", epoch)
        node.reduce(lcg, gl.hessian_vec_from_curvature(X, curv, v), "hvr", epoch)


def _tree_line_search(node, state, epoch, cfg):
    """Scalar-only backtracking over the tree. Trials reduce the *change* in
    loss rather than its absolute value, so acceptance keeps full resolution
    even when the decrease is far below the wire precision of the loss
    itself. Returns the accepted step size."""
    if node.is_slave:
        base_loss = gl.logistic_loss_sum(state["m"], state["y"])
    if node.is_global_master:
        slope = float(state["g_full"] @ state["d_r"])
        t_next = 1.0 if slope < 0 else 0.0
        trials = 0
    while True:
        code = gc.tree_broadcast_scalar(
            node, t_next if node.is_global_master else None, "step", epoch)
        if code == 0.0:
            raise LineSearchError(
                f"line search failed at outer iteration {epoch}"
                + ("" if node.is_global_master else f" (node {node.node})"))
        if code < 0.0:
            step = -code
            if node.is_slave:
                state["m"] += step * state["m_d"]
            else:
                state["w"] += step * state["d_r"]
            if node.is_global_master:
                state["ls_trials"] += trials
            return step
        # a trial step: evaluate the objective change at w + code * d
        if node.is_slave:
            diff = gl.logistic_loss_sum(state["m"] + code * state["m_d"],
                                        state["y"]) - base_loss
            gc.tree_reduce_scalar(node, diff, "loss", epoch)
        else:
            loss_diff = gc.tree_reduce_scalar(node, 0.0, "loss", epoch)
        if node.is_global_master:
            trials += 1
            w, d_r = state["w"], state["d_r"]
            reg_diff = cfg.lam * (code * float(w @ d_r)
                                  + 0.5 * code * code * float(d_r @ d_r))
            f_diff = reg_diff + loss_diff
            if f_diff <= cfg.ls_c1 * code * slope:
                t_next = -code
                state["f_next"] = state["f_r"] + f_diff
            elif trials >= cfg.ls_max_steps:
                t_next = 0.0
            else:
                t_next = code * cfg.ls_backtrack


def _exchange_grad_loss(node, state, epoch, cfg):
    """Step 1 of every outer iteration: global gradient and loss, then the
    continue/stop decision. Returns False when training stops."""
    d = state["dim"]
    if node.is_slave:
        lsum, grad = gl.loss_grad_from_margins(state["X"], state["y"], state["m"])
        gc.tree_reduce(node, grad, "grad", epoch, np.zeros(d))
        if epoch == 0:
            gc.tree_reduce_scalar(node, lsum, "loss", epoch)
        code = None
    else:
        state["total_grad"] = gc.tree_reduce(node, np.zeros(d), "grad", epoch, np.zeros(d))
        if epoch == 0:
            total_loss = gc.tree_reduce_scalar(node, 0.0, "loss", epoch)
        code = None
        if node.is_global_master:
            w = state["w"]
            g_full = cfg.lam * w + state["total_grad"]
            gnorm = float(np.linalg.norm(g_full))
            if not np.isfinite(gnorm):
                raise OptimizationError("gradient became non-finite")
            state["g_full"] = g_full
            # the objective is tracked incrementally through the accepted
            # line-search decreases; only iteration 0 measures it directly
            if epoch == 0:
                state["f_r"] = 0.5 * cfg.lam * float(w @ w) + total_loss
            else:
                state["f_r"] = state.pop("f_next")
            if epoch == 0:
                state["g0_norm"] = gnorm
            state["rows"].append(IterRow(epoch, state["f_r"], gnorm, 0, 0,
                                         node.now(),
                                         time.perf_counter() - state["t_start"]))
            state["converged"] = gnorm <= cfg.eps_g * state["g0_norm"]
            code = 0.0 if (state["converged"] or epoch == cfg.max_outer) else 1.0
    return gc.tree_broadcast_scalar(node, code, "ctl", epoch) != 0.0


def _init_state(node, slave_part, dim):
    state = {"dim": dim}
    if node.is_slave:
        X, y = slave_part
        state.update(X=X, y=y, m=np.zeros(X.shape[0]))
    else:
        state["w"] = np.zeros(dim)
    if node.is_global_master:
        state.update(rows=[], ls_trials=0, cg_rounds=0, converged=False,
                     g0_norm=None, t_start=time.perf_counter())
    return state


def _fadl_node(node, slave_part, dim, cfg):
    top = node.topology
    P = top.P
    state = _init_state(node, slave_part, dim)
    r = 0
    for r in range(cfg.max_outer + 1):
        if not _exchange_grad_loss(node, state, r, cfg):
            break
        # ship the aggregated loss gradient to the DC masters
        if node.is_global_master:
            node.broadcast(top.gcg(), state["total_grad"], "gvec", r)
        elif node.is_dc_master:
            g_loss = node.broadcast(top.gcg(), None, "gvec", r)
        # each DC minimizes its local model with in-DC CG
        if node.is_dc_master:
            delta, _iters = _master_local_solve(node, top.lcg(node.dc), state["w"],
                                                g_loss, cfg, P, r)
        elif node.is_slave:
            _slave_hv_loop(node, top.lcg(node.dc), state["X"],
                           gl.curvature_from_margins(state["m"]), r)
        # average the local directions
        if node.is_dc_master:
            node.reduce(top.gcg(), delta, "dir", r)
            payload = None
        elif node.is_global_master:
            dsum = node.reduce(top.gcg(), np.zeros(dim), "dir", r)
            payload = dsum / P
        else:
            payload = None
        state["d_r"] = gc.tree_broadcast(node, payload, "dir", r)
        if node.is_slave:
            state["m_d"] = state["X"] @ state["d_r"]
        _tree_line_search(node, state, r, cfg)
    if node.is_global_master:
        return state["w"], TrainReport(rows=state["rows"], t_outer=r,
                                       converged=state["converged"],
                                       ls_trials=state["ls_trials"])
    return None


# ---------------------------------------------------------------------------
# driver entry point
# ---------------------------------------------------------------------------


def split_for_slaves(shard: DcShard, topology: gc.Topology, dim: int):
    """Contiguous split of a DC shard among its slave nodes, compiled to CSR."""
    slaves = topology.slaves(shard.dc_id)
    chunks = np.array_split(np.asarray(shard.examples, dtype=object), len(slaves))
    return {node: to_csr(list(chunk), dim) for node, chunk in zip(slaves, chunks)}


def infer_dim(shards) -> int:
    top = max(max_index(s.examples) for s in shards)
    if top < 0:
        raise ConfigError("cannot infer dimensionality from empty shards")
    return top + 1


def _finalize_report(result, ledger: gc.TransferLedger):
    w, report = result
    report.ledger = ledger
    for row in report.rows:
        xdc, indc = ledger.cumulative_through_epoch(row.iter - 1)
        row.xdc_bytes_cum = xdc
        row.indc_bytes_cum = indc
    return w, report


def fadl_train(shards, topology: gc.Topology, cfg: FadlConfig, dim: int = None,
               transport: str = "simulated", wire_dtype=np.float32):
    """Train across data centers; returns (weights, TrainReport).

    ``shards`` must hold one DcShard per data center, in dc_id order.
    """
    if len(shards) != topology.P:
        raise ConfigError(f"expected {topology.P} shards, got {len(shards)}")
    if all(s.n_p == 0 for s in shards):
        raise ConfigError("all shards are empty")
    if dim is None:
        dim = infer_dim(shards)
    slave_data = {}
    for shard in shards:
        slave_data.update(split_for_slaves(shard, topology, dim))
    result, ledger = gc.run_spmd(topology, _fadl_node, slave_data, transport,
                                 wire_dtype, args=(dim, cfg))
    return _finalize_report(result, ledger)
