"""Experiment orchestration: dataset synthesis, method sweeps, curve export.

A sweep runs several training methods on identical shards and emits, per
method, the iteration report, the transfer ledger, and two curve files
(relative objective versus cross-DC bytes and versus time), plus
rendered figures. The relative objective is (f - f*) / f* where f* is
the smallest objective value seen by any method in the sweep.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from gdml import comm as gc
from gdml import data as gd
from gdml.baselines import METHODS, CompressionModel, run_method
from gdml.errors import ConfigError, GdmlError
from gdml.fadl import FadlConfig

_DEF_METHODS = list(METHODS)


def _sample_unique(rng, d, k):
    """k distinct ints in [0, d), deterministic per rng state."""
    if k * 2 >= d:
        return rng.permutation(d)[:k]
    seen = rng.integers(0, d, size=k)
    uniq = np.unique(seen)
    while uniq.size < k:
        extra = rng.integers(0, d, size=k - uniq.size)
        uniq = np.unique(np.concatenate([uniq, extra]))
    return uniq


def synth_dataset(n: int, dim: int, sparsity: int, noise: float, seed: int):
    """Sparse linearly-separable-plus-noise dataset, deterministic per seed."""
    if n < 1:
        raise ConfigError("need at least one example")
    if not 0 < sparsity <= dim:
        raise ConfigError("sparsity must lie in (0, dim]")
    if not 0 <= noise < 0.5:
        raise ConfigError("label noise must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=dim)
    out = []
    for _ in range(n):
        idx = np.sort(_sample_unique(rng, dim, sparsity))
        val = rng.normal(size=sparsity)
        val[val == 0.0] = 1.0
        margin = float(w_true[idx] @ val)
        label = 1 if margin > 0 else -1
        if noise > 0 and rng.random() < noise:
            label = -label
        out.append(gd.SparseExample(idx, val, label))
    return out


@dataclass
class ExperimentSpec:
    topology: gc.Topology
    methods: list
    fadl: FadlConfig = field(default_factory=FadlConfig)
    # dataset: either a synthetic generator or a LibSVM file (+ hashing)
    synthetic: dict = None            # n, dim, sparsity, noise, seed
    input_file: str = None
    hashing: gd.HashingConfig = None
    dim: int = None
    partition_strategy: str = "random-uniform"
    partition_seed: int = 0
    partition_weights: list = None
    partition_skew: float = None
    compression: CompressionModel = field(default_factory=CompressionModel)
    dataset_bytes_override: int = None
    destination: int = None
    transport: str = "simulated"
    wire: str = "f32"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("spec must list at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if (self.synthetic is None) == (self.input_file is None):
            raise ConfigError("spec needs exactly one of a synthetic dataset or an input file")
        if self.transport not in ("simulated", "socket"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.wire not in ("f32", "f64"):
            raise ConfigError(f"wire precision must be f32 or f64, got {self.wire!r}")

    @property
    def wire_dtype(self):
        return np.float32 if self.wire == "f32" else np.float64


def load_spec(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad spec file: {e}") from None
    try:
        topo_kv = dict(raw["topology"])
        run_kv = dict(raw.get("run", {}))
        ds = dict(raw.get("dataset", {}))
        part = dict(raw.get("partition", {}))
        topology = gc.Topology(**topo_kv)
        fadl_cfg = FadlConfig.from_mapping(raw.get("optimizer", {}))
        hashing = None
        if "hash_dim" in ds:
            hashing = gd.HashingConfig(ds["hash_dim"], ds.get("hash_seed", 0),
                                       ds.get("hash_signed", False))
        synthetic = None
        if ds.get("synthetic"):
            synthetic = {k: ds[k] for k in ("n", "dim", "sparsity", "noise", "seed")}
        compression = CompressionModel(run_kv.get("compression_ratio", 1.0),
                                       run_kv.get("bytes_per_nonzero", 8))
        return ExperimentSpec(
            topology=topology,
            methods=list(run_kv.get("methods", _DEF_METHODS)),
            fadl=fadl_cfg,
            synthetic=synthetic,
            input_file=ds.get("file"),
            hashing=hashing,
            dim=ds.get("dim") if not ds.get("synthetic") else ds["dim"],
            partition_strategy=part.get("strategy", "random-uniform"),
            partition_seed=part.get("seed", 0),
            partition_weights=part.get("weights"),
            partition_skew=part.get("skew"),
            compression=compression,
            dataset_bytes_override=run_kv.get("dataset_bytes_override"),
            destination=run_kv.get("destination"),
            transport=run_kv.get("transport", "simulated"),
            wire=run_kv.get("wire", "f32"),
        )
    except KeyError as e:
        raise ConfigError(f"spec file missing key {e}") from None
    except TypeError as e:
        raise ConfigError(f"bad spec file: {e}") from None


def build_shards(spec: ExperimentSpec):
    """Materialize the dataset and partition it; identical for every method."""
    if spec.synthetic is not None:
        examples = synth_dataset(spec.synthetic["n"], spec.synthetic["dim"],
                                 spec.synthetic["sparsity"], spec.synthetic["noise"],
                                 spec.synthetic["seed"])
        dim = spec.synthetic["dim"]
    else:
        with open(spec.input_file) as fh:
            examples = gd.parse_libsvm(fh)
        if spec.hashing is not None:
            examples = gd.hash_dataset(examples, spec.hashing)
            dim = spec.hashing.target_dim
        else:
            dim = spec.dim if spec.dim is not None else gd.max_index(examples) + 1
    shards = gd.partition(examples, spec.topology.P, spec.partition_strategy,
                          spec.partition_seed, spec.partition_weights,
                          spec.partition_skew)
    return shards, dim


@dataclass
class MethodResult:
    method: str
    w: np.ndarray
    report: object


@dataclass
class SweepResult:
    results: list
    f_star: float
    out_dir: Path
    files: list


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_curves(out_dir: Path, method: str, report, f_star, time_label, t_norm):
    files = []
    path = out_dir / f"curve_transfer_{method}.csv"
    with open(path, "w") as fh:
        fh.write("xdc_bytes,rel_obj\n")
        for row in report.rows:
            fh.write(f"{row.xdc_bytes_cum},{_fmt((row.f - f_star) / f_star)}\n")
    files.append(path)
    path = out_dir / f"curve_time_{method}.csv"
    with open(path, "w") as fh:
        fh.write(f"{time_label},rel_obj\n")
        for row in report.rows:
            fh.write(f"{_fmt(row.sim_time / t_norm)},{_fmt((row.f - f_star) / f_star)}\n")
    files.append(path)
    return files


def run_experiment(spec: ExperimentSpec, out_dir, render_figures: bool = True) -> SweepResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shards, dim = build_shards(spec)
    results = []
    try:
        for method in spec.methods:
            w, report = run_method(method, shards, spec.topology, spec.fadl, dim,
                                   spec.compression, spec.transport, spec.wire_dtype,
                                   spec.destination, spec.dataset_bytes_override)
            results.append(MethodResult(method, w, report))
    except GdmlError:
        _flush_partial(out_dir, results, spec)
        raise

    f_star = min(row.f for res in results for row in res.report.rows)
    t_norm = 1.0
    time_label = "sim_time" if spec.transport == "simulated" else "wall_time"
    for res in results:
        if res.method == "centralized-stream":
            t_norm = res.report.total_sim_time or 1.0
            time_label += "_norm"
    files = []
    for res in results:
        rep_path = out_dir / f"report_{res.method}.csv"
        _write_report_csv(rep_path, res.report, spec.transport)
        led_path = out_dir / f"ledger_{res.method}.csv"
        res.report.ledger.to_csv(led_path)
        files += [rep_path, led_path]
        files += _write_curves(out_dir, res.method, res.report, f_star,
                               time_label, t_norm)
    if render_figures:
        from gdml import plotting
        files += plotting.render_sweep_figures(results, f_star, out_dir, time_label, t_norm)
    return SweepResult(results, f_star, out_dir, files)


def _write_report_csv(path, report, transport):
    # wall_time is only meaningful (and only reproducible as a concept) for
    # real-process runs; simulated runs zero it so reruns are byte-identical
    with open(path, "w") as fh:
        fh.write("iter,f,grad_norm,xdc_bytes_cum,indc_bytes_cum,sim_time,wall_time\n")
        for row in report.rows:
            wall = 0.0 if transport == "simulated" else row.wall_time
            fh.write(f"{row.iter},{_fmt(row.f)},{_fmt(row.grad_norm)},"
                     f"{row.xdc_bytes_cum},{row.indc_bytes_cum},"
                     f"{_fmt(row.sim_time)},{wall:.6f}\n")


def _flush_partial(out_dir: Path, results, spec):
    """A method failed: preserve whatever completed, flagged as partial."""
    for res in results:
        _write_report_csv(out_dir / f"report_{res.method}.csv", res.report, spec.transport)
        res.report.ledger.to_csv(out_dir / f"ledger_{res.method}.csv")
    (out_dir / "FAILED").write_text(
        "sweep aborted; outputs above cover only the completed methods\n")
