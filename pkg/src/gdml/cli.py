"""Command line interface.

  gdml run        execute a method sweep from a TOML spec file
  gdml cost       closed-form transfer/storage predictions
  gdml synth      generate a synthetic dataset
  gdml partition  hash and split a LibSVM file into binary shards

Exit codes: 0 success, 2 spec/input error, 3 runtime failure.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click

from gdml import costmodel, data, harness
from gdml.baselines import CompressionModel
from gdml.errors import ConfigError, GdmlError, ParseError


@click.group()
def cli():
    """Geo-distributed training with cross-DC transfer accounting."""


@cli.command("run")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default="out", show_default=True, type=click.Path(file_okay=False))
@click.option("--method", "methods", multiple=True,
              help="Override the spec's method list (repeatable).")
@click.option("--transport", type=click.Choice(["simulated", "socket"]), default=None)
@click.option("--compression-ratio", type=float, default=None)
@click.option("--bytes-per-nonzero", type=int, default=None)
@click.option("--dataset-bytes-override", type=int, default=None)
@click.option("--destination", type=int, default=None,
              help="Pin the centralization target DC (default: largest shard).")
@click.option("--figures/--no-figures", default=True, show_default=True)
def run_cmd(spec_path, out_dir, methods, transport, compression_ratio,
            bytes_per_nonzero, dataset_bytes_override, destination, figures):
    """Run every method in the spec on identical shards and emit curves."""
    spec = harness.load_spec(spec_path)
    if methods:
        spec = replace(spec, methods=list(methods))
    if transport:
        spec = replace(spec, transport=transport)
    comp = spec.compression
    if compression_ratio is not None or bytes_per_nonzero is not None:
        comp = CompressionModel(
            compression_ratio if compression_ratio is not None else comp.ratio,
            bytes_per_nonzero if bytes_per_nonzero is not None else comp.bytes_per_nonzero)
        spec = replace(spec, compression=comp)
    if dataset_bytes_override is not None:
        spec = replace(spec, dataset_bytes_override=dataset_bytes_override)
    if destination is not None:
        spec = replace(spec, destination=destination)
    sweep = harness.run_experiment(spec, out_dir, render_figures=figures)
    click.echo(f"f* = {sweep.f_star!r}")
    for res in sweep.results:
        rep = res.report
        click.echo(f"{res.method}: f={rep.final_f!r} outer={rep.t_outer} "
                   f"xdc_bytes={rep.ledger.xdc_bytes} converged={rep.converged}")
    for path in sweep.files:
        click.echo(f"wrote {path}")


@cli.command("cost")
@click.option("--n", "n_examples", required=True, type=int, help="Total example count N.")
@click.option("--shard-sizes", default=None,
              help="Comma-separated per-DC example counts (default: even split).")
@click.option("--partitions", "-p", "P", default=2, show_default=True, type=int)
@click.option("--dim", required=True, type=int)
@click.option("--avg-nnz", required=True, type=float)
@click.option("--t-outer", default=7, show_default=True, type=int)
@click.option("--bytes-per-float", default=4, show_default=True, type=int)
@click.option("--bytes-per-nonzero", default=8, show_default=True, type=int)
@click.option("--compression-ratio", default=1.0, show_default=True, type=float)
@click.option("--dataset-bytes", default=None, type=float,
              help="Known compressed dataset size; overrides the nnz estimate.")
def cost_cmd(n_examples, shard_sizes, P, dim, avg_nnz, t_outer, bytes_per_float,
             bytes_per_nonzero, compression_ratio, dataset_bytes):
    """Print predicted transfer costs and storage multipliers."""
    if shard_sizes:
        sizes = [int(s) for s in shard_sizes.split(",")]
    else:
        base = n_examples // P
        sizes = [base] * P
        sizes[0] += n_examples - base * P
    inputs = costmodel.CostInputs(
        n_examples=n_examples, shard_sizes=sizes, dim=dim, avg_nnz=avg_nnz,
        t_outer=t_outer, bytes_per_float=bytes_per_float,
        bytes_per_nonzero=bytes_per_nonzero, compression_ratio=compression_ratio,
        dataset_bytes=int(dataset_bytes) if dataset_bytes is not None else None)
    tc = costmodel.predict_tc(inputs)
    td = costmodel.predict_td(inputs, mode="paper")
    verdict = costmodel.crossover(inputs)
    click.echo(f"{'T_C (centralize)':24s} {tc:.6g} bytes")
    click.echo(f"{'T_D (distributed, paper)':24s} {td:.6g} bytes")
    click.echo(f"{'crossover':24s} favors {verdict.favors} "
               f"(T_C/T_D = {verdict.margin:.6g})")
    for method in ("distributed", "centralized"):
        rep = costmodel.storage_report(sizes, method, avg_nnz, bytes_per_nonzero)
        click.echo(f"{'storage ' + method:24s} {rep.multiplier:.4g}x "
                   f"({rep.total_bytes:.6g} bytes)")


@cli.command("synth")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", required=True, type=int)
@click.option("--dim", required=True, type=int)
@click.option("--sparsity", default=10, show_default=True, type=int)
@click.option("--noise", default=0.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["libsvm", "shard"]),
              default="libsvm", show_default=True)
def synth_cmd(out_path, n, dim, sparsity, noise, seed, fmt):
    """Write a synthetic dataset to disk."""
    examples = harness.synth_dataset(n, dim, sparsity, noise, seed)
    if fmt == "libsvm":
        with open(out_path, "w") as fh:
            for ex in examples:
                fh.write(data.serialize_libsvm(ex) + "\n")
    else:
        data.write_shard_file(out_path, examples)
    click.echo(f"wrote {n} examples to {out_path}")


@cli.command("partition")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--hash-dim", default=None, type=int)
@click.option("--hash-seed", default=0, show_default=True, type=int)
@click.option("--hash-signed", is_flag=True, default=False)
@click.option("--partitions", required=True, type=int)
@click.option("--partition-strategy", default="random-uniform", show_default=True,
              type=click.Choice(["random-uniform", "random-weighted", "label-biased"]))
@click.option("--partition-seed", default=0, show_default=True, type=int)
@click.option("--weights", default=None, help="Comma-separated shard weights.")
@click.option("--skew", default=None, type=float)
@click.option("--out-dir", default="shards", show_default=True,
              type=click.Path(file_okay=False))
def partition_cmd(input_path, hash_dim, hash_seed, hash_signed, partitions,
                  partition_strategy, partition_seed, weights, skew, out_dir):
    """Parse, hash, and split a LibSVM file into binary shard files."""
    with open(input_path) as fh:
        examples = data.parse_libsvm(fh)
    if hash_dim is not None:
        examples = data.hash_dataset(
            examples, data.HashingConfig(hash_dim, hash_seed, hash_signed))
    w = [float(x) for x in weights.split(",")] if weights else None
    shards = data.partition(examples, partitions, partition_strategy,
                            partition_seed, w, skew)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for shard in shards:
        path = out / f"shard_{shard.dc_id}.bin"
        data.write_shard_file(path, shard.examples)
        click.echo(f"wrote {path} ({shard.n_p} examples, {shard.nnz_total} nnz)")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(3)
    except (ConfigError, ParseError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except GdmlError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
