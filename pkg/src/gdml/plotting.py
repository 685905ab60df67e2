"""Figure rendering for sweep outputs (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_Y_FLOOR = 1e-12

_STYLE = {
    "distributed-fadl": dict(color="tab:blue", marker="o"),
    "distributed": dict(color="tab:orange", marker="s"),
    "centralized-stream": dict(color="tab:green", marker="^"),
    "centralized-bulk": dict(color="tab:red", marker="v"),
}


def _rel(rows, f_star):
    return [max((row.f - f_star) / f_star, _Y_FLOOR) for row in rows]


def render_sweep_figures(results, f_star, out_dir, time_label="sim_time", t_norm=1.0):
    """Two PNGs: relative objective vs X-DC bytes and vs (normalized) time."""
    out_dir = Path(out_dir)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for res in results:
        xs = [max(row.xdc_bytes_cum, 1) for row in res.report.rows]
        ax.plot(xs, _rel(res.report.rows, f_star), label=res.method,
                **_STYLE.get(res.method, {}))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("cumulative X-DC bytes")
    ax.set_ylabel("relative objective (f - f*) / f*")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = out_dir / "objective_vs_transfer.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for res in results:
        xs = [row.sim_time / t_norm for row in res.report.rows]
        ax.plot(xs, _rel(res.report.rows, f_star), label=res.method,
                **_STYLE.get(res.method, {}))
    ax.set_yscale("log")
    ax.set_xlabel(time_label.replace("_", " "))
    ax.set_ylabel("relative objective (f - f*) / f*")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = out_dir / "objective_vs_time.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
