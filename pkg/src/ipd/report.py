"""Render convergence figures from trace and summary files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .solvers import Trace  # noqa: E402


def plot_trace(trace_path, out_path=None) -> str:
    """Render feasibility / objective-gap / energy curves of one trace to a
    PNG next to the CSV (or at ``out_path``)."""
    trace_path = Path(trace_path)
    tr = Trace.from_csv(trace_path)
    if out_path is None:
        out_path = trace_path.with_suffix(".png")
    ks = tr.column("k") + 1  # rows describe the produced iterates
    feas = tr.column("feas")
    gaps = np.abs(tr.column("obj_gap"))
    energy = tr.column("energy")

    panels = [("feasibility violation", feas)]
    if not np.isnan(gaps).all():
        panels.append(("objective error", gaps))
    if not np.isnan(energy).all():
        panels.append(("energy", energy))

    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
    if len(panels) == 1:
        axes = [axes]
    for ax, (label, vals) in zip(axes, panels):
        mask = ~np.isnan(vals) & (vals > 0)
        ax.loglog(ks[mask], vals[mask], lw=1.2)
        ax.set_xlabel("iteration k")
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
    algo = tr.meta.get("algorithm", "")
    fig.suptitle(f"{algo} {tr.meta.get('problem', '')}".strip())
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return str(out_path)


def plot_summary(summary_csv, out_path=None) -> str:
    """Bar chart of iteration counts per (instance, algorithm) row."""
    summary_csv = Path(summary_csv)
    if out_path is None:
        out_path = summary_csv.with_suffix(".png")
    with open(summary_csv) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:] if ln.strip()]
    labels = [f"{r['m']}x{r['n']} {r['algorithm']} a={r['alpha']}" for r in rows]
    inits = [float(r["Init"]) if r["Init"] else np.nan for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(rows)), 4))
    ax.bar(range(len(rows)), inits)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("iterations")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return str(out_path)
