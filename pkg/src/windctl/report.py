"""Report rendering: delimited per-flow summary plus matplotlib figures.

Consumes a metrics JSON file (and optionally the NDJSON event trace) as
produced by `windctl run-scenario`, and writes flows.csv alongside PNG
figures into the output directory.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (8, 4.5)
DPI = 130


def load_metrics(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def load_trace(path: str | Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_flow_csv(metrics: dict, out: Path) -> Path:
    fields = [
        "flow_id", "generated", "delivered", "lost", "in_flight",
        "max_delay_s", "mean_delay_s", "bound_s", "failover_gap_s",
        "availability",
    ]
    target = out / "flows.csv"
    with open(target, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for flow_id in sorted(metrics["flows"]):
            writer.writerow(
                {k: metrics["flows"][flow_id].get(k) for k in fields}
            )
    return target


def fig_delay_vs_bound(metrics: dict, out: Path) -> Path | None:
    rows = [
        (fid, fm["max_delay_s"], fm["bound_s"])
        for fid, fm in sorted(metrics["flows"].items())
        if fm.get("max_delay_s") is not None and fm.get("bound_s") is not None
    ]
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = range(len(rows))
    ax.bar(xs, [r[2] * 1e3 for r in rows], width=0.6, color="#cfd8dc",
           label="worst-case bound")
    ax.bar(xs, [r[1] * 1e3 for r in rows], width=0.35, color="#1565c0",
           label="observed max delay")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r[0] for r in rows], rotation=45, ha="right",
                       fontsize=7)
    ax.set_ylabel("delay [ms]")
    ax.set_title("Observed maximum delay against the admission-time bound")
    ax.legend()
    fig.tight_layout()
    target = out / "delay_bounds.png"
    fig.savefig(target, dpi=DPI)
    plt.close(fig)
    return target


def fig_availability(metrics: dict, out: Path) -> Path | None:
    rows = sorted(metrics["flows"].items())
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = range(len(rows))
    ax.bar(xs, [fm["availability"] for _f, fm in rows], color="#2e7d32")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f for f, _ in rows], rotation=45, ha="right",
                       fontsize=7)
    ax.set_ylim(0.0, 1.02)
    ax.axhline(0.9999, color="#b71c1c", linestyle="--", linewidth=0.8,
               label="99.99% target")
    ax.set_ylabel("availability fraction")
    ax.set_title("Per-flow path availability over the run")
    ax.legend()
    fig.tight_layout()
    target = out / "availability.png"
    fig.savefig(target, dpi=DPI)
    plt.close(fig)
    return target


def fig_delivery_timeline(trace: list[dict], out: Path) -> Path | None:
    deliveries = [r for r in trace if r.get("kind") == "deliver"]
    if not deliveries:
        return None
    flows = sorted({r["flow"] for r in deliveries})
    fig, ax = plt.subplots(figsize=FIGSIZE)
    cmap = plt.get_cmap("tab10")
    for i, flow in enumerate(flows):
        pts = [(r["t"], r["delay_s"] * 1e3) for r in deliveries
               if r["flow"] == flow]
        ax.plot(
            [p[0] for p in pts], [p[1] for p in pts],
            ".", markersize=2.5, color=cmap(i % 10),
            label=flow if len(flows) <= 10 else None,
        )
    drops = [r for r in trace if r.get("kind") == "drop"]
    for r in drops:
        ax.axvline(r["t"], color="#ef9a9a", linewidth=0.3, zorder=0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("per-packet delay [ms]")
    ax.set_title("Delivery delays over the run (drops shaded)")
    if len(flows) <= 10:
        ax.legend(fontsize=6)
    fig.tight_layout()
    target = out / "delays_timeline.png"
    fig.savefig(target, dpi=DPI)
    plt.close(fig)
    return target


def render_report(metrics_path: str, trace_path: str | None,
                  out_dir: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = load_metrics(metrics_path)
    written = [write_flow_csv(metrics, out)]
    for fig in (fig_delay_vs_bound(metrics, out), fig_availability(metrics, out)):
        if fig is not None:
            written.append(fig)
    if trace_path:
        timeline = fig_delivery_timeline(load_trace(trace_path), out)
        if timeline is not None:
            written.append(timeline)
    return written
