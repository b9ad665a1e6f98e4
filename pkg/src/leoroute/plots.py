"""Static figures rebuilt from run CSVs only (no in-memory coupling)."""
from __future__ import annotations

import csv
import io
import statistics
from pathlib import Path

from .simcore import read_summary_csv


def grouped(rows, key, value, where=None):
    """``{key tuple: mean(value)}`` over rows passing ``where``."""
    acc = {}
    for r in rows:
        if where and not where(r):
            continue
        v = r.get(value)
        if v is None or v != v:
            continue
        acc.setdefault(tuple(r[k] for k in key), []).append(v)
    return {k: statistics.fmean(v) for k, v in sorted(acc.items())}


def latency_table(rows):
    """Mean latency per (policy, level) over seeds."""
    return grouped(rows, ("policy", "level_bps"), "latency_mean_s")


def _with_rate(rows):
    """Decision cost per simulated second, so runs of different length compare."""
    out = []
    for r in rows:
        t = r.get("sim_time_s")
        out.append({**r, "decision_cost_rate": r["decision_cost_s"] / t if t else None})
    return out


def table_csv(table, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, v in table.items():
        w.writerow([*k, repr(float(v))])
    return buf.getvalue()


def make_plots(out_dir) -> list[Path]:
    """Write the four figure analogues (PNG) plus their tables (CSV) under ``out_dir/plots``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    rows = read_summary_csv((out_dir / "summary.csv").read_text())
    sweep_path = out_dir / "sweep.csv"
    sweep = read_summary_csv(sweep_path.read_text()) if sweep_path.exists() else []
    pdir = out_dir / "plots"
    pdir.mkdir(exist_ok=True)
    written = []

    lat = latency_table(rows)
    (pdir / "fig1_latency.csv").write_text(table_csv(lat, ["policy", "level_bps", "latency_mean_s"]))
    levels = sorted({k[1] for k in lat})
    policies = sorted({k[0] for k in lat})
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(policies))
    for i, p in enumerate(policies):
        xs = [j + i * width for j in range(len(levels))]
        ax.bar(xs, [1e3 * lat.get((p, lv), float("nan")) for lv in levels], width, label=p)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(levels))])
    ax.set_xticklabels([f"{lv / 1e6:g}" for lv in levels])
    ax.set_xlabel("background traffic (Mb/s)")
    ax.set_ylabel("mean latency (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(pdir / "fig1_latency.png", dpi=120)
    plt.close(fig)
    written.append(pdir / "fig1_latency.png")

    if sweep:
        cost = grouped(_with_rate(sweep), ("interval_s",), "decision_cost_rate")
        churn = grouped(sweep, ("interval_s",), "path_change_pct")
        (pdir / "fig2_cost.csv").write_text(table_csv(cost, ["interval_s", "decision_cost_rate"]))
        (pdir / "fig3_path_change.csv").write_text(table_csv(churn, ["interval_s", "path_change_pct"]))
        learned = grouped(_with_rate(rows), ("policy",), "decision_cost_rate",
                          where=lambda r: r["policy"] != "dijkstra" and r["level_bps"] == levels[0])
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [k[0] for k in cost]
        ax.plot(xs, list(cost.values()), "o-", label="dijkstra")
        for (p,), v in learned.items():
            ax.axhline(v, linestyle="--", label=p)
        ax.set_xlabel("recalculation interval (s)")
        ax.set_ylabel("modeled decision cost per simulated second")
        ax.legend()
        fig.tight_layout()
        fig.savefig(pdir / "fig2_cost.png", dpi=120)
        plt.close(fig)
        written.append(pdir / "fig2_cost.png")

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([k[0] for k in churn], list(churn.values()), "o-")
        ax.set_xlabel("recalculation interval (s)")
        ax.set_ylabel("path changes (%)")
        fig.tight_layout()
        fig.savefig(pdir / "fig3_path_change.png", dpi=120)
        plt.close(fig)
        written.append(pdir / "fig3_path_change.png")

    res = grouped(rows, ("policy", "level_bps"), "resilience_links")
    (pdir / "fig4_resilience.csv").write_text(table_csv(res, ["policy", "level_bps", "resilience_links"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in policies:
        pts = sorted((k[1], v) for k, v in res.items() if k[0] == p)
        ax.plot([x / 1e6 for x, _ in pts], [v for _, v in pts], "o-", label=p)
    ax.set_xlabel("background traffic (Mb/s)")
    ax.set_ylabel("mean resilience score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(pdir / "fig4_resilience.png", dpi=120)
    plt.close(fig)
    written.append(pdir / "fig4_resilience.png")
    return written
