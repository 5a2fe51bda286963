"""Figure rendering for run and sweep reports.

Every chart is written next to the delimited output it visualizes; the CSV
files stay the canonical data, the PNGs are the human view.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricsLedger

_TOWN_COLORS = ("tab:red", "tab:orange", "tab:green", "tab:blue", "tab:purple")
_POLICY_STYLES = {
    "none": ("tab:gray", ":"),
    "random": ("tab:purple", "-."),
    "load-balancing": ("tab:orange", "--"),
    "emergency": ("tab:red", "-"),
    "lsi": ("tab:blue", "-"),
}


def plot_timeseries(ledger: MetricsLedger, path: str) -> str:
    """Per-town success rate over time for one run."""
    rows = ledger.timeseries_rows()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for i, town in enumerate(ledger.towns()):
        xs = [r[0] for r in rows if r[1] == town]
        ys = [r[4] for r in rows if r[1] == town]
        ax.plot(xs, ys, label=town, color=_TOWN_COLORS[i % len(_TOWN_COLORS)])
    ax.set_xlabel("time (s)")
    ax.set_ylabel("task success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"policy={ledger.policy} uavs={ledger.uav_count} seed={ledger.seed}")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_comparisons(rows: list[tuple[str, int, str, float]], out_dir: str) -> list[str]:
    """One chart per town plus the overall chart, rate vs UAV count per policy.

    `rows` are compare_table() rows: (policy, uav_count, town, mean rate).
    """
    os.makedirs(out_dir, exist_ok=True)
    towns = sorted({r[2] for r in rows})
    paths = []
    for town in towns:
        fname = "comparison_overall.png" if town == "ALL" else f"comparison_{town}.png"
        path = os.path.join(out_dir, fname)
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        policies = sorted({r[0] for r in rows})
        for policy in policies:
            pts = sorted((r[1], r[3]) for r in rows if r[0] == policy and r[2] == town)
            if not pts:
                continue
            color, style = _POLICY_STYLES.get(policy, ("black", "-"))
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", color=color, linestyle=style, label=policy)
        ax.set_xlabel("number of UAVs")
        ax.set_ylabel("mean task success rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title("overall" if town == "ALL" else town)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
