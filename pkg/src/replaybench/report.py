"""Static report rendering: reward curves, metric tables, fairness charts.

Everything is emitted as standalone SVG files plus one self-contained HTML
page; there is no served dashboard.
"""

from __future__ import annotations

import csv
import html
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def render_reward_curves(curve_files: dict, out_path: str):
    """Plot cumulative mean reward with CI bands, one curve per agent.

    ``curve_files`` maps agent label to a reward_curve.csv path.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    for label, path in sorted(curve_files.items()):
        steps, mean, ci = [], [], []
        with open(path) as fh:
            for row in csv.DictReader(fh):
                steps.append(int(row["step"]))
                mean.append(float(row["mean_cumulative_reward"]))
                ci.append(float(row["ci_half_width"]))
        steps, mean, ci = map(lambda v: v, (steps, mean, ci))
        ax.plot(steps, mean, label=label)
        lo = [m - c for m, c in zip(mean, ci)]
        hi = [m + c for m, c in zip(mean, ci)]
        ax.fill_between(steps, lo, hi, alpha=0.2)
    ax.set_xlabel("step")
    ax.set_ylabel("cumulative mean reward")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def render_fairness_chart(slices: list[dict], metric: str, out_path: str):
    """Bar chart with CI whiskers, one bar per (attribute, group)."""
    rows = [s for s in slices if s["metric"] == metric]
    if not rows:
        return False
    labels = [f"{s['attribute']}\n{s['value']}" for s in rows]
    values = [s["estimate"] for s in rows]
    err_lo = [s["estimate"] - s["ci_low"] for s in rows]
    err_hi = [s["ci_high"] - s["estimate"] for s in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(rows)), 4.5))
    colors = ["#888888" if s["low_support"] else "#4477aa" for s in rows]
    ax.bar(range(len(rows)), values, yerr=[err_lo, err_hi], capsize=3,
           color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=45, ha="right")
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return True


def _table_html(rows: list[dict]) -> str:
    if not rows:
        return "<p>(empty)</p>"
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    parts = ["<table border='1' cellpadding='4' cellspacing='0'>",
             "<tr>" + "".join(f"<th>{html.escape(str(c))}</th>"
                              for c in cols) + "</tr>"]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c, "")
            if isinstance(v, float):
                v = f"{v:.4f}"
            cells.append(f"<td>{html.escape(str(v))}</td>")
        parts.append("<tr>" + "".join(cells) + "</tr>")
    parts.append("</table>")
    return "\n".join(parts)


def build_report(out_dir: str, title: str, curve_files: dict,
                 metric_rows: list[dict], fairness_slices: list[dict]) -> str:
    """Write SVG figures and a self-contained report.html; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    sections = [f"<h1>{html.escape(title)}</h1>"]
    if curve_files:
        curve_svg = os.path.join(out_dir, "reward_curves.svg")
        render_reward_curves(curve_files, curve_svg)
        with open(curve_svg) as fh:
            sections.append("<h2>Cumulative mean reward</h2>" + fh.read())
    if metric_rows:
        sections.append("<h2>Metric comparison</h2>" + _table_html(metric_rows))
    for metric in ("tpr", "mean_score"):
        svg_path = os.path.join(out_dir, f"fairness_{metric}.svg")
        if render_fairness_chart(fairness_slices, metric, svg_path):
            with open(svg_path) as fh:
                sections.append(f"<h2>Fairness: {metric}</h2>" + fh.read())
    page = os.path.join(out_dir, "report.html")
    with open(page, "w") as fh:
        fh.write("<!DOCTYPE html><html><head><meta charset='utf-8'>"
                 f"<title>{html.escape(title)}</title></head><body>"
                 + "\n".join(sections) + "</body></html>")
    return page


def write_rows(rows: list[dict], path_base: str):
    """Emit rows as both CSV and JSON (path_base + .csv/.json)."""
    with open(path_base + ".json", "w") as fh:
        json.dump(rows, fh, indent=2)
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path_base + ".csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
