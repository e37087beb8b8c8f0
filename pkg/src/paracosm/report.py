"""Report emission: aligned text tables, JSON, CSV, and matplotlib figures.

Every evaluation writes the same metric grid three ways — a human-readable
table on stdout, canonical JSON for machines, and delimited CSV for
spreadsheets — and renders a PNG figure next to them. Ablation runs
additionally get a heatmap across grid rows.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EvalReport


def format_table(report: EvalReport) -> str:
    """Aligned two-column table of the metric grid."""
    keys = sorted(report.metrics)
    width = max((len(k) for k in keys), default=6)
    lines = [
        f"dataset: {report.dataset}   queries: {report.n_queries}   "
        f"config: {report.config_digest[:12]}",
        f"{'metric'.ljust(width)}  value",
        f"{'-' * width}  {'-' * 6}",
    ]
    for key in keys:
        lines.append(f"{key.ljust(width)}  {report.metrics[key]:.4f}")
    return "\n".join(lines)


def write_report_json(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def write_report_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "config_digest", "metric", "value"])
        for key in sorted(report.metrics):
            writer.writerow([report.dataset, report.config_digest, key, repr(report.metrics[key])])
    return path


def render_report_figure(report: EvalReport, path: str | Path, title: str | None = None) -> Path:
    """Bar chart of the metric grid, written as a PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = sorted(report.metrics)
    values = [report.metrics[k] for k in keys]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(keys) + 2.0), 3.2))
    ax.bar(range(len(keys)), values, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("value")
    ax.set_title(title or f"{report.dataset} (n={report.n_queries})", fontsize=10)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ablation_figure(
    named_reports: Sequence[tuple[str, EvalReport]], path: str | Path
) -> Path:
    """Heatmap of metric values across ablation grid rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    row_names = [name for name, _ in named_reports]
    keys = sorted({k for _, r in named_reports for k in r.metrics})
    grid = [[r.metrics.get(k, float("nan")) for k in keys] for _, r in named_reports]

    fig, ax = plt.subplots(
        figsize=(max(4.0, 0.8 * len(keys) + 2.5), max(2.5, 0.4 * len(row_names) + 1.5))
    )
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(row_names)))
    ax.set_yticklabels(row_names, fontsize=8)
    for i in range(len(row_names)):
        for j in range(len(keys)):
            v = grid[i][j]
            if v == v:  # skip NaN
                ax.text(
                    j, i, f"{v:.2f}", ha="center", va="center", fontsize=7,
                    color="white" if v < 0.6 else "black",
                )
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title("metric grid across term configurations", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report_outputs(
    report: EvalReport, out_base: str | Path, *, figure: bool = True
) -> dict[str, Path]:
    """Write <base>.json, <base>.csv, and <base>.png; return their paths."""
    base = Path(out_base)
    outputs = {
        "json": write_report_json(report, base.with_suffix(".json")),
        "csv": write_report_csv(report, base.with_suffix(".csv")),
    }
    if figure:
        outputs["figure"] = render_report_figure(report, base.with_suffix(".png"))
    return outputs
