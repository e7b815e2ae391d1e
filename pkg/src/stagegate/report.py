"""Report rendering: aligned text tables, CSV dumps, and matplotlib figures.

Every report path emits the delimited file first and a PNG rendering of the
same numbers next to it. Figures use the Agg backend so reports work in
headless runs.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stagegate.corpus import CorpusStats
from stagegate.evaluation import EvalReport

REPORT_COLUMNS = ("F_prep", "F_resp", "F_post", "F_eng", "F_avg")


def report_row_values(report: EvalReport) -> list[float]:
    return [float(x) for x in report.f1] + [report.f_avg]


def render_table(rows: Sequence[tuple[str, EvalReport]], title: str = "") -> str:
    """Aligned plain-text table: one row per representation."""
    header = ["Representation", *REPORT_COLUMNS]
    body = [[name, *(f"{v:.3f}" for v in report_row_values(rep))] for name, rep in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def write_report_csv(path: str | Path, rows: Sequence[tuple[str, EvalReport]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["representation", *REPORT_COLUMNS])
        for name, rep in rows:
            writer.writerow([name] + [f"{v:.6f}" for v in report_row_values(rep)])


def fig_f1_bars(path: str | Path, rows: Sequence[tuple[str, EvalReport]], title: str = "") -> None:
    """Grouped bars: per-class F1 plus the weighted average, per row."""
    names = [name for name, _ in rows]
    values = np.array([report_row_values(rep) for _, rep in rows])
    x = np.arange(len(REPORT_COLUMNS))
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, name in enumerate(names):
        ax.bar(x + i * width, values[i], width, label=name)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(REPORT_COLUMNS)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_confusion(path: str | Path, report: EvalReport, title: str = "") -> None:
    cm = report.cm.counts
    labels = [lab.value for lab in report.labels]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(labels)))
    ax.set_yticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_yticklabels(labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=8,
                    color="white" if cm[i, j] > cm.max() / 2 else "black")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_loss_curve(path: str | Path, histories: dict[str, list[float]], title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, hist in histories.items():
        ax.plot(range(1, len(hist) + 1), hist, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --- corpus stats ---------------------------------------------------------------

STATS_COLUMNS = ("Min", "Median", "Mean", "Max", "St. dev.")


def render_stats(cs: CorpusStats) -> str:
    header = ["Measure", *STATS_COLUMNS]
    body = []
    for name, m in cs.rows():
        body.append([name, f"{m.min:g}", f"{m.median:g}", f"{m.mean:.1f}", f"{m.max:g}", f"{m.sd:.1f}"])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def write_stats_csv(path: str | Path, cs: CorpusStats) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["measure", "min", "median", "mean", "max", "sd"])
        for name, m in cs.rows():
            writer.writerow([name, m.min, m.median, m.mean, m.max, m.sd])


def fig_stats(path: str | Path, cs: CorpusStats) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for ax, (name, m) in zip(axes, cs.rows()):
        keys = ["min", "median", "mean", "max"]
        vals = [m.min, m.median, m.mean, m.max]
        ax.bar(keys, vals)
        ax.set_title(name, fontsize=9)
        ax.set_yscale("symlog")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
