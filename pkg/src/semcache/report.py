"""Replay reporting: a per-query CSV next to rendered summary figures.

Figures are written as PNG files (case distribution, cumulative backend
traffic against answered tuples, and the running hit ratio), so a replay can
be inspected without any interactive tooling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


@dataclass(frozen=True)
class QueryRecord:
    index: int
    case_type: int
    segment: int | None
    local_tuples: int
    backend_tuples: int
    answer_size: int


def _running_hit_ratio(records: list[QueryRecord]) -> list[float]:
    ratios = []
    hits = 0
    for i, rec in enumerate(records, start=1):
        if rec.case_type != 5:
            hits += 1
        ratios.append(hits / i)
    return ratios


def write_report(records: list[QueryRecord], out_dir: str | Path) -> list[Path]:
    """Write report.csv and the summary figures; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    ratios = _running_hit_ratio(records)
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "case_type", "segment", "local_tuples",
             "backend_tuples", "answer_size", "running_hit_ratio"]
        )
        for rec, ratio in zip(records, ratios):
            writer.writerow(
                [rec.index, rec.case_type,
                 rec.segment if rec.segment is not None else "",
                 rec.local_tuples, rec.backend_tuples, rec.answer_size,
                 f"{ratio:.4f}"]
            )
    written.append(csv_path)

    counts = {c: 0 for c in range(1, 6)}
    for rec in records:
        counts[rec.case_type] += 1
    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = ["1 full", "2 partial", "3 extend", "4 mixed", "5 miss"]
    ax.bar(labels, [counts[c] for c in range(1, 6)], color="#4878a8")
    ax.set_ylabel("queries")
    ax.set_title("Rewrite case distribution")
    fig.tight_layout()
    case_path = out / "case_distribution.png"
    fig.savefig(case_path, dpi=120)
    plt.close(fig)
    written.append(case_path)

    xs = [rec.index for rec in records]
    cum_backend, cum_answer = [], []
    tb = ta = 0
    for rec in records:
        tb += rec.backend_tuples
        ta += rec.answer_size
        cum_backend.append(tb)
        cum_answer.append(ta)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, cum_answer, label="tuples answered", color="#383838")
    ax.plot(xs, cum_backend, label="tuples from backend", color="#b04a4a")
    ax.set_xlabel("query")
    ax.set_ylabel("cumulative tuples")
    ax.set_title("Backend traffic vs answered tuples")
    ax.legend()
    fig.tight_layout()
    traffic_path = out / "backend_traffic.png"
    fig.savefig(traffic_path, dpi=120)
    plt.close(fig)
    written.append(traffic_path)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, ratios, color="#4878a8")
    ax.set_xlabel("query")
    ax.set_ylabel("hit ratio")
    ax.set_ylim(0, 1.05)
    ax.set_title("Running hit ratio")
    fig.tight_layout()
    ratio_path = out / "hit_ratio.png"
    fig.savefig(ratio_path, dpi=120)
    plt.close(fig)
    written.append(ratio_path)

    return written
