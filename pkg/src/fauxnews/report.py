"""Render figures from a run directory's delimited outputs.

Each known artifact gets a PNG next to it: loss curves, per-domain metrics,
few-shot sweeps, ablation comparisons, forge statistics, and rating tables.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path: Path) -> List[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def plot_loss_curve(csv_path: Path, out_path: Path) -> None:
    rows = _read_csv(csv_path)
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for column, label in [
        ("L_CE", "classification"),
        ("L_LLM", "sequence"),
        ("L_bbox", "box L1"),
        ("L_GIoU", "box GIoU"),
        ("L_total", "total"),
    ]:
        ax.plot(steps, [float(r[column]) for r in rows], label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(csv_path.stem)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_domain_metrics(csv_path: Path, out_path: Path) -> None:
    rows = _read_csv(csv_path)
    domains = ["entertainment", "sport", "politics", "others"]
    metrics = ["precision", "recall", "f1"]
    fig, axes = plt.subplots(1, len(rows), figsize=(5.5 * max(len(rows), 1), 4), squeeze=False)
    width = 0.25
    x = range(len(domains))
    for ax, row in zip(axes[0], rows):
        for j, metric in enumerate(metrics):
            vals = [float(row[f"{d}_{metric}"]) for d in domains]
            ax.bar([xi + (j - 1) * width for xi in x], vals, width=width, label=metric)
        ax.set_xticks(list(x))
        ax.set_xticklabels(domains, rotation=20, fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{row['method']} (acc {float(row['accuracy']):.3f})", fontsize=10)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_fewshot(csv_path: Path, out_path: Path) -> None:
    rows = _read_csv(csv_path)
    ks = [int(r["setup"].split("-")[0]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric in ("accuracy", "precision", "recall", "f1"):
        ax.plot(ks, [float(r[metric]) for r in rows], marker="o", label=metric)
    ax.set_xlabel("exemplars in prompt")
    ax.set_ylabel("score")
    ax.set_xticks(ks)
    ax.set_ylim(0, 1.05)
    ax.set_title("few-shot sweep")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_ablation(csv_path: Path, out_path: Path) -> None:
    rows = _read_csv(csv_path)
    methods = [r["method"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    metrics = ["accuracy", "precision", "recall", "f1"]
    width = 0.2
    x = range(len(methods))
    for j, metric in enumerate(metrics):
        ax.bar(
            [xi + (j - 1.5) * width for xi in x],
            [float(r[metric]) for r in rows],
            width=width,
            label=metric,
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_title("modality ablation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_forge_stats(json_path: Path, out_path: Path) -> None:
    stats = json.loads(json_path.read_text(encoding="utf-8"))
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, key, title in [
        (axes[0], "domains", "samples per domain"),
        (axes[1], "fake_cls", "samples per manipulation class"),
    ]:
        names = list(stats[key])
        values = [stats[key][n] for n in names]
        ax.bar(range(len(names)), values)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=25, fontsize=8)
        ax.set_title(title, fontsize=10)
    fig.suptitle(
        f"n={stats['n_samples']}  manipulation rate {stats['manip_rate']:.3f}  "
        f"cross-modal rate {stats['crossmodal_rate']:.3f}",
        fontsize=10,
    )
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_ratings(csv_path: Path, out_path: Path) -> None:
    rows = _read_csv(csv_path)
    methods = [r["method"] for r in rows]
    aspects = ["exactness", "certainty", "detail", "total"]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    width = 0.2
    x = range(len(methods))
    for j, aspect in enumerate(aspects):
        ax.bar([xi + (j - 1.5) * width for xi in x], [float(r[aspect]) for r in rows], width=width, label=aspect)
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, fontsize=9)
    ax.set_ylim(0, 10.5)
    ax.set_title("human ratings of generated reasoning")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


_RENDERERS = [
    ("loss_detection.csv", "loss_detection.png", plot_loss_curve),
    ("loss_reasoning.csv", "loss_reasoning.png", plot_loss_curve),
    ("metrics.csv", "metrics.png", plot_domain_metrics),
    ("fewshot.csv", "fewshot.png", plot_fewshot),
    ("ablation.csv", "ablation.png", plot_ablation),
    ("forge_stats.json", "forge_stats.png", plot_forge_stats),
    ("ratings.csv", "ratings.png", plot_ratings),
]


def render_run_figures(run_dir) -> Dict[str, Path]:
    """Render a figure for every known artifact present in ``run_dir``."""
    run_dir = Path(run_dir)
    rendered = {}
    for source, target, renderer in _RENDERERS:
        src = run_dir / source
        if src.exists():
            out = run_dir / target
            renderer(src, out)
            rendered[source] = out
    return rendered
