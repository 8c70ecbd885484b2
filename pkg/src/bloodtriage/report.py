"""Report rendering: delimited tables plus matplotlib figures written to
files next to them. Figures use the Agg backend so rendering works
headless."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MetricReport, TraceRecord  # noqa: E402


def _pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100 * value:.2f}"


def metrics_row(family: str, params: Mapping, metrics: MetricReport) -> list[str]:
    return [
        family,
        " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(params.items())),
        _pct(metrics.balanced_accuracy),
        _pct(metrics.sensitivity),
        _pct(metrics.specificity),
        _pct(metrics.precision),
    ]


METRICS_HEADER = [
    "classifier",
    "best hyperparameters",
    "balanced accuracy (%)",
    "sensitivity (%)",
    "specificity (%)",
    "precision (%)",
]


def write_metrics_table(path: str | Path, rows: Sequence[Sequence[str]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(METRICS_HEADER)
        writer.writerows(rows)


def write_importance_table(
    path: str | Path, names: Sequence[str], scores: Sequence[float], directions: Sequence[str]
) -> None:
    order = np.argsort(scores)[::-1]
    ranks = np.empty(len(scores), int)
    ranks[order] = np.arange(1, len(scores) + 1)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["feature id", "feature name", "importance", "rank", "change in positive class"])
        for i, name in enumerate(names):
            writer.writerow([i, name, f"{scores[i]:.3f}", int(ranks[i]), directions[i]])


def save_search_surface(trace: Sequence[TraceRecord], path: str | Path) -> None:
    """Balanced accuracy over the evaluated grid. Two-dimensional
    continuous grids (C x gamma) render as scatter heatmaps per round,
    one-dimensional ones as lines, discrete grids as grouped lines."""
    records = list(trace)
    if not records:
        raise ValueError("empty search trace")
    names = sorted(records[0].params)
    fig = None
    if {"C", "gamma"} <= set(names):
        rounds = sorted({r.round for r in records})
        fig, axes = plt.subplots(1, len(rounds), figsize=(6 * len(rounds), 4.5), squeeze=False)
        for ax, rnd in zip(axes[0], rounds):
            sub = [r for r in records if r.round == rnd]
            cs = np.array([r.params["C"] for r in sub])
            gs = np.array([r.params["gamma"] for r in sub])
            accs = np.array([r.balanced_accuracy for r in sub])
            sc = ax.scatter(cs, gs, c=accs, cmap="viridis", s=18, marker="s")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("C")
            ax.set_ylabel("gamma")
            ax.set_title(f"{rnd} round")
            fig.colorbar(sc, ax=ax, label="balanced accuracy")
    elif "C" in names:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for rnd, style in (("coarse", "o-"), ("fine", ".-")):
            sub = sorted((r for r in records if r.round == rnd), key=lambda r: r.params["C"])
            if sub:
                ax.plot(
                    [r.params["C"] for r in sub],
                    [r.balanced_accuracy for r in sub],
                    style,
                    label=f"{rnd} round",
                )
        ax.set_xscale("log")
        ax.set_xlabel("C")
        ax.set_ylabel("balanced accuracy")
        ax.legend()
    else:
        group_keys = [n for n in names if n != "max_depth"]
        fig, ax = plt.subplots(figsize=(6.5, 4.5))
        groups: dict[tuple, list[TraceRecord]] = {}
        for r in records:
            groups.setdefault(tuple((k, r.params[k]) for k in group_keys), []).append(r)
        for key, sub in sorted(groups.items(), key=lambda kv: str(kv[0])):
            sub = sorted(sub, key=lambda r: r.params.get("max_depth", 0))
            label = ", ".join(f"{k}={v}" for k, v in key) or "grid"
            ax.plot(
                [r.params.get("max_depth", i) for i, r in enumerate(sub)],
                [r.balanced_accuracy for r in sub],
                ".-",
                label=label,
                linewidth=1,
            )
        ax.set_xlabel("max_depth")
        ax.set_ylabel("balanced accuracy")
        if group_keys:
            ax.legend(fontsize=7, ncol=2)
    fig.suptitle(f"grid search: {records[0].family}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_importance_chart(
    names: Sequence[str], scores: Sequence[float], path: str | Path, title: str = "feature importance"
) -> None:
    order = np.argsort(scores)
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(names) + 1.2))
    ax.barh(np.arange(len(names)), np.asarray(scores)[order], color="#4878a8")
    ax.set_yticks(np.arange(len(names)))
    ax.set_yticklabels([names[i] for i in order], fontsize=8)
    ax.set_xlabel("normalized importance")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
