"""Report rendering: aligned text tables, machine-readable key=value lines,
and figures saved next to them.

Figures use the Agg backend and carry no volatile metadata, so rerunning a
command on identical inputs reproduces them byte for byte.
"""

from __future__ import annotations

import numpy as np

_METRIC_COLUMNS = ("m1", "one_to_one", "vm", "homogeneity", "completeness")
_COLUMN_TITLES = {
    "m1": "M-1",
    "one_to_one": "1-1",
    "vm": "VM",
    "homogeneity": "H",
    "completeness": "C",
}


def format_report_table(report: dict) -> str:
    """Aligned plain-text table, one row per split."""
    header = ["split"] + [_COLUMN_TITLES[c] for c in _METRIC_COLUMNS] + ["tokens"]
    rows = [header]
    for split, metrics in report["splits"].items():
        rows.append(
            [split]
            + [f"{metrics[c]:.4f}" for c in _METRIC_COLUMNS]
            + [str(metrics["tokens"])]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    for split, metrics in report["splits"].items():
        if metrics["unmapped"]:
            ids = ", ".join(str(i) for i in metrics["unmapped"])
            lines.append(f"note: {split} contains predicted indexes unseen on dev: {ids}")
    return "\n".join(lines) + "\n"


def format_report_kv(report: dict) -> str:
    """Flat ``split.metric=value`` lines with 4 decimals."""
    lines = []
    for split, metrics in report["splits"].items():
        for c in _METRIC_COLUMNS:
            lines.append(f"{split}.{c}={metrics[c]:.4f}")
        lines.append(f"{split}.tokens={metrics['tokens']}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report_table(report))
        fh.write("\n")
        fh.write(format_report_kv(report))


def format_ll_log(history: list[tuple[str, int, float]]) -> str:
    lines = ["stage\tepoch\tll"]
    for stage, epoch, ll in history:
        lines.append(f"{stage}\t{epoch}\t{ll:.6f}")
    return "\n".join(lines) + "\n"


def write_ll_log(history: list[tuple[str, int, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_ll_log(history))


def _figure_module():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_ll_figure(history: list[tuple[str, int, float]], path: str) -> None:
    """Data log-likelihood against epoch, one line per training stage."""
    plt = _figure_module()
    fig, ax = plt.subplots(figsize=(6, 3.7))
    stages = []
    for stage, _, _ in history:
        if stage not in stages:
            stages.append(stage)
    step = 0
    for stage in stages:
        points = [(epoch, ll) for s, epoch, ll in history if s == stage]
        xs = list(range(step, step + len(points)))
        ax.plot(xs, [ll for _, ll in points], marker="o", markersize=3, label=stage)
        step += len(points)
    ax.set_xlabel("training epoch (stages concatenated)")
    ax.set_ylabel("log-likelihood per token")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def save_contingency_figure(counts: np.ndarray, path: str, title: str = "") -> None:
    """Heatmap of the gold-by-predicted contingency matrix."""
    plt = _figure_module()
    counts = np.asarray(counts, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    shown = np.log1p(counts)
    im = ax.imshow(shown, aspect="auto", cmap="viridis")
    ax.set_xlabel("predicted index")
    ax.set_ylabel("gold tag")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="log(1 + count)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def save_metric_figure(report: dict, path: str) -> None:
    """Grouped bars of the headline metrics per split."""
    plt = _figure_module()
    splits = list(report["splits"])
    metrics = ("m1", "one_to_one", "vm")
    fig, ax = plt.subplots(figsize=(6, 3.7))
    width = 0.8 / len(splits)
    xs = np.arange(len(metrics))
    for k, split in enumerate(splits):
        vals = [report["splits"][split][m] for m in metrics]
        ax.bar(xs + k * width, vals, width=width, label=split)
    ax.set_xticks(xs + width * (len(splits) - 1) / 2)
    ax.set_xticklabels([_COLUMN_TITLES[m] for m in metrics])
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
