"""Run reports: plain-text tables, key=value files, and matplotlib figures.

Every report path writes the machine-readable artifacts first and then
renders companion figures next to them, so a run directory is always
self-describing:

    eval  ->  report.txt, metrics.kv, figures/metrics.png, figures/examples.png
    train ->  train_log.csv (from training), figures/loss_curves.png
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport, mean_report

METRIC_KEYS = ("sad", "mse", "mad", "grad", "conn")


def write_kv(path: str, values: dict) -> None:
    with open(path, "w") as f:
        for key, value in values.items():
            f.write(f"{key}={value}\n")


def read_kv(path: str) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                out[key] = value
    return out


def format_metric_table(reports: list[MetricReport], names: list[str]) -> str:
    header = f"{'image':<16}" + "".join(f"{k.upper():>12}" for k in METRIC_KEYS)
    lines = [header, "-" * len(header)]
    for name, rep in zip(names, reports):
        row = rep.as_dict()
        lines.append(f"{name:<16}" + "".join(f"{row[k]:>12.5f}" for k in METRIC_KEYS))
    mean = mean_report(reports).as_dict()
    lines.append("-" * len(header))
    lines.append(f"{'mean':<16}" + "".join(f"{mean[k]:>12.5f}" for k in METRIC_KEYS))
    return "\n".join(lines) + "\n"


def _metrics_figure(reports: list[MetricReport], path: str) -> None:
    mean = mean_report(reports).as_dict()
    fig, axes = plt.subplots(1, len(METRIC_KEYS), figsize=(3 * len(METRIC_KEYS), 3))
    for ax, key in zip(axes, METRIC_KEYS):
        values = [getattr(r, key) for r in reports]
        ax.hist(values, bins=min(20, max(3, len(values) // 2)), color="#4878a8")
        ax.axvline(mean[key], color="#c44e52", linestyle="--", linewidth=1)
        ax.set_title(f"{key.upper()} (mean {mean[key]:.4g})", fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _examples_figure(triples: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
                     path: str, max_rows: int = 4) -> None:
    rows = triples[:max_rows]
    fig, axes = plt.subplots(len(rows), 4, figsize=(9, 2.3 * len(rows)), squeeze=False)
    for r, (image, gt, pred) in enumerate(rows):
        panels = [
            (image, "image", None),
            (gt, "ground truth", "gray"),
            (pred, "prediction", "gray"),
            (np.abs(pred - gt), "|error|", "magma"),
        ]
        for c, (panel, title, cmap) in enumerate(panels):
            ax = axes[r][c]
            ax.imshow(panel, cmap=cmap, vmin=0, vmax=1 if cmap != "magma" else None)
            ax.set_title(title, fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_eval_report(
    out_dir: str,
    names: list[str],
    reports: list[MetricReport],
    examples: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None,
    extra: dict | None = None,
) -> MetricReport:
    """Write table + key-value + figures for one evaluation run."""
    os.makedirs(out_dir, exist_ok=True)
    figdir = os.path.join(out_dir, "figures")
    os.makedirs(figdir, exist_ok=True)

    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(format_metric_table(reports, names))

    mean = mean_report(reports)
    kv = {"n_images": len(reports), "region": mean.region}
    kv.update({f"mean_{k}": v for k, v in mean.as_dict().items()})
    # presentation-scaled variants used by benchmark-style tables
    kv["mean_sad_k"] = mean.sad / 1000.0
    kv["mean_mse_e3"] = mean.mse * 1e3
    if extra:
        kv.update(extra)
    write_kv(os.path.join(out_dir, "metrics.kv"), kv)

    _metrics_figure(reports, os.path.join(figdir, "metrics.png"))
    if examples:
        _examples_figure(examples, os.path.join(figdir, "examples.png"))
    return mean


def write_training_figures(out_dir: str, history: list[dict]) -> None:
    if not history:
        return
    figdir = os.path.join(out_dir, "figures")
    os.makedirs(figdir, exist_ok=True)
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for key in ("l_s", "l_d", "l_m", "total"):
        ax1.plot(epochs, [h[key] for h in history], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.legend(fontsize=7)
    ax2.plot(epochs, [h["val_mse"] for h in history], color="#c44e52")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("held-out MSE")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(os.path.join(figdir, "loss_curves.png"), dpi=110)
    plt.close(fig)
