"""Figure rendering for the report paths.

Figures are always written to files next to the machine-readable
outputs, never shown interactively; the Agg backend keeps this headless
and byte-stable for a fixed input.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# keep PNG output free of environment-dependent metadata
PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)


def save_trajectory_figure(trajectories_csv_text: str, path) -> None:
    """Per-point tip error of every calibration variant along the
    trajectory, from the columns of trajectories.csv."""
    lines = [l for l in trajectories_csv_text.strip().splitlines() if l]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in l.split(",")] for l in lines[1:]])
    error_cols = [(name[:-6], k) for k, name in enumerate(header)
                  if name.endswith("_error")]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for name, k in error_cols:
        ax.plot(data[:, 0], data[:, k], label=name.replace("_", " "))
    ax.set_xlabel("trajectory point")
    ax.set_ylabel("tip error [mm]")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_improvement_figure(report_dict: dict, path) -> None:
    """Per-parameter RMS estimation error per plan, log scale."""
    rows = report_dict["parameters"]
    names = [r["name"] for r in rows]
    plans = sorted(rows[0]["rms_error"]) if rows else []
    x = np.arange(len(names))
    width = 0.8 / max(1, len(plans) + 1)
    fig, ax = plt.subplots(figsize=(max(7.0, 0.3 * len(names)), 4.2))
    base = [_finite(r["baseline_rms_error"]) for r in rows]
    ax.bar(x - 0.4 + width / 2, base, width, label="no calibration")
    for k, plan in enumerate(plans):
        vals = [_finite(r["rms_error"][plan]) for r in rows]
        ax.bar(x - 0.4 + (k + 1.5) * width, vals, width, label=plan)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("RMS parameter error [mm or rad]")
    ax.set_yscale("log")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_residual_history_figure(history, path) -> None:
    """Calibration residual RMS per iteration."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.semilogy(np.arange(1, len(history) + 1), history, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual RMS [mm]")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def _finite(v) -> float:
    try:
        v = float(v)
    except (TypeError, ValueError):
        return np.nan
    return v if np.isfinite(v) and v > 0 else np.nan
