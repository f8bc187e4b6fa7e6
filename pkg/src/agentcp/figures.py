"""Report figures rendered next to the delimited output.

Every experiment report gets a small set of PNGs summarizing the run:
coverage against the target level, interval width (median with quartile
band, with the infinite-width fraction overlaid when present), and the
run metric (predicted fitness or holdout error).  Bounded runs add the
cap-activity trajectory.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sim import StepRecord, SummaryRow

__all__ = ["render_report_figures"]

_COLOR_CYCLE = (
    "#345995",
    "#d7263d",
    "#2a9d8f",
    "#e9724c",
    "#7768ae",
    "#8c5f34",
    "#47792c",
)


def _method_colors(methods: Sequence[str]) -> Dict[str, str]:
    return {m: _COLOR_CYCLE[i % len(_COLOR_CYCLE)] for i, m in enumerate(sorted(set(methods)))}


def _style_axes(ax, xlabel: str, ylabel: str, title: str):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=11)
    ax.grid(True, alpha=0.25, linewidth=0.6)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def _by_method(rows: Sequence[SummaryRow]) -> Dict[str, List[SummaryRow]]:
    grouped: Dict[str, List[SummaryRow]] = {}
    for row in rows:
        grouped.setdefault(row.method, []).append(row)
    for rows_m in grouped.values():
        rows_m.sort(key=lambda r: r.t)
    return grouped

def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _coverage_figure(rows, colors, alpha: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for method, rs in _by_method(rows).items():
        ts = np.array([r.t for r in rs])
        mean = np.array([r.coverage_mean for r in rs])
        se = np.array([r.coverage_se for r in rs])
        ax.plot(ts, mean, marker="o", ms=4, lw=1.6, color=colors[method], label=method)
        ax.fill_between(ts, mean - se, mean + se, color=colors[method], alpha=0.18, lw=0)
    ax.axhline(1.0 - alpha, color="0.25", lw=1.0, ls="--", label=f"target {1 - alpha:g}")
    _style_axes(ax, "step", "mean coverage (±1 se)", "Coverage per step")
    ax.legend(frameon=False, fontsize=9)
    return _save(fig, path)


def _width_figure(rows, colors, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    any_inf = any(r.frac_infinite_width > 0 for r in rows)
    ax2 = ax.twinx() if any_inf else None
    for method, rs in _by_method(rows).items():
        ts = np.array([r.t for r in rs])
        med = np.array([r.width_median for r in rs])
        lo = np.array([r.width_q25 for r in rs])
        hi = np.array([r.width_q75 for r in rs])
        finite = np.isfinite(med)
        ax.plot(
            ts[finite], med[finite], marker="o", ms=4, lw=1.6,
            color=colors[method], label=method,
        )
        band = np.isfinite(lo) & np.isfinite(hi)
        ax.fill_between(ts[band], lo[band], hi[band], color=colors[method], alpha=0.15, lw=0)
        if ax2 is not None:
            frac = np.array([r.frac_infinite_width for r in rs])
            ax2.plot(ts, frac, color=colors[method], lw=1.0, ls=":", alpha=0.8)
    _style_axes(ax, "step", "median width (IQR band)", "Interval width per step")
    if ax2 is not None:
        ax2.set_ylabel("fraction of infinite widths (dotted)")
        ax2.set_ylim(0, 1.05)
        ax2.spines["top"].set_visible(False)
    ax.legend(frameon=False, fontsize=9)
    return _save(fig, path)


def _metric_figure(rows, colors, mode: str, path: Path) -> Path:
    label = "mean predicted fitness" if mode == "design" else "mean holdout MSE"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for method, rs in _by_method(rows).items():
        ts = np.array([r.t for r in rs])
        mean = np.array([r.metric_mean for r in rs])
        se = np.array([r.metric_se for r in rs])
        ax.plot(ts, mean, marker="o", ms=4, lw=1.6, color=colors[method], label=method)
        ax.fill_between(ts, mean - se, mean + se, color=colors[method], alpha=0.18, lw=0)
    _style_axes(ax, "step", f"{label} (±1 se)", "Run metric per step")
    ax.legend(frameon=False, fontsize=9)
    return _save(fig, path)


def _bound_figure(records: Sequence[StepRecord], path: Path) -> Optional[Path]:
    per_t: Dict[int, List[float]] = {}
    for rec in records:
        if rec.bound_relative is not None:
            per_t.setdefault(rec.t, []).append(rec.bound_relative)
    if not per_t:
        return None
    ts = sorted(per_t)
    means = [float(np.mean(per_t[t])) for t in ts]
    q25 = [float(np.percentile(per_t[t], 25)) for t in ts]
    q75 = [float(np.percentile(per_t[t], 75)) for t in ts]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(ts, means, marker="o", ms=4, lw=1.6, color=_COLOR_CYCLE[0], label="mean")
    ax.fill_between(ts, q25, q75, color=_COLOR_CYCLE[0], alpha=0.18, lw=0, label="IQR")
    ax.set_ylim(0, 1.05)
    _style_axes(ax, "step", "cap size relative to max proposal", "Proposal cap activity")
    ax.legend(frameon=False, fontsize=9)
    return _save(fig, path)


def render_report_figures(
    summary_rows: Sequence[SummaryRow],
    records: Sequence[StepRecord],
    out_dir: Path,
    mode: str,
    alpha: float,
) -> List[Path]:
    """Write the report PNGs into ``out_dir`` and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    colors = _method_colors([r.method for r in summary_rows])
    files = [
        _coverage_figure(summary_rows, colors, alpha, out_dir / "coverage.png"),
        _width_figure(summary_rows, colors, out_dir / "width.png"),
        _metric_figure(summary_rows, colors, mode, out_dir / "metric.png"),
    ]
    bound = _bound_figure(records, out_dir / "bound_activity.png")
    if bound is not None:
        files.append(bound)
    return files
