"""PNG figures for a monitoring session, rendered off-screen."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from mtpenergy.mtp_injector import MeasurementRegistry  # noqa: E402
from mtpenergy.pol_client import EnergyReport, SampleLog  # noqa: E402
from mtpenergy.tagbus import Quality  # noqa: E402


def plot_time_series(log: SampleLog, registry: MeasurementRegistry, path: Path) -> Path:
    """One panel per measured view: value over time, non-good samples marked."""
    views = [v for _, v in registry.views() if log.get(v.value_node)]
    fig, axes = plt.subplots(max(len(views), 1), 1, figsize=(8, 2.2 * max(len(views), 1)),
                             sharex=True, squeeze=False)
    for ax, view in zip(axes[:, 0], views):
        series = log.get(view.value_node)
        t0 = series[0].t_ms
        xs = [(s.t_ms - t0) / 1000.0 for s in series]
        ys = [float(s.value) for s in series]
        ax.plot(xs, ys, lw=1.0)
        bad = [(x, y) for x, y, s in zip(xs, ys, series) if s.quality is not Quality.Good]
        if bad:
            ax.scatter(*zip(*bad), color="tab:red", s=8, label="excluded")
            ax.legend(loc="upper right", fontsize=7)
        ax.set_ylabel(f"{view.tag_name}\n[{view.unit.display}]", fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("time since first sample [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_scope_energy(report: EnergyReport, path: Path) -> Path:
    """Horizontal bars of energy per scope entry."""
    labels = [f"{s.scope}:{s.target or '-'} ({s.resource})" for s in report.scopes]
    values = [s.energy for s in report.scopes]
    fig, ax = plt.subplots(figsize=(8, 0.5 * max(len(labels), 1) + 1.5))
    ax.barh(labels, values, color="tab:green")
    ax.set_xlabel(f"energy [{report.unit}]")
    ax.invert_yaxis()
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render_figures(log: SampleLog, registry: MeasurementRegistry, report: EnergyReport,
                   out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        plot_time_series(log, registry, out / "time_series.png"),
        plot_scope_energy(report, out / "energy_by_scope.png"),
    ]
