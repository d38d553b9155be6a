"""Render the four standard figure kinds from trajectory CSV logs.

The input format is the simulator's log CSV: columns ``t``,
``phi_1..phi_N``, ``omega_1..omega_N``, ``phi_m1``, ``phi_m2``,
``meas_1..meas_N`` and, when the adaptive gain loop ran, ``esc_I``,
``esc_y``, ``esc_xi``, ``esc_lambda``. Inputs are only ever read.
Rendering is deterministic: fixed style, no timestamps in the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("identification-overlay", "staged-amplitude", "sync-comparison",
         "esc-trace")

_STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 0.9,
}


class PlotError(ValueError):
    """Bad plot request: unknown kind, missing column, unusable CSV."""


@dataclass
class PlotSpec:
    kind: str
    inputs: list[str]
    output: str
    i_star: int = 6                       # staged-amplitude target pendulum
    stages: list[float] = field(default_factory=list)  # stage-boundary times

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        if not self.inputs:
            raise PlotError("at least one input CSV is required")


class LogTable:
    """Column-addressed view of one trajectory CSV."""

    def __init__(self, path):
        import warnings
        with open(path) as f:
            header = f.readline().strip()
            if not header:
                raise PlotError(f"{path}: empty file")
            names = header.split(",")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # empty file is our error, below
                data = np.atleast_2d(np.loadtxt(f, delimiter=",", ndmin=2))
        if data.size == 0:
            raise PlotError(f"{path}: no data rows (header only)")
        self.path = str(path)
        self.columns = {name: data[:, j] for j, name in enumerate(names)}
        self.N = sum(1 for n in names if n.startswith("phi_") and n[4:].isdigit())

    def col(self, name):
        if name not in self.columns:
            raise PlotError(f"{self.path}: required column {name!r} is missing")
        return self.columns[name]

    @property
    def t(self):
        return self.col("t")


def _mark_stages(ax, stages):
    for ts in stages:
        ax.axvline(ts, color="k", linestyle="--", linewidth=0.8)


def _plot_identification_overlay(spec, tables, fig):
    """Angle traces of one run overlaid on a second run (or on its own
    quantized measurements when a single CSV is given)."""
    base = tables[0]
    axes = fig.subplots(base.N, 1, sharex=True, squeeze=False)[:, 0]
    if len(tables) == 1:
        pairs = [("simulated", base, "phi_"), ("measured", base, "meas_")]
    elif len(tables) == 2:
        pairs = [("run 1", tables[0], "phi_"), ("run 2", tables[1], "phi_")]
    else:
        raise PlotError("identification-overlay takes one or two CSV files")
    for i, ax in enumerate(axes, start=1):
        for label, tab, prefix in pairs:
            ax.plot(tab.t, tab.col(f"{prefix}{i}"), label=label)
        ax.set_ylabel(f"$\\varphi_{{{i}}}$ [rad]", rotation=0, labelpad=18,
                      fontsize=7)
        ax.tick_params(labelsize=7)
    axes[0].legend(loc="upper right", fontsize=7)
    axes[-1].set_xlabel("t [s]")
    fig.set_size_inches(7, max(3.0, 0.8 * base.N))


def _plot_staged_amplitude(spec, tables, fig):
    """Target pendulum angle in degrees with stage boundaries marked."""
    if len(tables) != 1:
        raise PlotError("staged-amplitude takes exactly one CSV file")
    tab = tables[0]
    ax = fig.subplots()
    angle = np.degrees(tab.col(f"phi_{spec.i_star}"))
    ax.plot(tab.t, angle, color="tab:blue")
    _mark_stages(ax, spec.stages)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(f"pendulum {spec.i_star} angle [deg]")
    fig.set_size_inches(7, 3)


def _plot_sync_comparison(spec, tables, fig):
    """Per-pendulum speeds of two runs, stacked panels, shared time axis."""
    if len(tables) != 2:
        raise PlotError("sync-comparison takes exactly two CSV files")
    axes = fig.subplots(2, 1, sharex=True)
    for ax, tab, name in zip(axes, tables, spec.inputs):
        for i in range(1, tab.N + 1):
            ax.plot(tab.t, tab.col(f"omega_{i}"), label=f"{i}")
        ax.set_ylabel("speed [rad/s]")
        ax.set_title(name, fontsize=8)
    axes[0].legend(loc="upper right", fontsize=6, ncol=tables[0].N,
                   title="pendulum", title_fontsize=6)
    axes[-1].set_xlabel("t [s]")
    fig.set_size_inches(7, 5)


def _plot_esc_trace(spec, tables, fig):
    """Adaptive-gain internals: performance index, filtered/demodulated
    signals and the gain estimate."""
    if len(tables) != 1:
        raise PlotError("esc-trace takes exactly one CSV file")
    tab = tables[0]
    axes = fig.subplots(3, 1, sharex=True)
    axes[0].plot(tab.t, tab.col("esc_I"), color="tab:blue")
    axes[0].set_ylabel("index [rad]")
    axes[1].plot(tab.t, tab.col("esc_y"), label="high-passed")
    axes[1].plot(tab.t, tab.col("esc_xi"), label="demodulated")
    axes[1].set_ylabel("signal")
    axes[1].legend(loc="upper right", fontsize=7)
    axes[2].plot(tab.t, tab.col("esc_lambda"), color="tab:red")
    axes[2].set_ylabel("gain estimate")
    axes[2].set_xlabel("t [s]")
    _mark_stages(axes[2], spec.stages)
    fig.set_size_inches(7, 5)


_RENDERERS = {
    "identification-overlay": _plot_identification_overlay,
    "staged-amplitude": _plot_staged_amplitude,
    "sync-comparison": _plot_sync_comparison,
    "esc-trace": _plot_esc_trace,
}


def plot(spec: PlotSpec) -> str:
    """Render the figure described by ``spec``; returns the output path."""
    tables = [LogTable(path) for path in spec.inputs]
    with plt.rc_context(_STYLE):
        fig = plt.figure()
        try:
            _RENDERERS[spec.kind](spec, tables, fig)
            fig.savefig(spec.output, bbox_inches="tight")
        finally:
            plt.close(fig)
    return spec.output
