"""Compile scenarios into engine runs and summarize the results."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import sync as sync_mod
from .engine import ContinuousDrive, TrajectoryLog, run_simulation
from .identify import excitation_drive, triangle_drive
from .model import ChainState
from .scenario import Scenario, ScenarioError, Stage
from .wave import (EscConfig, WaveControlConfig, WaveController,
                   estimate_travel_times, select_delay_params,
                   suggested_demod_phase)

__all__ = ["RunSummary", "run_scenario", "format_report"]


@dataclass
class RunSummary:
    """Headline numbers of one scenario run, JSON-serializable."""

    name: str
    kind: str                     # open-loop | wave | sync
    duration: float
    wall_s: float
    i_star: int | None = None
    stages: list = field(default_factory=list)  # {name, t0, t1, max_deg}
    desync: float | None = None
    mean_speeds: list | None = None
    output: str | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))


def _sine_drive(a, omega):
    return excitation_drive(a, omega)


def _build_disturbance(sc: Scenario) -> ContinuousDrive | None:
    d = sc.disturbance
    if d is None:
        return None
    if d.kind == "triangle":
        return triangle_drive(d.a, d.omega)
    return _sine_drive(d.a, d.omega)


def _build_reference(sc: Scenario, stage: Stage):
    if stage.kind == "constant-speed":
        return sync_mod.constant_speed_reference(stage.options["omega_ref"],
                                                 sc.duration + 1.0, sc.integrator.dt)
    x0 = stage.options["x0"]
    return sync_mod.generate_sync_reference(sc.params, (x0[0], x0[1]),
                                            sc.duration + 1.0, sc.integrator.dt)


def _wave_config(sc: Scenario, stages: list[Stage]):
    """Resolve the wave controller (delay split and ESC phase may be auto)."""
    first = stages[0]
    opts = first.options
    i_star = opts["i_star"]
    lam = float(opts.get("lambda", 1.0))
    td = sc.sensor.td
    mode = "naive" if first.kind == "naive-wave" else "compensated"
    delta, t_tilde = int(opts.get("delta", 0)), float(opts.get("t_tilde", 0.0))
    travel = None
    if mode == "compensated" and ("delta" not in opts or "t_tilde" not in opts):
        travel = estimate_travel_times(sc.params)
        delta, t_tilde = select_delay_params(travel[2 * i_star - 1:], td)
    cfg = WaveControlConfig(i_star=i_star, lam=lam, delta=delta,
                            t_tilde=t_tilde, t_d=td)

    esc = None
    esc_from = None
    esc_stage = next((s for s in stages if s.kind == "compensated-wave-esc"), None)
    if esc_stage is not None:
        esc_from = esc_stage.t_start
        eo = dict(esc_stage.options.get("esc") or {})
        phase = eo.pop("demod_phase", "auto")
        esc = EscConfig(ts=sc.sensor.ts, **eo)
        if phase == "auto":
            if travel is None:
                travel = estimate_travel_times(sc.params)
            transit = i_star * float(np.mean(travel))
            phase = suggested_demod_phase(esc, td, transit)
        esc = replace(esc, demod_phase=float(phase))
    return cfg, mode, esc, esc_from


def run_scenario(sc: Scenario) -> tuple[TrajectoryLog, RunSummary]:
    """Execute a parsed scenario; returns the log and its summary."""
    t_wall = time.perf_counter()
    m2_drive = _build_disturbance(sc)
    m1_drive = None
    controller = None
    kind = "open-loop"
    i_star = None
    reference = None

    stages = [s for s in sc.timeline if s.kind != "none"]
    if stages:
        first = stages[0]
        if first.kind == "sine":
            m1_drive = _sine_drive(first.options["a"], first.options["omega"])
        elif first.kind in ("sync-replay", "constant-speed"):
            kind = "sync"
            reference = _build_reference(sc, first)
            m1_drive = sync_mod.reference_drive(reference)
        else:
            kind = "wave"
            cfg, mode, esc, esc_from = _wave_config(sc, stages)
            i_star = cfg.i_star
            controller = WaveController(cfg, N=sc.params.N, mode=mode, esc=esc,
                                        activate_at=first.t_start, esc_from=esc_from)

    initial_state = None
    if isinstance(sc.initial, dict):
        initial_state = ChainState(0.0, np.array(sc.initial["angles"]),
                                   np.array(sc.initial["velocities"]))
    elif sc.initial == "reference":
        if reference is None:
            raise ScenarioError("'initial: reference' without a reference stage")
        a0, v0 = reference.initial_state()
        initial_state = ChainState(0.0, np.full(sc.params.N, a0),
                                   np.full(sc.params.N, v0))

    log = run_simulation(sc.params, duration=sc.duration, controller=controller,
                         m1_drive=m1_drive, m2_drive=m2_drive,
                         integrator=sc.integrator, sensor=sc.sensor, motor=sc.motor,
                         initial_state=initial_state, m2_attached=sc.m2_attached)

    summary = RunSummary(name=sc.name, kind=kind, duration=sc.duration,
                         wall_s=round(time.perf_counter() - t_wall, 3),
                         i_star=i_star, output=sc.output)
    if kind == "wave":
        boundaries = [s.t_start for s in sc.timeline] + [sc.duration]
        names = [s.kind for s in sc.timeline]
        target = np.abs(log.angles[:, i_star - 1])
        for name, t0, t1 in zip(names, boundaries[:-1], boundaries[1:]):
            # steady window: last half of the stage, past the transient
            w0 = t0 + 0.5 * (t1 - t0)
            m = (log.times >= w0) & (log.times <= t1)
            if m.any():
                summary.stages.append({
                    "name": name, "t0": t0, "t1": t1,
                    "max_deg": float(np.degrees(target[m].max())),
                })
    if kind == "sync":
        summary.desync = float(sync_mod.desync_criterion(log, sc.duration))
        w0 = max(0.0, log.times[-1] - 5.0)
        summary.mean_speeds = [float(v) for v in
                               sync_mod.mean_speeds(log, (w0, log.times[-1]))]
    return log, summary


def format_report(summaries: list[RunSummary]) -> str:
    """Aligned text table over run summaries, with percentage reductions."""
    if not summaries:
        raise ValueError("no summaries to report")
    lines = []
    rows = []
    header = ("run", "stage", "window [s]", "max |phi_i*| [deg]", "reduction")
    for s in summaries:
        if s.stages:
            base = None
            for st in s.stages:
                red = ""
                if base is None and st["name"] == "none":
                    base = st["max_deg"]
                elif base:
                    red = f"{(1.0 - st['max_deg'] / base) * 100.0:.0f}%"
                rows.append((s.name, st["name"], f"{st['t0']:g}..{st['t1']:g}",
                             f"{st['max_deg']:.2f}", red))
        else:
            desync = "" if s.desync is None else f"desync={s.desync:.1f}"
            rows.append((s.name, s.kind, f"0..{s.duration:g}", desync, ""))
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(5)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines.append(fmt.format(*header))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append(fmt.format(*r))

    sync_pairs = [s for s in summaries if s.desync is not None]
    if len(sync_pairs) == 2:
        hi = max(sync_pairs, key=lambda s: s.desync)
        lo = min(sync_pairs, key=lambda s: s.desync)
        if hi.desync > 0:
            red = (1.0 - lo.desync / hi.desync) * 100.0
            lines.append(f"\ndesync criterion: {lo.name} is {red:.0f}% below {hi.name} "
                         f"({lo.desync:.1f} vs {hi.desync:.1f})")
    return "\n".join(lines)
