"""Deterministic fixed-step simulation of the chain with sensor/actuator models.

The physics advances with classical RK4 at a fixed step ``dt``. Controllers
live in a discrete loop with period ``ts``: encoder frames are quantized,
carry backward-difference velocity estimates, and reach the controller only
after a feedback latency ``td``. Between control instants the commanded
motor position is held (zero-order hold); open-loop motor trajectories are
instead evaluated exactly at every physics substep.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ChainParams, ChainState, MotorCommand, accelerations

__all__ = [
    "IntegratorConfig",
    "SensorConfig",
    "MotorModel",
    "MeasurementFrame",
    "ContinuousDrive",
    "TrajectoryLog",
    "DivergenceError",
    "quantize",
    "step",
    "run_simulation",
]

_TOL = 1e-9  # absolute slack for time comparisons on the control grid


class DivergenceError(RuntimeError):
    """Simulation produced a non-finite state."""

    def __init__(self, index: int, time: float):
        super().__init__(f"state of pendulum {index} became non-finite at t={time:.6f} s")
        self.index = index
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings; dt must divide the sampling period."""

    dt: float = 1e-4
    method: str = "rk4"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}; v1 is rk4 only")


@dataclass(frozen=True)
class SensorConfig:
    """Encoder chain: quantization, sampling period and feedback latency.

    The real rig reads encoders at up to 500 Hz; simulated scenarios that
    emulate it should keep 1/ts at or below that.
    """

    pulses_per_rev: int = 4096
    ts: float = 0.03
    td: float = 0.03

    def __post_init__(self):
        if self.pulses_per_rev <= 0:
            raise ValueError("pulses_per_rev must be positive")
        if self.ts <= 0:
            raise ValueError("sampling period must be positive")
        if self.td < 0:
            raise ValueError("feedback latency must be nonnegative")


@dataclass(frozen=True)
class MotorModel:
    """Boundary stepper abstraction.

    ``ideal-position`` reproduces the commanded trajectory exactly at
    physics steps. ``rate-limited`` slews toward the commanded position
    under optional speed/acceleration caps.
    """

    mode: str = "ideal-position"
    max_speed: float | None = None
    max_accel: float | None = None

    def __post_init__(self):
        if self.mode not in ("ideal-position", "rate-limited"):
            raise ValueError(f"unknown motor mode {self.mode!r}")
        if self.mode == "rate-limited" and self.max_speed is None:
            raise ValueError("rate-limited mode needs max_speed")


@dataclass(frozen=True)
class MeasurementFrame:
    """Quantized encoder snapshot taken at ``timestamp``.

    ``velocities`` are backward differences of consecutive quantized
    angle samples (zeros on the first frame); encoders measure position
    only. The frame reaches controllers at ``timestamp + td``.
    """

    timestamp: float
    angles: np.ndarray
    velocities: np.ndarray


@dataclass
class ContinuousDrive:
    """Open-loop motor trajectory evaluated at every physics substep."""

    angle: Callable[[float], float]
    velocity: Callable[[float], float] | None = None

    def eval(self, t: float) -> tuple[float, float]:
        if self.velocity is not None:
            return (self.angle(t), self.velocity(t))
        h = 1e-6
        v = (self.angle(t + h) - self.angle(t - h)) / (2.0 * h)
        return (self.angle(t), v)


def quantize(angle, pulses_per_rev: int):
    """Round angle(s) to the nearest encoder count of 2*pi/pulses_per_rev."""
    if pulses_per_rev <= 0:
        raise ValueError("pulses_per_rev must be positive")
    q = 2.0 * math.pi / pulses_per_rev
    arr = np.asarray(angle, dtype=float)
    out = np.round(arr / q) * q
    return out if arr.ndim else float(out)


def _check_finite(phi: np.ndarray, om: np.ndarray, t: float):
    if np.all(np.isfinite(phi)) and np.all(np.isfinite(om)):
        return
    bad = ~(np.isfinite(phi) & np.isfinite(om))
    raise DivergenceError(int(np.argmax(bad)) + 1, t)


def _rk4(params, phi, om, t, dt, ufun):
    """One RK4 step; the input is sampled at the stage times."""
    u1 = ufun(t)
    u2 = ufun(t + 0.5 * dt)
    u4 = ufun(t + dt)
    k1v = om
    k1a = accelerations(params, phi, om, u1)
    k2v = om + 0.5 * dt * k1a
    k2a = accelerations(params, phi + 0.5 * dt * k1v, om + 0.5 * dt * k1a, u2)
    k3v = om + 0.5 * dt * k2a
    k3a = accelerations(params, phi + 0.5 * dt * k2v, om + 0.5 * dt * k2a, u2)
    k4v = om + dt * k3a
    k4a = accelerations(params, phi + dt * k3v, om + dt * k3a, u4)
    phi_n = phi + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    om_n = om + (dt / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    return phi_n, om_n


def step(params: ChainParams, cs: ChainState, cmd: MotorCommand | None,
         dt: float) -> ChainState:
    """Advance the chain one RK4 step with the motor command held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    phi, om = _rk4(params, cs.angles, cs.velocities, cs.time, dt, lambda t: cmd)
    t_next = cs.time + dt
    _check_finite(phi, om, t_next)
    return ChainState(t_next, phi, om)


@dataclass
class TrajectoryLog:
    """Sampled record of a simulation run, one row per control instant."""

    times: np.ndarray          # (K,)
    angles: np.ndarray         # (K, N) true angles
    velocities: np.ndarray     # (K, N) true angular velocities
    motor1: np.ndarray         # (K,) motor 1 angle
    motor2: np.ndarray         # (K,) motor 2 angle
    measured: np.ndarray       # (K, N) quantized encoder angles
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.angles.shape[1]

    def column_names(self) -> list[str]:
        N = self.N
        cols = (["t"]
                + [f"phi_{i}" for i in range(1, N + 1)]
                + [f"omega_{i}" for i in range(1, N + 1)]
                + ["phi_m1", "phi_m2"]
                + [f"meas_{i}" for i in range(1, N + 1)])
        return cols + list(self.extra.keys())

    def to_csv(self, path=None) -> str | None:
        """Write the log as CSV with 12 significant digits per value."""
        buf = io.StringIO()
        buf.write(",".join(self.column_names()) + "\n")
        extras = list(self.extra.values())
        for i in range(len(self.times)):
            row = ([self.times[i]] + list(self.angles[i]) + list(self.velocities[i])
                   + [self.motor1[i], self.motor2[i]] + list(self.measured[i])
                   + [col[i] for col in extras])
            buf.write(",".join(f"{v:.12g}" for v in row) + "\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="\n") as f:
            f.write(text)
        return None

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path) as f:
            header = f.readline().strip().split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        names = {name: j for j, name in enumerate(header)}
        N = sum(1 for name in header if name.startswith("phi_") and name[4:].isdigit())
        phi_cols = [names[f"phi_{i}"] for i in range(1, N + 1)]
        om_cols = [names[f"omega_{i}"] for i in range(1, N + 1)]
        meas_cols = [names[f"meas_{i}"] for i in range(1, N + 1)]
        base = {"t"} | {header[j] for j in phi_cols + om_cols + meas_cols} | {"phi_m1", "phi_m2"}
        extra = {name: data[:, j] for name, j in names.items() if name not in base}
        return cls(times=data[:, names["t"]],
                   angles=data[:, phi_cols],
                   velocities=data[:, om_cols],
                   motor1=data[:, names["phi_m1"]],
                   motor2=data[:, names["phi_m2"]],
                   measured=data[:, meas_cols],
                   extra=extra)


class _MotorState:
    """Per-motor slew integrator for the rate-limited model."""

    def __init__(self, model: MotorModel):
        self.model = model
        self.pos = 0.0
        self.vel = 0.0

    def track(self, target: float, dt: float) -> tuple[float, float]:
        v_des = (target - self.pos) / dt
        vmax = self.model.max_speed
        v_des = max(-vmax, min(vmax, v_des))
        if self.model.max_accel is not None:
            amax = self.model.max_accel
            v_des = max(self.vel - amax * dt, min(self.vel + amax * dt, v_des))
        self.vel = v_des
        self.pos += self.vel * dt
        return (self.pos, self.vel)


def run_simulation(params: ChainParams, *, duration: float,
                   controller: Callable[[float, Sequence[MeasurementFrame]], object] | None = None,
                   m1_drive: ContinuousDrive | None = None,
                   m2_drive: ContinuousDrive | None = None,
                   integrator: IntegratorConfig = IntegratorConfig(),
                   sensor: SensorConfig = SensorConfig(),
                   motor: MotorModel = MotorModel(),
                   initial_state: ChainState | None = None,
                   m1_attached: bool = True,
                   m2_attached: bool = True) -> TrajectoryLog:
    """Run the full experiment loop and return the sampled log.

    Motor 1 is driven either by ``controller`` (called once per sampling
    period with the frames delivered so far; returns the commanded motor-1
    angle or a full MotorCommand; held between instants) or by the
    open-loop trajectory ``m1_drive``. Motor 2 follows ``m2_drive``.
    Attached undriven motors stay at angle 0; a detached motor
    (``m*_attached=False``) exerts no boundary torque at all, which is the
    experiments' far-end M=0 configuration (its log column stays 0).

    The controller at time t only sees frames with timestamp <= t - td.
    """
    if controller is not None and m1_drive is not None:
        raise ValueError("motor 1 cannot have both a controller and an open-loop drive")
    if not m1_attached and (controller is not None or m1_drive is not None):
        raise ValueError("motor 1 is detached; it cannot be driven")
    if not m2_attached and m2_drive is not None:
        raise ValueError("motor 2 is detached; it cannot be driven")
    dt = integrator.dt
    ts = sensor.ts
    steps_per = round(ts / dt)
    if steps_per < 1 or abs(steps_per * dt - ts) > _TOL:
        raise ValueError(f"sampling period {ts} is not an integer multiple of dt {dt}")
    n_ctrl = int(math.floor(duration / ts + _TOL))

    N = params.N
    if initial_state is None:
        phi = np.zeros(N)
        om = np.zeros(N)
    else:
        if len(initial_state.angles) != N:
            raise ValueError("initial state length does not match params.N")
        phi = initial_state.angles.astype(float).copy()
        om = initial_state.velocities.astype(float).copy()

    rate_limited = motor.mode == "rate-limited"
    mstate1 = _MotorState(motor) if rate_limited else None
    mstate2 = _MotorState(motor) if rate_limited else None

    frames: list[MeasurementFrame] = []
    prev_meas = None
    held_phi1 = 0.0   # ZOH command for motor 1 (controller path)
    held_om1 = 0.0
    held_cmd2 = None  # (phi, omega) if the controller also commands motor 2

    times = np.empty(n_ctrl + 1)
    log_phi = np.empty((n_ctrl + 1, N))
    log_om = np.empty((n_ctrl + 1, N))
    log_m1 = np.empty(n_ctrl + 1)
    log_m2 = np.empty(n_ctrl + 1)
    log_meas = np.empty((n_ctrl + 1, N))
    extra_rows: list[dict] = []

    def motor_targets(t):
        """Commanded (phi, omega) per motor at time t, before the motor model."""
        if m1_drive is not None:
            p1, v1 = m1_drive.eval(t)
        else:
            p1, v1 = held_phi1, held_om1
        if m2_drive is not None:
            p2, v2 = m2_drive.eval(t)
        elif held_cmd2 is not None:
            p2, v2 = held_cmd2
        else:
            p2, v2 = 0.0, 0.0
        return p1, v1, p2, v2

    def plant_input(t):
        p1, v1, p2, v2 = motor_targets(t)
        return ((p1, v1) if m1_attached else None,
                (p2, v2) if m2_attached else None)

    for kk in range(n_ctrl + 1):
        t_k = kk * ts
        meas = quantize(phi, sensor.pulses_per_rev)
        vel_est = (meas - prev_meas) / ts if prev_meas is not None else np.zeros(N)
        prev_meas = meas
        frames.append(MeasurementFrame(t_k, meas, vel_est))
        delivered = [f for f in frames if f.timestamp + sensor.td <= t_k + _TOL]

        if controller is not None:
            out = controller(t_k, delivered)
            if isinstance(out, MotorCommand):
                new_phi1 = out.phi_m1
                held_cmd2 = (out.phi_m2, out.omega_m2)
            else:
                new_phi1 = float(out)
            held_om1 = (new_phi1 - held_phi1) / ts
            held_phi1 = new_phi1
            trace = getattr(controller, "log_values", None)
            if trace is not None:
                extra_rows.append(dict(trace()) if callable(trace) else dict(trace))

        p1, v1, p2, v2 = motor_targets(t_k)
        times[kk] = t_k
        log_phi[kk] = phi
        log_om[kk] = om
        log_m1[kk] = mstate1.pos if rate_limited else p1
        log_m2[kk] = mstate2.pos if rate_limited else p2
        log_meas[kk] = meas

        if kk == n_ctrl:
            break
        t = t_k
        for _ in range(steps_per):
            if rate_limited:
                tp1, _, tp2, _ = motor_targets(t)
                p1, v1 = mstate1.track(tp1, dt)
                p2, v2 = mstate2.track(tp2, dt)
                u = ((p1, v1) if m1_attached else None,
                     (p2, v2) if m2_attached else None)
                ufun = lambda _t, _u=u: _u
            else:
                ufun = plant_input
            phi, om = _rk4(params, phi, om, t, dt, ufun)
            t += dt
            _check_finite(phi, om, t)

    extra: dict[str, np.ndarray] = {}
    if extra_rows:
        for key in extra_rows[0]:
            extra[key] = np.array([row[key] for row in extra_rows])
    return TrajectoryLog(times, log_phi, log_om, log_m1, log_m2, log_meas, extra)
