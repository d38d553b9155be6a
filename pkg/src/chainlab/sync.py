"""Low-oscillatory rotation via a near-synchronizing open-loop reference.

Tracking an undamped single-pendulum rotation keeps the chain close to
synchrony: on that trajectory the coupling torques vanish and bearing
friction only perturbs the motion. The reference is precomputed offline
and replayed by motor 1; motor 2 stays frozen. A constant-speed ramp
serves as the baseline, and the pairwise speed-difference integral
quantifies how desynchronized a run was.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .engine import ContinuousDrive, TrajectoryLog
from .model import ChainParams, MotorCommand, separatrix_energy

__all__ = [
    "RotationError",
    "ReferenceTrajectory",
    "SyncGoalSpec",
    "generate_sync_reference",
    "constant_speed_reference",
    "reference_to_motor_command",
    "reference_drive",
    "desync_criterion",
    "mean_speeds",
    "search_initial_speed",
]

_TOL = 1e-9


class RotationError(RuntimeError):
    """Initial condition cannot sustain continuous rotation."""


@dataclass(frozen=True)
class SyncGoalSpec:
    """Rotation goal: nonzero average speed over a finite horizon."""

    omega_ref: float
    t_f: float

    def __post_init__(self):
        if self.omega_ref == 0:
            raise ValueError("omega_ref must be nonzero")
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")


@dataclass
class ReferenceTrajectory:
    """Virtual-leader trajectory sampled uniformly at ``ts``."""

    ts: float
    angles: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.angles.shape != self.velocities.shape or self.angles.ndim != 1:
            raise ValueError("angles and velocities must be 1-d and equally long")
        if not (np.all(np.isfinite(self.angles)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("reference contains non-finite samples")

    @property
    def duration(self) -> float:
        return (len(self.angles) - 1) * self.ts

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.angles)) * self.ts

    def mean_velocity(self) -> float:
        return (self.angles[-1] - self.angles[0]) / self.duration

    def initial_state(self) -> tuple[float, float]:
        return (float(self.angles[0]), float(self.velocities[0]))

    def to_csv(self, path=None) -> str | None:
        buf = io.StringIO()
        buf.write("t,phi0,omega0\n")
        for t, a, v in zip(self.times, self.angles, self.velocities):
            buf.write(f"{t:.12g},{a:.12g},{v:.12g}\n")
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="\n") as f:
            f.write(buf.getvalue())
        return None

    @classmethod
    def from_csv(cls, path) -> "ReferenceTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(ts=float(data[1, 0] - data[0, 0]), angles=data[:, 1],
                   velocities=data[:, 2])


def generate_sync_reference(params: ChainParams, x0_init: tuple[float, float],
                            t_f: float, ts: float, dt: float = 1e-4) -> ReferenceTrajectory:
    """Undamped single-pendulum rotation through the given initial state.

    Integrates the uncoupled pendulum with the bearing friction removed
    (RK4 at ``dt``, sampled at ``ts``). The initial energy must exceed the
    separatrix value or the motion would oscillate instead of rotating.
    """
    theta0, v0 = float(x0_init[0]), float(x0_init[1])
    energy = 0.5 * params.J * v0 ** 2 + params.mgl * (1.0 - math.cos(theta0))
    if energy <= separatrix_energy(params) + _TOL:
        raise RotationError(
            f"initial energy {energy:.4g} J does not exceed the separatrix "
            f"{separatrix_energy(params):.4g} J; no continuous rotation")
    steps_per = round(ts / dt)
    if steps_per < 1 or abs(steps_per * dt - ts) > _TOL:
        raise ValueError(f"ts {ts} is not an integer multiple of dt {dt}")
    n_samples = int(math.floor(t_f / ts + _TOL)) + 1
    w2 = params.mgl / params.J

    angles = np.empty(n_samples)
    velocities = np.empty(n_samples)
    theta, v = theta0, v0
    angles[0], velocities[0] = theta, v
    for j in range(1, n_samples):
        for _ in range(steps_per):
            k1t, k1v = v, -w2 * math.sin(theta)
            k2t = v + 0.5 * dt * k1v
            k2v = -w2 * math.sin(theta + 0.5 * dt * k1t)
            k3t = v + 0.5 * dt * k2v
            k3v = -w2 * math.sin(theta + 0.5 * dt * k2t)
            k4t = v + dt * k3v
            k4v = -w2 * math.sin(theta + dt * k3t)
            theta += (dt / 6.0) * (k1t + 2 * k2t + 2 * k3t + k4t)
            v += (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        angles[j], velocities[j] = theta, v
    return ReferenceTrajectory(ts=ts, angles=angles, velocities=velocities)


def constant_speed_reference(omega_ref: float, t_f: float, ts: float) -> ReferenceTrajectory:
    """Linearly growing angle at constant speed omega_ref."""
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    t = np.arange(int(math.floor(t_f / ts + _TOL)) + 1) * ts
    return ReferenceTrajectory(ts=ts, angles=omega_ref * t,
                               velocities=np.full_like(t, float(omega_ref)))


def reference_to_motor_command(ref: ReferenceTrajectory, t: float) -> MotorCommand:
    """Motor-1 command tracking the reference at time t; motor 2 frozen.

    Angle and velocity are linearly interpolated between samples; asking
    outside the stored horizon is an extrapolation error.
    """
    if t < -_TOL or t > ref.duration + _TOL:
        raise ValueError(f"t={t:.6g} outside the reference horizon [0, {ref.duration:.6g}]")
    x = min(max(t / ref.ts, 0.0), len(ref.angles) - 1.0)
    i = min(int(x), len(ref.angles) - 2)
    w = x - i
    phi = (1.0 - w) * ref.angles[i] + w * ref.angles[i + 1]
    om = (1.0 - w) * ref.velocities[i] + w * ref.velocities[i + 1]
    return MotorCommand(phi_m1=float(phi), omega_m1=float(om), phi_m2=0.0, omega_m2=0.0)


def reference_drive(ref: ReferenceTrajectory) -> ContinuousDrive:
    """Continuous motor-1 drive replaying the reference."""
    return ContinuousDrive(
        lambda t: reference_to_motor_command(ref, t).phi_m1,
        lambda t: reference_to_motor_command(ref, t).omega_m1)


def desync_criterion(log: TrajectoryLog, t_f: float | None = None) -> float:
    """Pairwise integral of |speed_i - speed_j| over i > j, trapezoidal."""
    mask = np.ones(len(log.times), dtype=bool) if t_f is None \
        else log.times <= t_f + _TOL
    t = log.times[mask]
    v = log.velocities[mask]
    total = 0.0
    N = v.shape[1]
    for i in range(N):
        for j in range(i):
            total += float(np.trapezoid(np.abs(v[:, i] - v[:, j]), t))
    return total


def mean_speeds(log: TrajectoryLog, window: tuple[float, float] | None = None) -> np.ndarray:
    """Per-pendulum time-averaged angular velocity over the window."""
    t0, t1 = (log.times[0], log.times[-1]) if window is None else window
    mask = (log.times >= t0 - _TOL) & (log.times <= t1 + _TOL)
    if mask.sum() < 2:
        raise ValueError("window covers fewer than two samples")
    t = log.times[mask]
    v = log.velocities[mask]
    return np.trapezoid(v, t, axis=0) / (t[-1] - t[0])


def search_initial_speed(params: ChainParams, omega_ref: float, *, angle0: float = math.pi,
                         t_f: float = 10.0, ts: float = 0.03, dt: float = 1e-4,
                         tol: float = 1e-3, max_iter: int = 60) -> float:
    """Initial speed at ``angle0`` whose rotation averages ``omega_ref``.

    Bisection on the (monotone) map from initial speed to mean rotation
    speed; the reference generator supplies only one worked (init, speed)
    pair, so arbitrary targets go through this search.
    """
    if omega_ref <= 0:
        raise ValueError("search assumes positive rotation speed")

    def mean_of(v0):
        ref = generate_sync_reference(params, (angle0, v0), t_f, ts, dt)
        return ref.mean_velocity()

    # lower bracket: barely super-separatrix (margin 1e-6 of the separatrix
    # energy, safely past the generator's rejection tolerance)
    e_lo = separatrix_energy(params) * (1.0 + 1e-6) \
        - params.mgl * (1.0 - math.cos(angle0))
    lo = math.sqrt(max(2.0 * e_lo / params.J, 0.0)) + 1e-9
    hi = max(abs(omega_ref) * 1.5, lo * 2.0)
    while mean_of(hi) < omega_ref:
        hi *= 2.0
        if hi > 1e4:
            raise RotationError("bisection bracket exploded; unreachable omega_ref")
    if mean_of(lo) > omega_ref:
        raise RotationError(f"omega_ref {omega_ref} below the slowest rotation "
                            f"reachable from angle {angle0}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mean_of(mid) < omega_ref:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
