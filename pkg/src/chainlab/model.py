"""Physics of the torsionally coupled pendulum chain.

A chain of N identical pendulums pivots around a common shaft. Nearest
neighbours are coupled through torsional springs with stiffness ``k`` and
spring-internal damping ``b``; each pendulum additionally sees gravity and
bearing friction ``gamma``. Two position-controlled motors act as virtual
pendulums attached through identical springs to pendulum 1 and pendulum N.

Equation of motion for pendulum i (interior):

    J phidd_i = -m g l sin(phi_i) - gamma phid_i
                + k (phi_{i-1} - 2 phi_i + phi_{i+1})
                + b (phid_{i-1} - 2 phid_i + phid_{i+1})

Boundary pendulums have a single chain neighbour plus the motor spring
torque ``k (phi_M - phi) + b (phid_M - phid)``.

The coupling topology is the path-graph Laplacian, so the same dynamics
can be written in stacked matrix form; tests cross-check both forms.

Angles are unwrapped reals: continuous rotation accumulates angle, and any
wrapping is a display concern of downstream tooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChainParams",
    "PendulumState",
    "ChainState",
    "MotorCommand",
    "build_laplacian",
    "drift",
    "coupling_accels",
    "boundary_accels",
    "chain_derivative",
    "accelerations",
    "total_energy",
    "separatrix_energy",
    "error_dynamics_jacobian",
]


@dataclass(frozen=True)
class ChainParams:
    """Physical constants of the chain.

    Units: J [kg m^2], m [kg], l [m], g [m/s^2]; k acts as torque per
    radian of relative twist, b and gamma as torque per (rad/s).
    """

    N: int
    J: float
    m: float
    l: float
    k: float
    b: float
    gamma: float
    g: float = 9.81
    k_nominal: float | None = None  # datasheet spring constant, informational

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"need at least 2 pendulums, got N={self.N}")
        for name in ("J", "m", "l", "g", "k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.b < 0 or self.gamma < 0:
            raise ValueError("dissipation coefficients must be nonnegative")

    @classmethod
    def from_mass_length(cls, N, m, l, k, b, gamma, g=9.81, k_nominal=None):
        """Build params with the rod treated as massless: J = m l^2."""
        return cls(N=N, J=m * l * l, m=m, l=l, k=k, b=b, gamma=gamma, g=g,
                   k_nominal=k_nominal)

    @classmethod
    def platform(cls, N=20):
        """Identified constants of the desk-scale laboratory chain."""
        return cls(N=N, J=3.82e-4, m=0.017, l=0.15, k=0.065, b=1.70e-3,
                   gamma=3.75e-4, g=9.81, k_nominal=0.054)

    @property
    def mgl(self) -> float:
        return self.m * self.g * self.l

    @property
    def natural_frequency(self) -> float:
        """Small-oscillation frequency of one uncoupled pendulum, rad/s."""
        return math.sqrt(self.mgl / self.J)


@dataclass(frozen=True)
class PendulumState:
    """Angle [rad] and angular velocity [rad/s] of one pendulum."""

    angle: float
    velocity: float


@dataclass
class ChainState:
    """Stacked chain state at one time instant.

    ``angles`` and ``velocities`` are float arrays of length N.
    """

    time: float
    angles: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.angles.shape != self.velocities.shape or self.angles.ndim != 1:
            raise ValueError("angles and velocities must be 1-d arrays of equal length")

    @classmethod
    def zero(cls, N, time=0.0):
        return cls(time, np.zeros(N), np.zeros(N))

    @classmethod
    def from_states(cls, time, states):
        return cls(time,
                   np.array([s.angle for s in states]),
                   np.array([s.velocity for s in states]))

    @property
    def states(self) -> list[PendulumState]:
        return [PendulumState(a, v) for a, v in zip(self.angles, self.velocities)]

    def copy(self) -> "ChainState":
        return ChainState(self.time, self.angles.copy(), self.velocities.copy())


@dataclass(frozen=True)
class MotorCommand:
    """Boundary virtual-pendulum angles and angular speeds."""

    phi_m1: float = 0.0
    omega_m1: float = 0.0
    phi_m2: float = 0.0
    omega_m2: float = 0.0


def build_laplacian(N: int) -> np.ndarray:
    """Graph Laplacian of the N-vertex path: tridiagonal, rows sum to zero."""
    if N < 2:
        raise ValueError(f"path graph needs N >= 2, got {N}")
    L = np.zeros((N, N))
    idx = np.arange(N)
    L[idx, idx] = 2.0
    L[0, 0] = L[-1, -1] = 1.0
    L[idx[:-1], idx[:-1] + 1] = -1.0
    L[idx[:-1] + 1, idx[:-1]] = -1.0
    return L


def _lap_apply(x: np.ndarray) -> np.ndarray:
    """Apply the path Laplacian along the last axis without forming the matrix."""
    d = np.diff(x, axis=-1)
    out = np.empty_like(x)
    out[..., 0] = -d[..., 0]
    out[..., -1] = d[..., -1]
    out[..., 1:-1] = d[..., :-1] - d[..., 1:]
    return out


def drift(params: ChainParams, s: PendulumState) -> tuple[float, float]:
    """Uncoupled single-pendulum dynamics: (d angle, d velocity)."""
    acc = -(params.mgl / params.J) * math.sin(s.angle) \
        - (params.gamma / params.J) * s.velocity
    return (s.velocity, acc)


def accelerations(params: ChainParams, angles: np.ndarray, velocities: np.ndarray,
                  cmd=None) -> np.ndarray:
    """Angular accelerations of the whole chain; broadcasts over leading axes.

    ``cmd`` is a MotorCommand, or ``None`` for torque-free boundaries, or a
    pair ``(u1, u2)`` with each side either ``None`` (spring detached, the
    experiments' M=0 configuration) or an (angle, velocity) tuple.
    """
    J = params.J
    acc = -(params.mgl / J) * np.sin(angles) - (params.gamma / J) * velocities
    acc -= (params.k * _lap_apply(angles) + params.b * _lap_apply(velocities)) / J
    if cmd is None:
        return acc
    if isinstance(cmd, tuple):
        u1, u2 = cmd
    else:
        u1 = (cmd.phi_m1, cmd.omega_m1)
        u2 = (cmd.phi_m2, cmd.omega_m2)
    if u1 is not None:
        acc[..., 0] += (params.k * (u1[0] - angles[..., 0])
                        + params.b * (u1[1] - velocities[..., 0])) / J
    if u2 is not None:
        acc[..., -1] += (params.k * (u2[0] - angles[..., -1])
                         + params.b * (u2[1] - velocities[..., -1])) / J
    return acc


def coupling_accels(params: ChainParams, cs: ChainState) -> np.ndarray:
    """Accelerations from nearest-neighbour spring/damper coupling only."""
    return -(params.k * _lap_apply(cs.angles)
             + params.b * _lap_apply(cs.velocities)) / params.J


def boundary_accels(params: ChainParams, cs: ChainState,
                    cmd: MotorCommand) -> tuple[float, float]:
    """Accelerations injected by the two motor springs on pendulums 1 and N."""
    a1 = (params.k * (cmd.phi_m1 - cs.angles[0])
          + params.b * (cmd.omega_m1 - cs.velocities[0])) / params.J
    aN = (params.k * (cmd.phi_m2 - cs.angles[-1])
          + params.b * (cmd.omega_m2 - cs.velocities[-1])) / params.J
    return (a1, aN)


def chain_derivative(params: ChainParams, cs: ChainState,
                     cmd: MotorCommand | None) -> tuple[np.ndarray, np.ndarray]:
    """Full state derivative (d angles, d velocities) of the driven chain."""
    return (cs.velocities.copy(),
            accelerations(params, cs.angles, cs.velocities, cmd))


def total_energy(params: ChainParams, cs: ChainState) -> float:
    """Kinetic + gravitational + internal spring energy, joules.

    The boundary motor springs are excluded: their energy belongs to the
    exchange with the (ideal) actuators, not to the chain itself.
    """
    kin = 0.5 * params.J * float(np.sum(cs.velocities ** 2))
    grav = params.mgl * float(np.sum(1.0 - np.cos(cs.angles)))
    spring = 0.5 * params.k * float(np.sum(np.diff(cs.angles) ** 2))
    return kin + grav + spring


def separatrix_energy(params: ChainParams) -> float:
    """Single-pendulum energy separating oscillation from full rotation."""
    return 2.0 * params.mgl


def error_dynamics_jacobian(params: ChainParams) -> tuple[np.ndarray, np.ndarray]:
    """Linearisation of the synchronisation-error dynamics at the origin.

    Returns the 2N x 2N matrix

        I_N (x) [[0, 1], [-mgl/J, -gamma/J]]  -  (L + D) (x) (B K / J)

    with B = [0, 1]^T, K = [k, b] and D = diag(1, 0, ..., 0, 1) accounting
    for the two motor springs, together with its eigenvalues.
    """
    N = params.N
    A_loc = np.array([[0.0, 1.0],
                      [-params.mgl / params.J, -params.gamma / params.J]])
    BK = np.array([[0.0, 0.0],
                   [params.k / params.J, params.b / params.J]])
    LD = build_laplacian(N)
    LD[0, 0] += 1.0
    LD[-1, -1] += 1.0
    A = np.kron(np.eye(N), A_loc) - np.kron(LD, BK)
    return A, np.linalg.eigvals(A)
