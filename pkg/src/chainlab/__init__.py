"""Simulation, boundary control and identification of a coupled pendulum chain."""

from .model import (
    ChainParams,
    ChainState,
    MotorCommand,
    PendulumState,
    build_laplacian,
    chain_derivative,
    error_dynamics_jacobian,
    total_energy,
)
from .engine import (
    ContinuousDrive,
    DivergenceError,
    IntegratorConfig,
    MeasurementFrame,
    MotorModel,
    SensorConfig,
    TrajectoryLog,
    quantize,
    run_simulation,
    step,
)

__version__ = "0.1.0"
