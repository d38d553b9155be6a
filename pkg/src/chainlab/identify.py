"""Grey-box identification of (k, b, gamma) from sampled trajectories.

The fit minimizes the simulation error: candidate parameters are plugged
into the chain model, the recorded motor inputs are replayed, and the sum
of squared angle deviations over all pendulums and samples is driven down
with a bounded derivative-free simplex search (multi-start, seeded).
Verification quality is reported as range-normalized root-mean-square
error (NRMSE) per pendulum and averaged over the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .engine import ContinuousDrive, TrajectoryLog
from .model import ChainParams, _lap_apply

__all__ = [
    "Dataset",
    "FitSpec",
    "FitResult",
    "DEFAULT_BOUNDS",
    "excitation",
    "excitation_drive",
    "triangle_disturbance",
    "triangle_drive",
    "nrmse",
    "fit",
]

DEFAULT_BOUNDS = {
    "k": (1e-3, 1.0),
    "b": (1e-6, 0.1),
    "gamma": (1e-7, 0.05),
}


def excitation(a: float, omega: float, t):
    """Sinusoidal motor angle a*sin(omega*t) used to excite the chain."""
    return a * np.sin(omega * np.asarray(t, dtype=float))


def excitation_drive(a: float, omega: float) -> ContinuousDrive:
    """Open-loop sine drive with its exact velocity a*omega*cos(omega*t)."""
    return ContinuousDrive(lambda t: a * math.sin(omega * t),
                           lambda t: a * omega * math.cos(omega * t))


def triangle_disturbance(a: float, omega: float, t):
    """Periodic triangle wave -(2a/pi)*arcsin(sin(omega*t)), amplitude a."""
    return -(2.0 * a / math.pi) * np.arcsin(np.sin(omega * np.asarray(t, dtype=float)))


def triangle_drive(a: float, omega: float) -> ContinuousDrive:
    """Triangle-wave drive; slope is piecewise constant +-2*a*omega/pi."""
    slope = 2.0 * a * omega / math.pi
    return ContinuousDrive(
        lambda t: -(2.0 * a / math.pi) * math.asin(math.sin(omega * t)),
        lambda t: -slope * np.sign(math.cos(omega * t)))


@dataclass
class Dataset:
    """One recorded trajectory: motor input trace and per-pendulum angles.

    ``inputs`` has one row per sample: (phi_m1, omega_m1, phi_m2, omega_m2).
    ``outputs`` holds the measured angles, one column per pendulum. Initial
    velocities are zero unless given (experiments start from rest). The
    identification runs drive motor 1 with the far spring detached, hence
    the default ``m2_attached=False``.
    """

    ts: float
    inputs: np.ndarray    # (K, 4)
    outputs: np.ndarray   # (K, N)
    init_velocities: np.ndarray | None = None
    m1_attached: bool = True
    m2_attached: bool = False

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 4:
            raise ValueError("inputs must be (K, 4)")
        if self.outputs.ndim != 2 or len(self.outputs) != len(self.inputs):
            raise ValueError("outputs must be (K, N) with K matching inputs")

    @property
    def N(self) -> int:
        return self.outputs.shape[1]

    @classmethod
    def from_log(cls, log: TrajectoryLog, use_measured: bool = True,
                 m1_attached: bool = True, m2_attached: bool = False) -> "Dataset":
        """Build a dataset from an engine log.

        Motor velocities are not logged; they are reconstructed by central
        differences of the motor angle columns.
        """
        t = log.times
        ts = float(t[1] - t[0])
        om1 = np.gradient(log.motor1, ts)
        om2 = np.gradient(log.motor2, ts)
        inputs = np.column_stack([log.motor1, om1, log.motor2, om2])
        outputs = log.measured if use_measured else log.angles
        return cls(ts=ts, inputs=inputs, outputs=outputs.copy(),
                   init_velocities=log.velocities[0].copy(),
                   m1_attached=m1_attached, m2_attached=m2_attached)


@dataclass
class FitSpec:
    """What to fit and how.

    ``base`` supplies the fixed constants (N, J, m, l, g); the free subset
    of {k, b, gamma} is searched inside a positive box in log space.
    """

    base: ChainParams
    free: tuple[str, ...] = ("k", "b", "gamma")
    guess: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    multi_start: int = 3
    max_evals: int = 2000
    seed: int = 0
    substeps: int | None = None  # RK4 substeps per sample interval

    def __post_init__(self):
        for name in self.free:
            if name not in DEFAULT_BOUNDS:
                raise ValueError(f"unknown free parameter {name!r}")
        self.bounds = {**DEFAULT_BOUNDS, **self.bounds}
        for name in self.free:
            self.guess.setdefault(name, getattr(self.base, name))
            lo, hi = self.bounds[name]
            if not (0 < lo < hi):
                raise ValueError(f"bounds for {name} must be a positive box")
            if not (lo <= self.guess[name] <= hi):
                raise ValueError(f"guess for {name} outside bounds {lo}..{hi}")


@dataclass
class FitResult:
    values: dict[str, float]
    objective: float
    nrmse_per_pendulum: np.ndarray
    nrmse_mean: float
    converged: bool
    n_evals: int

    def report(self) -> str:
        lines = [f"{name}: {value:.6g}" for name, value in self.values.items()]
        lines.append(f"objective: {self.objective:.6g}")
        lines.append(f"nrmse_mean: {self.nrmse_mean:.4g}")
        for i, e in enumerate(self.nrmse_per_pendulum, start=1):
            lines.append(f"nrmse_{i}: {e:.4g}")
        lines.append(f"converged: {self.converged}")
        lines.append(f"evaluations: {self.n_evals}")
        return "\n".join(lines)


def nrmse(simulated, measured):
    """Range-normalized RMS error per signal plus the chain average.

    Signals are columns; 1-d inputs are treated as a single signal. The
    normalization is the measured peak-to-peak range, so a constant
    measured trace is rejected.
    """
    sim = np.asarray(simulated, dtype=float)
    meas = np.asarray(measured, dtype=float)
    if sim.shape != meas.shape:
        raise ValueError(f"trace shapes differ: {sim.shape} vs {meas.shape}")
    squeeze = meas.ndim == 1
    if squeeze:
        sim = sim[:, None]
        meas = meas[:, None]
    rng = meas.max(axis=0) - meas.min(axis=0)
    if np.any(rng == 0):
        raise ValueError("measured trace is constant; range normalization undefined")
    per = np.sqrt(np.mean((sim - meas) ** 2, axis=0)) / rng
    if squeeze:
        return float(per[0]), float(per[0])
    return per, float(per.mean())


def _simulate_batch(params: ChainParams, ts: float, inputs: np.ndarray,
                    init_phi: np.ndarray, init_om: np.ndarray,
                    n_sub: int, attach: tuple[bool, bool] = (True, False)) -> np.ndarray:
    """Replay recorded inputs against candidate params for a batch of runs.

    ``inputs`` is (B, K, 4); returns simulated angles (B, K, N). The input
    trace is interpolated with a Catmull-Rom spline between samples (a
    stepwise or linear replay visibly distorts the fastest excitations)
    and the chain is integrated with RK4 at ts/n_sub.
    """
    B, K, _ = inputs.shape
    phi = init_phi.copy()
    om = init_om.copy()
    h = ts / n_sub
    out = np.empty((B, K, phi.shape[1]))
    out[:, 0] = phi
    J = params.J
    mgl_J = params.mgl / J
    gam_J = params.gamma / J
    k_, b_ = params.k, params.b
    at1, at2 = attach

    def acc(phi, om, u):
        a = -mgl_J * np.sin(phi) - gam_J * om \
            - (k_ * _lap_apply(phi) + b_ * _lap_apply(om)) / J
        if at1:
            a[:, 0] += (k_ * (u[:, 0] - phi[:, 0]) + b_ * (u[:, 1] - om[:, 0])) / J
        if at2:
            a[:, -1] += (k_ * (u[:, 2] - phi[:, -1]) + b_ * (u[:, 3] - om[:, -1])) / J
        return a

    ext = np.concatenate([inputs[:, :1], inputs, inputs[:, -1:]], axis=1)
    taus = np.arange(2 * n_sub + 1) / (2.0 * n_sub)  # stage grid, half-substep spacing
    for j in range(K - 1):
        p0, p1 = ext[:, j], ext[:, j + 1]
        p2, p3 = ext[:, j + 2], ext[:, j + 3]
        c1 = 0.5 * (p2 - p0)
        c2 = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3
        c3 = 0.5 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3)
        u_stage = [p1 + tau * (c1 + tau * (c2 + tau * c3)) for tau in taus]
        for s in range(n_sub):
            ua, um, ub = u_stage[2 * s], u_stage[2 * s + 1], u_stage[2 * s + 2]
            k1v = om
            k1a = acc(phi, om, ua)
            k2v = om + 0.5 * h * k1a
            k2a = acc(phi + 0.5 * h * k1v, om + 0.5 * h * k1a, um)
            k3v = om + 0.5 * h * k2a
            k3a = acc(phi + 0.5 * h * k2v, om + 0.5 * h * k2a, um)
            k4v = om + h * k3a
            k4a = acc(phi + h * k3v, om + h * k3a, ub)
            phi = phi + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
            om = om + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
        out[:, j + 1] = phi
    return out


def _simulate_outputs(params: ChainParams, ds: Dataset, n_sub: int) -> np.ndarray:
    """Replay one dataset; simulated angles (K, N) at the sample instants."""
    init_om = np.zeros(ds.N) if ds.init_velocities is None else ds.init_velocities
    return _simulate_batch(params, ds.ts, ds.inputs[None],
                           ds.outputs[0][None].astype(float),
                           init_om[None].astype(float), n_sub,
                           attach=(ds.m1_attached, ds.m2_attached))[0]


def _batch_groups(datasets):
    """Group dataset indices by shared shape/rate/attachment for stacking."""
    groups: dict[tuple, list[int]] = {}
    for i, ds in enumerate(datasets):
        key = (len(ds.inputs), ds.N, round(ds.ts, 12), ds.m1_attached, ds.m2_attached)
        groups.setdefault(key, []).append(i)
    return groups


def _objective_fn(datasets, n_sub):
    groups = []
    for (_, N, ts, at1, at2), idx in _batch_groups(datasets).items():
        inputs = np.stack([datasets[i].inputs for i in idx])
        outputs = np.stack([datasets[i].outputs for i in idx])
        init_phi = outputs[:, 0].astype(float)
        init_om = np.stack([
            np.zeros(N) if datasets[i].init_velocities is None
            else np.asarray(datasets[i].init_velocities, dtype=float)
            for i in idx])
        groups.append((ts, inputs, outputs, init_phi, init_om, (at1, at2)))

    def objective(params: ChainParams) -> float:
        total = 0.0
        for ts, inputs, outputs, init_phi, init_om, attach in groups:
            sim = _simulate_batch(params, ts, inputs, init_phi, init_om, n_sub,
                                  attach=attach)
            if not np.all(np.isfinite(sim)):
                return 1e30  # diverged candidate; steer the simplex away
            total += float(np.sum((sim - outputs) ** 2))
        return total

    return objective


def fit(data, spec: FitSpec) -> FitResult:
    """Least-squares grey-box fit of the free parameters to one or more datasets."""
    datasets = [data] if isinstance(data, Dataset) else list(data)
    if not datasets:
        raise ValueError("no datasets given")
    for ds in datasets:
        if ds.N != spec.base.N:
            raise ValueError("dataset width does not match base params N")

    n_sub = spec.substeps or max(1, math.ceil(datasets[0].ts / 5e-3))
    informative = any(np.ptp(ds.inputs) > 0 for ds in datasets) and \
        any(np.ptp(ds.outputs) > 0 for ds in datasets)

    names = list(spec.free)
    lo = np.log10([spec.bounds[n][0] for n in names])
    hi = np.log10([spec.bounds[n][1] for n in names])
    z0 = np.log10([spec.guess[n] for n in names])

    def params_of(z):
        vals = {n: float(10.0 ** zi) for n, zi in zip(names, z)}
        return replace(spec.base, **vals)

    objective = _objective_fn(datasets, n_sub)
    evals = 0

    def f(z):
        nonlocal evals
        evals += 1
        return objective(params_of(np.clip(z, lo, hi)))

    if not informative:
        values = {n: spec.guess[n] for n in names}
        return FitResult(values=values, objective=objective(params_of(z0)),
                         nrmse_per_pendulum=np.full(spec.base.N, np.nan),
                         nrmse_mean=float("nan"), converged=False, n_evals=0)

    rng = np.random.default_rng(spec.seed)
    starts = [z0]
    for _ in range(spec.multi_start - 1):
        starts.append(np.clip(z0 + rng.uniform(-0.2, 0.2, size=len(names)), lo, hi))

    budget = max(spec.max_evals // max(1, len(starts)), 10 * len(names))
    best = None
    for z_start in starts:
        res = minimize(f, z_start, method="Nelder-Mead",
                       bounds=list(zip(lo, hi)),
                       options={"maxfev": budget, "xatol": 5e-4, "fatol": 1e-12,
                                "adaptive": False})
        if best is None or res.fun < best.fun:
            best = res

    z_best = np.clip(best.x, lo, hi)
    params_best = params_of(z_best)
    values = {n: getattr(params_best, n) for n in names}

    per_sets = []
    for ds in datasets:
        sim = _simulate_outputs(params_best, ds, n_sub)
        per, _ = nrmse(sim, ds.outputs)
        per_sets.append(per)
    per_pend = np.mean(np.vstack(per_sets), axis=0)
    return FitResult(values=values, objective=float(best.fun),
                     nrmse_per_pendulum=per_pend, nrmse_mean=float(per_pend.mean()),
                     converged=bool(best.success), n_evals=evals)
