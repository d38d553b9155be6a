"""Non-collocated cancellation of a single pendulum's oscillation.

A disturbance entering from the far boundary is treated as a travelling
wave. The controlled motor launches a counter-wave that meets it at the
target pendulum ``i_star`` with opposite phase: the mirror law commands
the negated angle of pendulum ``2 i_star``. Feedback latency is absorbed
by reading a pendulum further down the chain and back-dating the sample
(delta whole links plus a fractional link delay), and the residual gain
mismatch is tuned online by a perturbation extremum seeker that minimizes
the running average of |phi_i_star|.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .engine import (ContinuousDrive, IntegratorConfig, MeasurementFrame,
                     SensorConfig, run_simulation)
from .model import ChainParams

__all__ = [
    "WaveControlConfig",
    "EscConfig",
    "EscState",
    "CompensationError",
    "TravelTimeError",
    "naive_wave_law",
    "select_delay_params",
    "compensated_wave_law",
    "performance_index",
    "esc_step",
    "estimate_travel_times",
    "WaveController",
]

_TOL = 1e-9


class CompensationError(RuntimeError):
    """No feasible link advance: the needed measurement lies past the chain end."""


class TravelTimeError(RuntimeError):
    """Pulse experiment produced no usable wave-front arrivals."""


@dataclass(frozen=True)
class WaveControlConfig:
    """Parameters of the cancellation law.

    ``lam`` is the wave gain (written ``lambda`` in scenario files);
    ``delta`` and ``t_tilde`` split the latency compensation into whole
    links plus a fractional time, with ``t_d`` the assumed feedback delay.
    """

    i_star: int
    lam: float = 1.0
    delta: int = 0
    t_tilde: float = 0.0
    t_d: float = 0.0

    def __post_init__(self):
        if self.i_star < 1:
            raise ValueError("i_star must be a 1-based pendulum index")
        if self.delta < 0 or self.t_tilde < 0 or self.t_d < 0 or self.lam < 0:
            raise ValueError("delta, t_tilde, t_d and lam must be nonnegative")

    def measured_index(self) -> int:
        return 2 * self.i_star + self.delta


@dataclass(frozen=True)
class EscConfig:
    """Perturbation extremum-seeker settings (window, gain, dither, filter).

    ``demod_phase`` rotates the demodulating sine behind the dither. The
    index responds to a gain change only after the averaging window fills,
    the feedback delay passes and the counter-wave crosses the chain; at
    the default dither frequency that lag exceeds 90 deg, which makes
    zero-phase demodulation climb the index instead of descending it.
    Leave it at 0 for lag-free cost maps; use suggested_demod_phase() for
    the physical loop.
    """

    window: int = 20          # samples averaged by the performance index
    gain: float = 8.0         # integrator gain
    dither_freq: float = 0.5  # Hz
    dither_amp: float = 0.01
    hpf_cutoff: float = 0.1   # Hz
    ts: float = 0.03
    lam_max: float = 3.0      # safety clamp; an unbounded gain can destabilize
    demod_phase: float = 0.0  # rad

    def __post_init__(self):
        for name in ("window", "gain", "dither_freq", "dither_amp", "hpf_cutoff", "ts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def suggested_demod_phase(esc: EscConfig, t_d: float, transit_time: float) -> float:
    """Demodulation phase matching the loop lag at the dither frequency.

    ``transit_time`` is the wave travel time from the motor to the target
    pendulum (e.g. i_star times the mean link time); the interference
    pattern the index reads settles only after a round trip, so it enters
    twice. The index window adds its group delay, the feedback adds t_d,
    and the high-pass filter gives a small phase lead back. Calibrated
    against closed-loop phase scans on the 20-pendulum chain.
    """
    lag = (esc.window - 1) * esc.ts / 2.0 + t_d + 2.0 * transit_time
    lead = math.atan2(esc.hpf_cutoff, esc.dither_freq)
    return 2.0 * math.pi * esc.dither_freq * lag - lead


@dataclass
class EscState:
    """Mutable seeker memory: filter taps, integrator and the sample window."""

    integrator: float = 1.0
    lambda_hat: float = 1.0
    hpf_prev_in: float | None = None
    hpf_prev_out: float = 0.0
    index_window: deque = field(default_factory=lambda: deque(maxlen=20))
    last_index: float = 0.0
    last_hpf: float = 0.0
    last_demod: float = 0.0


def naive_wave_law(frames: Sequence[MeasurementFrame], cfg: WaveControlConfig) -> float:
    """Mirror law: command the negated newest angle of pendulum 2*i_star."""
    if not frames:
        raise ValueError("no measurement frames available")
    j = 2 * cfg.i_star
    newest = frames[-1]
    if j > len(newest.angles):
        raise ValueError(f"pendulum {j} = 2*i_star not present in a chain of {len(newest.angles)}")
    return -float(newest.angles[j - 1])


def select_delay_params(travel_times: Sequence[float], t_d: float) -> tuple[int, float]:
    """Split the feedback delay into whole links plus a fractional remainder.

    ``travel_times`` are the per-link wave travel times beyond the mirror
    pendulum. Picks the smallest advance ``delta`` whose cumulative travel
    time reaches ``t_d`` and returns the leftover ``t_tilde``; raises
    CompensationError when the chain runs out of links first.
    """
    if t_d < 0:
        raise ValueError("t_d must be nonnegative")
    if any(tau <= 0 for tau in travel_times):
        raise ValueError("travel times must be positive")
    if t_d <= _TOL:
        return (0, 0.0)
    cum = 0.0
    for i, tau in enumerate(travel_times):
        cum += tau
        if cum >= t_d - _TOL:
            return (i + 1, max(0.0, cum - t_d))
    raise CompensationError(
        f"delay {t_d:.4f} s exceeds the {cum:.4f} s of wave travel left in the chain")


def compensated_wave_law(frames: Sequence[MeasurementFrame], cfg: WaveControlConfig,
                         fallback: float = 0.0) -> float:
    """Delay-compensated law: -lam * phi_{2 i_star + delta}(t - t_d - t_tilde).

    The delayed sample is linearly interpolated between the two bracketing
    frames. Until the history spans the required look-back the ``fallback``
    command is returned (startup transient, not an error).
    """
    if not frames:
        return fallback
    j = cfg.measured_index()
    if j > len(frames[-1].angles):
        raise ValueError(f"pendulum {j} = 2*i_star+delta not present in a chain "
                         f"of {len(frames[-1].angles)}")
    # frames are t_d old, so the absolute target t - t_d - t_tilde sits
    # t_tilde behind the newest timestamp
    t_target = frames[-1].timestamp - cfg.t_tilde
    if t_target < frames[0].timestamp - _TOL:
        return fallback
    times = [f.timestamp for f in frames]
    idx = int(np.searchsorted(times, t_target, side="right")) - 1
    idx = max(0, min(idx, len(frames) - 1))
    if idx == len(frames) - 1:
        value = frames[-1].angles[j - 1]
    else:
        t0, t1 = times[idx], times[idx + 1]
        a0, a1 = frames[idx].angles[j - 1], frames[idx + 1].angles[j - 1]
        w = (t_target - t0) / (t1 - t0)
        value = (1.0 - w) * a0 + w * a1
    return -cfg.lam * float(value)


def performance_index(window) -> float:
    """Running average of |phi_i_star| over the sample window."""
    arr = np.abs(np.asarray(window, dtype=float))
    if arr.size == 0:
        raise ValueError("performance index needs at least one sample")
    return float(arr.mean())


def esc_step(cfg: EscConfig, state: EscState, index_value: float,
             t: float) -> tuple[EscState, float]:
    """One extremum-seeker update; call once per sampling period.

    High-passes the performance index, demodulates with the dither sine
    and integrates downhill; the returned gain estimate carries the dither
    on top and is clamped to [0, lam_max]. ``state`` is updated in place.
    The filter initializes on the first index value so switch-on causes
    no transient kick.
    """
    wc = 2.0 * math.pi * cfg.hpf_cutoff
    c = 2.0 / cfg.ts
    a_coef = (c - wc) / (c + wc)
    g_coef = c / (c + wc)
    if state.hpf_prev_in is None:
        state.hpf_prev_in = index_value
        state.hpf_prev_out = 0.0
    y = a_coef * state.hpf_prev_out + g_coef * (index_value - state.hpf_prev_in)
    state.hpf_prev_in = index_value
    state.hpf_prev_out = y

    s = math.sin(2.0 * math.pi * cfg.dither_freq * t)
    xi = y * math.sin(2.0 * math.pi * cfg.dither_freq * t - cfg.demod_phase)
    state.integrator += -cfg.gain * xi * cfg.ts
    state.integrator = min(max(state.integrator, 0.0), cfg.lam_max)
    lam_hat = state.integrator + cfg.dither_amp * s
    lam_hat = min(max(lam_hat, 0.0), cfg.lam_max)

    state.lambda_hat = lam_hat
    state.last_index = index_value
    state.last_hpf = y
    state.last_demod = xi
    return state, lam_hat


def _max_group_delay(params: ChainParams) -> float:
    """Fastest per-link travel time from the lattice dispersion relation."""
    q = np.linspace(1e-3, math.pi, 800)
    w = np.sqrt(params.mgl / params.J + 4.0 * params.k / params.J * np.sin(q / 2.0) ** 2)
    vg = (params.k / params.J) * np.sin(q) / w
    return 1.0 / float(vg.max())


def estimate_travel_times(params: ChainParams, *, kick: float = 0.2,
                          pulse_width: float = 0.03, dt: float = 1e-3,
                          sample: float = 0.005,
                          duration: float | None = None) -> np.ndarray:
    """Per-link wave travel times from a simulated pulse experiment.

    Motor 1 kicks the resting chain by ``kick`` rad for ``pulse_width``
    seconds and the arrival of the leading wave packet is tracked down the
    chain. Per-pendulum first-peak thresholding is ill-posed here (the
    sub-cutoff part of the kick leaks as an evanescent precursor and the
    packet shape morphs), so each link time is measured as the shift
    maximizing the cross-correlation of adjacent pendulum responses inside
    a window that follows the front, seeded at pendulum 1's first peak and
    refined to sub-sample resolution.
    """
    N = params.N
    if duration is None:
        duration = 1.0 + 0.35 * N
    drive = ContinuousDrive(lambda t: kick if t < pulse_width else 0.0,
                            lambda t: 0.0)
    log = run_simulation(params, duration=duration, m1_drive=drive,
                         integrator=IntegratorConfig(dt=dt),
                         sensor=SensorConfig(pulses_per_rev=4096, ts=sample, td=0.0))
    t = log.times
    h = t[1] - t[0]
    sig = log.angles
    tau = _max_group_delay(params)

    a1 = np.abs(sig[:, 0])
    m = max(3, int(3.0 * tau / h))
    peak_floor = 0.3 * a1[:m].max()
    if peak_floor <= 0:
        raise TravelTimeError("no wave motion detected at pendulum 1")
    first = None
    for j in range(1, m):
        if a1[j] >= peak_floor and a1[j] >= a1[j - 1] and a1[j] > a1[j + 1]:
            first = j
            break
    if first is None:
        raise TravelTimeError("no first peak at pendulum 1 (chain too damped)")
    arr = t[first]

    links = []
    for i in range(N - 1):
        j_lo = max(0, int((arr - 2.0 * tau) / h))
        j_hi = min(len(t) - 2, int((arr + 5.0 * tau) / h))
        x = sig[j_lo:j_hi, i]
        lag_lo = max(1, int(0.1 * tau / h))
        lag_hi = max(lag_lo + 2, int(3.0 * tau / h))
        corr = []
        for lag in range(lag_lo, lag_hi + 1):
            y = sig[j_lo + lag:j_hi + lag, i + 1]
            n = min(len(x), len(y))
            corr.append(float(np.dot(x[:n], y[:n])))
        corr = np.array(corr)
        if not np.any(corr > 0):
            raise TravelTimeError(f"no usable wave front between pendulums {i + 1} "
                                  f"and {i + 2} (chain too damped for the pulse)")
        kb = int(np.argmax(corr))
        if 0 < kb < len(corr) - 1:
            y0, y1, y2 = corr[kb - 1], corr[kb], corr[kb + 1]
            den = y0 - 2.0 * y1 + y2
            shift = 0.0 if den == 0 else 0.5 * (y0 - y2) / den
        else:
            shift = 0.0
        lag_t = (lag_lo + kb + shift) * h
        links.append(lag_t)
        arr += lag_t
        tau = 0.5 * tau + 0.5 * lag_t  # track the measured front speed
    link_times = np.array(links)
    if np.any(link_times <= 0):
        raise TravelTimeError("non-monotone wave-front arrivals; pulse unusable")
    return link_times


class WaveController:
    """Sampled boundary controller combining the cancellation laws and ESC.

    Holds zero until ``activate_at``; from then on applies the naive or
    compensated law each sampling instant. With an EscConfig and
    ``esc_from`` the gain follows the extremum seeker (seeded from the
    configured lam) instead of staying fixed.
    """

    def __init__(self, cfg: WaveControlConfig, N: int, mode: str = "compensated",
                 esc: EscConfig | None = None, activate_at: float = 0.0,
                 esc_from: float | None = None):
        if mode not in ("naive", "compensated"):
            raise ValueError(f"unknown wave law {mode!r}")
        j = 2 * cfg.i_star if mode == "naive" else cfg.measured_index()
        if j > N:
            raise CompensationError(
                f"wave law needs pendulum {j} but the chain has only {N} "
                f"(target i_star={cfg.i_star} too deep, see availability constraint)")
        self.cfg = cfg
        self.mode = mode
        self.esc = esc
        self.activate_at = activate_at
        self.esc_from = esc_from if esc is not None else None
        self.esc_state = None
        if esc is not None:
            self.esc_state = EscState(integrator=cfg.lam, lambda_hat=cfg.lam,
                                      index_window=deque(maxlen=esc.window))
        self.lam = cfg.lam
        self.last_cmd = 0.0
        self._trace = {"esc_I": 0.0, "esc_y": 0.0, "esc_xi": 0.0, "esc_lambda": cfg.lam}

    def __call__(self, t: float, frames: Sequence[MeasurementFrame]) -> float:
        if self.esc_state is not None and frames:
            self.esc_state.index_window.append(abs(frames[-1].angles[self.cfg.i_star - 1]))
            index_value = performance_index(self.esc_state.index_window)
            if self.esc_from is not None and t >= self.esc_from - _TOL:
                _, self.lam = esc_step(self.esc, self.esc_state, index_value, t)
            self._trace = {"esc_I": index_value, "esc_y": self.esc_state.last_hpf,
                           "esc_xi": self.esc_state.last_demod, "esc_lambda": self.lam}
        if not frames or t < self.activate_at - _TOL:
            self.last_cmd = 0.0
            return 0.0
        if self.mode == "naive":
            cmd = naive_wave_law(frames, self.cfg)
        else:
            cmd = compensated_wave_law(frames, replace(self.cfg, lam=self.lam),
                                       fallback=self.last_cmd)
        self.last_cmd = cmd
        return cmd

    def log_values(self) -> dict:
        return dict(self._trace)
