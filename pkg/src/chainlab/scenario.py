"""Scenario files: declarative experiment descriptions for the CLI runner.

A scenario is a YAML document (conventionally ``*.scenario``) naming the
chain parameters, integrator/sensor settings, duration, the motor-2
disturbance and a motor-1 controller timeline. Unknown keys are rejected
so typos fail loudly; parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import yaml

from .engine import IntegratorConfig, MotorModel, SensorConfig
from .model import ChainParams

__all__ = ["Scenario", "Stage", "Disturbance", "ScenarioError",
           "parse_scenario", "parse_scenario_text", "serialize_scenario"]

CONTROLLER_KINDS = ("none", "sine", "naive-wave", "compensated-wave",
                    "compensated-wave-esc", "sync-replay", "constant-speed")
OPEN_LOOP_KINDS = ("sine", "sync-replay", "constant-speed")
DISTURBANCE_KINDS = ("triangle", "sine")


class ScenarioError(ValueError):
    """Scenario file violates the schema or an invariant."""


@dataclass(frozen=True)
class Disturbance:
    kind: str
    a: float
    omega: float


@dataclass(frozen=True)
class Stage:
    t_start: float
    kind: str
    options: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    params: ChainParams
    integrator: IntegratorConfig
    sensor: SensorConfig
    motor: MotorModel
    duration: float
    disturbance: Disturbance | None
    timeline: list[Stage]
    initial: str | dict
    m2_attached: bool
    output: str

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return serialize_scenario(self) == serialize_scenario(other)


def _require_keys(mapping, allowed, context):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown key(s) {sorted(unknown)} under '{context}' "
                            f"(allowed: {sorted(allowed)})")


def _number(mapping, key, context, default=None, required=False):
    if key not in mapping:
        if required:
            raise ScenarioError(f"missing required key '{context}.{key}'")
        return default
    v = mapping[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"'{context}.{key}' must be a number, got {v!r}")
    return float(v)


_PARAM_KEYS = ("N", "J", "m", "l", "g", "k", "b", "gamma", "k_nominal")


def _parse_params(node) -> ChainParams:
    if node is None:
        return ChainParams.platform()
    if not isinstance(node, dict):
        raise ScenarioError("'params' must be a mapping")
    _require_keys(node, _PARAM_KEYS, "params")
    N = node.get("N", 20)
    if not isinstance(N, int) or isinstance(N, bool):
        raise ScenarioError(f"'params.N' must be an integer, got {N!r}")
    base = ChainParams.platform(N)
    overrides = {k: _number(node, k, "params") for k in _PARAM_KEYS[1:] if k in node}
    if ("m" in overrides or "l" in overrides) and "J" not in overrides:
        m = overrides.get("m", base.m)
        l = overrides.get("l", base.l)
        overrides["J"] = m * l * l
    try:
        return replace(base, **overrides)
    except ValueError as e:
        raise ScenarioError(f"invalid 'params': {e}") from e


def _parse_stage(node, idx) -> Stage:
    ctx = f"timeline[{idx}]"
    if not isinstance(node, dict):
        raise ScenarioError(f"'{ctx}' must be a mapping")
    known = {"t", "controller", "a", "omega", "omega_ref", "x0", "i_star",
             "lambda", "delta", "t_tilde", "esc"}
    _require_keys(node, known, ctx)
    t = _number(node, "t", ctx, required=True)
    kind = node.get("controller")
    if kind not in CONTROLLER_KINDS:
        raise ScenarioError(f"'{ctx}.controller' must be one of {CONTROLLER_KINDS}, "
                            f"got {kind!r}")
    options = {k: v for k, v in node.items() if k not in ("t", "controller")}
    if kind == "sine":
        for key in ("a", "omega"):
            _number(options, key, ctx, required=True)
    elif kind == "constant-speed":
        if _number(options, "omega_ref", ctx, required=True) == 0:
            raise ScenarioError(f"'{ctx}.omega_ref' must be nonzero")
    elif kind == "sync-replay":
        x0 = options.get("x0")
        if (not isinstance(x0, (list, tuple)) or len(x0) != 2
                or not all(isinstance(v, (int, float)) for v in x0)):
            raise ScenarioError(f"'{ctx}.x0' must be a [angle, velocity] pair")
        options["x0"] = [float(x0[0]), float(x0[1])]
    elif kind in ("naive-wave", "compensated-wave", "compensated-wave-esc"):
        i_star = options.get("i_star")
        if not isinstance(i_star, int) or isinstance(i_star, bool) or i_star < 1:
            raise ScenarioError(f"'{ctx}.i_star' must be a positive integer")
        if "lambda" in options:
            _number(options, "lambda", ctx)
        if "esc" in options:
            if kind != "compensated-wave-esc":
                raise ScenarioError(f"'{ctx}.esc' only applies to compensated-wave-esc")
            esc = options["esc"]
            if not isinstance(esc, dict):
                raise ScenarioError(f"'{ctx}.esc' must be a mapping")
            esc_keys = ("window", "gain", "dither_freq", "dither_amp",
                        "hpf_cutoff", "lam_max", "demod_phase")
            _require_keys(esc, esc_keys, f"{ctx}.esc")
            for k, v in esc.items():
                if k == "demod_phase" and v == "auto":
                    continue
                if k == "window":
                    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                        raise ScenarioError(f"'{ctx}.esc.window' must be a positive integer")
                elif isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ScenarioError(f"'{ctx}.esc.{k}' must be a number")
    return Stage(t_start=t, kind=kind, options=options)


def parse_scenario_text(text: str, name_hint: str = "scenario") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a YAML mapping")
    top = ("name", "params", "integrator", "sensor", "motor", "duration",
           "disturbance", "timeline", "initial", "m2_attached", "output")
    _require_keys(doc, top, "<top level>")

    name = doc.get("name", name_hint)
    if not isinstance(name, str) or not name:
        raise ScenarioError("'name' must be a nonempty string")
    params = _parse_params(doc.get("params"))

    node = doc.get("integrator") or {}
    _require_keys(node, ("dt", "method"), "integrator")
    try:
        integrator = IntegratorConfig(dt=_number(node, "dt", "integrator", default=1e-4),
                                      method=node.get("method", "rk4"))
    except ValueError as e:
        raise ScenarioError(f"invalid 'integrator': {e}") from e

    node = doc.get("sensor") or {}
    _require_keys(node, ("pulses_per_rev", "ts", "td"), "sensor")
    ppr = node.get("pulses_per_rev", 4096)
    if not isinstance(ppr, int) or isinstance(ppr, bool):
        raise ScenarioError("'sensor.pulses_per_rev' must be an integer")
    ts = _number(node, "ts", "sensor", default=0.03)
    td = _number(node, "td", "sensor", default=ts)  # one control period by default
    try:
        sensor = SensorConfig(pulses_per_rev=ppr, ts=ts, td=td)
    except ValueError as e:
        raise ScenarioError(f"invalid 'sensor': {e}") from e
    if abs(round(ts / integrator.dt) * integrator.dt - ts) > 1e-9:
        raise ScenarioError(f"sensor.ts={ts} is not an integer multiple of "
                            f"integrator.dt={integrator.dt}")

    node = doc.get("motor") or {}
    _require_keys(node, ("mode", "max_speed", "max_accel"), "motor")
    try:
        motor = MotorModel(mode=node.get("mode", "ideal-position"),
                           max_speed=_number(node, "max_speed", "motor"),
                           max_accel=_number(node, "max_accel", "motor"))
    except ValueError as e:
        raise ScenarioError(f"invalid 'motor': {e}") from e

    duration = _number(doc, "duration", "<top level>", required=True)
    if duration <= 0:
        raise ScenarioError("'duration' must be positive")

    node = doc.get("disturbance")
    disturbance = None
    if node is not None:
        if not isinstance(node, dict):
            raise ScenarioError("'disturbance' must be a mapping")
        _require_keys(node, ("kind", "a", "omega"), "disturbance")
        kind = node.get("kind")
        if kind == "none":
            disturbance = None
        elif kind in DISTURBANCE_KINDS:
            disturbance = Disturbance(kind=kind,
                                      a=_number(node, "a", "disturbance", required=True),
                                      omega=_number(node, "omega", "disturbance", required=True))
        else:
            raise ScenarioError(f"'disturbance.kind' must be none|triangle|sine, got {kind!r}")

    raw_stages = doc.get("timeline") or []
    if not isinstance(raw_stages, list):
        raise ScenarioError("'timeline' must be a list")
    timeline = [_parse_stage(s, i) for i, s in enumerate(raw_stages)]
    for i, st in enumerate(timeline):
        if not (0.0 <= st.t_start <= duration):
            raise ScenarioError(f"timeline[{i}].t={st.t_start} outside [0, duration]")
        if i > 0 and st.t_start <= timeline[i - 1].t_start:
            raise ScenarioError("timeline times must be strictly increasing "
                                f"(timeline[{i}].t={st.t_start})")
    open_loop = [s for s in timeline if s.kind in OPEN_LOOP_KINDS]
    if open_loop:
        if len(timeline) != 1:
            raise ScenarioError("an open-loop controller must be the only timeline stage")
        if open_loop[0].t_start != 0.0:
            raise ScenarioError("an open-loop controller stage must start at t=0")
    wave = [s for s in timeline if s.kind.endswith("wave") or s.kind.endswith("wave-esc")]
    if wave:
        kinds = [s.kind for s in wave]
        valid = kinds in (["naive-wave"], ["compensated-wave"],
                          ["compensated-wave-esc"],
                          ["compensated-wave", "compensated-wave-esc"])
        if not valid:
            raise ScenarioError(f"unsupported wave stage combination {kinds}")
        if len(wave) == 2 and wave[0].options.get("i_star") != wave[1].options.get("i_star"):
            raise ScenarioError("wave stages must target the same i_star")

    initial = doc.get("initial", "zero")
    if isinstance(initial, str):
        if initial not in ("zero", "reference"):
            raise ScenarioError("'initial' must be zero, reference, or a mapping")
        if initial == "reference" and not any(
                s.kind in ("sync-replay", "constant-speed") for s in timeline):
            raise ScenarioError("'initial: reference' needs a sync-replay or "
                                "constant-speed stage")
    elif isinstance(initial, dict):
        _require_keys(initial, ("angles", "velocities"), "initial")
        for key in ("angles", "velocities"):
            vals = initial.get(key)
            if (not isinstance(vals, list) or len(vals) != params.N
                    or not all(isinstance(v, (int, float)) for v in vals)):
                raise ScenarioError(f"'initial.{key}' must be a list of {params.N} numbers")
        initial = {"angles": [float(v) for v in initial["angles"]],
                   "velocities": [float(v) for v in initial["velocities"]]}
    else:
        raise ScenarioError("'initial' must be zero, reference, or a mapping")

    m2_attached = doc.get("m2_attached", disturbance is not None)
    if not isinstance(m2_attached, bool):
        raise ScenarioError("'m2_attached' must be a boolean")
    if disturbance is not None and not m2_attached:
        raise ScenarioError("a disturbance needs motor 2 attached")

    output = doc.get("output", f"{name}.csv")
    if not isinstance(output, str) or not output:
        raise ScenarioError("'output' must be a nonempty filename")

    return Scenario(name=name, params=params, integrator=integrator, sensor=sensor,
                    motor=motor, duration=duration, disturbance=disturbance,
                    timeline=timeline, initial=initial, m2_attached=m2_attached,
                    output=output)


def parse_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    import os
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}") from e
    hint = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_scenario_text(text, name_hint=hint)


def serialize_scenario(sc: Scenario) -> str:
    """Effective configuration as YAML; parses back to an equal Scenario."""
    p = sc.params
    doc = {
        "name": sc.name,
        "params": {"N": p.N, "J": p.J, "m": p.m, "l": p.l, "g": p.g,
                   "k": p.k, "b": p.b, "gamma": p.gamma,
                   **({"k_nominal": p.k_nominal} if p.k_nominal is not None else {})},
        "integrator": {"dt": sc.integrator.dt, "method": sc.integrator.method},
        "sensor": {"pulses_per_rev": sc.sensor.pulses_per_rev,
                   "ts": sc.sensor.ts, "td": sc.sensor.td},
        "motor": {"mode": sc.motor.mode,
                  **({"max_speed": sc.motor.max_speed} if sc.motor.max_speed is not None else {}),
                  **({"max_accel": sc.motor.max_accel} if sc.motor.max_accel is not None else {})},
        "duration": sc.duration,
        "disturbance": (None if sc.disturbance is None else
                        {"kind": sc.disturbance.kind, "a": sc.disturbance.a,
                         "omega": sc.disturbance.omega}),
        "timeline": [{"t": s.t_start, "controller": s.kind, **s.options}
                     for s in sc.timeline],
        "initial": sc.initial,
        "m2_attached": sc.m2_attached,
        "output": sc.output,
    }
    return yaml.safe_dump(doc, sort_keys=False)
