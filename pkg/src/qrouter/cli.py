"""Command-line runner: ``qrouter run|sweep|validate <config>``.

A config is one YAML (or JSON) file::

    kind: decoherence_budget
    device: router4             # built-in table or a path relative to the config
    seed: 0
    params:
      qubits: [Q1, Q2, Q4]
      tau_ns: 40

Every run writes ``manifest.json`` (resolved config plus library versions),
``results.json`` and ``results.csv``. Passing a ``manifest.json`` back to
``run`` repeats the run. Exit status 2 flags a config problem, 3 a numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy
import yaml

from . import __version__
from .device import BUILTIN_DEVICES, DeviceError, NoOscillationError, load_device
from .envs import CzOxebitEnv, EnvError, cz_flat_top, cz_system
from .ppo import GaussianPolicy, PpoConfig, TrainingAborted, save_policy, train
from .protocols import (
    CSWAP_PHASE_LABELS,
    ProtocolError,
    cswap_phase_calibration,
    cswap_unitary,
    ccphase_target,
    cswap_target,
    cz_target,
    floquet_route,
    g_from_w_time,
    ghz_protocol,
    phase_distance,
    spin_chirality_run,
    w_state_prepare,
    ChiralityConfig,
)
from .pulses import DistortionModel, FluxProbeEnv, ScheduleError, calibrate_predistortion
from .qsim import SimulationError
from .xeb import XebError, XebNoise, as_seed_sequence, decoherence_bound, interleaved_xeb

log = logging.getLogger("qrouter")

EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
OUT_ENV = "QROUTER_OUT"
NUMERICAL_ERRORS = (SimulationError, ProtocolError, NoOscillationError, XebError, EnvError, ScheduleError,
                    FloatingPointError, TrainingAborted, np.linalg.LinAlgError)


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {message}")


# ---------------------------------------------------------------------------
# YAML with line numbers


def _line_index(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


@dataclass
class Source:
    name: str
    lines: dict = field(default_factory=dict)

    def error(self, message: str, path=()) -> ConfigError:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return ConfigError(message, self.name, self.lines.get(path))


def load_config_text(text: str, name: str = "<config>") -> tuple[dict, Source]:
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}", name,
                          mark.line + 1 if mark else None) from exc
    src = Source(name, _line_index(node) if node is not None else {})
    if not isinstance(data, dict):
        raise src.error("top level must be a mapping")
    if "config" in data and "versions" in data:
        # a manifest from an earlier run: re-run its resolved config
        data = data["config"]
        src = Source(name, {k[1:]: v for k, v in src.lines.items() if k[:1] == ("config",)})
    return data, src


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Param:
    kind: str  # int, float, int_or_null, bool, str, choice, floats, ints, strs, poles
    required: bool = True
    default: Any = None
    length: int | None = None
    choices: tuple = ()
    minimum: float | None = None


def P(kind, **kw) -> Param:
    return Param(kind, **kw)


def opt(kind, default, **kw) -> Param:
    return Param(kind, required=False, default=default, **kw)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_value(param: Param, value, path, src: Source):
    k = param.kind
    if k == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise src.error(f"{path[-1]} must be an integer", path)
        v = value
    elif k == "float":
        if not _is_number(value) or not math.isfinite(value):
            raise src.error(f"{path[-1]} must be a finite number", path)
        v = float(value)
    elif k == "int_or_null":
        if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
            raise src.error(f"{path[-1]} must be an integer or null", path)
        v = value
    elif k == "bool":
        if not isinstance(value, bool):
            raise src.error(f"{path[-1]} must be true or false", path)
        v = value
    elif k in ("str", "choice"):
        if not isinstance(value, str):
            raise src.error(f"{path[-1]} must be a string", path)
        if k == "choice" and value not in param.choices:
            raise src.error(f"{path[-1]} must be one of {list(param.choices)}, got {value!r}", path)
        v = value
    elif k in ("floats", "ints", "strs"):
        if not isinstance(value, list):
            raise src.error(f"{path[-1]} must be a list", path)
        if param.length is not None and len(value) != param.length:
            raise src.error(f"{path[-1]} needs {param.length} entries, got {len(value)}", path)
        if not value:
            raise src.error(f"{path[-1]} must not be empty", path)
        for i, x in enumerate(value):
            ok = {"floats": _is_number(x) and math.isfinite(x),
                  "ints": isinstance(x, int) and not isinstance(x, bool),
                  "strs": isinstance(x, str)}[k]
            if not ok:
                raise src.error(f"{path[-1]}[{i}] has the wrong type", path + (i,))
        v = [float(x) for x in value] if k == "floats" else list(value)
    elif k == "poles":
        if not isinstance(value, list):
            raise src.error(f"{path[-1]} must be a list of [amplitude, tau_ns] pairs", path)
        for i, pole in enumerate(value):
            if not (isinstance(pole, list) and len(pole) == 2 and all(_is_number(x) for x in pole)):
                raise src.error(f"{path[-1]}[{i}] must be [amplitude, tau_ns]", path + (i,))
        v = [[float(a), float(t)] for a, t in value]
    else:  # pragma: no cover
        raise AssertionError(k)
    if param.minimum is not None:
        vals = v if isinstance(v, list) else [v]
        for x in vals:
            if x is not None and not isinstance(x, (str, list)) and x < param.minimum:
                raise src.error(f"{path[-1]} must be at least {param.minimum}", path)
    return v


def _check_block(block, schema: dict[str, Param], path, src: Source) -> dict:
    if not isinstance(block, dict):
        raise src.error(f"{path[-1] if path else 'config'} must be a mapping", path)
    for key in block:
        if key not in schema:
            raise src.error(f"unknown key {key!r} in {path[-1] if path else 'config'}", path + (key,))
    out = {}
    for key, param in schema.items():
        if key in block and block[key] is None and not param.required and param.default is None:
            out[key] = None
        elif key in block:
            out[key] = _check_value(param, block[key], path + (key,), src)
        elif param.required:
            raise src.error(f"missing required key {key!r} in {path[-1] if path else 'config'}", path)
        else:
            out[key] = param.default
    return out


PPO_SCHEMA = {
    "eta_a": P("float", minimum=0.0),
    "eta_c": P("float", minimum=0.0),
    "eta_std": opt("float", None, minimum=0.0),
    "eps": P("float"),
    "K": P("int", minimum=1),
    "Nb": P("int", minimum=1),
    "epochs": P("int", minimum=1),
    "lr_decay": P("float"),
    "seed": opt("int", None),
    "mode": opt("choice", "ppo", choices=("ppo", "a2c")),
}


KIND_SCHEMAS: dict[str, dict[str, Param]] = {
    "w_state": {
        "n": P("int", minimum=2),
        "g_mhz": opt("float", None),
        "anchor_time_ns": opt("float", None),
        "initial": opt("int", 0, minimum=0),
    },
    "ghz": {
        "n": P("int", minimum=2),
        "g_mhz": P("float"),
        "eta_mhz": P("float"),
        "levels": P("int", minimum=2),
        "decoherence": opt("bool", False),
        "qubits": opt("strs", None),
    },
    "chirality": {
        "delta_mhz": P("floats", length=3),
        "omega_mhz": P("floats", length=3),
        "phi_rad": P("floats", length=3),
        "g_mhz": P("floats", length=3),  # Q1-Q2, Q1-Q4, Q2-Q4
        "t_max_ns": P("float", minimum=0.0),
        "dt_ns": opt("float", 0.25),
        "initial": opt("choice", "Q2", choices=("Q1", "Q2", "Q4")),
    },
    "floquet_sweep": {
        "phi4_rad": P("float"),
        "delta_mhz": P("float"),
        "omega_mhz": P("float"),
        "g_mhz": P("floats", length=3),
        "t_max_ns": P("float", minimum=0.0),
        "dt_ns": opt("float", 0.25),
    },
    "xeb": {
        "gate": P("choice", choices=("CZ", "CSWAP", "CCPHASE")),
        "depths": P("ints"),
        "k": P("int", minimum=1),
        "shots": P("int", minimum=1),
        "resamples": P("int", minimum=2),
        "cycle_depolarizing": P("float", minimum=0.0),
        "sqg_noise_qubits": opt("strs", None),
    },
    "oxebit_train": {
        "qubits": P("strs", length=2),
        "duration_ns": P("float", minimum=1.0),
        "seed_detune_mhz": P("float"),
        "initial_std_mhz": P("float", minimum=1e-4),
        "shots": P("int_or_null"),
        "depth": opt("int", 3, minimum=1),
        "k": opt("int", 10, minimum=1),
        "action_limit_mhz": opt("float", 400.0, minimum=0.0),
        "filter_mhz": opt("float", 250.0, minimum=0.0),
    },
    "cswap_calibrate": {
        "phases_rad": P("floats", length=7),
        "delta23_mhz": P("float"),
        "t_b_ns": P("float"),
        "n_sweep": opt("int", 24, minimum=3),
    },
    "predistort_calibrate": {
        "poles": P("poles"),
        "amplitude_mhz": P("float"),
        "length_ns": P("float", minimum=1.0),
        "shots": P("int_or_null"),
        "n_poles": opt("int", 1, minimum=1),
        "max_delay_ns": opt("float", 1000.0, minimum=1.0),
        "delay_step_ns": opt("float", 10.0, minimum=1.0),
    },
    "decoherence_budget": {
        "qubits": P("strs"),
        "tau_ns": P("float", minimum=0.0),
    },
}
KIND_SCHEMAS["ghz_sweep"] = KIND_SCHEMAS["ghz"]

SWEEP_KINDS = ("ghz_sweep", "floquet_sweep")

TOP_KEYS = ("kind", "device", "seed", "output", "params", "ppo", "sweep")
KIND_PARAM = P("choice", choices=tuple(KIND_SCHEMAS))


def _grid_values(grid, path, src: Source) -> list[float]:
    if isinstance(grid, list):
        if not all(_is_number(x) for x in grid):
            raise src.error(f"axis {path[-1]} must list numbers", path)
        values = [float(x) for x in grid]
    elif isinstance(grid, dict):
        block = _check_block(grid, {"start": P("float"), "stop": P("float"), "num": P("int", minimum=0)}, path, src)
        values = np.linspace(block["start"], block["stop"], block["num"]).tolist()
    else:
        raise src.error(f"axis {path[-1]} must be a list or a start/stop/num mapping", path)
    if not values:
        raise src.error(f"axis {path[-1]} has an empty grid", path)
    return values


@dataclass(frozen=True)
class RunConfig:
    kind: str
    device: str
    seed: int
    output: str | None
    params: dict
    ppo: dict | None
    sweep: dict | None
    base_dir: str
    source: str = "<config>"
    device_line: int | None = None

    @property
    def device_path(self) -> str:
        if self.device in BUILTIN_DEVICES:
            return self.device
        path = Path(self.device)
        return str(path if path.is_absolute() else (Path(self.base_dir) / path).resolve())

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "device": self.device_path, "seed": self.seed, "params": self.params}
        if self.output is not None:
            out["output"] = self.output
        if self.ppo is not None:
            out["ppo"] = self.ppo
        if self.sweep is not None:
            out["sweep"] = self.sweep
        return out


def validate_config(data: dict, src: Source, base_dir: str = ".") -> RunConfig:
    for key in data:
        if key not in TOP_KEYS:
            raise src.error(f"unknown top-level key {key!r}", (key,))
    for key in ("kind", "device", "params"):
        if key not in data:
            raise src.error(f"missing required key {key!r}")
    kind = _check_value(KIND_PARAM, data["kind"], ("kind",), src)
    device = _check_value(P("str"), data["device"], ("device",), src)
    seed = _check_value(P("int", minimum=0), data.get("seed", 0), ("seed",), src)
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise src.error("output must be a path string", ("output",))
    schema = KIND_SCHEMAS[kind]
    params = _check_block(data["params"], schema, ("params",), src)
    _check_kind_rules(kind, params, src)
    ppo = None
    if kind == "oxebit_train":
        if "ppo" not in data:
            raise src.error("oxebit_train needs a ppo section")
        ppo = _check_block(data["ppo"], PPO_SCHEMA, ("ppo",), src)
        try:
            _ppo_config(ppo)
        except ValueError as exc:
            raise src.error(str(exc), ("ppo",)) from exc
    elif "ppo" in data:
        raise src.error(f"a ppo section only applies to oxebit_train, not {kind}", ("ppo",))
    sweep = None
    if "sweep" in data:
        block = data["sweep"]
        if not isinstance(block, dict) or not block:
            raise src.error("sweep must map one or two parameter names to grids", ("sweep",))
        if len(block) > 2:
            raise src.error("sweep supports at most two axes", ("sweep",))
        sweep = {}
        for axis, grid in block.items():
            if axis not in schema or schema[axis].kind not in ("float", "int"):
                raise src.error(f"sweep axis {axis!r} is not a scalar parameter of {kind}", ("sweep", axis))
            values = _grid_values(grid, ("sweep", axis), src)
            if schema[axis].kind == "int":
                if any(v != int(v) for v in values):
                    raise src.error(f"axis {axis} takes integers", ("sweep", axis))
                values = [int(v) for v in values]
            sweep[axis] = values
    elif kind in SWEEP_KINDS:
        raise src.error(f"{kind} needs a sweep section")
    return RunConfig(kind, device, seed, output, params, ppo, sweep, base_dir, src.name, src.lines.get(("device",)))


def _check_kind_rules(kind: str, p: dict, src: Source):
    if kind == "w_state":
        if (p["g_mhz"] is None) == (p["anchor_time_ns"] is None):
            raise src.error("give exactly one of g_mhz and anchor_time_ns", ("params",))
        if p["anchor_time_ns"] is not None and p["n"] not in (2, 3, 4):
            raise src.error("anchor_time_ns needs n in 2, 3 or 4", ("params", "n"))
        if p["initial"] >= p["n"]:
            raise src.error("initial qubit index out of range", ("params", "initial"))
    if kind in ("ghz", "ghz_sweep") and p["decoherence"] and not p["qubits"]:
        raise src.error("decoherence needs the device qubits to draw rates from", ("params", "qubits"))
    if kind in ("ghz", "ghz_sweep") and p["qubits"] and len(p["qubits"]) != p["n"]:
        raise src.error("qubits list must have n entries", ("params", "qubits"))


def _ppo_config(ppo: dict) -> PpoConfig:
    return PpoConfig(eta_a=ppo["eta_a"], eta_c=ppo["eta_c"], eta_std=ppo["eta_std"], eps=ppo["eps"], K=ppo["K"],
                     Nb=ppo["Nb"], epochs=ppo["epochs"], lr_decay=ppo["lr_decay"], mode=ppo["mode"])


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    data, src = load_config_text(text, str(path))
    return validate_config(data, src, str(path.parent))


def resolve_device(cfg: RunConfig):
    if cfg.device in BUILTIN_DEVICES:
        return load_device(cfg.device)
    path = Path(cfg.device_path)
    if not path.exists():
        raise ConfigError(f"device file {cfg.device!r} not found", cfg.source, cfg.device_line)
    try:
        return load_device(path)
    except DeviceError as exc:
        raise ConfigError(f"device file {cfg.device!r}: {exc}", cfg.source, cfg.device_line) from exc


# ---------------------------------------------------------------------------
# experiment kinds


@dataclass
class KindResult:
    summary: dict
    rows: list[dict]
    message: str = ""


def _w_state(p, device, seed, out):
    g = p["g_mhz"] if p["g_mhz"] is not None else g_from_w_time(p["n"], p["anchor_time_ns"])
    res = w_state_prepare(p["n"], g, p["initial"])
    summary = {"n": p["n"], "g_mhz": g, "time_ns": res.time_ns, "fidelity": res.fidelity,
               "populations": res.populations.tolist()}
    rows = [{"qubit": j, "population": float(x)} for j, x in enumerate(res.populations)]
    return KindResult(summary, rows, f"W state n={p['n']} at t={res.time_ns:.4f} ns, fidelity {res.fidelity:.6f}")


def _ghz(p, device, seed, out):
    noise = None
    if p["decoherence"]:
        noise = device.noise(p["qubits"], [p["levels"]] * p["n"])
    res = ghz_protocol(p["n"], p["g_mhz"], p["eta_mhz"], noise, p["levels"])
    summary = {"n": p["n"], "g_mhz": p["g_mhz"], "eta_mhz": p["eta_mhz"], "levels": p["levels"],
               "duration_ns": res.duration_ns, "fidelity": res.fidelity, "infidelity": res.infidelity,
               "theta_rad": res.theta, "zeta_rad": res.zeta}
    return KindResult(summary, [summary], f"GHZ infidelity {res.infidelity:.6g}")


def _chirality(p, device, seed, out):
    g = dict(zip((("Q1", "Q2"), ("Q1", "Q4"), ("Q2", "Q4")), p["g_mhz"]))
    cfg = ChiralityConfig(tuple(p["delta_mhz"]), tuple(p["omega_mhz"]), tuple(p["phi_rad"]), g)
    run = spin_chirality_run(cfg, t_max_ns=p["t_max_ns"], dt_ns=p["dt_ns"], initial=p["initial"])
    rows = [{"t_ns": float(t), **{f"p_{q}": float(x) for q, x in zip(run.qubits, pops)}}
            for t, pops in zip(run.times, run.populations)]
    return KindResult({"peak_order": list(run.peak_order)}, rows, "peak order " + " -> ".join(run.peak_order))


def _floquet(p, device, seed, out):
    res = floquet_route(p["phi4_rad"], t_max_ns=p["t_max_ns"], dt_ns=p["dt_ns"], delta_mhz=p["delta_mhz"],
                        omega_mhz=p["omega_mhz"], g_mhz=tuple(p["g_mhz"]))
    summary = {"phi4_rad": p["phi4_rad"], "target": res.target,
               **{f"max_transfer_{q}": v for q, v in res.max_transfer.items()}}
    return KindResult(summary, [summary], f"phi4={p['phi4_rad']:.4f} rad routes Q4 -> {res.target}")


def _xeb(p, device, seed, out):
    target = {"CZ": cz_target, "CSWAP": cswap_target, "CCPHASE": ccphase_target}[p["gate"]]()
    noise = XebNoise(p["cycle_depolarizing"])
    if p["sqg_noise_qubits"]:
        f = [device.qubits[device.index(q)].f_sqg for q in p["sqg_noise_qubits"]]
        noise = XebNoise.from_sqg_fidelity(f, p["cycle_depolarizing"])
    report, _, _ = interleaved_xeb(target, depths=p["depths"], k=p["k"], shots=p["shots"],
                                   seed=as_seed_sequence(seed), noise=noise, resamples=p["resamples"])
    rows = [{"depth": m, "f_ref": fr, "f_gate": fg} for m, fr, fg in zip(report.depths, report.f_ref, report.f_gate)]
    return KindResult(report.to_dict(), rows, f"{p['gate']} fidelity {report.fidelity:.5f} +- {report.sigma:.5f}")


def _oxebit_train(p, device, seed, out, ppo):
    system = cz_system(device, tuple(p["qubits"]), p["duration_ns"], action_limit_mhz=p["action_limit_mhz"],
                       filter_mhz=p["filter_mhz"] or None)
    env = CzOxebitEnv(system, depth=p["depth"], k=p["k"], shots=p["shots"])
    a0 = cz_flat_top(system, p["seed_detune_mhz"])
    policy = GaussianPolicy.create(a0, p["initial_std_mhz"])
    train_seed = seed if ppo["seed"] is None else ppo["seed"]
    result = train(env, _ppo_config(ppo), policy, seed=train_seed, checkpoint_dir=out / "checkpoints")
    save_policy(result.policy, out / "policy_final.txt")
    summary = {"epochs": len(result.log), "skipped_epochs": result.skipped,
               "reward_last50_mean": float(result.reward_trace()[-50:].mean()),
               "gate_fidelity_seed": env.gate_fidelity(a0), "gate_fidelity_final": env.gate_fidelity(result.a_mean),
               "a_mean_mhz": result.a_mean.tolist(), "a_std_mhz": result.policy.a_std.tolist(),
               "value": result.policy.value, "channels": list(system.channels)}
    return KindResult(summary, result.log,
                      f"trained {len(result.log)} epochs, gate fidelity {summary['gate_fidelity_final']:.5f}")


def _cswap_calibrate(p, device, seed, out):
    u = cswap_unitary(p["phases_rad"], p["delta23_mhz"], p["t_b_ns"])
    cal = cswap_phase_calibration(u, p["delta23_mhz"], p["t_b_ns"], p["n_sweep"])
    err = phase_distance(cal.phases, p["phases_rad"])
    rows = [{"label": lab, "true_rad": t, "recovered_rad": r, "error_rad": float(e), "visibility": v}
            for lab, t, r, e, v in zip(CSWAP_PHASE_LABELS, p["phases_rad"], cal.phases, err, cal.visibilities)]
    summary = {"phases_rad": cal.as_dict(), "max_error_rad": float(np.max(err)), "unreliable": list(cal.unreliable)}
    return KindResult(summary, rows, f"max phase error {summary['max_error_rad']:.3g} rad")


def _predistort(p, device, seed, out):
    hidden = DistortionModel(tuple(tuple(x) for x in p["poles"]))
    env = FluxProbeEnv(hidden, p["amplitude_mhz"], p["length_ns"], shots=p["shots"],
                       seed=as_seed_sequence(seed))
    delays = np.arange(0.0, p["max_delay_ns"] + 0.5 * p["delay_step_ns"], p["delay_step_ns"])
    fit = calibrate_predistortion(env, delays, p["n_poles"])
    rows = [{"pole": i, "amplitude": a, "tau_ns": t} for i, (a, t) in enumerate(fit.model.poles)]
    summary = {"poles": [list(x) for x in fit.model.poles], "residual_rms_rad": fit.residual_rms,
               "underdetermined": fit.underdetermined}
    return KindResult(summary, rows, f"fitted {len(rows)} pole(s), residual {fit.residual_rms:.3g} rad")


def _decoherence(p, device, seed, out):
    bound = decoherence_bound(device, p["qubits"], p["tau_ns"])
    summary = {"qubits": p["qubits"], "tau_ns": p["tau_ns"], "infidelity": bound, "infidelity_percent": 100 * bound}
    return KindResult(summary, [{"tau_ns": p["tau_ns"], "infidelity_percent": 100 * bound}],
                      f"1-F_dec = {100 * bound:.2f}%")


KINDS: dict[str, Callable] = {
    "w_state": _w_state,
    "ghz": _ghz,
    "ghz_sweep": _ghz,
    "chirality": _chirality,
    "floquet_sweep": _floquet,
    "xeb": _xeb,
    "oxebit_train": _oxebit_train,
    "cswap_calibrate": _cswap_calibrate,
    "predistort_calibrate": _predistort,
    "decoherence_budget": _decoherence,
}


def execute(cfg: RunConfig, out: Path, seed=None) -> KindResult:
    device = resolve_device(cfg)
    fn = KINDS[cfg.kind]
    seed = cfg.seed if seed is None else seed
    if cfg.kind == "oxebit_train":
        return fn(cfg.params, device, seed, out, cfg.ppo)
    return fn(cfg.params, device, seed, out)


def _grid(sweep: dict) -> list[dict]:
    axes = list(sweep)
    return [dict(zip(axes, combo)) for combo in itertools.product(*(sweep[a] for a in axes))]


def _point_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def _sweep_point(args):
    cfg, point, index, out = args
    params = {**cfg.params, **point}
    _check_kind_rules(cfg.kind, params, Source("<sweep>"))
    sub = replace(cfg, params=params, sweep=None)
    res = execute(sub, out, _point_seed(cfg.seed, index))
    scalars = {k: v for k, v in res.summary.items() if isinstance(v, (int, float, str, bool)) and k not in point}
    return {**point, **scalars}


def run_sweep(cfg: RunConfig, out: Path, jobs: int = 1) -> KindResult:
    points = _grid(cfg.sweep)
    tasks = [(cfg, pt, i, out) for i, pt in enumerate(points)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    summary = {"axes": list(cfg.sweep), "points": len(rows)}
    return KindResult(summary, rows, f"{len(rows)} grid points")


# ---------------------------------------------------------------------------
# output


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_json(path: Path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, rows: list[dict]):
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in _jsonable(r).items()})


def versions() -> dict:
    return {"qrouter": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__,
            "python": platform.python_version()}


def output_dir(cfg: RunConfig, config_path: Path, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.output:
        p = Path(cfg.output)
        return p if p.is_absolute() else Path(cfg.base_dir) / p
    root = Path(os.environ.get(OUT_ENV, "qrouter-out"))
    stem = config_path.parent.name if config_path.name == "manifest.json" else config_path.stem
    return root / stem


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrouter", description="Multi-qubit router control simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one experiment"), ("sweep", "run the experiment over its sweep grid"),
                       ("validate", "check a config without running it")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="YAML config or an earlier manifest.json")
        if name != "validate":
            p.add_argument("--seed", type=int, help="override the config seed")
            p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./qrouter-out, plus config name)")
            p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
            p.add_argument("--figures", action="store_true", help="also render PNG figures from the results")
            p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    path = Path(args.config)
    try:
        cfg = load_config(path)
        if args.command == "validate":
            print(f"{path}: ok ({cfg.kind})")
            return 0
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "sweep" and cfg.sweep is None:
            raise ConfigError("sweep needs a sweep section in the config", str(path))
        resolve_device(cfg)
        out = output_dir(cfg, path, args.out)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.sweep is not None and (args.command == "sweep" or cfg.kind in SWEEP_KINDS):
            result = run_sweep(cfg, out, args.jobs)
        else:
            result = execute(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = {"command": args.command, "config": cfg.to_dict(), "versions": versions()}
    write_json(out / "manifest.json", manifest)
    write_json(out / "results.json", result.summary)
    write_csv(out / "results.csv", result.rows)
    if args.figures:
        from .plotting import render_figures

        render_figures(cfg.kind, result.summary, result.rows, out, sweep=cfg.sweep is not None)
    if not args.quiet:
        print(result.message)
        print(f"results written to {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
