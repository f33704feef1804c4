"""
Experiment configuration documents.

A configuration is a YAML document. Every dimensional value carries its unit
in the text (``"0.09 T"``, ``"2.87 GHz"``, ``"250 ns"``); cyclic frequencies
(Hz, kHz, MHz, GHz) are converted to angular frequencies. Positions are given
in nanometres through the ``position_nm`` key. Schema violations are collected
and reported together, each with the path of the offending field
(``experiment.tau.start``).

Layout::

    system:                 # inline mapping, or a path to a YAML file holding one
      nv: {Bz: 0.09 T, D: 2.87 GHz, gamma_e: -28.024 GHz/T, transition: 1}
      nuclei:
        - {label: 13C, position_nm: [1.2, 0.6, 1.0], gamma_n: 10.7084 MHz/T}
      include_nn: false
    experiment:
      kind: spectrum
      ...                   # kind-specific parameters
    seed: 0                 # master seed (optional)
    output: results         # output directory (optional)
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from .dsl import parse_number
from .system import GAMMA_E, GYROMAGNETIC, ZERO_FIELD_SPLITTING, NVCenter, Nucleus, SpinSystem

TWO_PI = 2 * math.pi

UNITS = {
    "frequency": {
        "Hz": TWO_PI * 1e-6, "kHz": TWO_PI * 1e-3, "MHz": TWO_PI, "GHz": TWO_PI * 1e3,
        "rad/s": 1e-6, "krad/s": 1e-3, "Mrad/s": 1.0, "rad/ms": 1e-3, "rad/us": 1.0,
    },
    "gyromagnetic": {
        "Hz/T": TWO_PI * 1e-6, "kHz/T": TWO_PI * 1e-3, "MHz/T": TWO_PI, "GHz/T": TWO_PI * 1e3,
        "rad/s/T": 1e-6, "rad/us/T": 1.0,
    },
    "time": {"s": 1e6, "ms": 1e3, "us": 1.0, "µs": 1.0, "ns": 1e-3, "ps": 1e-6},
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "G": 1e-4, "kG": 0.1},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
}

EXPERIMENT_KINDS = (
    "spectrum", "hh-transfer", "ccd-coherence", "ja-sweep", "parallel-coupling", "effective-validation", "polarization",
)


class ConfigError(ValueError):
    """Schema or physics violations, each as ``(field path, message)``."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("\n".join(f"{path or '<document>'}: {msg}" for path, msg in self.errors))


# -- value parsers --------------------------------------------------------------
# Each parser takes (value, path, errors) and returns the parsed value or None
# after appending to ``errors``.

_QUANTITY = re.compile(r"^(?P<num>\S+)\s+(?P<unit>\S+)$")


def quantity(kind: str, positive: bool = False, nonnegative: bool = False) -> Callable:
    """A number followed by a unit (``"250 ns"``). Angles may also be bare radians or ``pi`` expressions."""
    table = UNITS[kind]

    def parse(value, path, errors):
        number = unit = None
        if isinstance(value, str):
            text = value.strip()
            if kind == "angle" and parse_number(text) is not None:
                number, unit = parse_number(text), "rad"
            else:
                m = _QUANTITY.match(text)
                if m:
                    number, unit = parse_number(m.group("num")), m.group("unit")
        elif kind == "angle" and isinstance(value, (int, float)) and not isinstance(value, bool):
            number, unit = float(value), "rad"
        if number is None or unit is None:
            errors.append((path, f"expected a {kind} written as '<number> <unit>' with unit one of "
                                 f"{', '.join(table)}; got {value!r}"))
            return None
        if unit not in table:
            errors.append((path, f"unknown {kind} unit {unit!r}; expected one of {', '.join(table)}"))
            return None
        x = number * table[unit]
        if not math.isfinite(x):
            errors.append((path, f"must be finite, got {value!r}"))
            return None
        if positive and not x > 0:
            errors.append((path, f"must be positive, got {value!r}"))
            return None
        if nonnegative and x < 0:
            errors.append((path, f"must be non-negative, got {value!r}"))
            return None
        return x

    return parse


def integer(minimum: int | None = None, maximum: int | None = None) -> Callable:
    def parse(value, path, errors):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append((path, f"expected an integer, got {value!r}"))
            return None
        if minimum is not None and value < minimum:
            errors.append((path, f"must be >= {minimum}, got {value}"))
            return None
        if maximum is not None and value > maximum:
            errors.append((path, f"must be <= {maximum}, got {value}"))
            return None
        return value

    return parse


def number(minimum: float | None = None, maximum: float | None = None) -> Callable:
    def parse(value, path, errors):
        if isinstance(value, str):
            parsed = parse_number(value.strip())
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            parsed = float(value)
        else:
            parsed = None
        if parsed is None or not math.isfinite(parsed):
            errors.append((path, f"expected a finite dimensionless number, got {value!r}"))
            return None
        if minimum is not None and parsed < minimum:
            errors.append((path, f"must be >= {minimum}, got {value!r}"))
            return None
        if maximum is not None and parsed > maximum:
            errors.append((path, f"must be <= {maximum}, got {value!r}"))
            return None
        return parsed

    return parse


def choice(*options) -> Callable:
    def parse(value, path, errors):
        if isinstance(value, bool) or value not in options:
            errors.append((path, f"expected one of {', '.join(map(str, options))}, got {value!r}"))
            return None
        return value

    return parse


def boolean(value, path, errors):
    if not isinstance(value, bool):
        errors.append((path, f"expected true or false, got {value!r}"))
        return None
    return value


def string(value, path, errors):
    if not isinstance(value, str) or not value:
        errors.append((path, f"expected a non-empty string, got {value!r}"))
        return None
    return value


def list_of(item: Callable, min_len: int = 1) -> Callable:
    def parse(value, path, errors):
        if not isinstance(value, list) or len(value) < min_len:
            errors.append((path, f"expected a list of at least {min_len} item(s), got {value!r}"))
            return None
        out = [item(v, f"{path}[{i}]", errors) for i, v in enumerate(value)]
        return None if any(v is None for v in out) else out

    return parse


def grid(item: Callable) -> Callable:
    """A list of values or ``{start, stop, points}`` (inclusive, evenly spaced)."""

    def parse(value, path, errors):
        if isinstance(value, list):
            return list_of(item)(value, path, errors)
        fields = {"start": (item, REQUIRED), "stop": (item, REQUIRED), "points": (integer(2), REQUIRED)}
        spec = mapping(fields)(value, path, errors)
        if spec is None:
            return None
        n = spec["points"]
        a, b = spec["start"], spec["stop"]
        return [a + (b - a) * k / (n - 1) for k in range(n)]

    return parse


REQUIRED = object()


def mapping(fields: dict[str, tuple[Callable, Any]]) -> Callable:
    """Mapping with known fields ``name -> (parser, default)``; unknown fields are rejected."""

    def parse(value, path, errors):
        if not isinstance(value, dict):
            errors.append((path, f"expected a mapping, got {type(value).__name__}"))
            return None
        out = {}
        ok = True
        for key in value:
            if key not in fields:
                errors.append((_join(path, key), f"unknown field; expected one of {', '.join(fields)}"))
                ok = False
        for name, (parser, default) in fields.items():
            sub = _join(path, name)
            if name in value:
                parsed = parser(value[name], sub, errors)
                ok &= parsed is not None
                out[name] = parsed
            elif default is REQUIRED:
                errors.append((sub, "required field is missing"))
                ok = False
            else:
                out[name] = default
        return out if ok else None

    return parse


def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


# -- schema ---------------------------------------------------------------------

FREQ = quantity("frequency")
POS_FREQ = quantity("frequency", positive=True)
TIME = quantity("time", positive=True)
ANGLE = quantity("angle")
TARGET = integer(0)

_NV = mapping({
    "Bz": (quantity("field"), REQUIRED),
    "D": (quantity("frequency", positive=True), ZERO_FIELD_SPLITTING),
    "gamma_e": (quantity("gyromagnetic"), GAMMA_E),
    "transition": (choice(1, -1), 1),
})

_NUCLEUS = mapping({
    "label": (string, "13C"),
    "position_nm": (list_of(number(), 3), REQUIRED),
    "gamma_n": (quantity("gyromagnetic"), None),
})

_SYSTEM = mapping({
    "nv": (_NV, REQUIRED),
    "nuclei": (list_of(_NUCLEUS, 0), []),
    "include_nn": (boolean, False),
    "max_nuclei": (integer(1), 10),
})

_MODEL_PARAMS = {
    "hh": {"target": (TARGET, 0), "detuning": (FREQ, 0.0), "phi": (ANGLE, 0.0), "cycles": (number(0.01), 1.0)},
    "pulsed": {"target": (TARGET, 0), "q": (integer(1), 1), "family": (choice("xy8", "cpmg"), "xy8"),
               "parity": (choice("cosine", "sine"), "cosine"), "detuning": (FREQ, 0.0), "cycles": (number(0.01), 1.0)},
    "ccd": {"rabi1": (POS_FREQ, REQUIRED), "rabi2": (POS_FREQ, None), "phi": (ANGLE, -math.pi / 2),
            "delta": (FREQ, 0.0), "xi1": (number(), 0.0), "cycles": (number(0.01), 1.0)},
    "ja": {"target": (TARGET, 0), "z": (number(0.0), 1.84), "nu_fraction": (number(1e-6, 1.0), 0.3),
           "detuning": (FREQ, 0.0), "phi": (ANGLE, 0.0), "cycles": (number(0.01), 1.0)},
    "parallel": {"target": (TARGET, 0), "multiple": (integer(1), 1), "periods": (integer(1), 2)},
}

EXPERIMENT_FIELDS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "spectrum": {
        "target": (TARGET, 0),
        "family": (choice("xy8", "cpmg"), "xy8"),
        "n_blocks": (integer(1), REQUIRED),
        "tau": (grid(TIME), REQUIRED),
        "readout": (choice("P0", "sigma_x"), "P0"),
        "harmonics": (list_of(integer(1)), [1, 3]),
        "noise_floor": (number(0.0), 0.01),
        "rate_blocks": (mapping({"max": (integer(1), REQUIRED), "step": (integer(1), 1)}), None),
    },
    "hh-transfer": {
        "target": (TARGET, None),
        "rabi": (POS_FREQ, None),
        "detuning": (FREQ, None),
        "duration": (TIME, None),
        "points": (integer(3), 201),
        "phi": (ANGLE, 0.0),
    },
    "ccd-coherence": {
        "rabi1": (POS_FREQ, REQUIRED),
        "rabi2": (POS_FREQ, None),
        "phi": (ANGLE, -math.pi / 2),
        "noise": (mapping({
            "kind": (choice("quasi-static", "ou"), "quasi-static"),
            "delta_rms": (quantity("frequency", nonnegative=True), REQUIRED),
            "xi1_rms": (number(0.0), REQUIRED),
            "tau_c": (TIME, math.inf),
        }), REQUIRED),
        "n_realizations": (integer(1), 500),
        "single_duration": (TIME, None),
        "ccd_duration": (TIME, None),
        "points": (integer(3), 301),
        "check_zero_error": (boolean, False),
    },
    "ja-sweep": {
        "target": (TARGET, 0),
        "z": (grid(number(0.0)), REQUIRED),
        "nu_fraction": (number(1e-6, 1.0), 0.3),
        "phi": (ANGLE, 0.0),
    },
    "parallel-coupling": {
        "target": (TARGET, 0),
        "multiple": (integer(1), 1),
        "periods": (integer(1), 4),
    },
    "effective-validation": {
        "model": (choice(*_MODEL_PARAMS), REQUIRED),
        "params": (lambda v, p, e: v if isinstance(v, dict) else e.append((p, "expected a mapping")), {}),
        "checkpoints": (integer(1), 10),
    },
    "polarization": {
        "order": (list_of(TARGET), None),
        "cycles": (integer(1), 5),
        "phi": (ANGLE, 0.0),
        "reset_fidelity": (number(0.0, 1.0), 1.0),
        "duration_factor": (number(1e-3), 1.0),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    system: SpinSystem
    kind: str
    params: dict
    seed: int = 0
    output: str | None = None
    raw: dict = field(default_factory=dict, compare=False)
    system_raw: dict = field(default_factory=dict, compare=False)


def _build_system(spec: dict, path: str, errors: list) -> SpinSystem | None:
    try:
        nv = NVCenter(Bz=spec["nv"]["Bz"], D=spec["nv"]["D"], gamma_e=spec["nv"]["gamma_e"],
                      transition=spec["nv"]["transition"])
    except ValueError as exc:
        errors.append((f"{path}.nv", str(exc)))
        return None
    nuclei = []
    for i, n in enumerate(spec["nuclei"]):
        npath = f"{path}.nuclei[{i}]"
        gamma = n["gamma_n"]
        if gamma is None:
            if n["label"] not in GYROMAGNETIC:
                errors.append((f"{npath}.gamma_n", f"required for label {n['label']!r} "
                               f"(known isotopes: {', '.join(GYROMAGNETIC)})"))
                continue
            gamma = GYROMAGNETIC[n["label"]]
        try:
            nuclei.append(Nucleus(tuple(n["position_nm"]), gamma, n["label"]))
        except ValueError as exc:
            errors.append((f"{npath}.position_nm", str(exc)))
    if errors:
        return None
    try:
        return SpinSystem(nv, tuple(nuclei), spec["include_nn"], spec["max_nuclei"])
    except ValueError as exc:
        errors.append((f"{path}.nuclei", str(exc)))
        return None


def _load_yaml(text: str, where: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError([(where, f"not valid YAML{loc}: {getattr(exc, 'problem', exc)}")]) from exc


def parse_config(doc: Any, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a loaded document and build the typed configuration."""
    errors: list[tuple[str, str]] = []
    top = mapping({
        "system": (lambda v, p, e: v if isinstance(v, (dict, str)) else e.append((p, "expected a mapping or a file path")),
                   REQUIRED),
        "experiment": (lambda v, p, e: v if isinstance(v, dict) else e.append((p, "expected a mapping")), REQUIRED),
        "seed": (integer(0, 2**64 - 1), 0),
        "output": (string, None),
    })(doc, "", errors)
    if top is None:
        raise ConfigError(errors)
    system_doc = top["system"]
    if isinstance(system_doc, str):
        path = Path(system_doc) if base_dir is None else base_dir / system_doc
        try:
            system_doc = _load_yaml(path.read_text(), "system")
        except OSError as exc:
            raise ConfigError([("system", f"cannot read system document {str(path)!r}: {exc.strerror}")]) from exc
    system_spec = _SYSTEM(system_doc, "system", errors)
    system = _build_system(system_spec, "system", errors) if system_spec is not None else None

    exp = top["experiment"]
    kind = exp.get("kind")
    params = None
    if kind not in EXPERIMENT_KINDS:
        errors.append(("experiment.kind", f"expected one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}"))
    else:
        body = {k: v for k, v in exp.items() if k != "kind"}
        params = mapping(EXPERIMENT_FIELDS[kind])(body, "experiment", errors)
        if params is not None and kind == "effective-validation":
            model = params["model"]
            params["params"] = mapping(_MODEL_PARAMS[model])(params["params"], "experiment.params", errors)
            if params["params"] is not None and model == "ccd" and params["params"]["rabi2"] is None:
                params["params"]["rabi2"] = params["params"]["rabi1"] / 10
        if params is not None and kind == "hh-transfer":
            if params["rabi"] is not None and params["detuning"] is not None:
                errors.append(("experiment.detuning", "give either rabi or detuning, not both"))
    if params is not None and system is not None:
        _check_targets(kind, params, system, errors)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(system, kind, params, top["seed"], top["output"], doc, system_doc)


def _check_targets(kind: str, params: dict, system: SpinSystem, errors: list) -> None:
    n = system.n_nuclei
    needs = kind in ("spectrum", "hh-transfer", "ja-sweep", "parallel-coupling", "polarization") or (
        kind == "effective-validation" and params["model"] != "ccd")
    if needs and n == 0:
        errors.append(("system.nuclei", f"experiment {kind} needs at least one nucleus"))
        return
    targets = []
    if kind == "effective-validation":
        if params["params"] is not None and "target" in params["params"]:
            targets.append(("experiment.params.target", params["params"]["target"]))
    elif kind == "polarization":
        targets += [(f"experiment.order[{i}]", j) for i, j in enumerate(params["order"] or [])]
    elif params.get("target") is not None:
        targets.append(("experiment.target", params["target"]))
    for path, j in targets:
        if j >= n:
            errors.append((path, f"nucleus index {j} out of range (system has {n} nuclei)"))


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a configuration file. Raises ``ConfigError`` (also for unreadable files)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("", f"cannot read {str(path)!r}: {exc.strerror}")]) from exc
    return parse_config(_load_yaml(text, ""), path.parent)
