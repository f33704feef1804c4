"""
Line-oriented sequence language.

A program is a list of statements separated by ``;`` or newlines; ``#`` starts
a comment. Each statement is ``<kind> key=value ...`` and statements are
concatenated in time order::

    xy8 n=4 tau=0.25 ; sync u=1 n=2 T=1.5

Numbers accept ``pi`` factors (``phi=-pi/2``, ``phi=0.5*pi``). Times are in
us and frequencies in rad/us. ``serialize`` writes the canonical text, using
the shortest round-trip representation of every float, so
``parse(serialize(s)) == s`` for every schedule built from presets.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

from . import control as ctl
from .control import ControlSchedule


class DSLError(ValueError):
    """Parse error carrying a 1-based line and column."""

    def __init__(self, message: str, line: int, column: int, text: str = ""):
        self.line = line
        self.column = column
        self.text = text
        pointer = f"\n  {text}\n  {' ' * (column - 1)}^" if text else ""
        super().__init__(f"line {line}, column {column}: {message}{pointer}")


@dataclass(frozen=True)
class _Param:
    name: str
    kind: str  # 'int', 'float' or 'word'
    default: object = None  # None => required

    @property
    def required(self) -> bool:
        return self.default is None


def _build_xy8(p):
    s = ctl.make_xy8(p["n"], p["tau"], p["width"])
    return ctl.randomize_phases(s, p["seed"]) if p["seed"] >= 0 else s


def _build_axy8(p):
    s = ctl.make_axy8(p["n"], p["d1"], p["d2"], p["T"])
    return ctl.randomize_phases(s, p["seed"]) if p["seed"] >= 0 else s


def _build_sync(p):
    return ctl.make_sync_mw_rf(p["u"], p["w"] if not math.isnan(p["w"]) else None, p["n"], p["T"])


_KINDS: dict[str, tuple[tuple[_Param, ...], Callable[[dict], ControlSchedule]]] = {
    "xy8": (
        (_Param("n", "int"), _Param("tau", "float"), _Param("width", "float", 0.0), _Param("seed", "int", -1)),
        _build_xy8,
    ),
    "cpmg": (
        (_Param("n", "int"), _Param("tau", "float"), _Param("width", "float", 0.0)),
        lambda p: ctl.make_cpmg(p["n"], p["tau"], p["width"]),
    ),
    "axy8": (
        (_Param("n", "int"), _Param("d1", "float"), _Param("d2", "float"), _Param("T", "float"), _Param("seed", "int", -1)),
        _build_axy8,
    ),
    "sync": (
        (_Param("u", "int"), _Param("n", "int"), _Param("T", "float"), _Param("w", "float", math.nan)),
        _build_sync,
    ),
    "ccd": (
        (_Param("w0", "float"), _Param("W1", "float"), _Param("W2", "float"), _Param("phi", "float"), _Param("t", "float")),
        lambda p: ctl.make_ccd(p["w0"], p["W1"], p["W2"], p["phi"], p["t"]),
    ),
    "hh": (
        (_Param("W", "float"), _Param("t", "float"), _Param("phi", "float", 0.0), _Param("prep", "int", -1), _Param("d", "float", 0.0)),
        lambda p: ctl.make_hh(p["W"], p["t"], p["phi"], p["prep"] or None, p["d"]),
    ),
    "modrabi": (
        (_Param("W0", "float"), _Param("W1", "float"), _Param("nu", "float"), _Param("t", "float"),
         _Param("phi", "float", 0.0), _Param("prep", "int", -1)),
        lambda p: ctl.make_modulated_rabi(p["W0"], p["W1"], p["nu"], p["t"], p["phi"], p["prep"] or None),
    ),
    "pol": (
        (_Param("n", "int"), _Param("tau", "float"), _Param("base", "word", "xy8")),
        lambda p: ctl.make_polarization_block(p["n"], p["tau"], p["base"]),
    ),
}

KINDS = tuple(_KINDS)

_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_VALUE_RE = re.compile(
    rf"^(?:(?P<num>{_NUMBER}|[+-]?inf|nan)"
    rf"|(?P<sign>[+-])?(?:(?P<coef>{_NUMBER})\*)?pi(?:/(?P<den>{_NUMBER}))?)$"
)
_TOKEN_RE = re.compile(r"\S+")


def parse_number(text: str) -> float | None:
    """Parse a plain number or a ``pi`` expression (``-pi/2``, ``0.5*pi``); ``None`` if malformed."""
    m = _VALUE_RE.match(text)
    if not m:
        return None
    if m.group("num") is not None:
        return float(m.group("num"))
    value = math.pi * float(m.group("coef") or 1.0)
    if m.group("den") is not None:
        den = float(m.group("den"))
        if den == 0:
            return None
        value /= den
    return -value if m.group("sign") == "-" else value


def _statements(text: str):
    """Yield ``(line_no, col_offset, statement_text, full_line)``."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        col = 0
        for part in line.split(";"):
            if part.strip():
                yield line_no, col, part, raw
            col += len(part) + 1


def _parse_statement(line_no: int, offset: int, stmt: str, raw: str) -> tuple[str, dict]:
    tokens = [(m.start() + offset + 1, m.group()) for m in _TOKEN_RE.finditer(stmt)]
    col, kind = tokens[0]
    if kind not in _KINDS:
        raise DSLError(f"unknown sequence kind {kind!r}; expected one of {', '.join(KINDS)}", line_no, col, raw)
    spec, _ = _KINDS[kind]
    by_name = {p.name: p for p in spec}
    values: dict = {}
    for col, tok in tokens[1:]:
        key, eq, val = tok.partition("=")
        if not eq or not key:
            raise DSLError(f"expected key=value, got {tok!r}", line_no, col, raw)
        if key not in by_name:
            raise DSLError(f"unknown parameter {key!r} for {kind}; expected {', '.join(by_name)}", line_no, col, raw)
        if key in values:
            raise DSLError(f"duplicate parameter {key!r}", line_no, col, raw)
        vcol = col + len(key) + 1
        p = by_name[key]
        if p.kind == "word":
            if not re.fullmatch(r"[A-Za-z_][\w-]*", val):
                raise DSLError(f"{key} expects a word, got {val!r}", line_no, vcol, raw)
            values[key] = val
            continue
        number = parse_number(val)
        if number is None:
            raise DSLError(f"{key} expects a number, got {val!r}", line_no, vcol, raw)
        if p.kind == "int":
            if not (math.isfinite(number) and number == int(number)):
                raise DSLError(f"{key} expects an integer, got {val!r}", line_no, vcol, raw)
            number = int(number)
        values[key] = number
    missing = [p.name for p in spec if p.required and p.name not in values]
    if missing:
        end = offset + len(stmt.rstrip()) + 1
        raise DSLError(f"{kind} is missing required parameter(s) {', '.join(missing)}", line_no, end, raw)
    for p in spec:
        values.setdefault(p.name, p.default)
    return kind, values


def parse(text: str) -> ControlSchedule:
    """Compile DSL text into a schedule. Raises ``DSLError`` with a position."""
    schedule = None
    any_stmt = False
    for line_no, offset, stmt, raw in _statements(text):
        any_stmt = True
        kind, params = _parse_statement(line_no, offset, stmt, raw)
        try:
            piece = _KINDS[kind][1](params)
        except ValueError as exc:
            col = offset + len(stmt) - len(stmt.lstrip()) + 1
            raise DSLError(str(exc), line_no, col, raw) from exc
        schedule = piece if schedule is None else schedule.then(piece)
    if not any_stmt:
        raise DSLError("empty sequence", 1, 1, text.splitlines()[0] if text.splitlines() else "")
    return schedule


def _format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return repr(float(value))


def serialize(schedule: ControlSchedule) -> str:
    """Canonical DSL text for a preset-built schedule."""
    if not schedule.source:
        raise ValueError("schedule carries no sequence provenance and cannot be serialized")
    parts = []
    for kind, params in schedule.source:
        if kind not in _KINDS:
            raise ValueError(f"cannot serialize sequence kind {kind!r}")
        spec, _ = _KINDS[kind]
        words = [kind]
        for p in spec:
            if p.name not in params:
                if p.required:
                    raise ValueError(f"{kind} provenance lacks {p.name}")
                continue
            v = params[p.name]
            if not p.required and (v == p.default or (isinstance(v, float) and math.isnan(v) and isinstance(p.default, float) and math.isnan(p.default))):
                continue
            if p.kind == "int":
                v = int(v)
            words.append(f"{p.name}={_format_value(v)}")
        parts.append(" ".join(words))
    return " ; ".join(parts)
