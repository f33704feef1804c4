"""
Control fields: continuous drives, pulse trains and their modulation functions.

Phase convention
----------------
A drive or pulse with phase ``phi`` generates ``(Omega/2) sigma_phi`` with
``sigma_phi = |m><0| e^{i phi} + h.c. = cos(phi) sx - sin(phi) sy``. An X pulse
has ``phi = 0`` and a Y pulse ``phi = pi/2``. The Y sign is a global choice; the
modulation function and all populations are invariant under ``phi -> -phi``.

Rectangular pulses of finite width are allowed. The modulation function is
always defined by pulse centres, which degrades as ``width / T`` grows.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

PI = math.pi
XY8_PHASES = (0.0, PI / 2, 0.0, PI / 2, PI / 2, 0.0, PI / 2, 0.0)
AXY8_COMPOSITE_PHASES = (PI / 6, 0.0, PI / 2, 0.0, PI / 6)


@dataclass(frozen=True)
class PulseEvent:
    t_center: float
    angle: float = PI
    phase: float = 0.0
    width: float = 0.0
    target: str | int = "nv"
    block: int = 0

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("pulse width must be non-negative")
        if self.target != "nv" and not (isinstance(self.target, int) and self.target >= 0):
            raise ValueError(f"invalid pulse target {self.target!r}")
        if self.target != "nv" and self.width > 0:
            raise ValueError("rf pulses are modelled as instantaneous")

    @property
    def rabi(self) -> float:
        return self.angle / self.width if self.width > 0 else math.inf

    @property
    def start(self) -> float:
        return self.t_center - self.width / 2

    @property
    def end(self) -> float:
        return self.t_center + self.width / 2

    def shifted(self, dt: float) -> "PulseEvent":
        return replace(self, t_center=self.t_center + dt)


@dataclass(frozen=True)
class Envelope:
    """Rabi envelope, evaluated at time relative to the segment start.

    kinds: ``constant`` (rabi), ``sine`` (rabi - depth sin(nu s)),
    ``cosine`` (rabi cos(nu s)).
    """

    kind: str
    rabi: float
    depth: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sine", "cosine"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")

    def __call__(self, s):
        if self.kind == "constant":
            return self.rabi + 0.0 * np.asarray(s)
        if self.kind == "sine":
            return self.rabi - self.depth * np.sin(self.nu * s)
        return self.rabi * np.cos(self.nu * s)

    @property
    def is_constant(self) -> bool:
        if self.kind == "sine":
            return self.depth == 0.0 or self.nu == 0.0
        if self.kind == "cosine":
            return self.nu == 0.0
        return True

    def phase_integral(self, s):
        """``int_0^s envelope``."""
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return self.rabi * s
        if self.kind == "sine":
            return self.rabi * s + (self.depth / self.nu) * (np.cos(self.nu * s) - 1) if self.nu else self.rabi * s
        return self.rabi * np.sin(self.nu * s) / self.nu if self.nu else self.rabi * s


@dataclass(frozen=True)
class ContinuousDrive:
    """Drive on the NV qubit active on ``[start, end)``.

    ``detuning`` is the carrier frequency minus the qubit transition frequency.
    ``error`` is an optional relative amplitude error ``xi(t)``.
    """

    start: float
    end: float
    envelope: Envelope
    phase: float = 0.0
    detuning: float = 0.0
    error: Callable[[float], float] | None = field(default=None, compare=False)

    def amplitude(self, t: float) -> float:
        a = float(self.envelope(t - self.start))
        if self.error is not None:
            a *= 1.0 + self.error(t)
        return a

    @property
    def is_constant(self) -> bool:
        return self.envelope.is_constant and self.error is None and self.detuning == 0.0

    @property
    def bandwidth(self) -> float:
        return abs(self.envelope.nu)

    def shifted(self, dt: float) -> "ContinuousDrive":
        return replace(self, start=self.start + dt, end=self.end + dt)


@dataclass(frozen=True)
class ControlSchedule:
    duration: float
    events: tuple[PulseEvent, ...] = ()
    continuous: tuple[ContinuousDrive, ...] = ()
    nv_detuning: Callable[[float], float] | None = field(default=None, compare=False)
    source: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: e.t_center))
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "continuous", tuple(self.continuous))
        eps = 1e-12 * max(1.0, self.duration)
        for e in events:
            if e.start < -eps or e.end > self.duration + eps:
                raise ValueError(f"pulse at t={e.t_center} lies outside [0, {self.duration}]")
        finite = [e for e in events if e.width > 0]
        for a, b in zip(finite, finite[1:]):
            if b.start < a.end - eps:
                raise ValueError(f"finite-width pulses at {a.t_center} and {b.t_center} overlap")
        for d in self.continuous:
            if d.start < -eps or d.end > self.duration + eps or d.end < d.start:
                raise ValueError("continuous drive segment outside the schedule")

    @property
    def finite_width(self) -> bool:
        return any(e.width > 0 for e in self.events)

    def nv_pulses(self) -> list[PulseEvent]:
        return [e for e in self.events if e.target == "nv"]

    def then(self, other: "ControlSchedule") -> "ControlSchedule":
        """Concatenate ``other`` after this schedule."""
        if self.nv_detuning is not None or other.nv_detuning is not None:
            raise ValueError("schedules carrying detuning noise cannot be concatenated")
        dt = self.duration
        nblocks = 1 + max((e.block for e in self.events), default=-1)
        events = self.events + tuple(replace(e.shifted(dt), block=e.block + nblocks) for e in other.events)
        meta = {**self.metadata, **other.metadata}
        warns = self.metadata.get("warnings", []) + other.metadata.get("warnings", [])
        if warns:
            meta["warnings"] = warns
        return ControlSchedule(
            self.duration + other.duration,
            events,
            self.continuous + tuple(d.shifted(dt) for d in other.continuous),
            None,
            self.source + other.source,
            meta,
        )


def empty_schedule(duration: float = 0.0) -> ControlSchedule:
    return ControlSchedule(duration)


# -- pulse sequences ---------------------------------------------------------


def _check_positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def make_xy8(n_blocks: int, tau: float, width: float = 0.0) -> ControlSchedule:
    """``[XYXYYXYX]^n`` with spacing ``tau`` and the first pulse at ``tau/2``."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    _check_positive(tau=tau)
    events = [
        PulseEvent((k + 0.5) * tau, PI, XY8_PHASES[k % 8], width, "nv", k // 8)
        for k in range(8 * n_blocks)
    ]
    params = {"n": n_blocks, "tau": tau, **({"width": width} if width else {})}
    return ControlSchedule(8 * n_blocks * tau, tuple(events), source=(("xy8", params),))


def make_cpmg(n_pulses: int, tau: float, width: float = 0.0) -> ControlSchedule:
    """``n_pulses`` X pulses with the same timing as XY8."""
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    _check_positive(tau=tau)
    events = [PulseEvent((k + 0.5) * tau, PI, 0.0, width, "nv", k // 8) for k in range(n_pulses)]
    params = {"n": n_pulses, "tau": tau, **({"width": width} if width else {})}
    return ControlSchedule(n_pulses * tau, tuple(events), source=(("cpmg", params),))


def axy8_offsets(d1: float, d2: float, window: float) -> np.ndarray:
    """Pulse positions inside one composite window of length ``window``.

    The five pulses sit at ``W/2 - d2 - d1, W/2 - d2, W/2, W/2 + d2, W/2 + d2 + d1``.
    Admissible iff ``d1 > 0``, ``d2 > 0`` and ``d1 + d2 < W/2`` (strict, so the
    outer pulses stay inside the window and never coincide with neighbours).
    """
    if not d1 > 0:
        raise ValueError(f"AXY8 requires d1 > 0, got {d1}")
    if not d2 > 0:
        raise ValueError(f"AXY8 requires d2 > 0, got {d2}")
    if not d1 + d2 < window / 2:
        raise ValueError(f"AXY8 requires d1 + d2 < T/4 = {window / 2}, got {d1 + d2}")
    c = window / 2
    return np.array([c - d2 - d1, c - d2, c, c + d2, c + d2 + d1])


def make_axy8(n_blocks: int, d1: float, d2: float, period: float) -> ControlSchedule:
    """Adaptive XY8: eight five-pulse composites ordered XYXYYXYX.

    ``period`` is the modulation period ``T``; each composite occupies a window
    of ``T/2`` so one XYXYYXYX block lasts ``4T``. X composites use phases
    ``(pi/6, 0, pi/2, 0, pi/6)``; Y composites add ``pi/2`` to each.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    _check_positive(period=period)
    window = period / 2
    offs = axy8_offsets(d1, d2, window)
    events = []
    for c in range(8 * n_blocks):
        shift = XY8_PHASES[c % 8]
        for off, ph in zip(offs, AXY8_COMPOSITE_PHASES):
            events.append(PulseEvent(c * window + off, PI, ph + shift, 0.0, "nv", c))
    src = (("axy8", {"n": n_blocks, "d1": d1, "d2": d2, "T": period}),)
    return ControlSchedule(8 * n_blocks * window, tuple(events), source=src)


def randomize_phases(schedule: ControlSchedule, seed: int) -> ControlSchedule:
    """Add one uniform random phase per block to every NV pulse; timing is untouched."""
    rng = np.random.default_rng(seed)
    nblocks = 1 + max((e.block for e in schedule.events), default=-1)
    offsets = rng.uniform(0.0, 2 * PI, size=nblocks)
    events = tuple(
        replace(e, phase=e.phase + offsets[e.block]) if e.target == "nv" else e for e in schedule.events
    )
    src = tuple((k, {**p, "seed": seed}) if k in ("xy8", "cpmg", "axy8") else (k, p) for k, p in schedule.source)
    return replace(schedule, events=events, source=src)


def resonant_spacing(omega_u: float, q: int = 1) -> float:
    """Modulation period ``T = 2 pi q / w_u`` placing harmonic ``q`` on ``w_u``."""
    _check_positive(omega_u=omega_u)
    if q < 1:
        raise ValueError("harmonic q must be >= 1")
    return 2 * PI * q / omega_u


def make_sync_mw_rf(
    u: int,
    omega_u: float | None,
    n_blocks: int,
    block_period: float,
    other_omegas: Sequence[float] = (),
    rf_bandwidth: float | None = None,
) -> ControlSchedule:
    """Simultaneous MW pi (on the NV) and selective rf pi (on nucleus ``u``) pulses.

    Each block of length ``block_period`` carries one pulse pair at its centre.
    Nuclei whose resonance lies within ``rf_bandwidth`` of ``omega_u`` are
    listed in ``metadata['warnings']``; the rf pulse itself is ideal.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    _check_positive(block_period=block_period)
    events = []
    for b in range(n_blocks):
        t = (b + 0.5) * block_period
        events.append(PulseEvent(t, PI, 0.0, 0.0, "nv", b))
        events.append(PulseEvent(t, PI, 0.0, 0.0, u, b))
    meta: dict = {"rf_target": u, "omega_u": omega_u}
    if omega_u is not None and rf_bandwidth is not None:
        close = [j for j, w in enumerate(other_omegas) if j != u and abs(w - omega_u) < rf_bandwidth]
        if close:
            meta["warnings"] = [f"nuclei {close} lie within the rf bandwidth of nucleus {u}"]
    src = (("sync", {"u": u, "n": n_blocks, "T": block_period, **({"w": omega_u} if omega_u is not None else {})}),)
    return ControlSchedule(n_blocks * block_period, tuple(events), source=src, metadata=meta)


def pulse_unitary_phase_for_dressed(sign: int, phi: float) -> float:
    """Phase of the pi/2 pulse taking ``|0>`` to ``|+-phi>`` (up to global phase)."""
    return phi + sign * PI / 2


def make_hh(rabi: float, duration: float, phase: float = 0.0, prepare: int | None = -1, detuning: float = 0.0) -> ControlSchedule:
    """Constant spin-locking drive; optionally prefixed by a pi/2 pulse preparing ``|prepare_phi>``."""
    _check_positive(duration=duration)
    events = ()
    if prepare:
        events = (PulseEvent(0.0, PI / 2, pulse_unitary_phase_for_dressed(prepare, phase)),)
    drive = ContinuousDrive(0.0, duration, Envelope("constant", rabi), phase, detuning)
    src = (("hh", {"W": rabi, "t": duration, "phi": phase, "prep": prepare or 0, "d": detuning}),)
    return ControlSchedule(duration, events, (drive,), source=src)


def make_modulated_rabi(
    rabi0: float, depth: float, nu: float, duration: float, phase: float = 0.0, prepare: int | None = -1
) -> ControlSchedule:
    """Drive with envelope ``Omega0 - Omega1 sin(nu t)``."""
    _check_positive(nu=nu, duration=duration)
    events = ()
    if prepare:
        events = (PulseEvent(0.0, PI / 2, pulse_unitary_phase_for_dressed(prepare, phase)),)
    drive = ContinuousDrive(0.0, duration, Envelope("sine", rabi0, depth, nu), phase)
    src = (("modrabi", {"W0": rabi0, "W1": depth, "nu": nu, "t": duration, "phi": phase, "prep": prepare or 0}),)
    return ControlSchedule(duration, events, (drive,), source=src)


def make_ccd(
    omega0: float,
    rabi1: float,
    rabi2: float,
    phi: float,
    duration: float,
    delta: Callable[[float], float] | None = None,
    xi1: Callable[[float], float] | None = None,
    xi2: Callable[[float], float] | None = None,
) -> ControlSchedule:
    """Two-tone concatenated drive.

    Tone 1: ``Omega1 (1+xi1) sx cos(w0 t)``; tone 2:
    ``Omega2 (1+xi2) sx cos(w0 t - phi) cos(Omega1 t)``. ``delta`` is the
    environmental detuning of the qubit. ``omega0`` is recorded as the carrier;
    both tones are resonant with the qubit transition.
    """
    _check_positive(duration=duration)
    if rabi2 != 0 and abs(rabi1) < 10 * abs(rabi2):
        warnings.warn("CCD expects |Omega1| >> |Omega2|", stacklevel=2)
    drives = (ContinuousDrive(0.0, duration, Envelope("constant", rabi1), 0.0, 0.0, xi1),)
    if rabi2 != 0:
        drives += (ContinuousDrive(0.0, duration, Envelope("cosine", rabi2, 0.0, rabi1), phi, 0.0, xi2),)
    src = (("ccd", {"w0": omega0, "W1": rabi1, "W2": rabi2, "phi": phi, "t": duration}),)
    return ControlSchedule(duration, (), drives, delta, src, {"omega0": omega0})


def make_polarization_block(n_blocks: int, tau: float, base: str = "xy8") -> ControlSchedule:
    """Flip-flop synthesis from two DD intervals with interspersed NV pi/2 pulses.

    Interval 1 is an even (cosine) train giving ``sigma_z I_x``, rotated to
    ``sigma_x I_x`` by pi/2 pulses about y. Interval 2 is the same train shifted
    by ``tau/2`` (odd, sine-type), giving ``sigma_z I_y`` and rotated to
    ``sigma_y I_y`` by pi/2 pulses about x. Both intervals last ``8 n tau`` so
    the nuclear phase at the start of interval 2 matches interval 1 when
    ``tau = q pi / w_u``. The net coupling is proportional to
    ``sigma+ I- + sigma- I+``.
    """
    if n_blocks == 0:
        return empty_schedule(0.0)
    if base not in ("xy8", "cpmg"):
        raise ValueError("base must be 'xy8' or 'cpmg'")
    _check_positive(tau=tau)
    n = 8 * n_blocks
    phases = [XY8_PHASES[k % 8] if base == "xy8" else 0.0 for k in range(n)]
    length = n * tau
    # pi/2 about -y maps sigma_z -> sigma_x; pi/2 about -x maps sigma_z -> -sigma_y
    events = [PulseEvent(0.0, PI / 2, PI / 2, block=0)]
    events += [PulseEvent((k + 0.5) * tau, PI, phases[k], block=0) for k in range(n)]
    events += [PulseEvent(length, PI / 2, -PI / 2, block=1), PulseEvent(length, PI / 2, PI, block=1)]
    events += [PulseEvent(length + (k + 1) * tau, PI, phases[k], block=1) for k in range(n - 1)]
    # last pulse of the shifted train coincides with the interval end
    events += [PulseEvent(2 * length, PI, phases[n - 1], block=1), PulseEvent(2 * length, PI / 2, 0.0, block=1)]
    src = (("pol", {"n": n_blocks, "tau": tau, **({"base": base} if base != "xy8" else {})}),)
    return ControlSchedule(2 * length, tuple(events), source=src, metadata={"base": base})


# -- modulation function -----------------------------------------------------


@dataclass(frozen=True)
class ModulationFunction:
    """Piecewise +-1 function with period ``period`` flipping at ``switch_times``."""

    period: float
    switch_times: tuple[float, ...] = ()
    initial_sign: int = 1

    def __call__(self, t):
        t = np.mod(np.asarray(t, dtype=float), self.period)
        flips = np.searchsorted(np.asarray(self.switch_times), t, side="right")
        return self.initial_sign * np.where(flips % 2 == 0, 1, -1)

    def segments(self) -> list[tuple[float, float, int]]:
        edges = [0.0, *self.switch_times, self.period]
        out = []
        sign = self.initial_sign
        for a, b in zip(edges[:-1], edges[1:]):
            out.append((a, b, sign))
            sign = -sign
        return out

    def mean(self) -> float:
        return sum(s * (b - a) for a, b, s in self.segments()) / self.period


def modulation_function(schedule: ControlSchedule, period: float | None = None) -> ModulationFunction:
    """Sign of ``sigma_z`` in the toggling frame of the NV pi-pulse train.

    The minimal period is detected unless ``period`` is given. A schedule
    whose flips are not periodic is treated as one period of length
    ``duration``.
    """
    pulses = schedule.nv_pulses()
    for p in pulses:
        if not math.isclose(p.angle, PI, rel_tol=0, abs_tol=1e-12):
            raise ValueError(
                f"NV pulse at t={p.t_center} has angle {p.angle}; the modulation-function picture needs pi pulses only"
            )
    flips = np.array([p.t_center for p in pulses])
    duration = schedule.duration
    if flips.size == 0:
        return ModulationFunction(period or duration or 1.0)
    tol = 1e-9 * max(1.0, duration)

    def is_period(T: float, m: int) -> bool:
        if m % 2 or m == 0 or flips.size % m:
            return False
        if not np.allclose(flips[m:], flips[:-m] + T, atol=tol):
            return False
        return abs(duration / T - round(duration / T)) < 1e-9

    if period is None:
        period = duration
        for m in range(2, flips.size, 2):
            if flips.size % m == 0 and is_period(flips[m] - flips[0], m):
                period = float(flips[m] - flips[0])
                break
    sw = tuple(float(t) for t in flips[flips < period - tol])
    return ModulationFunction(float(period), sw, 1)


def fourier_coefficient(F: ModulationFunction, k: int, parity: str = "cosine") -> float:
    """Exact ``(2/T) int_0^T F(t) cos|sin(2 pi k t / T) dt`` for piecewise-constant ``F``."""
    if k < 0:
        raise ValueError("harmonic index must be non-negative")
    if parity not in ("cosine", "sine"):
        raise ValueError("parity must be 'cosine' or 'sine'")
    T = F.period
    if k == 0:
        return 2.0 * F.mean() if parity == "cosine" else 0.0
    w = 2 * PI * k / T
    total = 0.0
    for a, b, s in F.segments():
        if parity == "cosine":
            total += s * (math.sin(w * b) - math.sin(w * a))
        else:
            total += s * (math.cos(w * a) - math.cos(w * b))
    return 2.0 / T * total / w
