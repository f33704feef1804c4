"""
Exact time evolution, observables, noise, spectra and parameter scans.

Propagation works on column blocks: a state vector is one column, a full
propagator is the identity block, and a density matrix ``rho = C C^dag`` is
carried by its weighted eigenvectors ``C``. Between events the Hamiltonian is
either static (one cached eigendecomposition per distinct active drive set)
or time dependent, in which case it is sampled at step midpoints and the step
count is doubled until two successive refinements agree within
``step_control``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import spincore as sc
from .control import ContinuousDrive, ControlSchedule, Envelope, PulseEvent, make_cpmg, make_xy8
from .system import (
    FrameHamiltonian,
    FrameSpec,
    SpinSpace,
    SpinSystem,
    decompose_hyperfine,
    nv_pulse_unitary,
    rf_native_offset,
    rf_pulse_unitary,
    rotating_frame_hamiltonian,
)

MAX_REFINEMENTS = 16


class StepControlError(RuntimeError):
    """Adaptive stepping failed to converge."""

    def __init__(self, t0: float, t1: float, achieved: float, target: float):
        self.achieved = achieved
        super().__init__(
            f"step control failed on [{t0:.6g}, {t1:.6g}] us: achieved error {achieved:.3g} > {target:.3g}"
        )


# -- states -----------------------------------------------------------------


def nv_state(space: SpinSpace, label: str = "0", phi: float = 0.0) -> np.ndarray:
    """NV state: ``'0'``, ``'m'`` (the other qubit level), ``'+'``/``'-'`` (dressed ``|+-phi>``)."""
    v = np.zeros(space.nv_dim, dtype=complex)
    i_m, i_0 = space.nv_level(space.transition), space.nv_level(0)
    if label == "0":
        v[i_0] = 1
    elif label in ("m", "1", "-1"):
        v[i_m] = 1
    elif label in ("+", "-"):
        s = 1 if label == "+" else -1
        v[i_m] = 1 / np.sqrt(2)
        v[i_0] = s * np.exp(-1j * phi) / np.sqrt(2)
    else:
        raise ValueError(f"unknown NV state {label!r}")
    return v


def nucleus_state(system: SpinSystem, j: int, label: str) -> np.ndarray:
    """Nuclear spin state.

    ``'up'``/``'down'`` refer to the triad axis ``e3 = -w^_j`` used by the
    effective models; ``'z+'``/``'z-'`` to the lab z axis; ``'w+'``/``'w-'``
    to the nuclear quantisation axis ``w^_j``.
    """
    if label in ("z+", "z-"):
        return np.array([1, 0], complex) if label == "z+" else np.array([0, 1], complex)
    dec = decompose_hyperfine(system.nuclei[j], system.nv)
    axis = {"up": dec.axes[2], "down": -dec.axes[2], "w+": dec.omega_hat, "w-": -dec.omega_hat}.get(label)
    if axis is None:
        raise ValueError(f"unknown nuclear state {label!r}")
    half = sc.spin_operators(0.5)
    op = sum(c * half[k] for c, k in zip(axis, "xyz"))
    evals, evecs = np.linalg.eigh(op)
    v = evecs[:, int(np.argmax(evals))]
    return v / (v[np.argmax(np.abs(v))] / abs(v[np.argmax(np.abs(v))]))


def product_state(space: SpinSpace, nv: np.ndarray, nuclei: Sequence[np.ndarray]) -> np.ndarray:
    if len(nuclei) != space.n_nuclei:
        raise ValueError(f"expected {space.n_nuclei} nuclear states, got {len(nuclei)}")
    return sc.kron_all([np.asarray(nv, complex), *[np.asarray(n, complex) for n in nuclei]])


def product_density(space: SpinSpace, nv: np.ndarray, nuclei: Sequence[np.ndarray | None]) -> np.ndarray:
    """Density matrix; a ``None`` nuclear entry means maximally mixed."""
    parts = [np.outer(nv, np.conj(nv))]
    for n in nuclei:
        parts.append(np.eye(2, dtype=complex) / 2 if n is None else np.outer(n, np.conj(n)))
    return sc.kron_all(parts)


def density_columns(rho: np.ndarray, cutoff: float = 1e-14) -> np.ndarray:
    """``C`` with ``C C^dag = rho`` (weighted eigenvectors of non-negligible weight)."""
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > cutoff
    return evecs[:, keep] * np.sqrt(evals[keep])


# -- pulses and intervals ---------------------------------------------------


class _Engine:
    """Propagate column blocks through a schedule in a given frame."""

    def __init__(self, ham: FrameHamiltonian, schedule: ControlSchedule, step_control: float):
        if not step_control > 0:
            raise ValueError("step_control must be positive")
        self.ham = ham
        self.schedule = schedule
        self.tol = step_control
        self.space = ham.space
        self.system = ham.system
        self._static_cache: dict = {}
        self._pulse_cache: dict = {}
        self.max_error = 0.0
        self.n_steps = 0
        # finite-width NV pulses are integrated as rectangular drive segments
        self.pulse_drives = [
            (e, ContinuousDrive(e.start, e.end, Envelope("constant", e.rabi), e.phase))
            for e in schedule.events
            if e.width > 0
        ]
        self.instant = [e for e in schedule.events if e.width == 0]
        ham.drives = list(schedule.continuous) + [d for _, d in self.pulse_drives]
        ham.nv_detuning = schedule.nv_detuning

    def breakpoints(self, times: np.ndarray) -> np.ndarray:
        pts = {0.0, float(self.schedule.duration)}
        pts.update(float(t) for t in times)
        pts.update(e.t_center for e in self.instant)
        for d in self.ham.drives:
            pts.update((d.start, d.end))
        return np.array(sorted(pts))

    def active(self, t: float) -> tuple:
        return tuple(d for d in self.ham.drives if d.start <= t < d.end)

    def pulse(self, e: PulseEvent) -> np.ndarray:
        if e.target == "nv":
            key = ("nv", e.angle, e.phase)
            if key not in self._pulse_cache:
                self._pulse_cache[key] = nv_pulse_unitary(self.space, e.angle, e.phase)
            native = None
        else:
            if e.target >= self.system.n_nuclei:
                raise ValueError(f"rf pulse targets nucleus {e.target} but the system has {self.system.n_nuclei}")
            key = ("rf", e.target, e.angle, e.phase)
            if key not in self._pulse_cache:
                self._pulse_cache[key] = rf_pulse_unitary(self.system, self.space, e.target, e.angle, e.phase)
            native = self._pulse_cache.setdefault(("native", e.target), rf_native_offset(self.system, self.space, e.target))
        return self.ham.move_pulse(self._pulse_cache[key], native, e.t_center)

    def _midpoint(self, t0: float, t1: float, n: int, cols: np.ndarray) -> np.ndarray:
        dt = (t1 - t0) / n
        out = cols
        for k in range(n):
            out = sc.propagator(self.ham(t0 + (k + 0.5) * dt), dt) @ out
        self.n_steps += n
        return out

    def interval(self, t0: float, t1: float, cols: np.ndarray) -> np.ndarray:
        if t1 <= t0:
            return cols
        active = self.active(0.5 * (t0 + t1))
        if self.ham.is_static(active):
            key = tuple(id(d) for d in active)
            if key not in self._static_cache:
                self._static_cache[key] = sc.EigenPropagator(self.ham(0.5 * (t0 + t1)))
            return self._static_cache[key](t1 - t0) @ cols
        freq = self.ham.max_frequency() + float(np.max(np.abs(self.ham(t0)), initial=0.0))
        n = max(1, int(math.ceil((t1 - t0) * freq / 0.5)))
        coarse = self._midpoint(t0, t1, n, cols)
        err = math.inf
        for _ in range(MAX_REFINEMENTS):
            n *= 2
            fine = self._midpoint(t0, t1, n, cols)
            err = float(np.max(np.abs(fine - coarse)))
            if err < self.tol:
                self.max_error = max(self.max_error, err)
                return fine
            coarse = fine
        raise StepControlError(t0, t1, err, self.tol)

    def run(self, cols: np.ndarray, times: Sequence[float]) -> list[np.ndarray]:
        """Columns at each requested time (pulses at ``t`` are applied before sampling)."""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0) or np.any(times > self.schedule.duration * (1 + 1e-12) + 1e-15):
            raise ValueError("sample times must lie in [0, duration]")
        order = np.argsort(times, kind="stable")
        out: list = [None] * len(times)
        pts = self.breakpoints(times)
        ev_times = np.array([e.t_center for e in self.instant])
        ev_idx = 0
        t = 0.0
        sample_idx = 0
        for tp in pts:
            if sample_idx == len(order):
                break
            cols = self.interval(t, tp, cols)
            t = tp
            while ev_idx < len(self.instant) and ev_times[ev_idx] <= tp + 1e-12 * max(1.0, tp):
                cols = self.pulse(self.instant[ev_idx]) @ cols
                ev_idx += 1
            while sample_idx < len(order) and times[order[sample_idx]] <= tp + 1e-12 * max(1.0, tp):
                out[order[sample_idx]] = cols
                sample_idx += 1
        return out


def frame_hamiltonian(system: SpinSystem, frame: FrameSpec | str = FrameSpec.NV, rwa: bool = True) -> FrameHamiltonian:
    return rotating_frame_hamiltonian(system, frame, rwa)


def propagate(
    system: SpinSystem,
    schedule: ControlSchedule,
    cols: np.ndarray,
    times: Sequence[float],
    frame: FrameSpec | str = FrameSpec.NV,
    rwa: bool = True,
    step_control: float = 1e-8,
    ham: FrameHamiltonian | None = None,
) -> list[np.ndarray]:
    ham = ham if ham is not None else rotating_frame_hamiltonian(system, frame, rwa)
    return _Engine(ham, schedule, step_control).run(np.asarray(cols, dtype=complex), times)


def schedule_propagator(
    system: SpinSystem,
    schedule: ControlSchedule,
    times: Sequence[float] | None = None,
    frame: FrameSpec | str = FrameSpec.NV,
    rwa: bool = True,
    step_control: float = 1e-8,
) -> list[np.ndarray] | np.ndarray:
    """Full propagator(s) ``U(t)``; a single matrix when ``times`` is None (t = duration)."""
    ham = rotating_frame_hamiltonian(system, frame, rwa)
    single = times is None
    times = [schedule.duration] if single else times
    us = _Engine(ham, schedule, step_control).run(ham.space.identity(), times)
    return us[0] if single else us


# -- observables and trajectories --------------------------------------------


def standard_observables(system: SpinSystem, space: SpinSpace) -> dict[str, np.ndarray]:
    """``sx, sy, sz`` (qubit Paulis), ``P0``, ``Pm``, per-nucleus ``Iz_j`` (lab) and ``Iw_j`` (along w^_j)."""
    obs = {
        "sx": space.sigma("x"),
        "sy": space.sigma("y"),
        "sz": space.sigma("z"),
        "P0": space.nv_projector(0),
        "Pm": space.nv_projector(space.transition),
    }
    for j in range(system.n_nuclei):
        obs[f"Iz_{j}"] = space.I(j, "z")
        obs[f"Iw_{j}"] = space.I(j, decompose_hyperfine(system.nuclei[j], system.nv).omega_hat)
    return obs


def expectation(op: np.ndarray, cols: np.ndarray) -> float:
    """``tr(op C C^dag)`` (``C`` is a state column or density columns)."""
    cols = cols.reshape(cols.shape[0], -1)
    return float(np.real(np.einsum("ik,ij,jk->", cols.conj(), op, cols)))


def _canonical(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _canonical(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, float):
        return repr(obj)
    if isinstance(obj, (int, str, bool)) or obj is None:
        return obj
    if callable(obj):
        return f"<callable {getattr(obj, '__qualname__', type(obj).__name__)}>"
    return repr(obj)


def digest(obj) -> str:
    """SHA-256 of a canonical JSON rendering (floats as shortest round-trip text)."""
    text = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def schedule_digest(schedule: ControlSchedule) -> str:
    return digest({"duration": schedule.duration, "events": schedule.events, "continuous": schedule.continuous,
                   "source": schedule.source})


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    states: list | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]


def evolve(
    system: SpinSystem,
    schedule: ControlSchedule,
    initial: np.ndarray,
    times: Sequence[float] | None = None,
    frame: FrameSpec | str = FrameSpec.NV,
    rwa: bool = True,
    step_control: float = 1e-8,
    observables: Mapping[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> Trajectory:
    """Evolve a state vector (1-D) or density matrix (2-D) and sample observables."""
    ham = rotating_frame_hamiltonian(system, frame, rwa)
    initial = np.asarray(initial, dtype=complex)
    if initial.shape[0] != ham.dim:
        raise ValueError(f"initial state has dimension {initial.shape[0]}, frame space has {ham.dim}")
    if initial.ndim == 1:
        cols = initial.reshape(-1, 1)
        norm0 = float(np.linalg.norm(initial))
        if abs(norm0 - 1) > 1e-10:
            raise ValueError(f"initial state is not normalised (|psi| = {norm0})")
    elif initial.ndim == 2 and initial.shape == (ham.dim, ham.dim):
        if not sc.is_hermitian(initial) or abs(np.trace(initial).real - 1) > 1e-10:
            raise ValueError("initial density matrix must be Hermitian with unit trace")
        cols = density_columns(initial)
    else:
        raise ValueError("initial must be a state vector or a square density matrix")
    times = np.linspace(0.0, schedule.duration, 101) if times is None else np.asarray(times, dtype=float)
    engine = _Engine(ham, schedule, step_control)
    blocks = engine.run(cols, times)
    obs = dict(standard_observables(system, ham.space)) if observables is None else dict(observables)
    series = {k: np.array([expectation(op, b) for b in blocks]) for k, op in obs.items()}
    norms = np.array([float(np.sum(np.abs(b) ** 2)) for b in blocks])
    series["norm"] = norms
    meta = {
        "system_digest": digest(system),
        "schedule_digest": schedule_digest(schedule),
        "frame": FrameSpec(frame).value,
        "rwa": rwa,
        "step_control": step_control,
        "max_step_error": engine.max_error,
        "steps": engine.n_steps,
    }
    return Trajectory(times, series, meta, blocks if keep_states else None)


# -- stroboscopic propagation -------------------------------------------------


def stroboscopic_propagators(
    system: SpinSystem,
    schedule: ControlSchedule,
    period: float,
    counts: Sequence[int],
    frame: FrameSpec | str = FrameSpec.NV,
    rwa: bool = True,
    step_control: float = 1e-8,
) -> list[np.ndarray]:
    """``U(k P)`` for each ``k`` in ``counts`` using one exact period propagator.

    Valid when the frame Hamiltonian is ``P``-periodic on ``[0, duration]``
    (checked for drive envelopes, detunings and drive boundaries); pulses are
    only allowed at ``t = 0`` and are applied first.
    """
    if not period > 0:
        raise ValueError("period must be positive")
    late = [e for e in schedule.events if e.t_center > 0 or e.width > 0]
    if late:
        raise ValueError("stroboscopic propagation allows instantaneous pulses at t = 0 only")
    if schedule.nv_detuning is not None:
        raise ValueError("stroboscopic propagation needs a deterministic, periodic Hamiltonian")
    counts = [int(k) for k in counts]
    if max(counts, default=0) * period > schedule.duration * (1 + 1e-12):
        raise ValueError("requested stroboscopic time exceeds the schedule duration")
    for d in schedule.continuous:
        if d.start > 1e-12 or d.end < max(counts) * period * (1 - 1e-12):
            raise ValueError("drives must cover the whole stroboscopic window")
        for f in (d.envelope.nu, d.detuning):
            if f and abs(math.remainder(f * period, 2 * math.pi)) > 1e-9:
                raise ValueError(f"drive frequency {f} is not commensurate with period {period}")
    ham = rotating_frame_hamiltonian(system, frame, rwa)
    if ham.rotation is not None and ham.rotation.span > 0:
        gaps = ham.rotation.gaps[np.abs(ham.rotation.gaps) > 1e-12]
        if gaps.size and np.max(np.abs(np.remainder(gaps * period / (2 * math.pi) + 0.5, 1.0) - 0.5)) > 1e-9:
            raise ValueError("the frame rotation is not periodic with the requested period")
    engine = _Engine(ham, schedule, step_control)
    u_pre = ham.space.identity()
    for e in schedule.events:
        u_pre = engine.pulse(e) @ u_pre
    engine.instant = []
    u_period = engine.interval(0.0, period, ham.space.identity())
    out = {}
    current = u_pre
    done = 0
    for k in sorted(set(counts)):
        while done < k:
            current = u_period @ current
            done += 1
        out[k] = current
    return [out[k] for k in counts]


# -- effective-model validation ------------------------------------------------


def subspace_fidelity(model_u: np.ndarray, exact_u: np.ndarray, dims: Sequence[int], sites: Sequence[int]) -> float:
    """``max_V |tr((U_m (x) V)^dag U)| / d`` over unitaries ``V`` on the spectator sites.

    Equals ``||tr_sites[(U_m^dag (x) 1) U]||_1 / d`` and reduces to
    ``spincore.fidelity`` when the model covers every site.
    """
    dims = list(dims)
    d = int(np.prod(dims))
    m = model_u.conj().T @ exact_u
    keep = [k for k in range(len(dims)) if k not in sites]
    if not keep:
        return float(min(1.0, abs(np.trace(m)) / d))
    n = len(dims)
    t = m.reshape(dims + dims)
    perm = list(sites) + keep
    t = t.transpose(perm + [p + n for p in perm])
    ds = int(np.prod([dims[k] for k in sites]))
    dk = int(np.prod([dims[k] for k in keep]))
    t = t.reshape(ds, dk, ds, dk)
    reduced = np.einsum("iaib->ab", t)
    return float(min(1.0, np.sum(np.linalg.svd(reduced, compute_uv=False)) / d))


@dataclass
class ValidationResult:
    times: np.ndarray
    fidelity: np.ndarray
    leakage: np.ndarray
    model: dict
    leakage_warning: bool = False

    @property
    def min_fidelity(self) -> float:
        return float(np.min(self.fidelity))


def validate_effective(
    system: SpinSystem,
    schedule: ControlSchedule,
    model,
    duration: float | None = None,
    n_checkpoints: int = 10,
    rwa: bool = True,
    step_control: float = 1e-8,
    leakage_threshold: float = 1e-3,
    stroboscopic: bool | None = None,
) -> ValidationResult:
    """Fidelity between ``U0(t)^dag U_exact(t)`` and ``exp(-i H_model t)`` at checkpoints.

    The exact propagator is computed in the NV rotating frame (spin-1 and
    restricted to the qubit when ``rwa`` is False, in which case leakage out of
    the qubit is reported). Checkpoints default to ``n_checkpoints`` points up
    to ``duration`` (default: the model's pi time), snapped to multiples of
    the model's stroboscopic period when it has one.
    """
    if n_checkpoints < 1:
        raise ValueError("n_checkpoints must be >= 1")
    built_for = model.details.get("schedule_digest")
    if built_for is not None and built_for != schedule_digest(schedule):
        raise ValueError("the model's toggling frame was built for a different schedule")
    duration = model.pi_time if duration is None else duration
    if not math.isfinite(duration):
        duration = schedule.duration
    duration = min(duration, schedule.duration)
    times = np.linspace(duration / n_checkpoints, duration, n_checkpoints)
    period = model.stroboscopic_period
    if period and period > schedule.duration * (1 + 1e-12):
        period = None  # not a single full period fits: compare at the raw checkpoints
    if period:
        ks = np.maximum(1, np.round(times / period)).astype(int)
        while ks[-1] * period > schedule.duration * (1 + 1e-12):
            ks[-1] -= 1
        ks = np.minimum(ks, ks[-1])
        times = ks * period
    if stroboscopic is None:
        stroboscopic = bool(period) and not schedule.events[1:] and not any(e.t_center > 0 for e in schedule.events) \
            and schedule.nv_detuning is None and any(not d.is_constant for d in schedule.continuous)
    if stroboscopic and period:
        us = stroboscopic_propagators(system, schedule, period, list(ks), FrameSpec.NV, rwa, step_control)
    else:
        us = schedule_propagator(system, schedule, list(times), FrameSpec.NV, rwa, step_control)
    space = model.space
    fids, leaks = [], []
    for t, u in zip(times, us):
        if u.shape[0] != space.dim:
            idx = SpinSpace(system.n_nuclei, 3, system.nv.transition).qubit_indices()
            u = u[np.ix_(idx, idx)]
        sv = np.linalg.svd(u, compute_uv=False)
        leaks.append(float(max(0.0, 1 - sv.min() ** 2)))
        u_int = model.frame_unitary(t).conj().T @ u
        fids.append(subspace_fidelity(model.propagator(t), u_int, space.dims, model.sites))
    leaks_arr = np.array(leaks)
    return ValidationResult(np.asarray(times, float), np.array(fids), leaks_arr, model.report(),
                            bool(np.any(leaks_arr > leakage_threshold)))


# -- noise and coherence -----------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Classical noise source: ``quasi-static`` Gaussian or ``ou`` (Ornstein-Uhlenbeck)."""

    kind: str = "quasi-static"
    sigma: float = 0.0
    tau_c: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("quasi-static", "ou"):
            raise ValueError(f"unknown noise kind {self.kind!r}; expected 'quasi-static' or 'ou'")
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.kind == "ou" and not self.tau_c > 0:
            raise ValueError("OU noise needs tau_c > 0")

    def sample(self, times: np.ndarray, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Paths of shape ``(n, len(times))``; stationary with rms ``sigma``."""
        rng = np.random.default_rng(self.seed) if rng is None else rng
        times = np.asarray(times, dtype=float)
        if self.kind == "quasi-static" or not math.isfinite(self.tau_c):
            return np.repeat(self.sigma * rng.standard_normal((n, 1)), times.size, axis=1)
        out = np.empty((n, times.size))
        x = self.sigma * rng.standard_normal(n)
        prev = times[0] if times.size else 0.0
        for k, t in enumerate(times):
            decay = math.exp(-(t - prev) / self.tau_c)
            x = x * decay + self.sigma * math.sqrt(max(0.0, 1 - decay**2)) * rng.standard_normal(n)
            out[:, k] = x
            prev = t
        return out

    def refine(self, times: np.ndarray, paths: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Insert the midpoint of every interval of ``times`` into ``paths`` (shape ``(n, len(times))``).

        The new values are drawn conditionally on their two neighbours (the
        exact OU bridge), so the refined paths are the coarse ones plus detail.
        """
        times = np.asarray(times, dtype=float)
        mid = 0.5 * (times[:-1] + times[1:])
        out = np.empty((paths.shape[0], 2 * times.size - 1))
        out[:, ::2] = paths
        if self.kind == "quasi-static" or not math.isfinite(self.tau_c):
            out[:, 1::2] = paths[:, :-1]
        else:
            r1 = np.exp(-(mid - times[:-1]) / self.tau_c)
            r2 = np.exp(-(times[1:] - mid) / self.tau_c)
            r = r1 * r2
            den = np.maximum(1 - r**2, 1e-300)
            mean = (r1 * (1 - r2**2) * paths[:, :-1] + r2 * (1 - r1**2) * paths[:, 1:]) / den
            std = self.sigma * np.sqrt(np.maximum(0.0, (1 - r1**2) * (1 - r2**2) / den))
            out[:, 1::2] = mean + std * rng.standard_normal(mean.shape)
        return _interleave(times, mid), out


def _interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.size + b.size)
    out[::2], out[1::2] = a, b
    return out


def _column(paths: np.ndarray, k: int) -> np.ndarray:
    """Per-realisation value of step ``k`` shaped for broadcasting (quasi-static paths have one column)."""
    return paths[:, k if paths.shape[1] > 1 else 0, None, None]


def _noise_channels(noise, n_drives: int) -> dict[str, NoiseModel]:
    if isinstance(noise, NoiseModel):
        return {"delta": noise}
    channels = dict(noise)
    for name in channels:
        if name != "delta" and not (name.startswith("xi") and name[2:].isdigit() and 1 <= int(name[2:]) <= n_drives):
            raise ValueError(f"unknown noise channel {name!r}; use 'delta' or 'xi1'..'xi{n_drives}'")
    return channels


def partial_trace_nv(rho: np.ndarray, space: SpinSpace) -> np.ndarray:
    """Reduce ``(..., d, d)`` density matrices to the NV (qubit) factor."""
    nb = space.dim // space.nv_dim
    r = rho.reshape(rho.shape[:-2] + (space.nv_dim, nb, space.nv_dim, nb))
    return np.einsum("...iaja->...ij", r)


def fit_decay(times: np.ndarray, curve: np.ndarray) -> dict:
    """Model-free 1/e time plus a stretched-exponential fit ``C0 exp(-(t/T)^p)``."""
    from scipy.optimize import curve_fit

    times = np.asarray(times, float)
    curve = np.asarray(curve, float)
    c0 = curve[0]
    out = {"T2": None, "T2_status": "unavailable", "fit_T": None, "fit_p": None, "fit_residual": None}
    if c0 <= 0:
        return out
    if np.max(np.abs(curve - c0)) < 1e-9 * max(1.0, abs(c0)):
        out.update(T2=math.inf, T2_status="no decay")
        return out
    below = np.nonzero(curve < c0 / math.e)[0]
    if below.size:
        k = below[0]
        t0, t1, y0, y1 = times[k - 1], times[k], curve[k - 1], curve[k]
        out["T2"] = float(t0 + (c0 / math.e - y0) * (t1 - t0) / (y1 - y0))
        out["T2_status"] = "1/e crossing"
    else:
        out["T2_status"] = "1/e not reached within the simulated window"
    try:
        guess = out["T2"] or times[-1]
        popt, _ = curve_fit(lambda t, T, p: c0 * np.exp(-np.abs(t / T) ** p), times, curve,
                            p0=(guess, 2.0), bounds=([1e-12, 0.1], [np.inf, 10.0]), maxfev=5000)
        resid = curve - c0 * np.exp(-np.abs(times / popt[0]) ** popt[1])
        out.update(fit_T=float(popt[0]), fit_p=float(popt[1]), fit_residual=float(np.sqrt(np.mean(resid**2))))
    except (RuntimeError, ValueError) as exc:
        out["fit_error"] = str(exc)
    return out


def coherence_decay(
    system: SpinSystem,
    schedule: ControlSchedule,
    noise,
    n_realizations: int = 100,
    times: Sequence[float] | None = None,
    initial: np.ndarray | None = None,
    basis: np.ndarray | None = None,
    frame: Callable[[float], np.ndarray] | None = None,
    seed: int | None = None,
    steps_per_unit: float | None = None,
    step_control: float = 1e-3,
) -> Trajectory:
    """Monte Carlo ensemble coherence under classical noise.

    ``noise`` is one ``NoiseModel`` (NV detuning ``delta``) or a mapping with
    keys ``delta`` and ``xi<k>`` (relative amplitude error of continuous drive
    ``k``, 1-based). The coherence is ``2 |<b0| rho_I |b1>|`` for the
    ensemble-averaged reduced NV state ``rho_I = V(t)^dag rho V(t)``; ``basis``
    columns give ``b0, b1`` (default ``|m>, |0>``) and ``frame`` gives the 2x2
    ``V(t)`` (default identity). Time steps are doubled until the averaged
    curve changes by less than ``step_control``.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    ham = rotating_frame_hamiltonian(system, FrameSpec.NV, True)
    space = ham.space
    drives = list(schedule.continuous)
    channels = _noise_channels(noise, len(drives))
    times = np.linspace(0, schedule.duration, 201) if times is None else np.asarray(times, float)
    if initial is None:
        initial = product_density(space, nv_state(space, "0"), [None] * system.n_nuclei)
    initial = np.asarray(initial, complex)
    cols0 = initial.reshape(-1, 1) if initial.ndim == 1 else density_columns(initial)
    basis = np.eye(2, dtype=complex) if basis is None else np.asarray(basis, complex)
    pm = space.nv_projector(space.transition)
    events = [e for e in schedule.events if e.width == 0]
    if any(e.width > 0 for e in schedule.events):
        raise ValueError("coherence_decay supports instantaneous pulses only")
    engine = _Engine(ham, replace(schedule, events=()), 1.0)  # sets drives/detuning on ham
    pulse_ops = [(e.t_center, engine.pulse(e)) for e in events]
    rate = ham.max_frequency() + float(np.max(np.abs(ham.static), initial=0.0)) + sum(
        abs(d.envelope.rabi) + abs(d.envelope.depth) for d in drives)
    steps_per_unit = steps_per_unit or max(1.0, 4.0 * rate)

    grid = np.unique(np.concatenate([[0.0], times, [t for t, _ in pulse_ops]]))
    base = [(a, b, max(1, int(math.ceil((b - a) * steps_per_unit)))) for a, b in zip(grid[:-1], grid[1:])]

    def nodes(level: int) -> np.ndarray:
        parts = [a + np.arange(n << level) * (b - a) / (n << level) for a, b, n in base]
        return np.concatenate(parts + [grid[-1:]])

    # noise paths live on the sub-step nodes; each refinement keeps the coarse
    # nodes and draws the new midpoints conditionally, so successive levels
    # integrate the same realisations and the step control can converge
    rng_root = np.random.SeedSequence(seed if seed is not None else [m.seed for m in channels.values()])
    noise_paths = {}
    for (name, model), ss in zip(sorted(channels.items()), rng_root.spawn(len(channels))):
        rng = np.random.default_rng(ss)
        if model.kind == "quasi-static" or not math.isfinite(model.tau_c):
            noise_paths[name] = [model, rng, None, model.sample(np.zeros(1), n_realizations, rng)]
        else:
            t0 = nodes(0)
            noise_paths[name] = [model, rng, t0, model.sample(t0, n_realizations, rng)]

    def step_values(level: int) -> dict[str, np.ndarray]:
        out = {}
        for name, entry in noise_paths.items():
            model, rng, t_nodes, values = entry
            if t_nodes is None:
                out[name] = values
                continue
            while t_nodes.size < nodes(level).size:
                t_nodes, values = model.refine(t_nodes, values, rng)
            entry[2], entry[3] = t_nodes, values
            out[name] = 0.5 * (values[:, :-1] + values[:, 1:])
        return out

    def run(level: int):
        seq = [(a, b, n << level) for a, b, n in base]
        paths = step_values(level)
        state = np.broadcast_to(cols0, (n_realizations,) + cols0.shape).copy()
        samples = []
        sample_times = set(float(t) for t in times)
        pulse_map = {}
        for t, op in pulse_ops:
            pulse_map.setdefault(float(t), []).append(op)
        mid_idx = 0

        def record(t):
            if float(t) in sample_times:
                samples.append((t, state.copy()))

        for op in pulse_map.get(0.0, []):
            state = op @ state
        record(0.0)
        for a, b, n in seq:
            dt = (b - a) / n
            for k in range(n):
                tm = a + (k + 0.5) * dt
                h = np.broadcast_to(ham.static_part(tm), (n_realizations, space.dim, space.dim)).copy()
                if schedule.nv_detuning is not None:
                    h += schedule.nv_detuning(tm) * pm
                if "delta" in paths:
                    h += _column(paths["delta"], mid_idx) * pm
                for i, d in enumerate(drives):
                    if d.start <= tm < d.end:
                        term = ham._drive_term(d, tm)
                        xi = paths.get(f"xi{i + 1}")
                        h += term if xi is None else term * (1 + _column(xi, mid_idx))
                evals, evecs = np.linalg.eigh(h)
                u = (evecs * np.exp(-1j * evals * dt)[:, None, :]) @ np.conj(np.swapaxes(evecs, 1, 2))
                state = u @ state
                mid_idx += 1
            for op in pulse_map.get(float(b), []):
                state = op @ state
            record(b)
        return samples

    def summarize(samples):
        coh, err, sx, sy, sz = [], [], [], [], []
        order = {float(t): i for i, t in enumerate(times)}
        rows = [None] * len(times)
        for t, st in samples:
            rho = st @ np.conj(np.swapaxes(st, 1, 2))
            red = partial_trace_nv(rho, space)
            v = frame(t) if frame is not None else np.eye(2)
            w = v @ basis
            c_r = 2 * np.einsum("i,rij,j->r", w[:, 0].conj(), red, w[:, 1])
            mean = red.mean(axis=0)
            rows[order[float(t)]] = (
                abs(c_r.mean()),
                float(np.std(c_r) / math.sqrt(n_realizations)),
                float(np.real(mean[0, 1] + mean[1, 0])),
                float(np.real(1j * (mean[0, 1] - mean[1, 0]))),
                float(np.real(mean[0, 0] - mean[1, 1])),
            )
        for r in rows:
            coh.append(r[0]); err.append(r[1]); sx.append(r[2]); sy.append(r[3]); sz.append(r[4])  # noqa: E702
        return {k: np.array(v) for k, v in zip(("coherence", "coherence_err", "sx", "sy", "sz"), (coh, err, sx, sy, sz))}

    level = 0
    result = summarize(run(level))
    change = math.inf
    for _ in range(8):
        level += 1
        finer = summarize(run(level))
        change = float(np.max(np.abs(finer["coherence"] - result["coherence"])))
        result = finer
        if change < step_control:
            break
    else:
        raise StepControlError(0.0, schedule.duration, change, step_control)
    fit = fit_decay(times, result["coherence"])
    meta = {
        "system_digest": digest(system),
        "schedule_digest": schedule_digest(schedule),
        "noise": {k: asdict(v) for k, v in channels.items()},
        "n_realizations": n_realizations,
        "seed": seed,
        "steps_per_unit": steps_per_unit * 2**level,
        "step_change": change,
        **fit,
    }
    return Trajectory(times, result, meta)


# -- spectra -----------------------------------------------------------------------


@dataclass(frozen=True)
class Dip:
    index: int
    center: float
    depth: float
    width: float


@dataclass
class Spectrum:
    parameter: str
    grid: np.ndarray
    signal: np.ndarray
    dips: list[Dip]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, float)
        if g.size > 1 and not np.all(np.diff(g) > 0):
            raise ValueError("spectrum grid must be strictly increasing")


def find_dips(grid: np.ndarray, signal: np.ndarray, noise_floor: float = 1e-6) -> list[Dip]:
    """Local minima below ``median - 3 noise_floor``; full width at half depth."""
    grid = np.asarray(grid, float)
    y = np.asarray(signal, float)
    if y.size < 3:
        return []
    baseline = float(np.median(y))
    threshold = baseline - 3 * noise_floor
    dips = []
    for i in range(y.size):
        left = y[i - 1] if i > 0 else math.inf
        right = y[i + 1] if i < y.size - 1 else math.inf
        if not (y[i] < threshold and y[i] <= left and y[i] < right):
            continue
        depth = baseline - y[i]
        half = baseline - depth / 2

        def crossing(step: int) -> float:
            k = i
            while 0 <= k + step < y.size and y[k + step] < half:
                k += step
            if not 0 <= k + step < y.size:
                return grid[k]
            a, b = y[k], y[k + step]
            return float(grid[k] + (half - a) * (grid[k + step] - grid[k]) / (b - a))

        dips.append(Dip(i, float(grid[i]), float(depth), float(crossing(1) - crossing(-1))))
    return dips


SEQUENCE_FAMILIES = {
    "xy8": lambda tau, n: make_xy8(n, tau),
    "cpmg": lambda tau, n: make_cpmg(8 * n, tau),
}


def nmr_spectrum(
    system: SpinSystem,
    tau_grid: Sequence[float],
    n_blocks: int,
    family: str | Callable[[float, int], ControlSchedule] = "xy8",
    readout: str = "P0",
    noise_floor: float = 1e-6,
    step_control: float = 1e-8,
) -> Spectrum:
    """Ramsey-type DD spectrum: ``pi/2_x`` -> sequence -> ``pi/2_{-x}`` -> readout.

    ``P0`` is the final ``|0>`` population (1 without coupling); ``sigma_x``
    is ``<sigma_x>`` before the closing pulse. Nuclei start maximally mixed.
    """
    if readout not in ("P0", "sigma_x"):
        raise ValueError("readout must be 'P0' or 'sigma_x'")
    tau_grid = np.asarray(tau_grid, float)
    if tau_grid.size == 0 or np.any(tau_grid <= 0) or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau_grid must be positive and strictly increasing")
    build = SEQUENCE_FAMILIES[family] if isinstance(family, str) else family
    ham = rotating_frame_hamiltonian(system, FrameSpec.NV, True)
    space = ham.space
    rho0 = product_density(space, nv_state(space, "0"), [None] * system.n_nuclei)
    open_u = nv_pulse_unitary(space, math.pi / 2, 0.0)
    close_u = nv_pulse_unitary(space, math.pi / 2, math.pi)
    cols0 = open_u @ density_columns(rho0)
    obs = space.nv_projector(0) if readout == "P0" else space.sigma("x")
    signal = []
    for tau in tau_grid:
        block = build(float(tau), 1)
        periodic = isinstance(family, str) and not block.continuous and not block.finite_width
        if periodic:
            u_block = _Engine(rotating_frame_hamiltonian(system, FrameSpec.NV, True), block, step_control).run(
                space.identity(), [block.duration])[0]
            u = np.linalg.matrix_power(u_block, n_blocks)
        else:
            sched = build(float(tau), n_blocks)
            u = schedule_propagator(system, sched, step_control=step_control)
        cols = u @ cols0
        if readout == "P0":
            cols = close_u @ cols
        signal.append(expectation(obs, cols))
    signal = np.array(signal)
    dips = find_dips(tau_grid, signal if readout == "P0" else -np.abs(signal) + 1, noise_floor)
    meta = {"family": family if isinstance(family, str) else "custom", "n_blocks": n_blocks, "readout": readout,
            "system_digest": digest(system)}
    return Spectrum("tau", tau_grid, signal, dips, meta)


def dd_signal_vs_blocks(
    system: SpinSystem,
    tau: float,
    block_counts: Sequence[int],
    family: str = "xy8",
    readout: str = "P0",
    step_control: float = 1e-8,
) -> np.ndarray:
    """The ``nmr_spectrum`` signal at one spacing ``tau`` for each number of blocks.

    Uses one exact block propagator and its integer powers, so the cost does
    not grow with the number of blocks.
    """
    if readout not in ("P0", "sigma_x"):
        raise ValueError("readout must be 'P0' or 'sigma_x'")
    counts = [int(n) for n in block_counts]
    if any(n < 0 for n in counts):
        raise ValueError("block counts must be non-negative")
    block = SEQUENCE_FAMILIES[family](float(tau), 1)
    ham = rotating_frame_hamiltonian(system, FrameSpec.NV, True)
    space = ham.space
    rho0 = product_density(space, nv_state(space, "0"), [None] * system.n_nuclei)
    cols0 = nv_pulse_unitary(space, math.pi / 2, 0.0) @ density_columns(rho0)
    close_u = nv_pulse_unitary(space, math.pi / 2, math.pi)
    obs = space.nv_projector(0) if readout == "P0" else space.sigma("x")
    u_block = _Engine(ham, block, step_control).run(space.identity(), [block.duration])[0]
    out = []
    for n in counts:
        cols = np.linalg.matrix_power(u_block, n) @ cols0
        if readout == "P0":
            cols = close_u @ cols
        out.append(expectation(obs, cols))
    return np.array(out)


# -- polarization transfer -------------------------------------------------------------


def polarization_transfer(
    system: SpinSystem,
    schedules: ControlSchedule | Sequence[ControlSchedule],
    cycles: int,
    repolarize: bool = True,
    reset_fidelity: float = 1.0,
    initial: np.ndarray | None = None,
    step_control: float = 1e-8,
) -> Trajectory:
    """Repeated transfer cycles; the schedule list is cycled (``cycle k`` uses ``schedules[k % len]``).

    After each cycle the NV is optionally reset to ``|0>`` with probability
    ``reset_fidelity`` (remainder in ``|m>``), leaving the nuclei untouched.
    Recorded after every cycle: ``bath = sum_j <w^_j . I_j>``, per-nucleus
    ``Iw_j`` and lab ``Iz_j``, and ``P0``. Index 0 is the initial state.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if not 0 <= reset_fidelity <= 1:
        raise ValueError("reset_fidelity must lie in [0, 1]")
    schedules = [schedules] if isinstance(schedules, ControlSchedule) else list(schedules)
    if not schedules:
        raise ValueError("at least one schedule is required")
    space = SpinSpace(system.n_nuclei, 2, system.nv.transition)
    rho = product_density(space, nv_state(space, "0"), [None] * system.n_nuclei) if initial is None else initial
    rho = np.asarray(rho, complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    cache: dict[int, np.ndarray] = {}
    obs = standard_observables(system, space)
    nb = space.dim // 2
    reset_nv = np.diag([1 - reset_fidelity, reset_fidelity]).astype(complex)

    def measure(r):
        vals = {k: float(np.real(np.trace(op @ r))) for k, op in obs.items()}
        vals["bath"] = sum(vals[f"Iw_{j}"] for j in range(system.n_nuclei))
        return vals

    rows = [measure(rho)]
    times = [0.0]
    for c in range(cycles):
        idx = c % len(schedules)
        s = schedules[idx]
        if idx not in cache:
            cache[idx] = schedule_propagator(system, s, step_control=step_control) if s.duration > 0 or s.events \
                else space.identity()
        u = cache[idx]
        rho = u @ rho @ u.conj().T
        if repolarize:
            nuc = np.einsum("iaib->ab", rho.reshape(2, nb, 2, nb))
            rho = np.kron(reset_nv, nuc)
        rows.append(measure(rho))
        times.append(times[-1] + s.duration)
    series = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    meta = {"system_digest": digest(system), "schedule_digests": [schedule_digest(s) for s in schedules],
            "repolarize": repolarize, "reset_fidelity": reset_fidelity, "cycles": cycles,
            "max_bath": 0.5 * system.n_nuclei}
    return Trajectory(np.array(times), series, meta)


# -- fitting -------------------------------------------------------------------------


def fit_sin2_rate(times: np.ndarray, signal: np.ndarray, g_max: float | None = None) -> dict:
    """Fit ``y = a sin^2(g t) + c`` and return ``g`` (population-exchange angular rate is ``2 g``)."""
    from scipy.optimize import curve_fit

    t = np.asarray(times, float)
    y = np.asarray(signal, float)
    g_max = g_max or math.pi / max(np.min(np.diff(t)), 1e-300) / 2
    gs = np.linspace(g_max / 2000, g_max, 4000)
    best = None
    for g in gs:
        basis = np.column_stack([np.sin(g * t) ** 2, np.ones_like(t)])
        coef, res, *_ = np.linalg.lstsq(basis, y, rcond=None)
        r = float(np.sum((basis @ coef - y) ** 2))
        if best is None or r < best[0]:
            best = (r, g, coef)
    _, g0, (a0, c0) = best
    model = lambda tt, a, g, c: a * np.sin(g * tt) ** 2 + c  # noqa: E731
    popt, _ = curve_fit(model, t, y, p0=(a0, g0, c0), maxfev=20000)
    resid = y - model(t, *popt)
    return {"amplitude": float(popt[0]), "g": float(abs(popt[1])), "offset": float(popt[2]),
            "residual": float(np.sqrt(np.mean(resid**2)))}


# -- scans and output ------------------------------------------------------------------


def point_seed(master_seed: int, point) -> np.random.SeedSequence:
    """Per-point seed from the master seed and the point's canonical identity.

    The identity is a digest of the point value, so a point keeps its stream
    when the grid is reordered.
    """
    key = int(digest(point)[:16], 16)
    return np.random.SeedSequence([int(master_seed), key])


@dataclass
class ScanResult:
    points: list
    results: list
    errors: dict[int, str]
    seeds: list[int]

    def rows(self) -> list[dict]:
        out = []
        for p, r in zip(self.points, self.results):
            row = dict(p) if isinstance(p, Mapping) else {"value": p}
            if isinstance(r, Mapping):
                row.update(r)
            elif r is not None:
                row["result"] = r
            out.append(row)
        return out


def scan(
    fn: Callable[[object, np.random.Generator], object],
    grid: Sequence,
    master_seed: int = 0,
    threads: int = 1,
) -> ScanResult:
    """Evaluate ``fn(point, rng)`` over ``grid``; failures are recorded and the scan continues."""
    grid = list(grid)
    if not grid:
        raise ValueError("scan grid is empty")
    seeds = [point_seed(master_seed, p) for p in grid]

    def one(i):
        try:
            return fn(grid[i], np.random.default_rng(seeds[i])), None
        except Exception as exc:  # recorded per point
            return None, f"{type(exc).__name__}: {exc}"

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, range(len(grid))))
    else:
        outs = [one(i) for i in range(len(grid))]
    errors = {i: e for i, (_, e) in enumerate(outs) if e is not None}
    return ScanResult(grid, [r for r, _ in outs], errors, [int(s.generate_state(1)[0]) for s in seeds])


def format_number(x) -> str:
    """Shortest round-trip decimal text for floats; ints verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def to_csv(columns: Sequence[str], rows: Sequence[Mapping]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_number(r.get(c, "")) if r.get(c) is not None else "" for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


def to_result_document(doc: Mapping) -> str:
    """Structured result text (JSON; floats in shortest round-trip form, ``Infinity``/``NaN`` allowed)."""
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"
