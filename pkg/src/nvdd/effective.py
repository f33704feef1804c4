"""
Closed-form effective Hamiltonians and their validity margins.

Every model is expressed on the same Hilbert space as the NV-frame,
qubit-projected simulation (``NV qubit (x) all nuclei``) together with a frame
unitary ``U0(t)``. The model predicts ``U0(t)^dag U(t) ~ exp(-i H t)`` on its
declared sites, with ``U(t)`` the exact propagator.

Conventions
-----------
Nuclear ladder operators are taken about ``e3 = x^_j x y^_j = -w^_j``:
``I+- = I_x^ +- i I_y^`` (standard, unit matrix element). In the half-ladder
convention ``(I_x^ +- i I_y^)/2`` the flip-flop terms read ``(A_perp/2)|+><-|I-``,
which equals ``(A_perp/4)|+><-|I-`` here. The headline ``coupling_scale`` of a
flip-flop model is that half-ladder prefactor, which is also the angular rate
of the resulting population exchange.

Validity margins are ratios that must be large (>= 10 is the usual target)
for the model to hold; ``inf`` means the neglected term is absent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spincore as sc
from .control import ControlSchedule, fourier_coefficient, modulation_function
from .dynamics import schedule_digest
from .system import (
    SpinSpace,
    SpinSystem,
    _nn_terms,
    decompose_hyperfine,
    nuclear_resonance_operator,
    nv_pulse_unitary,
    rf_pulse_unitary,
)

BESSEL_Z_MAX = 50.0
MAX_HARMONIC = 101


@dataclass
class EffectiveModel:
    """Predicted generator ``hamiltonian`` acting on ``sites`` (0 = NV, j+1 = nucleus j)."""

    name: str
    hamiltonian: np.ndarray
    space: SpinSpace
    sites: tuple[int, ...]
    frame: str
    frame_unitary: Callable[[float], np.ndarray]
    validity: dict[str, float]
    coupling_scale: float
    stroboscopic_period: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not sc.is_hermitian(self.hamiltonian):
            raise ValueError("effective Hamiltonian must be Hermitian")

    @property
    def pi_time(self) -> float:
        """``pi / (spectral width)``: the time of one effective pi rotation (inf for a zero model)."""
        evals = np.linalg.eigvalsh(self.hamiltonian)
        width = float(evals[-1] - evals[0])
        return math.inf if width < 1e-15 else math.pi / width

    def propagator(self, t: float) -> np.ndarray:
        return sc.propagator(self.hamiltonian, t)

    @property
    def min_margin(self) -> float:
        return min(self.validity.values(), default=math.inf)

    def report(self) -> dict:
        return {
            "model": self.name,
            "frame": self.frame,
            "sites": list(self.sites),
            "coupling_scale": self.coupling_scale,
            "pi_time": self.pi_time,
            "validity": dict(self.validity),
            **self.details,
        }


# -- Bessel functions ---------------------------------------------------------


def bessel_j(n: int, z: float) -> float:
    """Integer-order Bessel function ``J_n(z)`` for ``|z| < 50``.

    Power series for ``|z| <= 1``; Miller's backward recurrence normalised by
    ``J0 + 2 sum J_2k = 1`` otherwise. Accurate to ~1e-14 absolute.
    """
    if int(n) != n or n < 0:
        raise ValueError("bessel_j needs an integer order n >= 0")
    n = int(n)
    z = float(z)
    if not abs(z) < BESSEL_Z_MAX:
        raise ValueError(f"bessel_j supports |z| < {BESSEL_Z_MAX}, got {z}")
    sign = -1.0 if (z < 0 and n % 2) else 1.0
    z = abs(z)
    if z == 0.0:
        return 1.0 if n == 0 else 0.0
    if z <= 1.0:
        term = (z / 2) ** n / math.factorial(n)
        total = term
        k = 0
        while abs(term) > 1e-18 * max(abs(total), 1e-300):
            k += 1
            term *= -(z / 2) ** 2 / (k * (k + n))
            total += term
        return sign * total
    start = 2 * ((max(n, int(z)) + 30 + int(math.sqrt(40 * max(n, z)))) // 2)
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    result = 0.0
    for k in range(start, 0, -1):
        j_prev = 2 * k / z * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if k - 1 == n:
            result = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2 * j_cur
        if abs(j_cur) > 1e250:  # rescale to avoid overflow
            j_next *= 1e-250
            j_cur *= 1e-250
            result *= 1e-250
            norm *= 1e-250
    norm += j_cur  # J0
    return sign * result / norm


# -- helpers -------------------------------------------------------------------


def _qubit_space(system: SpinSystem) -> SpinSpace:
    return SpinSpace(system.n_nuclei, nv_dim=2, transition=system.nv.transition)


def _nn_norm(system: SpinSystem, space: SpinSpace) -> float:
    if not system.include_nn or system.n_nuclei < 2:
        return 0.0
    return float(np.linalg.norm(_nn_terms(space, system), 2))


def _ratio(num: float, den: float) -> float:
    return math.inf if den == 0 else abs(num) / abs(den)


def _neglect_ratio(detuning: float, strength: float, coupling: float) -> float:
    """Margin of a dropped term of exchange rate ``strength`` rotating at ``detuning``.

    Over one effective pi time (``~ 1/coupling``) such a term does damage of
    order ``strength / max(|detuning|, coupling)``: fast terms average out,
    slow ones act only for the duration of the window.
    """
    return _ratio(max(abs(detuning), abs(coupling)), strength)


def _common_margins(system: SpinSystem, space: SpinSpace, coupling: float, targets: Sequence[int]) -> dict[str, float]:
    margins = {}
    for j in targets:
        dec = decompose_hyperfine(system.nuclei[j], system.nv)
        # hyperfine terms dropped by the secular/rotating-wave step have
        # amplitude up to |A|/4 and rotate at w_j (or faster)
        margins[f"larmor_{j}"] = _ratio(dec.omega, np.linalg.norm(dec.A_vec) / 4)
    if system.include_nn and system.n_nuclei > 1:
        margins["nn"] = _ratio(coupling, _nn_norm(system, space))
    return margins


def _dressed_ops(space: SpinSpace, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """``|+phi><-phi|`` on the qubit embedded, and the dressed-state projector difference ``sigma_phi``."""
    plus = np.array([1, np.exp(-1j * phi)]) / np.sqrt(2)
    minus = np.array([1, -np.exp(-1j * phi)]) / np.sqrt(2)
    return space.nv(np.outer(plus, minus.conj())), space.sigma_phi(phi)


def _ladder(space: SpinSpace, system: SpinSystem, j: int, which: str) -> np.ndarray:
    dec = decompose_hyperfine(system.nuclei[j], system.nv)
    s = 1 if which == "+" else -1
    return space.I(j, dec.axes[0]) + s * 1j * space.I(j, dec.axes[1])


def _nearest(values: Sequence[float], target: float) -> int:
    return int(np.argmin([abs(v - target) for v in values]))


def toggling_frame(system: SpinSystem, schedule: ControlSchedule, space: SpinSpace | None = None) -> Callable[[float], np.ndarray]:
    """``P(t)``: ordered product of the instantaneous pulses applied up to and including ``t``.

    NV pulses are taken as ideal (centre-time) rotations; rf pulses in their
    native nuclear frame, which coincides with the interaction frame.
    """
    space = space or _qubit_space(system)
    times = []
    products = [space.identity()]
    for e in schedule.events:
        if e.target == "nv":
            op = nv_pulse_unitary(space, e.angle, e.phase)
        else:
            op = rf_pulse_unitary(system, space, e.target, e.angle, e.phase)
        products.append(op @ products[-1])
        times.append(e.t_center)
    times_arr = np.array(times)

    def frame(t: float) -> np.ndarray:
        k = int(np.searchsorted(times_arr, t + 1e-12 * max(1.0, abs(t)), side="right"))
        return products[k]

    return frame


def interaction_frame(system: SpinSystem, space: SpinSpace, extra: np.ndarray | None = None,
                      after: Callable[[float], np.ndarray] | None = None) -> Callable[[float], np.ndarray]:
    """``exp(-i (G + extra) t) @ after(t)`` with ``G = -sum w_j w^_j.I_j``."""
    g = nuclear_resonance_operator(space, system)
    if extra is not None:
        g = g + extra
    eig = sc.EigenPropagator(g)
    if after is None:
        return eig
    return lambda t: eig(t) @ after(t)


# -- models ----------------------------------------------------------------------


def effective_pulsed(
    system: SpinSystem,
    schedule: ControlSchedule,
    q: int | None = None,
    u: int = 0,
    parity: str = "cosine",
    tolerance: float | None = None,
) -> EffectiveModel:
    """Filter-function model ``(A_perp/4) sigma_z (f_q I_x^ - f~_q I_y^)`` for nucleus ``u``.

    ``parity`` selects which coefficient is reported as the headline coupling
    (``f_q A_perp/4`` for cosine, ``f~_q A_perp/4`` for sine); both terms are
    always kept in the Hamiltonian.
    """
    if parity not in ("cosine", "sine"):
        raise ValueError("parity must be 'cosine' or 'sine'")
    F = modulation_function(schedule)
    w_T = 2 * math.pi / F.period
    dec = decompose_hyperfine(system.nuclei[u], system.nv)
    if q is None:
        q = max(1, int(round(dec.omega / w_T)))
    f_c = fourier_coefficient(F, q, "cosine")
    f_s = fourier_coefficient(F, q, "sine")
    coupling = abs(f_c if parity == "cosine" else f_s) * dec.A_perp / 4
    tol = tolerance if tolerance is not None else max(coupling / 10, 1e-9 * dec.omega)
    detuning = q * w_T - dec.omega
    if abs(detuning) > tol:
        k_best = max(1, int(round(dec.omega / w_T)))
        raise ValueError(
            f"harmonic q={q} at {q * w_T:.6g} rad/us misses w_{u} = {dec.omega:.6g} rad/us by "
            f"{abs(detuning):.3g} > tolerance {tol:.3g}; nearest harmonic is q={k_best} "
            f"(detuning {abs(k_best * w_T - dec.omega):.3g} rad/us)"
        )
    space = _qubit_space(system)
    sz = space.sigma("z")
    h = (dec.A_perp / 4) * sz @ (f_c * space.I(u, dec.axes[0]) - f_s * space.I(u, dec.axes[1]))

    margins = _common_margins(system, space, coupling, [u])
    margins["resonance"] = _ratio(coupling, detuning)
    # other harmonics of the target and every harmonic of the other nuclei
    cross = math.inf
    for j in range(system.n_nuclei):
        dj = decompose_hyperfine(system.nuclei[j], system.nv)
        for k in range(1, MAX_HARMONIC):
            fk = math.hypot(fourier_coefficient(F, k, "cosine"), fourier_coefficient(F, k, "sine"))
            # parallel coupling at k w_T, and transverse coupling near k w_T = w_j
            # except for the kept resonant term; a sigma_z-conditioned term c sigma_z I
            # turns the two NV branches against each other, so it entangles at 2c
            terms = [(k * w_T, fk * abs(dj.A_par) / 2)]
            if not (j == u and k == q):
                terms.append((k * w_T - dj.omega, fk * dj.A_perp / 2))
            for det, strength in terms:
                if strength > 1e-15:
                    cross = min(cross, _neglect_ratio(det, strength, coupling))
    margins["crosstalk"] = cross
    widths = [e.width for e in schedule.nv_pulses()]
    if any(widths):
        margins["pulse_width"] = _ratio(F.period, max(widths))
    frame = interaction_frame(system, space, after=toggling_frame(system, schedule, space))
    return EffectiveModel(
        "pulsed", h, space, (0, u + 1), "interaction+toggling", frame, margins, coupling, F.period,
        {"q": q, "f_q": f_c, "f_tilde_q": f_s, "period": F.period, "detuning": detuning, "nucleus": u,
         "schedule_digest": schedule_digest(schedule)},
    )


def effective_hh(
    system: SpinSystem,
    Omega: float,
    l: int | None = None,
    phi: float = 0.0,
    tolerance: float | None = None,
) -> EffectiveModel:
    """Hartmann-Hahn flip-flop ``(A_perp/4)(|+phi><-phi| I- + h.c.)`` (``A_perp/2`` with half-ladder ``I-``)."""
    if system.n_nuclei == 0:
        raise ValueError("HH model needs at least one nucleus")
    omegas = system.resonances()
    if l is None:
        l = _nearest(omegas, Omega)
    dec = decompose_hyperfine(system.nuclei[l], system.nv)
    coupling = dec.A_perp / 2
    tol = tolerance if tolerance is not None else max(coupling / 10, 1e-12 * dec.omega)
    if abs(Omega - dec.omega) > tol:
        k = _nearest(omegas, Omega)
        raise ValueError(
            f"no nucleus satisfies the HH condition Omega = w_l within {tol:.3g} rad/us; "
            f"nearest is nucleus {k} with w = {omegas[k]:.6g} rad/us (Omega = {Omega:.6g})"
        )
    space = _qubit_space(system)
    pm, sphi = _dressed_ops(space, phi)
    flip = pm @ _ladder(space, system, l, "-")
    h = (dec.A_perp / 4) * (flip + flip.conj().T)
    margins = _common_margins(system, space, coupling, [l])
    margins["resonance"] = _ratio(coupling, Omega - dec.omega)
    margins["crosstalk"] = min(
        (_neglect_ratio(Omega - omegas[j], system.decomposition(j).A_perp / 2, coupling) for j in range(system.n_nuclei) if j != l),
        default=math.inf,
    )
    frame = interaction_frame(system, space, extra=0.5 * Omega * sphi)
    return EffectiveModel(
        "hh", h, space, (0, l + 1), "interaction+dressed", frame, margins, coupling, None,
        {"nucleus": l, "Omega": Omega, "phi": phi, "detuning": Omega - dec.omega},
    )


def effective_ccd(
    Omega1: float,
    Omega2: float,
    phi: float = -math.pi / 2,
    xi2: float = 0.0,
    xi1: float = 0.0,
    Delta: float = 0.0,
    system: SpinSystem | None = None,
) -> EffectiveModel:
    """Dressed-dressed model of the two-tone drive.

    In the frame rotating with ``(Omega1/2) sigma_x`` the second tone averages to
    ``-(Omega2 (1+xi2)/4) sin(phi) sigma_y``; a relative error ``xi1`` of the
    first tone leaves ``(Omega1 xi1/2) sigma_x``. For ``phi = -pi/2`` this is
    ``(Omega2/4)(1+xi2) sigma_y`` and the ``xi1`` term is dropped (it is
    suppressed when ``|Omega2| >> |Omega1 xi1|``); for any other ``phi`` the
    ``sigma_x`` term is kept.
    """
    space = SpinSpace(system.n_nuclei if system else 0, 2, system.nv.transition if system else 1)
    sy, sx = space.sigma("y"), space.sigma("x")
    h = -(Omega2 * (1 + xi2) / 4) * math.sin(phi) * sy
    simplified = math.isclose(phi, -math.pi / 2, abs_tol=1e-12)
    if not simplified:
        h = h + (Omega1 * xi1 / 2) * sx
    # each margin is (rotation frequency of a neglected term) / (its amplitude):
    # Delta/2 sz rotates at Omega1 in the first dressed frame, the xi1 term at
    # Omega2/2 in the second, and the counter-rotating part of tone 2 (amplitude
    # Omega2/4) at 2 Omega1
    margins = {
        "dressing": _ratio(2 * Omega1, Delta),
        "second_dressing": _ratio(Omega2, Omega1 * xi1) if simplified else math.inf,
        "second_rwa": _ratio(8 * Omega1, Omega2),
    }
    eig = sc.EigenPropagator(0.5 * Omega1 * sx)
    coupling = abs(Omega2 * (1 + xi2) * math.sin(phi)) / 4
    return EffectiveModel(
        "ccd", h, space, (0,), "dressed", eig, margins, coupling, None,
        {"Omega1": Omega1, "Omega2": Omega2, "phi": phi, "xi1": xi1, "xi2": xi2, "Delta": Delta},
    )


def effective_jacobi_anger(
    system: SpinSystem,
    Omega0: float,
    Omega1: float,
    nu: float,
    j: int | None = None,
    phi: float = 0.0,
    tolerance: float | None = None,
) -> EffectiveModel:
    """Sideband flip-flop ``(A_perp/4) J1(z) (i e^{-iz} |+><-| I- + h.c.)`` with ``z = Omega1/nu``.

    Valid at ``Omega0 + nu = w_j``; the frame is the interaction picture of the
    modulated drive, whose phase ``theta(t) = Omega0 t + z (cos(nu t) - 1)``.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if system.n_nuclei == 0:
        raise ValueError("the sideband model needs at least one nucleus")
    omegas = system.resonances()
    if j is None:
        j = _nearest(omegas, Omega0 + nu)
    dec = decompose_hyperfine(system.nuclei[j], system.nv)
    z = Omega1 / nu
    j1 = bessel_j(1, z)
    coupling = abs(dec.A_perp / 2 * j1)
    tol = tolerance if tolerance is not None else max(coupling / 10, 1e-12 * dec.omega)
    if abs(Omega0 + nu - dec.omega) > tol:
        n_best = int(round((dec.omega - Omega0) / nu))
        raise ValueError(
            f"sideband condition Omega0 + nu = w_{j} violated by {abs(Omega0 + nu - dec.omega):.3g} rad/us "
            f"(tolerance {tol:.3g}); nearest sideband is Omega0 + {n_best} nu = {Omega0 + n_best * nu:.6g} "
            f"vs w_{j} = {dec.omega:.6g}"
        )
    space = _qubit_space(system)
    pm, sphi = _dressed_ops(space, phi)
    flip = 1j * np.exp(-1j * z) * pm @ _ladder(space, system, j, "-")
    h = (dec.A_perp / 4) * j1 * (flip + flip.conj().T)

    margins = _common_margins(system, space, coupling, [j])
    margins["resonance"] = _ratio(coupling, Omega0 + nu - dec.omega)
    # neglected sidebands: |+><-| e^{i(Omega0 + n nu)t} against I-+ e^{-+i w t} and the A_par term
    side = math.inf
    for k in range(system.n_nuclei):
        dk = decompose_hyperfine(system.nuclei[k], system.nv)
        for n in range(-40, 41):
            bn = abs(bessel_j(abs(n), z))
            if bn < 1e-15:
                continue
            carrier = Omega0 + n * nu
            # strengths are exchange rates, as for the kept coupling (A_perp / 2) J_1
            terms = [(carrier + dk.omega, dk.A_perp / 2 * bn), (carrier, abs(dk.A_par) * bn)]
            if not (k == j and n == 1):  # the kept resonant term
                terms.append((carrier - dk.omega, dk.A_perp / 2 * bn))
            for det, strength in terms:
                if strength > 1e-15:
                    side = min(side, _neglect_ratio(det, strength, coupling))
    margins["sidebands"] = side
    phase = lambda t: Omega0 * t + z * (np.cos(nu * t) - 1)  # noqa: E731
    g = sc.EigenPropagator(nuclear_resonance_operator(space, system))
    s_evals, s_vecs = np.linalg.eigh(sphi)

    def frame(t: float) -> np.ndarray:
        drive = (s_vecs * np.exp(-0.5j * phase(t) * s_evals)) @ s_vecs.conj().T
        return g(t) @ drive

    return EffectiveModel(
        "jacobi_anger", h, space, (0, j + 1), "interaction+modulated-dressed", frame, margins, coupling,
        2 * math.pi / nu, {"nucleus": j, "z": z, "J1": j1, "Omega0": Omega0, "Omega1": Omega1, "nu": nu},
    )


def effective_parallel(system: SpinSystem, u: int, schedule: ControlSchedule) -> EffectiveModel:
    """Parallel-coupling model ``(A_par/2) sigma_z (w^_u . I_u)`` under synchronised MW + rf pi pulses.

    This is the secular term of ``(sigma_z/2) a_u.I_u``; with ``sigma_z`` and
    ``I_u`` toggled together it survives, while every other coupling averages
    out over a full pulse-pair period.
    """
    rf_targets = {e.target for e in schedule.events if e.target != "nv"}
    if rf_targets and rf_targets != {u}:
        raise ValueError(f"schedule drives rf on nuclei {sorted(rf_targets)}, expected only {u}")
    dec = decompose_hyperfine(system.nuclei[u], system.nv)
    space = _qubit_space(system)
    h = (dec.A_par / 2) * space.sigma("z") @ space.I(u, dec.omega_hat)
    coupling = abs(dec.A_par) / 2
    F = modulation_function(schedule)
    margins = _common_margins(system, space, coupling, range(system.n_nuclei))
    # non-secular target term averages only if w_u * (T/2) is a multiple of 2 pi
    half = F.period / 2
    residual = abs(math.remainder(dec.omega * half, 2 * math.pi))
    margins["sync_phase"] = _ratio(1.0, residual * dec.A_perp / max(coupling, 1e-300)) if dec.A_perp else math.inf
    frame = interaction_frame(system, space, after=toggling_frame(system, schedule, space))
    return EffectiveModel(
        "parallel", h, space, (0, u + 1), "interaction+toggling", frame, margins, coupling, F.period,
        {"nucleus": u, "A_par": dec.A_par, "period": F.period, "periods": schedule.duration / F.period,
         "schedule_digest": schedule_digest(schedule)},
    )
