"""
Physical model of an NV centre coupled to a bath of spin-1/2 nuclei.

Internal units: angular frequency in rad/us, time in us, distance in nm and
field in tesla. Gyromagnetic ratios are signed and given in rad/us/T.

The NV qubit is the ``0 <-> m`` transition with ``m = +1`` or ``-1``. On that
subspace ``Sz = (m/2)(sigma_z + 1)``, so every formula below is written in terms
of the *effective* hyperfine vector ``a_j = m A_j``. For the usual ``m = +1``
choice ``a_j = A_j``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spincore as sc

TWO_PI = 2 * np.pi

# hbar * mu0 / 4pi expressed in rad/us * nm^3 / (rad/us/T)^2
DIPOLAR_CONSTANT = 1.054571817e-8

GAMMA_E = -TWO_PI * 28024.0  # rad/us/T
ZERO_FIELD_SPLITTING = TWO_PI * 2870.0  # rad/us

GYROMAGNETIC = {
    "13C": TWO_PI * 10.7084,
    "1H": TWO_PI * 42.5774,
    "15N": TWO_PI * -4.3156,
    "19F": TWO_PI * 40.0776,
    "29Si": TWO_PI * -8.4655,
}

MIN_DISTANCE = 0.1  # nm
MAX_NUCLEI = 10


class FrameSpec(str, enum.Enum):
    """Reference frames for building Hamiltonians.

    ``LAB``         no frame change.
    ``NV``          rotating with the NV energies ``w1|1><1| + w-1|-1><-1|``.
    ``NV_NUCLEAR``  additionally rotating with the bare nuclear Zeeman terms.
    ``INTERACTION`` NV frame plus the full nuclear resonances ``-sum w_j w^_j . I_j``.
    """

    LAB = "lab"
    NV = "nv"
    NV_NUCLEAR = "nv_nuclear"
    INTERACTION = "interaction"


@dataclass(frozen=True)
class NVCenter:
    Bz: float
    D: float = ZERO_FIELD_SPLITTING
    gamma_e: float = GAMMA_E
    transition: int = 1

    def __post_init__(self):
        if self.transition not in (1, -1):
            raise ValueError("transition must be +1 (0<->1) or -1 (0<->-1)")
        if self.omega_minus <= 0:
            raise ValueError(
                f"w-1 = D - |gamma_e| Bz = {self.omega_minus:.6g} rad/us must be positive"
            )

    @property
    def omega_plus(self) -> float:
        return self.D + abs(self.gamma_e) * self.Bz

    @property
    def omega_minus(self) -> float:
        return self.D - abs(self.gamma_e) * self.Bz

    @property
    def qubit_frequency(self) -> float:
        return self.omega_plus if self.transition == 1 else self.omega_minus


@dataclass(frozen=True)
class Nucleus:
    position: tuple[float, float, float]
    gamma_n: float = GYROMAGNETIC["13C"]
    label: str = "13C"

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if len(pos) != 3:
            raise ValueError("position must be a 3-vector")
        object.__setattr__(self, "position", pos)
        if np.linalg.norm(pos) <= MIN_DISTANCE:
            raise ValueError(
                f"nucleus {self.label!r} at |r| = {np.linalg.norm(pos):.3g} nm violates |r| > {MIN_DISTANCE} nm"
            )


@dataclass(frozen=True)
class SpinSystem:
    nv: NVCenter
    nuclei: tuple[Nucleus, ...] = ()
    include_nn: bool = False
    max_nuclei: int = MAX_NUCLEI

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        if len(self.nuclei) > self.max_nuclei:
            raise ValueError(f"{len(self.nuclei)} nuclei exceeds maximum {self.max_nuclei}")

    @property
    def n_nuclei(self) -> int:
        return len(self.nuclei)

    def effective_hyperfine(self, j: int) -> np.ndarray:
        return self.nv.transition * hyperfine_vector(self.nuclei[j], self.nv)

    def resonances(self) -> list[float]:
        return [nuclear_resonance(n, self.nv)[0] for n in self.nuclei]

    def decomposition(self, j: int) -> "HyperfineDecomposition":
        return decompose_hyperfine(self.nuclei[j], self.nv)


def dipolar_tensor_prefactor(r: np.ndarray, gamma_a: float, gamma_b: float) -> tuple[float, np.ndarray]:
    """Shared dipolar prefactor ``hbar mu0 g_a g_b / (4 pi |r|^3)`` and unit vector."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r)
    if dist <= MIN_DISTANCE:
        raise ValueError(f"separation {dist:.3g} nm violates |r| > {MIN_DISTANCE} nm")
    return DIPOLAR_CONSTANT * gamma_a * gamma_b / dist**3, r / dist


def hyperfine_vector(nucleus: Nucleus, nv: NVCenter) -> np.ndarray:
    """``A_j = k [z - 3 (z.r^) r^]`` with ``k = hbar mu0 gamma_e gamma_n / 4 pi r^3``."""
    k, rhat = dipolar_tensor_prefactor(nucleus.position, nv.gamma_e, nucleus.gamma_n)
    zhat = np.array([0.0, 0.0, 1.0])
    return k * (zhat - 3 * rhat[2] * rhat)


def nuclear_dipolar_coefficient(r_jk, gamma_j: float, gamma_k: float) -> float:
    """Secular coefficient ``b_jk`` multiplying ``IzIz - (I+I- + I-I+)``.

    ``I+-`` here follow the half-ladder convention ``(Ix +- i Iy)/2``.
    """
    k, rhat = dipolar_tensor_prefactor(r_jk, gamma_j, gamma_k)
    return k * (1 - 3 * rhat[2] ** 2)


def nuclear_resonance(nucleus: Nucleus, nv: NVCenter) -> tuple[float, np.ndarray]:
    """Return ``(w_j, w^_j)`` for ``w_vec = gamma_n Bz z - a_j / 2``."""
    a = nv.transition * hyperfine_vector(nucleus, nv)
    w = np.array([0.0, 0.0, nucleus.gamma_n * nv.Bz]) - 0.5 * a
    mag = float(np.linalg.norm(w))
    if mag == 0.0:
        raise ValueError("nuclear resonance vanishes; quantisation axis undefined")
    return mag, w / mag


@dataclass(frozen=True)
class HyperfineDecomposition:
    """Hyperfine vector split along the nuclear quantisation axis.

    ``A_par`` is signed (``a . w^``). ``axes`` is the right-handed triad
    ``(x^_j, y^_j, e3)`` with ``y^_j = -(w^ x a)/A_perp`` and ``e3 = x^ x y^ = -w^``;
    ladder operators used by the effective models are taken about ``e3``.
    """

    A_vec: np.ndarray
    A_perp: float
    A_par: float
    omega: float
    omega_hat: np.ndarray
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]


def decompose_hyperfine(nucleus: Nucleus, nv: NVCenter) -> HyperfineDecomposition:
    a = nv.transition * hyperfine_vector(nucleus, nv)
    omega, what = nuclear_resonance(nucleus, nv)
    a_par = float(a @ what)
    perp = a - a_par * what
    a_perp = float(np.linalg.norm(perp))
    if a_perp > 1e-14 * max(1.0, np.linalg.norm(a)):
        xhat = perp / a_perp
    else:
        # A_perp = 0: any axis orthogonal to w^ is physically equivalent
        a_perp = 0.0
        fallback = np.array([1.0, 0.0, 0.0])
        if abs(fallback @ what) > 0.9:
            fallback = np.array([0.0, 1.0, 0.0])
        xhat = fallback - (fallback @ what) * what
        xhat /= np.linalg.norm(xhat)
    yhat = -np.cross(what, xhat)
    e3 = np.cross(xhat, yhat)
    return HyperfineDecomposition(a, a_perp, a_par, omega, what, (xhat, yhat, e3))


class SpinSpace:
    """Operator factory for ``NV (x) nucleus_0 (x) ... (x) nucleus_{N-1}``.

    ``nv_dim`` is 3 for the full spin-1 or 2 for the projected qubit.
    """

    def __init__(self, n_nuclei: int, nv_dim: int = 2, transition: int = 1):
        if nv_dim not in (2, 3):
            raise ValueError("nv_dim must be 2 (qubit) or 3 (spin-1)")
        self.n_nuclei = n_nuclei
        self.nv_dim = nv_dim
        self.transition = transition
        self.dims = [nv_dim] + [2] * n_nuclei
        self.dim = nv_dim * 2**n_nuclei
        self._half = sc.spin_operators(0.5)
        self._sigma_cache: dict[str, np.ndarray] = {}

    def nv(self, op: np.ndarray) -> np.ndarray:
        return sc.embed(op, 0, self.dims)

    def nuc(self, j: int, op: np.ndarray) -> np.ndarray:
        return sc.embed(op, j + 1, self.dims)

    def I(self, j: int, axis) -> np.ndarray:
        """Spin component ``n . I_j`` for a 3-vector ``axis`` or one of 'x','y','z','+','-'."""
        if isinstance(axis, str):
            return self.nuc(j, self._half[axis])
        axis = np.asarray(axis, dtype=float)
        return self.nuc(j, sum(c * self._half[k] for c, k in zip(axis, "xyz")))

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    # NV-side helpers
    def nv_level(self, m: int) -> int:
        if self.nv_dim == 3:
            return sc.NV_INDEX[m]
        if m == self.transition:
            return 0
        if m == 0:
            return 1
        raise ValueError(f"level {m} is not in the qubit subspace")

    def nv_projector(self, m: int) -> np.ndarray:
        p = np.zeros((self.nv_dim, self.nv_dim), dtype=complex)
        p[self.nv_level(m), self.nv_level(m)] = 1
        return self.nv(p)

    def sigma(self, kind: str) -> np.ndarray:
        """Qubit Pauli operator on ``(|m>, |0>)`` embedded in this space."""
        if kind not in self._sigma_cache:
            self._sigma_cache[kind] = self._build_sigma(kind)
        return self._sigma_cache[kind]

    def _build_sigma(self, kind: str) -> np.ndarray:
        pauli = {"x": sc.PAULI_X, "y": sc.PAULI_Y, "z": sc.PAULI_Z, "1": sc.IDENTITY2}[kind]
        if self.nv_dim == 2:
            return self.nv(pauli)
        full = np.zeros((3, 3), dtype=complex)
        idx = [sc.NV_INDEX[self.transition], sc.NV_INDEX[0]]
        full[np.ix_(idx, idx)] = pauli
        return self.nv(full)

    def sigma_phi(self, phi: float) -> np.ndarray:
        """``|m><0| e^{i phi} + h.c.`` (equal to ``cos(phi) sx - sin(phi) sy``)."""
        return np.cos(phi) * self.sigma("x") - np.sin(phi) * self.sigma("y")

    def raising(self) -> np.ndarray:
        """``|m><0|`` embedded."""
        return (self.sigma("x") + 1j * self.sigma("y")) / 2

    def nv_sz(self) -> np.ndarray:
        if self.nv_dim == 3:
            return self.nv(sc.spin_operators(1)["z"])
        return self.transition * (self.sigma("z") + self.sigma("1")) / 2

    def qubit_indices(self) -> np.ndarray:
        """Indices of the spin-1 space that survive projection onto the qubit."""
        if self.nv_dim != 3:
            return np.arange(self.dim)
        nb = 2**self.n_nuclei
        keep = [sc.NV_INDEX[self.transition], sc.NV_INDEX[0]]
        return np.concatenate([np.arange(k * nb, (k + 1) * nb) for k in keep])


def _nv_nucleus_term(space: SpinSpace, system: SpinSystem, j: int) -> np.ndarray:
    nuc = system.nuclei[j]
    k, rhat = dipolar_tensor_prefactor(nuc.position, system.nv.gamma_e, nuc.gamma_n)
    s = sc.spin_operators(1)
    S = [space.nv(s[c]) for c in "xyz"]
    I = [space.I(j, c) for c in "xyz"]
    s_dot_i = sum(S[c] @ I[c] for c in range(3))
    s_r = sum(rhat[c] * S[c] for c in range(3))
    i_r = sum(rhat[c] * I[c] for c in range(3))
    return k * (s_dot_i - 3 * s_r @ i_r)


def _nn_terms(space: SpinSpace, system: SpinSystem, secular: bool = False) -> np.ndarray:
    h = np.zeros((space.dim, space.dim), dtype=complex)
    nuclei = system.nuclei
    for j in range(len(nuclei)):
        for l in range(j + 1, len(nuclei)):
            r = np.subtract(nuclei[l].position, nuclei[j].position)
            if secular:
                b = nuclear_dipolar_coefficient(r, nuclei[j].gamma_n, nuclei[l].gamma_n)
                ip = lambda n: space.I(n, "+") / 2  # noqa: E731  half-ladder convention
                im = lambda n: space.I(n, "-") / 2  # noqa: E731
                h += b * (space.I(j, "z") @ space.I(l, "z") - (ip(j) @ im(l) + im(j) @ ip(l)))
                continue
            k, rhat = dipolar_tensor_prefactor(r, nuclei[j].gamma_n, nuclei[l].gamma_n)
            Ij = [space.I(j, c) for c in "xyz"]
            Il = [space.I(l, c) for c in "xyz"]
            dot = sum(Ij[c] @ Il[c] for c in range(3))
            h += k * (dot - 3 * sum(rhat[c] * Ij[c] for c in range(3)) @ sum(rhat[c] * Il[c] for c in range(3)))
    return h


def nv_free_hamiltonian(space: SpinSpace, nv: NVCenter) -> np.ndarray:
    if space.nv_dim != 3:
        raise ValueError("the free NV Hamiltonian lives in the spin-1 space")
    return nv.omega_plus * space.nv_projector(1) + nv.omega_minus * space.nv_projector(-1)


def lab_hamiltonian(system: SpinSystem) -> np.ndarray:
    """Static lab-frame Hamiltonian with the full dipolar tensors."""
    space = SpinSpace(system.n_nuclei, nv_dim=3, transition=system.nv.transition)
    h = nv_free_hamiltonian(space, system.nv)
    for j, nuc in enumerate(system.nuclei):
        h = h - nuc.gamma_n * system.nv.Bz * space.I(j, "z")
        h = h + _nv_nucleus_term(space, system, j)
    if system.include_nn:
        h = h + _nn_terms(space, system)
    return h


def nuclear_zeeman(space: SpinSpace, system: SpinSystem) -> np.ndarray:
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for j, nuc in enumerate(system.nuclei):
        h -= nuc.gamma_n * system.nv.Bz * space.I(j, "z")
    return h


def nuclear_resonance_operator(space: SpinSpace, system: SpinSystem, only: Sequence[int] | None = None) -> np.ndarray:
    """``-sum_j w_j w^_j . I_j`` over ``only`` (default all nuclei)."""
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for j in range(system.n_nuclei) if only is None else only:
        w, what = nuclear_resonance(system.nuclei[j], system.nv)
        h -= w * space.I(j, what)
    return h


def secular_part(h: np.ndarray, g: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Keep only matrix elements of ``h`` between degenerate eigenstates of ``g``."""
    evals, evecs = np.linalg.eigh(g)
    ht = evecs.conj().T @ h @ evecs
    scale = max(1.0, float(np.max(np.abs(evals), initial=0.0)))
    mask = np.abs(evals[:, None] - evals[None, :]) <= tol * scale
    return evecs @ (ht * mask) @ evecs.conj().T


def project_to_qubit(op: np.ndarray, space: SpinSpace) -> np.ndarray:
    idx = space.qubit_indices()
    return op[np.ix_(idx, idx)]


def rotating_secular_nv(system: SpinSystem, project: bool = True) -> tuple[SpinSpace, np.ndarray]:
    """Static Hamiltonian in the NV rotating frame after the NV-level RWA.

    With ``project`` the result lives on the qubit, reproducing
    ``-sum w_j w^_j.I_j + (sigma_z/2) sum a_j.I_j + H_nn``.
    """
    full = SpinSpace(system.n_nuclei, nv_dim=3, transition=system.nv.transition)
    g_nv = nv_free_hamiltonian(full, system.nv)
    h = secular_part(lab_hamiltonian(system) - g_nv, g_nv)
    if not project:
        return full, h
    space = SpinSpace(system.n_nuclei, nv_dim=2, transition=system.nv.transition)
    return space, project_to_qubit(h, full)


class _FrameRotation:
    """Apply ``exp(iGt) X exp(-iGt)`` for a fixed Hermitian generator ``G``."""

    def __init__(self, g: np.ndarray):
        self.diagonal = np.allclose(g, np.diag(np.diag(g)))
        if self.diagonal:
            self.evals = np.real(np.diag(g)).copy()
            self.evecs = None
        else:
            self.evals, self.evecs = np.linalg.eigh(g)
        self.gaps = self.evals[:, None] - self.evals[None, :]
        self.span = float(np.ptp(self.evals)) if self.evals.size else 0.0

    def to_eigen(self, x: np.ndarray) -> np.ndarray:
        return x if self.diagonal else self.evecs.conj().T @ x @ self.evecs

    def from_eigen(self, x: np.ndarray) -> np.ndarray:
        return x if self.diagonal else self.evecs @ x @ self.evecs.conj().T

    def rotate_eigen(self, xt: np.ndarray, t: float) -> np.ndarray:
        return self.from_eigen(xt * np.exp(1j * self.gaps * t))

    def unitary(self, t: float) -> np.ndarray:
        """``exp(iGt)``."""
        ph = np.exp(1j * self.evals * t)
        if self.diagonal:
            return np.diag(ph)
        return (self.evecs * ph) @ self.evecs.conj().T


@dataclass
class FrameHamiltonian:
    """Time-dependent Hamiltonian ``H(t)`` in a chosen frame.

    ``offset`` is the frame generator measured relative to the NV rotating frame.
    It is used to move pulses (native to the NV frame) into this frame.
    """

    system: SpinSystem
    frame: FrameSpec
    rwa: bool
    space: SpinSpace
    static: np.ndarray
    drives: list = field(default_factory=list)
    nv_detuning: Callable[[float], float] | None = None
    rotation: _FrameRotation | None = None
    offset: np.ndarray | None = None
    _static_eigen: np.ndarray | None = None
    _drive_ops: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.space.dim

    def static_part(self, t: float) -> np.ndarray:
        if self.rotation is None:
            return self.static
        if self._static_eigen is None:
            self._static_eigen = self.rotation.to_eigen(self.static)
        return self.rotation.rotate_eigen(self._static_eigen, t)

    def _drive_term(self, drive, t: float) -> np.ndarray:
        amp = drive.amplitude(t)
        if self.rwa:
            phase = drive.phase - drive.detuning * (t - 0.0)
            return 0.5 * amp * self.space.sigma_phi(phase)
        # lab-form drive sqrt(2) Omega Sx cos(w_c t - phi), moved into the frame
        key = id(drive)
        if key not in self._drive_ops:
            sx = np.sqrt(2) * self.space.nv(sc.spin_operators(1)["x"])
            self._drive_ops[key] = sx if self.rotation is None else self.rotation.to_eigen(sx)
        carrier = self.system.nv.qubit_frequency + drive.detuning
        scalar = amp * np.cos(carrier * t - drive.phase)
        op = self._drive_ops[key]
        return scalar * (op if self.rotation is None else self.rotation.rotate_eigen(op, t))

    def __call__(self, t: float) -> np.ndarray:
        h = self.static_part(t)
        for d in self.drives:
            if d.start <= t < d.end:
                h = h + self._drive_term(d, t)
        if self.nv_detuning is not None:
            h = h + self.nv_detuning(t) * self.space.nv_projector(self.system.nv.transition)
        return h

    def is_static(self, drives) -> bool:
        if self.rotation is not None or self.nv_detuning is not None:
            return False
        if not self.rwa and drives:
            return False
        return all(d.is_constant for d in drives)

    def max_frequency(self) -> float:
        f = self.rotation.span if self.rotation is not None else 0.0
        for d in self.drives:
            f = max(f, d.bandwidth + abs(d.detuning))
            if not self.rwa:
                f = max(f, self.system.nv.qubit_frequency + abs(d.detuning))
        return f

    def move_pulse(self, pulse_op: np.ndarray, native_offset: np.ndarray | None, t: float) -> np.ndarray:
        """Express a pulse unitary native to a frame (given by its offset) in this frame."""
        diff = (self.offset if self.offset is not None else 0) - (native_offset if native_offset is not None else 0)
        if np.isscalar(diff) or not np.any(diff):
            return pulse_op
        rot = sc.propagator(diff, -t)  # exp(+i diff t)
        return rot @ pulse_op @ rot.conj().T


def rotating_frame_hamiltonian(
    system: SpinSystem,
    frame: FrameSpec | str,
    rwa: bool = True,
    drives: Sequence = (),
    nv_detuning: Callable[[float], float] | None = None,
    project: bool | None = None,
) -> FrameHamiltonian:
    """Build ``H(t)`` for ``system`` in ``frame``.

    With ``rwa`` the NV-level rotating-wave approximation is applied (and, in
    ``NV_NUCLEAR``, also the nuclear-Zeeman one, giving the pure-dephasing
    ``a^z Sz Iz`` form). Without ``rwa`` every counter-rotating term is kept and
    the NV stays a spin-1.
    """
    frame = FrameSpec(frame)
    if project is None:
        project = rwa and frame is not FrameSpec.LAB
    if project and not rwa:
        raise ValueError("projection onto the qubit requires rwa=True")
    drives = list(drives)

    if frame is FrameSpec.LAB or not rwa:
        space = SpinSpace(system.n_nuclei, nv_dim=3, transition=system.nv.transition)
        h_lab = lab_hamiltonian(system)
        g_nv = nv_free_hamiltonian(space, system.nv)
        if frame is FrameSpec.LAB:
            if rwa:
                raise ValueError("the lab frame has no rotating-wave approximation")
            return FrameHamiltonian(system, frame, False, space, h_lab, drives, nv_detuning, None, -g_nv)
        extra = {
            FrameSpec.NV: np.zeros_like(g_nv),
            FrameSpec.NV_NUCLEAR: nuclear_zeeman(space, system),
            FrameSpec.INTERACTION: nuclear_resonance_operator(space, system),
        }[frame]
        g = g_nv + extra
        return FrameHamiltonian(system, frame, False, space, h_lab - g, drives, nv_detuning, _FrameRotation(g), extra)

    space, h = rotating_secular_nv(system, project=project)
    if frame is FrameSpec.NV:
        return FrameHamiltonian(system, frame, True, space, h, drives, nv_detuning, None, None)
    if frame is FrameSpec.NV_NUCLEAR:
        g = nuclear_zeeman(space, system)
        return FrameHamiltonian(system, frame, True, space, secular_part(h - g, g), drives, nv_detuning, None, g)
    g = nuclear_resonance_operator(space, system)
    return FrameHamiltonian(system, frame, True, space, h - g, drives, nv_detuning, _FrameRotation(g), g)


def nv_pulse_unitary(space: SpinSpace, angle: float, phase: float) -> np.ndarray:
    """``exp(-i angle/2 sigma_phi)`` on the NV qubit (identity on ``|-m>`` for spin-1)."""
    return sc.propagator(space.sigma_phi(phase), angle / 2)


def rf_pulse_unitary(system: SpinSystem, space: SpinSpace, j: int, angle: float, phase: float) -> np.ndarray:
    """Selective rotation of nucleus ``j`` about ``cos(phase) x^_j + sin(phase) y^_j``.

    Defined in the frame rotating with that nucleus' resonance.
    """
    dec = decompose_hyperfine(system.nuclei[j], system.nv)
    axis = np.cos(phase) * dec.axes[0] + np.sin(phase) * dec.axes[1]
    return sc.propagator(space.I(j, axis), angle)


def rf_native_offset(system: SpinSystem, space: SpinSpace, j: int) -> np.ndarray:
    return nuclear_resonance_operator(space, system, only=[j])
