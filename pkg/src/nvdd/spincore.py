"""
Dense linear algebra for small multi-spin Hilbert spaces.

Operators are plain complex ``numpy`` arrays. Composite spaces are described
by a list of subsystem dimensions (``dims``) whose product is the matrix size.

Basis conventions
-----------------
- spin-1/2: ``(|up>, |down>)`` so that ``Sz = diag(+1/2, -1/2)``.
- spin-1 (NV electron): ``(|1>, |-1>, |0>)``. With this ordering the free NV
  Hamiltonian ``w1 |1><1| + w-1 |-1><-1|`` is diagonal and ``|0>`` sits at zero
  energy. ``NV_INDEX`` maps the magnetic quantum number to the row index.
- NV qubit (two-level subspace ``0 <-> m``): ``(|m>, |0>)`` so that
  ``sigma_z = |m><m| - |0><0|``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

NV_INDEX = {1: 0, -1: 1, 0: 2}

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    unitary: float = 1e-10


TOLERANCES = Tolerances()


def spin_operators(spin: float) -> dict[str, np.ndarray]:
    """Return ``{'x', 'y', 'z', '+', '-'}`` spin matrices for spin 1/2 or 1.

    ``'+'`` and ``'-'`` are the usual ladder operators ``Sx +- i Sy``.
    """
    if np.isclose(spin, 0.5):
        sz = np.diag([0.5, -0.5]).astype(complex)
        sp = np.array([[0, 1], [0, 0]], dtype=complex)
    elif np.isclose(spin, 1.0):
        # order (|1>, |-1>, |0>)
        sz = np.diag([1.0, -1.0, 0.0]).astype(complex)
        sp = np.zeros((3, 3), dtype=complex)
        i1, im1, i0 = NV_INDEX[1], NV_INDEX[-1], NV_INDEX[0]
        sp[i1, i0] = np.sqrt(2)
        sp[i0, im1] = np.sqrt(2)
    else:
        raise ValueError(f"unsupported spin {spin!r}; expected 1/2 or 1")
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    return {"x": sx, "y": sy, "z": sz, "+": sp, "-": sm}


def qubit_project(nv_op: np.ndarray, transition: int = 1) -> np.ndarray:
    """Restrict a spin-1 NV operator to the ``0 <-> transition`` subspace.

    The result is expressed in the qubit basis ``(|m>, |0>)``.
    """
    nv_op = np.asarray(nv_op)
    if nv_op.shape != (3, 3):
        raise ValueError("qubit_project expects a 3x3 spin-1 operator")
    if transition not in (1, -1):
        raise ValueError("transition must be +1 or -1")
    idx = [NV_INDEX[transition], NV_INDEX[0]]
    return nv_op[np.ix_(idx, idx)].astype(complex)


def kron_all(ops) -> np.ndarray:
    return reduce(np.kron, ops)


def embed(op: np.ndarray, site: int, dims: list[int]) -> np.ndarray:
    """Tensor ``op`` at ``site`` with identities on every other subsystem."""
    op = np.asarray(op)
    if not 0 <= site < len(dims):
        raise ValueError(f"site {site} out of range for dims {dims}")
    if op.shape != (dims[site], dims[site]):
        raise ValueError(
            f"operator of shape {op.shape} does not match dims[{site}] = {dims[site]}"
        )
    left = int(np.prod(dims[:site], dtype=int))
    right = int(np.prod(dims[site + 1:], dtype=int))
    out = np.kron(np.eye(left, dtype=complex), op)
    return np.kron(out, np.eye(right, dtype=complex))


def is_hermitian(h: np.ndarray, tol: float | None = None) -> bool:
    tol = TOLERANCES.hermitian if tol is None else tol
    scale = max(1.0, float(np.max(np.abs(h))) if h.size else 1.0)
    return bool(np.max(np.abs(h - h.conj().T), initial=0.0) <= tol * scale)


def is_unitary(u: np.ndarray, tol: float | None = None) -> bool:
    tol = TOLERANCES.unitary if tol is None else tol
    eye = np.eye(u.shape[0])
    return bool(np.max(np.abs(u.conj().T @ u - eye)) <= tol)


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """Exact ``exp(-i H t)`` for Hermitian ``H`` via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("propagator requires a Hermitian matrix")
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T


class EigenPropagator:
    """Cache the eigendecomposition of a static Hamiltonian for repeated steps."""

    def __init__(self, h: np.ndarray):
        h = np.asarray(h, dtype=complex)
        if not is_hermitian(h):
            raise ValueError("EigenPropagator requires a Hermitian matrix")
        self.evals, self.evecs = np.linalg.eigh(h)

    def __call__(self, t: float) -> np.ndarray:
        return (self.evecs * np.exp(-1j * self.evals * t)) @ self.evecs.conj().T


def fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """Global-phase-invariant gate overlap ``|tr(U^dag V)| / d``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(min(1.0, abs(np.trace(u.conj().T @ v)) / u.shape[0]))


def effective_hamiltonian(u: np.ndarray, t: float) -> np.ndarray:
    """Principal-branch generator ``H`` with ``exp(-i H t) = U``.

    Uses the complex Schur form, which is diagonal for normal matrices.
    """
    from scipy.linalg import schur

    tri, z = schur(np.asarray(u, dtype=complex), output="complex")
    phases = np.angle(np.diag(tri))
    return (z * (-phases / t)) @ z.conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a
