import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvdd import spincore as sc


def random_hermitian(dim, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def taylor_expm(a, terms=40):
    """Independent oracle: scaled-and-squared Taylor series of exp(a)."""
    norm = np.linalg.norm(a, 1)
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    a = a / 2**squarings
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


@pytest.mark.parametrize("spin", [0.5, 1.0])
def test_spin_algebra(spin):
    s = sc.spin_operators(spin)
    assert np.allclose(sc.commutator(s["x"], s["y"]), 1j * s["z"])
    assert np.allclose(sc.commutator(s["y"], s["z"]), 1j * s["x"])
    casimir = s["x"] @ s["x"] + s["y"] @ s["y"] + s["z"] @ s["z"]
    assert np.allclose(casimir, spin * (spin + 1) * np.eye(int(2 * spin + 1)))
    assert np.allclose(s["+"], s["x"] + 1j * s["y"])


def test_spin_one_basis_order():
    s = sc.spin_operators(1.0)
    assert np.allclose(np.diag(s["z"]).real, [1, -1, 0])


def test_unsupported_spin():
    with pytest.raises(ValueError, match="unsupported spin"):
        sc.spin_operators(1.5)


def test_qubit_project_basis():
    sz = sc.spin_operators(1.0)["z"]
    assert np.allclose(sc.qubit_project(sz, 1), np.diag([1, 0]))
    assert np.allclose(sc.qubit_project(sz, -1), np.diag([-1, 0]))
    with pytest.raises(ValueError):
        sc.qubit_project(np.eye(2), 1)


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(2, 8), seed=st.integers(0, 2**32 - 1), t=st.floats(-5, 5))
def test_propagator_matches_taylor_series(dim, seed, t):
    h = random_hermitian(dim, seed)
    assert np.allclose(sc.propagator(h, t), taylor_expm(-1j * h * t), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t1=st.floats(-3, 3), t2=st.floats(-3, 3))
def test_propagator_group_property_and_unitarity(seed, t1, t2):
    h = random_hermitian(6, seed)
    u1, u2 = sc.propagator(h, t1), sc.propagator(h, t2)
    assert sc.is_unitary(u1)
    assert np.allclose(u1 @ u2, sc.propagator(h, t1 + t2), atol=1e-10)
    cached = sc.EigenPropagator(h)
    assert np.allclose(cached(t1), u1, atol=1e-12)


def test_propagator_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        sc.propagator(np.array([[0, 1], [0, 0]], complex), 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_effective_hamiltonian_inverts_propagator(seed):
    h = random_hermitian(4, seed)
    h *= 2.0 / np.max(np.abs(np.linalg.eigvalsh(h)))  # spectrum inside the principal branch for t = 1
    assert np.allclose(sc.effective_hamiltonian(sc.propagator(h, 1.0), 1.0), h, atol=1e-9)


def test_fidelity_ignores_global_phase():
    h = random_hermitian(4, 3)
    u = sc.propagator(h, 0.7)
    assert sc.fidelity(u, np.exp(0.3j) * u) == pytest.approx(1.0)
    assert sc.fidelity(np.eye(2), sc.PAULI_X) == pytest.approx(0.0)
    with pytest.raises(ValueError, match="dimension mismatch"):
        sc.fidelity(np.eye(2), np.eye(3))


def test_embed_and_kron():
    dims = [3, 2, 2]
    op = sc.embed(sc.PAULI_X, 2, dims)
    assert op.shape == (12, 12)
    assert np.allclose(op, sc.kron_all([np.eye(3), np.eye(2), sc.PAULI_X]))
    with pytest.raises(ValueError, match="does not match"):
        sc.embed(sc.PAULI_X, 0, dims)
    with pytest.raises(ValueError, match="out of range"):
        sc.embed(sc.PAULI_X, 3, dims)


def test_pi_pulse_and_trivial_propagators():
    omega = 2.3
    u = sc.propagator(omega / 2 * sc.PAULI_X, np.pi / omega)
    assert np.allclose(u, -1j * sc.PAULI_X)
    assert np.allclose(sc.propagator(np.zeros((3, 3)), 4.2), np.eye(3))


def test_large_random_propagator_unitarity_and_eigenphases():
    h = random_hermitian(16, 99, scale=3.0)
    t = 0.83
    u = sc.propagator(h, t)
    assert np.max(np.abs(u.conj().T @ u - np.eye(16))) < 1e-10
    assert np.max(np.abs(u @ sc.propagator(h, -t) - np.eye(16))) < 1e-10
    phases = np.sort(np.angle(np.linalg.eigvals(u)))
    expected = np.sort(np.angle(np.exp(-1j * np.linalg.eigvalsh(h) * t)))
    assert np.allclose(phases, expected, atol=1e-10)
    assert np.allclose(u, taylor_expm(-1j * h * t), atol=1e-10)


def test_unitarity_at_dimension_256():
    u = sc.propagator(random_hermitian(256, 7), 1.7)
    assert sc.is_unitary(u, 1e-10)


def test_qubit_project_identity_and_sz_convention():
    assert np.allclose(sc.qubit_project(np.eye(3), 1), np.eye(2))
    # Sz restricted to 0<->1 equals (sigma_z + 1)/2
    sz = sc.spin_operators(1.0)["z"]
    assert np.allclose(sc.qubit_project(sz, 1), (sc.PAULI_Z + np.eye(2)) / 2)


def test_embed_commutes_and_preserves_trace_and_spectrum():
    a, b = random_hermitian(2, 1), random_hermitian(3, 2)
    dims = [2, 3, 2]
    ea, eb = sc.embed(a, 0, dims), sc.embed(b, 1, dims)
    assert np.max(np.abs(sc.commutator(ea, eb))) < 1e-14
    assert np.trace(ea) == pytest.approx(np.trace(a) * 6)
    assert np.allclose(sc.embed(sc.PAULI_Z, 0, [2, 2]), np.kron(sc.PAULI_Z, np.eye(2)))
    assert np.allclose(np.unique(np.round(np.linalg.eigvalsh(eb), 12)), np.round(np.linalg.eigvalsh(b), 12))
    assert np.linalg.norm(eb, 2) == pytest.approx(np.linalg.norm(b, 2))


def test_spin_half_commutator_precision():
    s = sc.spin_operators(0.5)
    assert np.allclose(s["z"], np.diag([0.5, -0.5]))
    assert np.max(np.abs(sc.commutator(s["x"], s["y"]) - 1j * s["z"])) < 1e-14
