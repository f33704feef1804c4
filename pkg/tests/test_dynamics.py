import math

import numpy as np
import pytest

from nvdd import control as ctl
from nvdd import dynamics as dy
from nvdd import effective as ef
from nvdd import spincore as sc
from nvdd.control import ControlSchedule, PulseEvent
from nvdd.system import NVCenter, Nucleus, SpinSystem

BZ = 0.09


def carbon(site=(1.2, 0.6, 1.0), bz=BZ, D=None):
    nv = NVCenter(bz) if D is None else NVCenter(bz, D=D)
    return SpinSystem(nv, (Nucleus(site),))


def start_state(system, frame, rwa, nv="0", nuc="z+"):
    space = dy.frame_hamiltonian(system, frame, rwa).space
    return dy.product_state(space, dy.nv_state(space, nv), [dy.nucleus_state(system, 0, nuc)])


# -- frames ---------------------------------------------------------------------------


def test_lab_and_rotating_frames_agree_on_frame_invariant_observables():
    """Populations and nuclear Iz commute with the NV frame generator, so they must match
    between the lab frame and the full (non-RWA) NV rotating frame."""
    system = carbon(site=(0.6, 0.3, 0.5))
    s = ControlSchedule(0.1, (PulseEvent(0.03, math.pi / 2), PulseEvent(0.07, math.pi, math.pi / 2)))
    times = np.linspace(0, s.duration, 5)
    lab = dy.evolve(system, s, start_state(system, "lab", False), times, frame="lab", rwa=False)
    rot = dy.evolve(system, s, start_state(system, "nv", False), times, frame="nv", rwa=False)
    for key in ("P0", "Pm", "Iz_0"):
        assert np.max(np.abs(lab[key] - rot[key])) < 1e-6
    assert lab["P0"][-1] == pytest.approx(0.5, abs=1e-4)


def test_rwa_error_shrinks_with_zero_field_splitting():
    s = ControlSchedule(4.0, (PulseEvent(0.0, math.pi / 2),))
    times = np.linspace(0, 4.0, 41)
    errors = []
    for D in (2870.0, 5740.0, 11480.0):
        system = carbon(site=(0.6, 0.3, 0.5), D=2 * math.pi * D)
        lab = dy.evolve(system, s, start_state(system, "lab", False), times, frame="lab", rwa=False)
        rwa = dy.evolve(system, s, start_state(system, "nv", True), times, frame="nv", rwa=True)
        errors.append(np.max(np.abs(lab["Iz_0"] - rwa["Iz_0"])))
    assert errors[0] < 1e-6
    assert errors[0] > errors[1] > errors[2]


def test_lab_frame_has_no_rwa():
    with pytest.raises(ValueError, match="rotating-wave"):
        dy.frame_hamiltonian(carbon(), "lab", True)


def test_norm_conservation():
    system = SpinSystem(NVCenter(BZ), (Nucleus((1.2, 0.6, 1.0)), Nucleus((-0.9, 0.4, 0.7))))
    space = dy.frame_hamiltonian(system).space
    psi = dy.product_state(space, dy.nv_state(space, "+"), [dy.nucleus_state(system, j, "z+") for j in range(2)])
    s = ctl.make_hh(system.decomposition(0).omega, 20.0, prepare=None)
    tr = dy.evolve(system, s, psi, np.linspace(0, 20.0, 11))
    assert np.max(np.abs(tr["norm"] - 1)) < 1e-9


def test_free_evolution_keeps_sigma_z_and_pi_pulse_flips():
    system = carbon()
    space = dy.frame_hamiltonian(system).space
    psi = dy.product_state(space, dy.nv_state(space, "m"), [dy.nucleus_state(system, 0, "w+")])
    tr = dy.evolve(system, ControlSchedule(5.0), psi, np.linspace(0, 5, 6))
    assert np.allclose(tr["sz"], 1.0, atol=1e-12)
    psi0 = dy.product_state(space, dy.nv_state(space, "0"), [dy.nucleus_state(system, 0, "w+")])
    flip = ControlSchedule(1.0, (PulseEvent(0.5),))
    tr = dy.evolve(system, flip, psi0, [0.0, 1.0])
    assert tr["Pm"][-1] == pytest.approx(1.0, abs=1e-12)


def test_evolve_input_validation():
    system = carbon()
    with pytest.raises(ValueError, match="dimension"):
        dy.evolve(system, ControlSchedule(1.0), np.ones(3) / math.sqrt(3))
    with pytest.raises(ValueError, match="normalised"):
        dy.evolve(system, ControlSchedule(1.0), np.ones(4))


def test_density_matrix_and_state_vector_agree():
    system = carbon()
    space = dy.frame_hamiltonian(system).space
    psi = dy.product_state(space, dy.nv_state(space, "+"), [dy.nucleus_state(system, 0, "up")])
    s = ctl.make_xy8(2, math.pi / system.decomposition(0).omega)
    a = dy.evolve(system, s, psi, [0, s.duration])
    b = dy.evolve(system, s, np.outer(psi, psi.conj()), [0, s.duration])
    for key in ("sx", "sy", "Iz_0"):
        assert a[key] == pytest.approx(b[key], abs=1e-12)


def test_step_halving_convergence_for_modulated_drive():
    system = carbon()
    w = system.decomposition(0).omega
    s = ctl.make_modulated_rabi(0.7 * w, 0.3 * w, 0.3 * w, 3.0, prepare=None)
    space = dy.frame_hamiltonian(system).space
    psi = dy.product_state(space, dy.nv_state(space, "-"), [dy.nucleus_state(system, 0, "up")])
    coarse = dy.evolve(system, s, psi, [3.0], step_control=1e-5)
    fine = dy.evolve(system, s, psi, [3.0], step_control=1e-10)
    assert fine.metadata["max_step_error"] <= 1e-10
    assert fine.metadata["steps"] > coarse.metadata["steps"]
    assert np.max(np.abs(coarse["sx"] - fine["sx"])) < 1e-4


# -- noise ------------------------------------------------------------------------------


def test_quasi_static_free_induction_decay_is_gaussian():
    system = SpinSystem(NVCenter(BZ))
    space = dy.frame_hamiltonian(system).space
    plus = (dy.nv_state(space, "m") + dy.nv_state(space, "0")) / math.sqrt(2)
    sigma, n = 0.5, 2000
    times = np.linspace(0, 6, 13)
    tr = dy.coherence_decay(system, ControlSchedule(6.0), dy.NoiseModel("quasi-static", sigma, seed=3),
                            n_realizations=n, times=times, initial=np.outer(plus, plus.conj()))
    assert np.max(np.abs(tr["coherence"] - np.exp(-(sigma * times) ** 2 / 2))) < 3 / math.sqrt(n)
    assert tr.metadata["T2"] == pytest.approx(math.sqrt(2) / sigma, rel=0.1)


def test_zero_noise_means_no_decay():
    system = SpinSystem(NVCenter(BZ))
    space = dy.frame_hamiltonian(system).space
    plus = (dy.nv_state(space, "m") + dy.nv_state(space, "0")) / math.sqrt(2)
    tr = dy.coherence_decay(system, ControlSchedule(3.0), dy.NoiseModel("quasi-static", 0.0),
                            n_realizations=4, times=np.linspace(0, 3, 7), initial=plus)
    assert np.allclose(tr["coherence"], 1.0, atol=1e-12)
    assert tr.metadata["T2"] == math.inf and tr.metadata["T2_status"] == "no decay"


def test_ou_noise_statistics():
    model = dy.NoiseModel("ou", sigma=2.0, tau_c=1.5)
    times = np.linspace(0, 3, 31)
    paths = model.sample(times, 20000, np.random.default_rng(11))
    assert np.std(paths, axis=0) == pytest.approx(np.full(31, 2.0), rel=0.05)
    lag = 10  # 1.0 us
    corr = np.mean(paths[:, :-lag] * paths[:, lag:]) / 4.0
    assert corr == pytest.approx(math.exp(-1.0 / 1.5), abs=0.03)
    frozen = dy.NoiseModel("quasi-static", 1.0).sample(times, 5)
    assert np.all(frozen == frozen[:, :1])


def test_ou_bridge_refinement_keeps_the_process():
    """Refined paths keep the coarse values and remain stationary OU at the new points."""
    model = dy.NoiseModel("ou", sigma=2.0, tau_c=1.5)
    rng = np.random.default_rng(4)
    coarse_t = np.linspace(0, 3, 7)
    coarse = model.sample(coarse_t, 20000, rng)
    t, fine = model.refine(coarse_t, coarse, rng)
    assert t == pytest.approx(np.linspace(0, 3, 13))
    assert np.array_equal(fine[:, ::2], coarse)
    assert np.std(fine, axis=0) == pytest.approx(np.full(13, 2.0), rel=0.05)
    corr = np.mean(fine[:, 1:-1] * fine[:, 2:]) / 4.0  # neighbours 0.25 us apart
    assert corr == pytest.approx(math.exp(-0.25 / 1.5), abs=0.03)


def test_ou_coherence_step_control_converges():
    system = SpinSystem(NVCenter(0.09))
    noise = dy.NoiseModel("ou", 0.2, 3.0)
    tr = dy.coherence_decay(system, ctl.make_hh(1.0, 20.0, prepare=None), noise, 40, np.linspace(0, 20, 21),
                            basis=np.array([[1, 1], [1, -1]]) / math.sqrt(2), seed=9)
    assert tr.metadata["step_change"] < 1e-3
    assert tr["coherence"][-1] < tr["coherence"][0]


def test_noise_model_validation():
    with pytest.raises(ValueError, match="unknown noise kind"):
        dy.NoiseModel("pink", 1.0)
    with pytest.raises(ValueError, match="tau_c"):
        dy.NoiseModel("ou", 1.0, tau_c=0.0)
    with pytest.raises(ValueError, match="non-negative"):
        dy.NoiseModel("quasi-static", -1.0)


# -- spectra and fits ---------------------------------------------------------------------


def test_no_transverse_coupling_no_dip():
    system = carbon(site=(0.0, 0.0, 1.3))
    w = system.decomposition(0).omega
    grid = np.linspace(0.8, 1.2, 41) * math.pi / w
    spec = dy.nmr_spectrum(system, grid, 8, noise_floor=1e-6)
    assert spec.dips == []
    assert np.allclose(spec.signal, 1.0, atol=1e-9)


def test_single_nucleus_dip_position():
    system = carbon()
    w = system.decomposition(0).omega
    grid = np.linspace(0.9, 1.1, 81) * math.pi / w
    spec = dy.nmr_spectrum(system, grid, 16, noise_floor=1e-3)
    assert len(spec.dips) >= 1
    deepest = max(spec.dips, key=lambda d: d.depth)
    assert abs(deepest.center - math.pi / w) <= grid[1] - grid[0]


def test_find_dips_on_synthetic_lorentzian():
    x = np.linspace(-50, 50, 2001)  # wide window: the baseline is the median
    y = 1 - 0.4 / (1 + (x - 1.0) ** 2)
    dips = dy.find_dips(x, y, 1e-3)
    assert len(dips) == 1
    assert dips[0].center == pytest.approx(1.0)
    assert dips[0].width == pytest.approx(2.0, rel=0.05)
    assert dy.find_dips(x, np.ones_like(x)) == []


def test_spectrum_grid_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        dy.nmr_spectrum(carbon(), [0.5, 0.4], 1)
    with pytest.raises(ValueError, match="readout"):
        dy.nmr_spectrum(carbon(), [0.5], 1, readout="P1")


def test_fit_sin2_rate_recovers_rate():
    t = np.linspace(0, 30, 151)
    rng = np.random.default_rng(0)
    y = 0.8 * np.sin(0.17 * t) ** 2 + 0.05 + 1e-3 * rng.standard_normal(t.size)
    fit = dy.fit_sin2_rate(t, y, g_max=1.0)
    assert fit["g"] == pytest.approx(0.17, rel=1e-3)
    assert fit["amplitude"] == pytest.approx(0.8, rel=1e-2)


def test_fit_decay_stretched_exponential():
    t = np.linspace(0, 10, 101)
    fit = dy.fit_decay(t, np.exp(-((t / 4.0) ** 1.5)))
    assert fit["T2"] == pytest.approx(4.0, rel=1e-2)
    assert fit["fit_T"] == pytest.approx(4.0, rel=1e-6) and fit["fit_p"] == pytest.approx(1.5, rel=1e-6)
    short = dy.fit_decay(t[:20], np.exp(-t[:20] / 100))
    assert short["T2"] is None and "not reached" in short["T2_status"]


def test_dd_signal_vs_blocks_matches_spectrum():
    system = carbon()
    tau = math.pi / system.decomposition(0).omega
    direct = dy.nmr_spectrum(system, [tau], 6).signal[0]
    assert dy.dd_signal_vs_blocks(system, tau, [0, 6])[1] == pytest.approx(direct, abs=1e-12)
    assert dy.dd_signal_vs_blocks(system, tau, [0])[0] == pytest.approx(1.0, abs=1e-12)


# -- polarization transfer -------------------------------------------------------------------


def swap_system():
    """One nucleus with an exchange-only schedule is replaced by an ideal swap for these bookkeeping checks."""
    return carbon()


def hh_swap_schedule(system):
    d = system.decomposition(0)
    return ctl.make_hh(d.omega, 2 * math.pi / d.A_perp, prepare=-1)


def test_polarization_transfer_single_cycle_full_transfer():
    system = swap_system()
    tr = dy.polarization_transfer(system, hh_swap_schedule(system), cycles=1)
    assert tr.metadata["max_bath"] == 0.5
    # the initially mixed nucleus picks up (nearly) half a unit of polarisation along w^ (sign by convention)
    assert abs(tr["bath"][1]) == pytest.approx(0.5, abs=0.02)
    assert tr["P0"][1] == pytest.approx(1.0)  # NV reset after the cycle


def test_polarization_transfer_without_reset_reverses():
    system = swap_system()
    tr = dy.polarization_transfer(system, hh_swap_schedule(system), cycles=2, repolarize=False)
    assert abs(tr["bath"][1]) > 0.45
    assert abs(tr["bath"][2]) < 0.05


def test_polarization_zero_duration_cycles_change_nothing():
    system = swap_system()
    tr = dy.polarization_transfer(system, ctl.make_polarization_block(0, 0.3), cycles=3)
    assert np.allclose(tr["bath"], 0.0, atol=1e-14)
    with pytest.raises(ValueError, match="cycles"):
        dy.polarization_transfer(system, ctl.make_polarization_block(0, 0.3), cycles=0)


# -- effective-model validation ------------------------------------------------------------


def test_validation_against_exact_generator_is_perfect():
    system = carbon()
    d = system.decomposition(0)
    s = ctl.make_hh(d.omega, 50.0, prepare=None)
    exact = dict(zip(np.linspace(5, 50, 10).round(12), dy.schedule_propagator(system, s, list(np.linspace(5, 50, 10)))))
    space = dy.frame_hamiltonian(system).space
    model = ef.EffectiveModel("exact", np.zeros((4, 4), complex), space, (0, 1), "exact",
                              lambda t: exact[round(float(t), 12)], {}, 0.0)
    res = dy.validate_effective(system, s, model, duration=50.0, n_checkpoints=10)
    assert np.allclose(res.fidelity, 1.0, atol=1e-12)
    assert not res.leakage_warning


def test_detuned_drive_kills_population_transfer():
    system = carbon()
    d = system.decomposition(0)
    model = ef.effective_hh(system, d.omega)
    t_pi = model.pi_time
    space = model.space
    start = dy.product_state(space, dy.nv_state(space, "-"), [dy.nucleus_state(system, 0, "up")])
    goal = dy.product_state(space, dy.nv_state(space, "+"), [dy.nucleus_state(system, 0, "down")])
    proj = np.outer(goal, goal.conj())

    def transfer(detuning):
        s = ctl.make_hh(d.omega + detuning, t_pi, prepare=None)
        return dy.evolve(system, s, start, [t_pi], observables={"p": proj})["p"][-1]

    assert abs(goal.conj() @ model.propagator(t_pi) @ start) ** 2 == pytest.approx(1.0)
    assert transfer(0.0) > 0.95
    assert transfer(10 * model.coupling_scale) < 0.2


def test_validation_rejects_foreign_schedule():
    system = carbon()
    tau = math.pi / system.decomposition(0).omega
    model = ef.effective_pulsed(system, ctl.make_xy8(4, tau), q=1)
    with pytest.raises(ValueError, match="different schedule"):
        dy.validate_effective(system, ctl.make_xy8(5, tau), model)


def test_subspace_fidelity_ignores_spectator_unitaries():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    spectator = sc.propagator((h + h.conj().T) / 2, 1.0)
    u_model = sc.propagator(np.diag([0.3, -0.1, 0.2, 0.5]).astype(complex), 1.0)
    exact = np.kron(u_model, spectator)
    embedded = np.kron(u_model, np.eye(2))  # model propagators live in the full space
    assert dy.subspace_fidelity(embedded, exact, [2, 2, 2], [0, 1]) == pytest.approx(1.0)
    assert dy.subspace_fidelity(embedded, exact, [2, 2, 2], [0, 1, 2]) < 0.999
    assert dy.subspace_fidelity(np.eye(8), np.eye(8), [2, 2, 2], [0, 1, 2]) == pytest.approx(1.0)


# -- scans and determinism ----------------------------------------------------------------------


def noisy_point(point, rng):
    return {"x": point, "y": float(rng.normal()) + point}


def test_scan_is_order_and_thread_independent():
    grid = [0.1, 0.2, 0.3, 0.4, 0.5]
    a = dy.scan(noisy_point, grid, master_seed=9)
    b = dy.scan(noisy_point, list(reversed(grid)), master_seed=9, threads=4)
    by_point = {r["x"]: r["y"] for r in b.results}
    assert all(by_point[r["x"]] == r["y"] for r in a.results)
    assert dy.scan(noisy_point, grid, master_seed=10).results != a.results


def test_one_point_scan_equals_direct_call():
    res = dy.scan(noisy_point, [0.3], master_seed=4)
    direct = noisy_point(0.3, np.random.default_rng(dy.point_seed(4, 0.3)))
    assert res.results[0] == direct


def test_scan_records_failures_and_continues():
    def fn(p, rng):
        if p == 2:
            raise ValueError("bad point")
        return p * 2

    res = dy.scan(fn, [1, 2, 3])
    assert res.results == [2, None, 6]
    assert res.errors == {1: "ValueError: bad point"}
    with pytest.raises(ValueError, match="empty"):
        dy.scan(fn, [])


def test_digests_are_deterministic():
    s1, s2 = carbon(), carbon()
    assert dy.digest(s1) == dy.digest(s2)
    assert dy.digest(s1) != dy.digest(carbon(site=(1.2, 0.6, 1.1)))
    x = ctl.make_xy8(2, 0.4)
    assert dy.schedule_digest(x) == dy.schedule_digest(ctl.make_xy8(2, 0.4))
    assert dy.schedule_digest(x) != dy.schedule_digest(ctl.make_xy8(2, 0.41))


def test_csv_and_result_document_formatting():
    text = dy.to_csv(["a", "b"], [{"a": 0.1, "b": 3}, {"a": True, "b": None}])
    assert text == "a,b\n0.1,3\ntrue,\n"
    doc = dy.to_result_document({"x": np.float64(1.5), "y": np.arange(2), "z": math.inf})
    assert '"x": 1.5' in doc and "Infinity" in doc
