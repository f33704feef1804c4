"""Acceptance suite: the nine exit criteria of the simulator.

Each test prints a one-line ``PASS``/``FAIL`` verdict with the measured
numbers (visible with ``pytest -s``) and asserts the criterion at its stated
tolerance. Regimes are taken from ``demos/configs`` where one exists, so the
numbers here are the ones the CLI produces.
"""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

from nvdd import cli
from nvdd import control as ctl
from nvdd import dynamics as dy
from nvdd import experiments as ex
from nvdd import spincore as sc
from nvdd.config import load_config
from nvdd.system import NVCenter, Nucleus, SpinSpace, SpinSystem, hyperfine_vector

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"
SITE = (1.2, 0.6, 1.0)
SPECTATOR_DIRECTION = np.array([-0.9, 0.4, 0.7]) / np.linalg.norm([-0.9, 0.4, 0.7])


def verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def standard_system(*extra: Nucleus) -> SpinSystem:
    return SpinSystem(NVCenter(0.09), (Nucleus(SITE),) + extra)


def from_config(name: str, **kw):
    return cli.run_experiment(load_config(CONFIGS / name), **kw)


# -- 1. Fourier exactness ----------------------------------------------------------------------


@pytest.mark.parametrize("family", ["xy8", "cpmg"])
def test_1_fourier_exactness(family):
    tau = 0.519
    s = ctl.make_xy8(4, tau) if family == "xy8" else ctl.make_cpmg(32, tau)
    F = ctl.modulation_function(s)
    errors = {}
    for q in range(1, 10):
        f = math.hypot(ctl.fourier_coefficient(F, q, "cosine"), ctl.fourier_coefficient(F, q, "sine"))
        errors[q] = abs(f - 4 / (q * math.pi)) if q % 2 else abs(f)
    worst = max(errors.values())
    verdict("1", worst < 1e-9, f"{family}: max |f_q - 4/(q pi)| (odd), |f_q| (even) = {worst:.2e}")
    assert worst < 1e-9, errors


# -- 2. spectrum placement -------------------------------------------------------------------


def test_2_spectrum_placement():
    res = from_config("spectrum.yaml")
    s = res.summary
    dec = standard_system().decomposition(0)
    assert dec.omega >= 100 * dec.A_perp
    rate_ratio = s["q3_coupling_fitted"] / s["q1_coupling_fitted"]
    ok = s["q1_offset_steps"] <= 1 and s["q3_offset_steps"] <= 1 and abs(rate_ratio - 1 / 3) <= 0.02 / 3
    verdict("2", ok, f"dip offsets q1 {s['q1_offset_steps']:.2f}, q3 {s['q3_offset_steps']:.2f} steps; "
                     f"rate ratio q3/q1 = {rate_ratio:.4f} (1/3 = 0.3333)")
    assert s["q1_offset_steps"] <= 1
    assert s["q3_offset_steps"] <= 1
    assert rate_ratio == pytest.approx(1 / 3, rel=0.02)


# -- 3. Hartmann-Hahn transfer --------------------------------------------------------------


def two_spin_exchange_rate(system: SpinSystem, rabi: float) -> float:
    """Exchange rate from diagonalising the 4x4 spin-locked Hamiltonian built by hand.

    ``H = (Omega/2) sigma_x - (gamma_n Bz) I_z + |m><m| a.I`` on ``(|m>, |0>) x nucleus``;
    the rate is the gap between the two eigenstates that carry ``|-, up> -> |+, down>``.
    """
    nuc, nv = system.nuclei[0], system.nv
    a = nv.transition * hyperfine_vector(nuc, nv)
    half = [np.array([[0, 1], [1, 0]]) / 2, np.array([[0, -1j], [1j, 0]]) / 2, np.array([[1, 0], [0, -1]]) / 2]
    sx = np.array([[0, 1], [1, 0]], complex)
    pm = np.diag([1.0, 0.0]).astype(complex)
    h = 0.5 * rabi * np.kron(sx, np.eye(2)) - nuc.gamma_n * nv.Bz * np.kron(np.eye(2), half[2])
    h = h + np.kron(pm, sum(ai * op for ai, op in zip(a, half)))
    space = SpinSpace(1, 2, nv.transition)
    initial = dy.product_state(space, dy.nv_state(space, "-"), [dy.nucleus_state(system, 0, "up")])
    final = dy.product_state(space, dy.nv_state(space, "+"), [dy.nucleus_state(system, 0, "down")])
    evals, evecs = np.linalg.eigh(h)
    weights = (final.conj() @ evecs) * (evecs.conj().T @ initial)
    a_, b_ = np.argsort(np.abs(weights))[-2:]
    return abs(evals[a_] - evals[b_])


def test_3_hh_transfer_matches_diagonalisation():
    system = standard_system()
    dec = system.decomposition(0)
    res = ex.hh_transfer_experiment(system)
    oracle = two_spin_exchange_rate(system, dec.omega)
    fitted = res.summary["rate_fitted"]
    detuned = ex.hh_transfer_experiment(system, detuning=10 * dec.A_perp)
    cap = detuned.summary["max_transfer"]
    ok = abs(fitted / oracle - 1) < 0.01 and cap < 0.05
    verdict("3", ok, f"rate {fitted:.6f} vs oracle {oracle:.6f} (A_perp/2 = {dec.A_perp / 2:.6f}); "
                     f"max transfer at +10 A_perp = {cap:.4f}")
    assert fitted == pytest.approx(oracle, rel=0.01)
    assert oracle == pytest.approx(dec.A_perp / 2, rel=0.01)
    assert res.summary["max_transfer"] > 0.95
    assert cap < 0.05


# -- 4. effective versus exact --------------------------------------------------------------


def validate(system, model, params=None):
    return ex.effective_validation_experiment(system, model, params or {}, n_checkpoints=6).summary


@pytest.mark.parametrize("model, params", [("pulsed", {}), ("hh", {}), ("ccd", {"rabi1": 1.0}), ("ja", {})])
def test_4_nominal_regimes_are_faithful(model, params):
    s = validate(standard_system(), model, params)
    ok = s["min_margin"] > 10 and s["min_fidelity"] >= 0.99
    verdict("4", ok, f"{model} nominal: min margin {s['min_margin']:.1f}, fidelity {s['min_fidelity']:.5f}")
    assert s["min_margin"] > 10
    assert s["min_fidelity"] >= 0.99


def coupling_of(model: str) -> float:
    return validate_margins(standard_system(), model, {})[0]


def validate_margins(system, model, params):
    _, m, _ = ex.build_model_and_schedule(system, model, params)
    return m.coupling_scale, m.validity


def spectator_system(model: str, margin: str, target: float) -> SpinSystem:
    """Standard system plus a 13C placed so that ``margin`` equals ``target``."""
    def sys_at(r):
        return standard_system(Nucleus(tuple(r * SPECTATOR_DIRECTION)))

    r = brentq(lambda r: validate_margins(sys_at(r), model, {})[1][margin] - target, 1.0, 30.0, xtol=1e-10)
    return sys_at(r)


PUSHES = [
    ("pulsed", "resonance", lambda: (standard_system(), {"detuning": coupling_of("pulsed")})),
    ("hh", "resonance", lambda: (standard_system(), {"detuning": coupling_of("hh")})),
    ("ja", "resonance", lambda: (standard_system(), {"detuning": coupling_of("ja")})),
    ("ccd", "dressing", lambda: (standard_system(), {"rabi1": 1.0, "delta": 2.0})),
    ("ccd", "second_rwa", lambda: (standard_system(), {"rabi1": 1.0, "rabi2": 8.0})),
    ("ccd", "second_dressing", lambda: (standard_system(), {"rabi1": 1.0, "xi1": 0.1})),
    ("pulsed", "crosstalk", lambda: (spectator_system("pulsed", "crosstalk", 1.0), {})),
    ("hh", "crosstalk", lambda: (spectator_system("hh", "crosstalk", 1.0), {})),
    ("ja", "sidebands", lambda: (spectator_system("ja", "sidebands", 1.0), {})),
]


@pytest.mark.filterwarnings("ignore:CCD expects")
@pytest.mark.parametrize("model, margin, regime", PUSHES, ids=[f"{m}-{k}" for m, k, _ in PUSHES])
def test_4_margin_at_one_breaks_the_model(model, margin, regime):
    system, params = regime()
    s = validate(system, model, params)
    pushed = s[f"margin_{margin}"]
    others = [v for k, v in s.items() if k.startswith("margin_") and k != f"margin_{margin}"]
    ok = pushed == pytest.approx(1.0, rel=1e-6) and s["min_fidelity"] < 0.95
    verdict("4", ok, f"{model} {margin} pushed to {pushed:.3f} (others >= {min(others, default=math.inf):.1f}): "
                     f"fidelity {s['min_fidelity']:.4f}")
    assert pushed == pytest.approx(1.0, rel=1e-6)
    assert all(v > 10 for v in others)
    assert s["min_fidelity"] < 0.95


@pytest.mark.parametrize("model, margin", [("pulsed", "crosstalk"), ("hh", "crosstalk"), ("ja", "sidebands")])
def test_4_spectator_at_ten_is_faithful(model, margin):
    """The same spectator pushed only to 10x keeps the model within 0.99."""
    s = validate(spectator_system(model, margin, 10.0), model)
    ok = s["min_fidelity"] >= 0.99
    verdict("4", ok, f"{model} {margin} at {s[f'margin_{margin}']:.2f}: fidelity {s['min_fidelity']:.4f}")
    assert s["min_margin"] == pytest.approx(10.0, rel=1e-6)
    assert s["min_fidelity"] >= 0.99


# -- 5. Jacobi-Anger scaling ------------------------------------------------------------------


def test_5_jacobi_anger_follows_bessel():
    z_grid = sorted(set(np.round(np.linspace(0.2, 3.0, 15), 3)) | {1.84})
    res = ex.ja_sweep_experiment(standard_system(), z_grid, master_seed=7, threads=4)
    worst = max(r["rel_error"] for r in res.rows)
    z_max = res.summary["z_at_max_ratio"]
    ok = not res.errors and worst < 0.05 and abs(z_max - 1.84) < 0.1
    verdict("5", ok, f"{len(res.rows)} points, max |rate/(A_perp/2) - J1| / J1 = {worst:.4f}, "
                     f"maximum at z = {z_max}")
    assert not res.errors
    assert worst < 0.05
    assert z_max == pytest.approx(1.84, abs=0.1)


# -- 6. CCD robustness --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ccd_result():
    cfg = load_config(CONFIGS / "ccd_coherence.yaml")
    p, n = cfg.params, cfg.params["noise"]
    assert n["delta_rms"] == pytest.approx(0.05 * p["rabi1"]) and n["xi1_rms"] == 0.05
    assert p["rabi2"] == pytest.approx(p["rabi1"] / 10) and p["n_realizations"] == 500
    return ex.ccd_coherence_experiment(cfg.system, p["rabi1"], p["rabi2"], p["phi"], n["delta_rms"], n["xi1_rms"],
                                       n_realizations=p["n_realizations"], seed=cfg.seed, check_zero_error=True)


def test_6_ccd_zero_error_dynamics(ccd_result):
    f = ccd_result.summary["zero_error_fidelity"]
    verdict("6", f >= 0.999, f"error-free CCD vs (Omega2/4) sigma_y: fidelity {f:.6f}")
    assert f >= 0.999


def test_6_ccd_extends_coherence_fivefold(ccd_result):
    s = ccd_result.summary
    lo, hi = s["ratio_band"]
    ok = s["ratio"] >= 5
    verdict("6", ok, f"T2 single {s['T2_single']:.2f} us, CCD {s['T2_ccd']:.2f} us, ratio {s['ratio']:.3f} "
                     f"(Monte Carlo band {lo:.2f}..{hi:.2f}, seed {s['seed']}, n = {s['n_realizations']})")
    assert s["T2_ccd"] > s["T2_single"]
    assert s["ratio"] >= 5


# -- 7. parallel-coupling selectivity ---------------------------------------------------------


def test_7_parallel_coupling_selectivity():
    res = from_config("parallel_coupling.yaml")
    s = res.summary
    assert len({r["nucleus"] for r in res.rows}) == 3
    ok = s["target_phase_error"] < 1e-3 and s["max_nontarget_ratio"] < 1e-3
    verdict("7", ok, f"target phase {s['target_phase']:.6f} vs A_par*2T {s['target_phase_predicted']:.6f} "
                     f"(error {s['target_phase_error']:.2e}); worst non-target ratio {s['max_nontarget_ratio']:.2e}")
    assert s["target_phase_error"] < 1e-3
    assert s["max_nontarget_ratio"] < 1e-3


# -- 8. polarization transfer -----------------------------------------------------------------


def test_8_polarization_builds_monotonically():
    res = from_config("polarization.yaml")
    s = res.summary
    bath = [r["bath"] for r in res.rows]
    targets = [r["target"] for r in res.rows[1:]]
    ok = s["monotone"] and s["final_fraction"] >= 0.8 and s["max_oracle_deviation"] < 1e-2
    verdict("8", ok, f"bath per cycle {np.round(bath, 4).tolist()}, final {s['final_fraction']:.3f} of maximum, "
                     f"oracle deviation {s['max_oracle_deviation']:.1e}")
    assert len(bath) == 6 and set(targets[:3]) == {0, 1, 2}
    assert s["monotone"]
    assert s["final_fraction"] >= 0.8
    assert s["max_oracle_deviation"] < 1e-2


# -- 9. numerics hygiene ----------------------------------------------------------------------


def test_9_norm_and_unitarity():
    system = SpinSystem(NVCenter(0.09), (Nucleus(SITE), Nucleus((-0.9, 0.4, 0.7))))
    dec = system.decomposition(0)
    schedules = [ctl.make_xy8(6, math.pi / dec.omega),
                 ctl.make_hh(dec.omega, 40.0, prepare=-1),
                 ctl.make_modulated_rabi(0.7 * dec.omega, 0.5, 0.3 * dec.omega, 30.0)]
    space = dy.frame_hamiltonian(system).space
    psi = dy.product_state(space, dy.nv_state(space, "0"), [dy.nucleus_state(system, j, "up") for j in range(2)])
    worst_norm = worst_unitary = 0.0
    for s in schedules:
        tr = dy.evolve(system, s, psi, np.linspace(0, s.duration, 25))
        worst_norm = max(worst_norm, float(np.max(np.abs(tr["norm"] - 1))))
        u = dy.schedule_propagator(system, s)
        worst_unitary = max(worst_unitary, float(np.max(np.abs(u.conj().T @ u - np.eye(space.dim)))))
        assert sc.is_unitary(u, 1e-10)
    ok = worst_norm < 1e-9 and worst_unitary < 1e-10
    verdict("9", ok, f"norm drift {worst_norm:.1e}, unitarity defect {worst_unitary:.1e}")
    assert worst_norm < 1e-9
    assert worst_unitary < 1e-10


def noisy_point(z, rng):
    return {"z": z, "draw": float(rng.normal()), "phase_sum": float(np.real(np.sum(np.exp(1j * z * rng.random(8)))))}


def test_9_scan_order_independence_is_bitwise():
    grid = [0.2, 0.7, 1.1, 1.84, 2.5, 3.0]
    forward = dy.scan(noisy_point, grid, master_seed=5, threads=4)
    backward = dy.scan(noisy_point, grid[::-1], master_seed=5, threads=1)
    a = {r["z"]: r for r in forward.results}
    b = {r["z"]: r for r in backward.results}
    ok = a == b
    verdict("9", ok, "permuted, multi-threaded scan reproduces every point bitwise")
    assert a == b


def test_9_seeded_outputs_are_deterministic(tmp_path):
    noise = {"delta": dy.NoiseModel("ou", 0.2, 3.0), "xi1": dy.NoiseModel("quasi-static", 0.05)}
    runs = [dy.coherence_decay(SpinSystem(NVCenter(0.09)), ctl.make_hh(1.0, 20.0, prepare=None), noise, 40,
                               np.linspace(0, 20, 21), seed=9) for _ in range(2)]
    same_ensemble = np.array_equal(runs[0]["coherence"], runs[1]["coherence"])
    cfg = CONFIGS / "ja_sweep.yaml"
    outputs = []
    for k, threads in enumerate(("1", "4")):
        out = tmp_path / str(k)
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
        outputs.append([(out / n).read_bytes() for n in ("ja-sweep.csv", "ja-sweep.result.json")])
    ok = same_ensemble and outputs[0] == outputs[1]
    verdict("9", ok, "noise ensembles and CLI outputs are byte-identical across runs")
    assert same_ensemble
    assert outputs[0] == outputs[1]
