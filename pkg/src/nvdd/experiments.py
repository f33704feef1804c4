"""
Named experiments: one function per phenomenon, shared by the command line
and the test-suite.

Every function takes a ``SpinSystem`` plus plain parameters (internal units:
rad/us, us) and returns an ``ExperimentResult`` holding plot-ready rows, a
flat summary of headline numbers and free-form details. Nothing here reads
files or prints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import control as ctl
from . import dynamics as dy
from . import effective as ef
from . import spincore as sc
from .system import SpinSpace, SpinSystem

TWO_PI = 2 * math.pi


@dataclass
class ExperimentResult:
    kind: str
    columns: list[str]
    rows: list[dict]
    summary: dict
    details: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)


def _qubit_space(system: SpinSystem) -> SpinSpace:
    return SpinSpace(system.n_nuclei, 2, system.nv.transition)


def _check_target(system: SpinSystem, j: int) -> None:
    if not 0 <= j < system.n_nuclei:
        raise ValueError(f"target nucleus {j} does not exist (system has {system.n_nuclei})")


def _dressed_flip_pair(system: SpinSystem, space: SpinSpace, j: int, phi: float):
    """Initial state ``|-phi, up_j>`` (other nuclei mixed) and the projector on ``|+phi, down_j>``."""
    nuclei = [None] * system.n_nuclei
    nuclei[j] = dy.nucleus_state(system, j, "up")
    rho = dy.product_density(space, dy.nv_state(space, "-", phi), nuclei)
    plus = dy.nv_state(space, "+", phi)
    down = dy.nucleus_state(system, j, "down")
    proj = space.nv(np.outer(plus, plus.conj())) @ space.nuc(j, np.outer(down, down.conj()))
    return rho, proj


# -- spectrum -------------------------------------------------------------------


def spectrum_experiment(
    system: SpinSystem,
    tau_grid: Sequence[float],
    n_blocks: int,
    family: str = "xy8",
    readout: str = "P0",
    target: int = 0,
    harmonics: Sequence[int] = (1, 3),
    noise_floor: float = 1e-2,
    rate_blocks: Sequence[int] | None = None,
    step_control: float = 1e-8,
) -> ExperimentResult:
    """DD spectrum over ``tau`` with dips expected at ``T = 2 pi q / w_u`` (``T = 2 tau``).

    With ``rate_blocks`` the signal at each predicted dip is followed against
    the number of blocks and fitted to ``1 - P0 = a sin^2(c t / 2)``; ``c`` is
    the effective ``sigma_z I`` coupling, predicted as ``|f_q| A_perp / 4``.
    """
    _check_target(system, target)
    spec = dy.nmr_spectrum(system, tau_grid, n_blocks, family, readout, noise_floor, step_control)
    grid = spec.grid
    dec = system.decomposition(target)
    rows = [{"tau": float(t), "T": float(2 * t), "signal": float(y)} for t, y in zip(grid, spec.signal)]
    dips = [{"tau": d.center, "T": 2 * d.center, "depth": d.depth, "width": d.width} for d in spec.dips]
    block = dy.SEQUENCE_FAMILIES[family]
    predictions = []
    for q in harmonics:
        tau_q = q * math.pi / dec.omega
        entry = {"q": int(q), "tau_predicted": tau_q, "T_predicted": 2 * tau_q, "in_grid": bool(grid[0] <= tau_q <= grid[-1])}
        if entry["in_grid"] and spec.dips:
            k = int(np.clip(np.searchsorted(grid, tau_q), 1, len(grid) - 1))
            step = float(grid[k] - grid[k - 1])
            nearest = min(spec.dips, key=lambda d: abs(d.center - tau_q))
            entry.update(tau_found=nearest.center, grid_step=step, offset_steps=abs(nearest.center - tau_q) / step)
        F = ctl.modulation_function(block(tau_q, 1))
        f_q = math.hypot(ctl.fourier_coefficient(F, q, "cosine"), ctl.fourier_coefficient(F, q, "sine"))
        entry["coupling_predicted"] = f_q * dec.A_perp / 4
        if rate_blocks is not None:
            counts = sorted(set(int(n) for n in rate_blocks))
            signal = dy.dd_signal_vs_blocks(system, tau_q, counts, family, "P0", step_control)
            times = np.array(counts) * block(tau_q, 1).duration
            fit = dy.fit_sin2_rate(times, 1 - signal, g_max=4 * entry["coupling_predicted"])
            entry.update(coupling_fitted=2 * fit["g"], fit_residual=fit["residual"],
                         rate_blocks=counts, rate_signal=signal.tolist())
        predictions.append(entry)
    summary = {"n_dips": len(dips), "target_omega": dec.omega, "A_perp": dec.A_perp}
    for p in predictions:
        summary[f"q{p['q']}_T_predicted"] = p["T_predicted"]
        if "offset_steps" in p:
            summary[f"q{p['q']}_offset_steps"] = p["offset_steps"]
        if "coupling_fitted" in p:
            summary[f"q{p['q']}_coupling_fitted"] = p["coupling_fitted"]
            summary[f"q{p['q']}_coupling_predicted"] = p["coupling_predicted"]
    return ExperimentResult("spectrum", ["tau", "T", "signal"], rows, summary,
                            {"dips": dips, "harmonics": predictions, **spec.metadata})


# -- Hartmann-Hahn transfer -------------------------------------------------------


def hh_transfer_experiment(
    system: SpinSystem,
    target: int = 0,
    detuning: float = 0.0,
    duration: float | None = None,
    n_points: int = 201,
    phi: float = 0.0,
    step_control: float = 1e-8,
) -> ExperimentResult:
    """Spin-locking at ``Omega = w_l + detuning`` starting from ``|-phi, up_l>``.

    Records the population of ``|+phi, down_l>``; the fitted exchange rate is
    compared with ``A_perp / 2``. Default duration: two full transfers
    (``4 pi / A_perp``).
    """
    _check_target(system, target)
    dec = system.decomposition(target)
    if dec.A_perp == 0:
        raise ValueError(f"nucleus {target} has A_perp = 0: no flip-flop coupling")
    rabi = dec.omega + detuning
    model = ef.effective_hh(system, rabi, l=target, phi=phi, tolerance=abs(detuning) + 1e-12 * dec.omega)
    duration = 2 * TWO_PI / dec.A_perp if duration is None else duration
    schedule = ctl.make_hh(rabi, duration, phi, prepare=None)
    space = _qubit_space(system)
    rho, proj = _dressed_flip_pair(system, space, target, phi)
    times = np.linspace(0, duration, n_points)
    obs = {"P_transfer": proj, f"Iw_{target}": dy.standard_observables(system, space)[f"Iw_{target}"]}
    traj = dy.evolve(system, schedule, rho, times, step_control=step_control, observables=obs)
    p = traj["P_transfer"]
    fit = dy.fit_sin2_rate(times, p, g_max=4 * max(dec.A_perp, abs(detuning)))
    rows = [{"t": float(t), "P_transfer": float(a), f"Iw_{target}": float(b)}
            for t, a, b in zip(times, p, traj[f"Iw_{target}"])]
    summary = {
        "Omega": rabi,
        "detuning": detuning,
        "rate_predicted": dec.A_perp / 2,
        "rate_fitted": 2 * fit["g"],
        "max_transfer": float(np.max(p)),
        "fit_residual": fit["residual"],
        "min_margin": model.min_margin,
    }
    return ExperimentResult("hh-transfer", list(rows[0]), rows, summary,
                            {"model": model.report(), "trajectory": traj.metadata})


# -- CCD coherence ------------------------------------------------------------------


def _t2_band(times, curve, err) -> tuple[float | None, float | None]:
    lo = dy.fit_decay(times, np.maximum(curve - err, 0.0))["T2"]
    hi = dy.fit_decay(times, curve + err)["T2"]
    return lo, hi


def ccd_coherence_experiment(
    system: SpinSystem,
    rabi1: float = 1.0,
    rabi2: float | None = None,
    phi: float = -math.pi / 2,
    delta_rms: float = 0.05,
    xi1_rms: float = 0.05,
    noise_kind: str = "quasi-static",
    tau_c: float = math.inf,
    n_realizations: int = 500,
    single_duration: float | None = None,
    ccd_duration: float | None = None,
    n_points: int = 301,
    seed: int = 0,
    check_zero_error: bool = False,
) -> ExperimentResult:
    """Ensemble 1/e coherence time of a single drive versus the two-tone CCD drive.

    ``delta_rms`` is the detuning noise in rad/us and ``xi1_rms`` the relative
    amplitude noise of the first tone. Both runs use the same seed, so they
    see the same noise realisations. Coherence is measured in the dressed
    basis of each scheme: ``|+-x>`` for the single drive and ``|+-y>`` in the
    frame rotating with ``(Omega1/2) sigma_x`` for CCD. Error bands are the
    1/e times of the curve shifted by its Monte Carlo standard error.
    """
    rabi2 = rabi1 / 10 if rabi2 is None else rabi2
    scale = max(xi1_rms * abs(rabi1), 1e-12)
    single_duration = 7.5 / scale if single_duration is None else single_duration
    ccd_duration = 50.0 / scale if ccd_duration is None else ccd_duration
    noise = {"delta": dy.NoiseModel(noise_kind, delta_rms, tau_c), "xi1": dy.NoiseModel(noise_kind, xi1_rms, tau_c)}
    r2 = 1 / math.sqrt(2)
    x_basis = np.array([[r2, r2], [r2, -r2]], complex)
    y_basis = np.array([[r2, r2], [1j * r2, -1j * r2]], complex)
    sx = np.array([[0, 1], [1, 0]], complex)
    dressing = sc.EigenPropagator(0.5 * rabi1 * sx)

    single = dy.coherence_decay(system, ctl.make_hh(rabi1, single_duration, prepare=None), noise, n_realizations,
                                np.linspace(0, single_duration, n_points), basis=x_basis, seed=seed)
    ccd = dy.coherence_decay(system, ctl.make_ccd(0.0, rabi1, rabi2, phi, ccd_duration), noise, n_realizations,
                             np.linspace(0, ccd_duration, n_points), basis=y_basis, frame=dressing, seed=seed)
    rows = []
    for scheme, tr in (("single", single), ("ccd", ccd)):
        for t, c, e in zip(tr.times, tr["coherence"], tr["coherence_err"]):
            rows.append({"scheme": scheme, "t": float(t), "coherence": float(c), "coherence_err": float(e)})
    s_lo, s_hi = _t2_band(single.times, single["coherence"], single["coherence_err"])
    c_lo, c_hi = _t2_band(ccd.times, ccd["coherence"], ccd["coherence_err"])
    t_single, t_ccd = single.metadata["T2"], ccd.metadata["T2"]
    ratio = t_ccd / t_single if t_single and t_ccd else None
    band = [c_lo / s_hi if c_lo and s_hi else None, c_hi / s_lo if c_hi and s_lo else None]
    summary = {
        "T2_single": t_single, "T2_single_band": [s_lo, s_hi],
        "T2_ccd": t_ccd, "T2_ccd_band": [c_lo, c_hi],
        "ratio": ratio, "ratio_band": band,
        "n_realizations": n_realizations, "seed": seed,
    }
    details = {"single": single.metadata, "ccd": ccd.metadata}
    if check_zero_error:
        model = ef.effective_ccd(rabi1, rabi2, phi)
        free = SpinSystem(system.nv)
        res = dy.validate_effective(free, ctl.make_ccd(0.0, rabi1, rabi2, phi, model.pi_time), model,
                                    n_checkpoints=4, stroboscopic=False, step_control=1e-7)
        summary["zero_error_fidelity"] = res.min_fidelity
    return ExperimentResult("ccd-coherence", ["scheme", "t", "coherence", "coherence_err"], rows, summary, details)


# -- Jacobi-Anger sweep ----------------------------------------------------------------


def ja_point(system: SpinSystem, z: float, target: int = 0, nu_fraction: float = 0.3, phi: float = 0.0,
             transfers: float = 1.5, n_samples: int = 60, step_control: float = 1e-8) -> dict:
    """Fitted flip-flop rate under ``Omega0 - Omega1 sin(nu t)`` with ``Omega1 = z nu``, ``Omega0 + nu = w``.

    The state is sampled stroboscopically (multiples of ``2 pi / nu``) over
    ``transfers`` full transfers of the predicted rate ``A_perp J1(z) / 2``.
    """
    dec = system.decomposition(target)
    nu = nu_fraction * dec.omega
    omega0 = dec.omega - nu
    model = ef.effective_jacobi_anger(system, omega0, z * nu, nu, j=target, phi=phi)
    period = TWO_PI / nu
    n_periods = max(1, int(math.ceil(transfers * model.pi_time / period)))
    stride = max(1, n_periods // n_samples)
    counts = list(range(0, n_periods + 1, stride))
    schedule = ctl.make_modulated_rabi(omega0, z * nu, nu, n_periods * period, phi, prepare=None)
    space = _qubit_space(system)
    rho, proj = _dressed_flip_pair(system, space, target, phi)
    us = dy.stroboscopic_propagators(system, schedule, period, counts, step_control=step_control)
    p = np.array([float(np.real(np.trace(proj @ u @ rho @ u.conj().T))) for u in us])
    times = np.array(counts) * period
    fit = dy.fit_sin2_rate(times, p, g_max=2 * dec.A_perp)
    rate = 2 * fit["g"]
    j1 = ef.bessel_j(1, z)
    ratio = rate / (dec.A_perp / 2)
    return {"z": float(z), "rate": rate, "ratio": ratio, "J1": j1,
            "rel_error": abs(ratio - abs(j1)) / abs(j1) if j1 else math.inf,
            "max_transfer": float(np.max(p)), "fit_residual": fit["residual"], "min_margin": model.min_margin}


def ja_sweep_experiment(
    system: SpinSystem,
    z_grid: Sequence[float],
    target: int = 0,
    nu_fraction: float = 0.3,
    phi: float = 0.0,
    master_seed: int = 0,
    threads: int = 1,
) -> ExperimentResult:
    """Sweep ``z = Omega1/nu`` and compare the fitted rate / (A_perp/2) with ``J1(z)``."""
    _check_target(system, target)
    result = dy.scan(lambda z, rng: ja_point(system, float(z), target, nu_fraction, phi), list(z_grid),
                     master_seed, threads)
    rows = [r for r in result.results if r is not None]
    errors = {str(result.points[i]): e for i, e in result.errors.items()}
    columns = ["z", "rate", "ratio", "J1", "rel_error", "max_transfer", "fit_residual", "min_margin"]
    summary = {
        "points": len(result.points),
        "failed": len(errors),
        "max_rel_error": max((r["rel_error"] for r in rows), default=None),
        "z_at_max_ratio": max(rows, key=lambda r: r["ratio"])["z"] if rows else None,
    }
    return ExperimentResult("ja-sweep", columns, rows, summary, {"seeds": result.seeds}, errors)


# -- parallel coupling ---------------------------------------------------------------------


def _single_site_factor(r: np.ndarray, n_sites: int, j: int) -> np.ndarray:
    """Best product factor on site ``j`` of a unitary ``r`` (operator-Schmidt leading term), made SU(2)."""
    t = r.reshape((2,) * (2 * n_sites))
    order = [j] + [k for k in range(n_sites) if k != j]
    t = t.transpose(order + [n_sites + k for k in order])
    rest = 2 ** (n_sites - 1)
    t = t.reshape(2, rest, 2, rest).transpose(0, 2, 1, 3).reshape(4, rest * rest)
    u, s, _ = np.linalg.svd(t, full_matrices=False)
    a = u[:, 0].reshape(2, 2)
    a = a / np.sqrt(np.linalg.det(a))
    if np.real(np.trace(a)) < 0:
        a = -a
    return a


def rotation_vector(a: np.ndarray) -> np.ndarray:
    """``theta n`` for ``a = exp(-i theta n.sigma/2)`` in SU(2)."""
    paulis = [sc.PAULI_X, sc.PAULI_Y, sc.PAULI_Z]
    c = float(np.clip(np.real(np.trace(a)) / 2, -1.0, 1.0))
    v = np.array([float(np.real(1j * np.trace(a @ p) / 2)) for p in paulis])
    s = float(np.linalg.norm(v))
    if s < 1e-300:
        return np.zeros(3)
    return 2 * math.atan2(s, c) * v / s


def conditional_rotations(u: np.ndarray, space: SpinSpace) -> list[np.ndarray]:
    """Per-nucleus rotation vectors of ``U_00^dag U_mm`` for an NV-block-diagonal ``u``."""
    nb = space.dim // 2
    off = max(np.abs(u[:nb, nb:]).max(), np.abs(u[nb:, :nb]).max())
    if off > 1e-6:
        raise ValueError(f"propagator is not NV-block-diagonal (off-diagonal norm {off:.2g})")
    r = u[nb:, nb:].conj().T @ u[:nb, :nb]
    return [rotation_vector(_single_site_factor(r, space.n_nuclei, j)) for j in range(space.n_nuclei)]


def parallel_coupling_experiment(
    system: SpinSystem,
    target: int = 0,
    multiple: int = 1,
    periods: int = 4,
    step_control: float = 1e-8,
) -> ExperimentResult:
    """Synchronised MW + rf pi pulses with block length ``T = 2 pi m / w_u``.

    One full period is two blocks (``2T``). The NV-conditional rotation of
    each nucleus, ``U_00^dag U_mm`` reduced to that nucleus, is measured after
    every full period; its component along ``w^_j`` is the conditional phase.
    The prediction for the target is ``A_par * 2T`` per period.
    """
    _check_target(system, target)
    if multiple < 1 or periods < 1:
        raise ValueError("multiple and periods must be >= 1")
    dec = system.decomposition(target)
    block = TWO_PI * multiple / dec.omega
    schedule = ctl.make_sync_mw_rf(target, dec.omega, 2 * periods, block)
    model = ef.effective_parallel(system, target, schedule)
    period = 2 * block
    space = _qubit_space(system)
    us = dy.schedule_propagator(system, schedule, [k * period for k in range(1, periods + 1)], step_control=step_control)
    decs = [system.decomposition(j) for j in range(system.n_nuclei)]
    rows = []
    for k, u in enumerate(us, start=1):
        rots = conditional_rotations(u, space)
        for j, v in enumerate(rots):
            rows.append({"periods": k, "nucleus": j, "angle": float(np.linalg.norm(v)),
                         "phase": float(v @ decs[j].omega_hat), "target": j == target})
    first = [r for r in rows if r["periods"] == 1]
    predicted = dec.A_par * period
    target_phase = first[target]["phase"]
    others = [abs(r["phase"]) for r in first if r["nucleus"] != target]
    summary = {
        "period": period,
        "target_phase": target_phase,
        "target_phase_predicted": predicted,
        "target_phase_error": abs(target_phase - predicted),
        "max_nontarget_phase": max(others, default=0.0),
        "max_nontarget_ratio": max(others, default=0.0) / abs(target_phase) if target_phase else math.inf,
        "max_nontarget_angle": max((r["angle"] for r in first if r["nucleus"] != target), default=0.0),
        "min_margin": model.min_margin,
    }
    return ExperimentResult("parallel-coupling", ["periods", "nucleus", "angle", "phase", "target"], rows, summary,
                            {"model": model.report()})


# -- effective-model validation ---------------------------------------------------------


def build_model_and_schedule(system: SpinSystem, model: str, params: dict):
    """Construct an effective model and the exact schedule it describes, lasting ``cycles`` pi times."""
    p = dict(params)
    cycles = float(p.pop("cycles", 1.0))
    if model == "hh":
        j = int(p.pop("target", 0))
        _check_target(system, j)
        dec = system.decomposition(j)
        rabi = dec.omega + float(p.pop("detuning", 0.0))
        m = ef.effective_hh(system, rabi, l=j, phi=float(p.pop("phi", 0.0)),
                            tolerance=abs(rabi - dec.omega) + 1e-12 * dec.omega)
        sched = ctl.make_hh(rabi, cycles * m.pi_time, m.details["phi"], prepare=None)
    elif model == "pulsed":
        j = int(p.pop("target", 0))
        _check_target(system, j)
        q = int(p.pop("q", 1))
        family = p.pop("family", "xy8")
        parity = p.pop("parity", "cosine")
        dec = system.decomposition(j)
        tau = q * math.pi / (dec.omega + float(p.pop("detuning", 0.0)))
        build = dy.SEQUENCE_FAMILIES[family]
        shift = tau / 2 if parity == "sine" else 0.0
        probe = ef.effective_pulsed(system, _shifted(build(tau, 1), shift), q, j, parity, tolerance=math.inf)
        nb = max(1, int(math.ceil(cycles * probe.pi_time / build(tau, 1).duration)))
        sched = _shifted(build(tau, nb), shift)
        m = ef.effective_pulsed(system, sched, q, j, parity, tolerance=math.inf)
    elif model == "ccd":
        rabi1 = float(p.pop("rabi1", 1.0))
        rabi2 = float(p.pop("rabi2", rabi1 / 10))
        phi = float(p.pop("phi", -math.pi / 2))
        delta = float(p.pop("delta", 0.0))
        xi1 = float(p.pop("xi1", 0.0))
        m = ef.effective_ccd(rabi1, rabi2, phi, xi1=xi1, Delta=delta)
        sched = ctl.make_ccd(0.0, rabi1, rabi2, phi, cycles * m.pi_time,
                             delta=(lambda t: delta) if delta else None, xi1=(lambda t: xi1) if xi1 else None)
        system = SpinSystem(system.nv)
    elif model == "ja":
        j = int(p.pop("target", 0))
        _check_target(system, j)
        dec = system.decomposition(j)
        nu = float(p.pop("nu_fraction", 0.3)) * dec.omega
        z = float(p.pop("z", 1.84))
        omega0 = dec.omega - nu + float(p.pop("detuning", 0.0))
        phi = float(p.pop("phi", 0.0))
        m = ef.effective_jacobi_anger(system, omega0, z * nu, nu, j=j, phi=phi,
                                      tolerance=abs(omega0 + nu - dec.omega) + 1e-12 * dec.omega)
        sched = ctl.make_modulated_rabi(omega0, z * nu, nu, cycles * m.pi_time * 1.05, phi, prepare=None)
    elif model == "parallel":
        j = int(p.pop("target", 0))
        _check_target(system, j)
        dec = system.decomposition(j)
        block = TWO_PI * int(p.pop("multiple", 1)) / dec.omega
        sched = ctl.make_sync_mw_rf(j, dec.omega, 2 * int(p.pop("periods", 2)), block)
        m = ef.effective_parallel(system, j, sched)
    else:
        raise ValueError(f"unknown model {model!r}; expected hh, pulsed, ccd, ja or parallel")
    if p:
        raise ValueError(f"unused parameters for model {model}: {', '.join(sorted(p))}")
    return system, m, sched


def _shifted(schedule: ctl.ControlSchedule, shift: float) -> ctl.ControlSchedule:
    """Delay every pulse by ``shift`` (wrapping into the schedule), turning an even train into an odd one."""
    if shift == 0:
        return schedule
    d = schedule.duration
    events = []
    for e in schedule.events:
        t = e.t_center + shift
        events.append(e.shifted(shift if t <= d * (1 + 1e-12) else shift - d))
    return ctl.ControlSchedule(d, tuple(events), schedule.continuous, None, (), dict(schedule.metadata))


def effective_validation_experiment(
    system: SpinSystem,
    model: str,
    params: dict | None = None,
    n_checkpoints: int = 10,
    step_control: float = 1e-8,
) -> ExperimentResult:
    """Fidelity of an effective model against exact propagation at checkpoints."""
    sim_system, m, sched = build_model_and_schedule(system, model, params or {})
    strobe = False if model == "ccd" else None
    res = dy.validate_effective(sim_system, sched, m, duration=sched.duration, n_checkpoints=n_checkpoints,
                                step_control=min(step_control, 1e-7), stroboscopic=strobe)
    rows = [{"t": float(t), "fidelity": float(f), "leakage": float(lk)}
            for t, f, lk in zip(res.times, res.fidelity, res.leakage)]
    summary = {"model": m.name, "min_fidelity": res.min_fidelity, "pi_time": m.pi_time,
               "coupling_scale": m.coupling_scale, "min_margin": m.min_margin,
               **{f"margin_{k}": v for k, v in m.validity.items()}}
    return ExperimentResult("effective-validation", ["t", "fidelity", "leakage"], rows, summary, {"model": m.report()})


# -- polarization -----------------------------------------------------------------------------


def sequential_transfer_oracle(probabilities: Sequence[float], order: Sequence[int], n_nuclei: int,
                               reset_fidelity: float = 1.0) -> np.ndarray:
    """Bath polarisation ``sum_j <w^_j . I_j>`` after each cycle of independent two-spin transfers.

    ``probabilities[c]`` is the two-spin transfer probability of cycle ``c``
    acting on nucleus ``order[c]``; the NV enters each cycle in ``|-phi>``
    with probability ``reset_fidelity`` and in ``|+phi>`` otherwise.
    """
    up = np.full(n_nuclei, 0.5)
    out = [float(np.sum(0.5 - up))]
    r = reset_fidelity
    for p, j in zip(probabilities, order):
        up[j] = up[j] * (1 - r * p) + (1 - up[j]) * (1 - r) * p
        out.append(float(np.sum(0.5 - up)))
    return np.array(out)


def polarization_experiment(
    system: SpinSystem,
    order: Sequence[int] | None = None,
    cycles: int = 5,
    phi: float = 0.0,
    reset_fidelity: float = 1.0,
    duration_factor: float = 1.0,
    step_control: float = 1e-8,
) -> ExperimentResult:
    """Hartmann-Hahn cycles with NV repolarisation; cycle ``c`` is tuned to nucleus ``order[c % len]``.

    Each cycle prepares ``|-phi>`` with a pi/2 pulse and spin-locks at
    ``Omega = w_j`` for ``duration_factor * 2 pi / A_perp_j`` (one full
    transfer). The oracle chains two-spin transfer probabilities computed for
    each nucleus alone.
    """
    if system.n_nuclei == 0:
        raise ValueError("polarization needs at least one nucleus")
    order = list(range(system.n_nuclei)) if order is None else [int(j) for j in order]
    for j in order:
        _check_target(system, j)
    schedules, probs = {}, {}
    for j in sorted(set(order)):
        dec = system.decomposition(j)
        duration = duration_factor * TWO_PI / dec.A_perp
        schedules[j] = ctl.make_hh(dec.omega, duration, phi, prepare=-1)
        alone = SpinSystem(system.nv, (system.nuclei[j],))
        space = _qubit_space(alone)
        rho, proj = _dressed_flip_pair(alone, space, 0, phi)
        u = dy.schedule_propagator(alone, ctl.make_hh(dec.omega, duration, phi, prepare=None), step_control=step_control)
        probs[j] = float(np.real(np.trace(proj @ u @ rho @ u.conj().T)))
    traj = dy.polarization_transfer(system, [schedules[j] for j in order], cycles, True, reset_fidelity,
                                    step_control=step_control)
    cycle_targets = [order[c % len(order)] for c in range(cycles)]
    oracle = sequential_transfer_oracle([probs[j] for j in cycle_targets], cycle_targets, system.n_nuclei,
                                        reset_fidelity)
    rows = []
    for c in range(cycles + 1):
        row = {"cycle": c, "target": cycle_targets[c - 1] if c else -1, "bath": float(traj["bath"][c]),
               "bath_oracle": float(oracle[c])}
        row.update({f"Iw_{j}": float(traj[f"Iw_{j}"][c]) for j in range(system.n_nuclei)})
        rows.append(row)
    bath = traj["bath"]
    max_bath = traj.metadata["max_bath"]
    summary = {
        "final_bath": float(bath[-1]),
        "max_bath": max_bath,
        "final_fraction": float(bath[-1] / max_bath),
        "monotone": bool(np.all(np.diff(bath) >= -1e-12)),
        "max_oracle_deviation": float(np.max(np.abs(bath - oracle))),
        "transfer_probabilities": {str(j): probs[j] for j in sorted(probs)},
    }
    return ExperimentResult("polarization", list(rows[0]), rows, summary, {"trajectory": traj.metadata})
