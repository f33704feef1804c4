"""
Command-line front end.

    nvdd run --config exp.yaml [--out DIR] [--seed N] [--threads N] [--format csv|jsonlike]
    nvdd explain KIND
    nvdd validate-config --config exp.yaml

``run`` writes the data table (``<kind>.csv`` or ``<kind>.jsonl``) and a
structured result document (``<kind>.result.json``) carrying digests of the
exact configuration and system used. Floats are written in their shortest
round-trip decimal form, so identical configuration and seed give
byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Sequence

from . import dynamics as dy
from . import effective as ef
from . import experiments as ex
from .config import EXPERIMENT_KINDS, ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

EXPLAIN = {
    "spectrum": """\
spectrum - dynamical-decoupling NMR spectrum
  A pi/2 pulse, n_blocks of XY8 (or CPMG) with pulse spacing tau, and a closing
  pi/2 pulse; the signal is the final |0> population (nuclei start mixed).
  The pulse train toggles sigma_z with a +-1 modulation function F(t) of
  period T = 2 tau. Its Fourier harmonics f_q = (2/T) int F(t) cos(2 pi q t/T) dt
  equal 4/(q pi) for odd q and vanish for even q for equidistant pi trains.
  Resonance condition: q*2pi/T = w_u, so dips appear at T = 2 pi q / w_u.
  On resonance the sensor sees H = (f_q A_perp / 4) sigma_z I_x.
  Parameters: target, family (xy8|cpmg), n_blocks, tau (list or start/stop/points),
  readout (P0|sigma_x), harmonics, noise_floor, rate_blocks {max, step}.""",
    "hh-transfer": """\
hh-transfer - Hartmann-Hahn flip-flop under continuous driving
  A spin-locking drive of Rabi frequency Omega dresses the NV into |+-phi>.
  HH condition: Omega = w_l. There the effective Hamiltonian is
  (A_perp/2)(|+phi><-phi| I-/2 + h.c.) with half-size ladder operators, and
  |-phi, up> <-> |+phi, down> exchange at angular rate A_perp / 2.
  Detuning Omega - w_l caps the transfer at
  (A_perp/2)^2 / ((A_perp/2)^2 + detuning^2).
  Parameters: target or rabi, detuning, duration, points, phi.""",
    "ccd-coherence": """\
ccd-coherence - concatenated continuous decoupling against drive noise
  Single drive: (Omega1 (1+xi1)/2) sigma_x + (Delta/2) sigma_z.
  CCD adds a second tone Omega2 (1+xi2) cos(w0 t - phi) cos(Omega1 t). In the
  frame of the first dressing it averages to (Omega2/4) sigma_y for phi = -pi/2.
  The amplitude error leaves (Omega1 xi1 / 2) sigma_x, which is suppressed when
  |Omega2| >> |Omega1 xi1|.
  The ensemble-averaged dressed-state coherence is compared through its
  first 1/e crossing. Error bands use the Monte Carlo standard error.
  Parameters: rabi1, rabi2, phi, noise {kind, delta_rms, xi1_rms, tau_c},
  n_realizations, single_duration, ccd_duration, points, check_zero_error.""",
    "ja-sweep": """\
ja-sweep - amplitude-modulated drive and the Jacobi-Anger condition
  Drive envelope Omega0 - Omega1 sin(nu t). By the Jacobi-Anger expansion
  exp(i z cos x) = sum_n i^n J_n(z) exp(i n x) with z = Omega1/nu, the
  sideband Omega0 + nu = w_j produces a flip-flop of rate (A_perp/2) J1(z).
  The maximum is near z = 1.84.
  Parameters: target, z (list or start/stop/points), nu_fraction (nu/w_j), phi.""",
    "parallel-coupling": """\
parallel-coupling - synchronised MW + rf pulses selecting the parallel coupling
  Simultaneous pi pulses on the NV and on nucleus u, one per block of length
  T = 2 pi m / w_u, toggle sigma_z and I_u together. The target keeps
  (A_par/2) sigma_z (w_u . I_u), i.e. exp(-i t A_par sigma_z I_u^z) with
  sigma_z = |1><1|. All other couplings average out over a full period 2T.
  Reported: the NV-conditional phase of each nucleus per full period.
  Parameters: target, multiple (m), periods.""",
    "effective-validation": """\
effective-validation - effective model versus exact propagation
  Models:
    hh       - Hartmann-Hahn flip-flop, Omega = w_l
    pulsed   - filter-function coupling (f_q A_perp/4) sigma_z I_x, or f~_q sigma_z I_y
               for odd pulse distributions
    ccd      - (Omega2/4) sigma_y in the doubly dressed frame
    ja       - (A_perp/2) J1(z) flip-flop at Omega0 + nu = w_j
    parallel - (A_par/2) sigma_z I_u
  Fidelity: |tr((U_model (x) V)^dag U_exact)| / d in the model's frame,
  maximised over spectator unitaries V.
  Each validity margin is the ratio of a neglected term's rotation frequency
  to its amplitude; margins >= 10 are the working regime.
  Parameters: model, params (model specific), checkpoints.""",
    "polarization": """\
polarization - repeated Hartmann-Hahn cycles with optical repolarisation
  Each cycle resets the NV to |0> (reset_fidelity), prepares |-phi> with a
  pi/2 pulse and spin-locks at Omega = w_j for
  duration_factor * 2 pi / A_perp_j. The bath polarisation is
  sum_j <w_j . I_j>, whose maximum is N/2. The oracle chains independent
  two-spin transfers.
  Parameters: order, cycles, phi, reset_fidelity, duration_factor.""",
}


# -- running experiments -------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, threads: int = 1) -> ex.ExperimentResult:
    """Dispatch a validated configuration to its experiment."""
    p = cfg.params
    system = cfg.system
    seed = cfg.seed if seed is None else seed
    if cfg.kind == "spectrum":
        rb = p["rate_blocks"]
        return ex.spectrum_experiment(system, p["tau"], p["n_blocks"], p["family"], p["readout"], p["target"],
                                      p["harmonics"], p["noise_floor"],
                                      range(0, rb["max"] + 1, rb["step"]) if rb else None)
    if cfg.kind == "hh-transfer":
        target, detuning = _hh_target(cfg)
        return ex.hh_transfer_experiment(system, target, detuning, p["duration"], p["points"], p["phi"])
    if cfg.kind == "ccd-coherence":
        n = p["noise"]
        return ex.ccd_coherence_experiment(system, p["rabi1"], p["rabi2"], p["phi"], n["delta_rms"], n["xi1_rms"],
                                           n["kind"], n["tau_c"], p["n_realizations"], p["single_duration"],
                                           p["ccd_duration"], p["points"], seed, p["check_zero_error"])
    if cfg.kind == "ja-sweep":
        return ex.ja_sweep_experiment(system, p["z"], p["target"], p["nu_fraction"], p["phi"], seed, threads)
    if cfg.kind == "parallel-coupling":
        return ex.parallel_coupling_experiment(system, p["target"], p["multiple"], p["periods"])
    if cfg.kind == "effective-validation":
        params = {k: v for k, v in p["params"].items() if v is not None}
        return ex.effective_validation_experiment(system, p["model"], params, p["checkpoints"])
    if cfg.kind == "polarization":
        return ex.polarization_experiment(system, p["order"], p["cycles"], p["phi"], p["reset_fidelity"],
                                          p["duration_factor"])
    raise ValueError(f"unknown experiment kind {cfg.kind!r}")


def _hh_target(cfg: ExperimentConfig) -> tuple[int, float]:
    """Target nucleus and detuning for hh-transfer (``rabi`` picks the nearest resonance)."""
    p = cfg.params
    omegas = cfg.system.resonances()
    if p["rabi"] is not None:
        j = p["target"] if p["target"] is not None else min(range(len(omegas)), key=lambda k: abs(omegas[k] - p["rabi"]))
        return j, p["rabi"] - omegas[j]
    return (p["target"] or 0), (p["detuning"] or 0.0)


def result_document(cfg: ExperimentConfig, result: ex.ExperimentResult, seed: int, status: str,
                    data_file: str | None, data_digest: str | None) -> dict:
    return {
        "kind": cfg.kind,
        "status": status,
        "seed": seed,
        "config_digest": dy.digest(cfg.raw),
        "system_digest": dy.digest(cfg.system),
        "data_file": data_file,
        "data_digest": data_digest,
        "columns": result.columns,
        "summary": result.summary,
        "details": result.details,
        "errors": result.errors,
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


def summary_text(cfg: ExperimentConfig, result: ex.ExperimentResult, doc: dict) -> str:
    lines = [f"{cfg.kind}: {doc['status']}  (seed {doc['seed']}, config {doc['config_digest'][:12]})"]
    for k, v in result.summary.items():
        lines.append(f"  {k:<28} {_fmt(v)}")
    if cfg.kind == "spectrum":
        for d in result.details.get("dips", [])[:10]:
            lines.append(f"  dip at T = {d['T']:.6g} us (depth {d['depth']:.3g})")
    if result.errors:
        lines.append(f"  {len(result.errors)} point(s) failed:")
        lines += [f"    {k}: {v}" for k, v in list(result.errors.items())[:10]]
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error in {args.config}:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = cfg.seed if args.seed is None else args.seed
    if seed < 0 or seed >= 2**64:
        print("configuration error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or ".")
    threads = args.threads or os.cpu_count() or 1
    out.mkdir(parents=True, exist_ok=True)
    doc_path = out / f"{cfg.kind}.result.json"
    try:
        result = run_experiment(cfg, seed, threads)
    except Exception as exc:  # reported as a runtime failure with a flagged document
        failed = ex.ExperimentResult(cfg.kind, [], [], {}, {}, {"experiment": f"{type(exc).__name__}: {exc}"})
        doc = result_document(cfg, failed, seed, "failed", None, None)
        doc_path.write_text(dy.to_result_document(doc))
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.format == "csv":
        data_name = f"{cfg.kind}.csv"
        text = dy.to_csv(result.columns, result.rows)
    else:
        data_name = f"{cfg.kind}.jsonl"
        text = "".join(json.dumps(dy._jsonable({c: r.get(c) for c in result.columns}), sort_keys=True) + "\n"
                       for r in result.rows)
    (out / data_name).write_text(text)
    status = "partial" if result.errors else "ok"
    doc = result_document(cfg, result, seed, status, data_name, dy.digest(text))
    doc_path.write_text(dy.to_result_document(doc))
    print(summary_text(cfg, result, doc))
    print(f"wrote {out / data_name} and {doc_path}")
    return EXIT_RUNTIME if result.errors else EXIT_OK


# -- validate-config --------------------------------------------------------------------------


def margin_table(cfg: ExperimentConfig) -> list[str]:
    rows = [f"  {'nucleus':<8}{'label':<7}{'w_j [rad/us]':>14}{'A_perp':>12}{'A_par':>12}{'larmor':>10}"]
    for j, nuc in enumerate(cfg.system.nuclei):
        d = cfg.system.decomposition(j)
        larmor = d.omega / (math.hypot(*d.A_vec) / 4)
        rows.append(f"  {j:<8}{nuc.label:<7}{d.omega:>14.6g}{d.A_perp:>12.4g}{d.A_par:>12.4g}{larmor:>10.4g}")
    return rows


def config_warnings(cfg: ExperimentConfig) -> tuple[list[str], list[str]]:
    """Physics sanity checks; returns ``(warnings, extra report lines)``."""
    warns, extra = [], []
    system = cfg.system
    p = cfg.params
    if system.n_nuclei:
        max_perp = max(system.decomposition(j).A_perp for j in range(system.n_nuclei))
        for j in range(system.n_nuclei):
            w = system.decomposition(j).omega
            if w < 10 * max_perp:
                warns.append(f"nucleus {j}: w_L = {w:.4g} rad/us < 10 max A_perp = {10 * max_perp:.4g} rad/us; "
                             "effective models degrade")
    if cfg.kind == "hh-transfer":
        omegas = system.resonances()
        if p["rabi"] is not None:
            j = min(range(len(omegas)), key=lambda k: abs(omegas[k] - p["rabi"]))
            tol = system.decomposition(j).A_perp / 2
            if abs(p["rabi"] - omegas[j]) > tol:
                warns.append(f"no nucleus satisfies Omega = w_j within A_perp/2: Omega = {p['rabi']:.6g} rad/us, "
                             f"nearest is nucleus {j} with w_{j} = {omegas[j]:.6g} rad/us")
    elif cfg.kind == "spectrum":
        d = system.decomposition(p["target"])
        for q in p["harmonics"]:
            tau_q = q * math.pi / d.omega
            if not min(p["tau"]) <= tau_q <= max(p["tau"]):
                warns.append(f"harmonic q={q} dip (tau = {tau_q:.6g} us) lies outside the tau grid")
    elif cfg.kind == "effective-validation":
        try:
            _, model, _ = ex.build_model_and_schedule(system, p["model"], {k: v for k, v in p["params"].items()
                                                                           if v is not None})
        except ValueError as exc:
            warns.append(f"model cannot be built: {exc}")
        else:
            extra.append(f"  model {model.name}: pi time {model.pi_time:.6g} us")
            for k, v in model.validity.items():
                extra.append(f"    margin {k:<18} {v:.4g}")
                if v < 10:
                    warns.append(f"validity margin {k} = {v:.3g} < 10")
    elif cfg.kind == "ja-sweep":
        d = system.decomposition(p["target"])
        nu = p["nu_fraction"] * d.omega
        for z in (min(p["z"]), max(p["z"])):
            try:
                m = ef.effective_jacobi_anger(system, d.omega - nu, z * nu, nu, j=p["target"], phi=p["phi"])
            except ValueError as exc:
                warns.append(f"z = {z}: {exc}")
                continue
            extra.append(f"  z = {z:.4g}: min margin {m.min_margin:.4g}")
            if m.min_margin < 10:
                warns.append(f"z = {z:.4g}: minimum validity margin {m.min_margin:.3g} < 10")
    return warns, extra


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error in {args.config}:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    warns, extra = config_warnings(cfg)
    n = cfg.system.n_nuclei
    print(f"OK: {cfg.kind} with {n} {'nucleus' if n == 1 else 'nuclei'}, Bz = {cfg.system.nv.Bz:.6g} T")
    if cfg.system.n_nuclei:
        print("\n".join(margin_table(cfg)))
    for line in extra:
        print(line)
    for w in warns:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_explain(args) -> int:
    if args.kind not in EXPLAIN:
        print(f"unknown experiment kind {args.kind!r}; valid kinds: {', '.join(EXPERIMENT_KINDS)}", file=sys.stderr)
        return EXIT_CONFIG
    print(EXPLAIN[args.kind])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvdd", description="NV-centre nanoscale NMR simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a configuration file")
    run.add_argument("--config", required=True, help="YAML configuration file")
    run.add_argument("--out", help="output directory (default: the config's 'output' or the current directory)")
    run.add_argument("--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--threads", type=int, help="worker threads for scans (default: available cores)")
    run.add_argument("--format", choices=("csv", "jsonlike"), default="csv", help="data table format")
    run.set_defaults(func=cmd_run)
    exp = sub.add_parser("explain", help="describe an experiment kind and its governing equations")
    exp.add_argument("kind", help=f"one of {', '.join(EXPERIMENT_KINDS)}")
    exp.set_defaults(func=cmd_explain)
    val = sub.add_parser("validate-config", help="check a configuration without running it")
    val.add_argument("--config", required=True, help="YAML configuration file")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors count as configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
