"""Continuous driving: Hartmann-Hahn exchange and bath polarisation.

Spin-locking the NV at a Rabi frequency equal to a nuclear resonance w_l makes the
dressed NV states |+->, split by Omega, resonant with the nuclear flip. The pair
|-, up> <-> |+, down> then exchanges at A_perp/2. Detuning the drive by 10 A_perp
suppresses the exchange. Repeating the exchange with an optical reset of the NV
in between pumps polarisation into a nuclear bath, one nucleus per cycle.

Run:  python demos/02_hartmann_hahn.py
"""

import numpy as np

from _common import heading, run
from nvdd import experiments as ex

cfg, res = run("hh_transfer.yaml")
s = res.summary
heading("resonant spin locking")
p = np.array([r["P_transfer"] for r in res.rows])
print(f"Omega = {s['Omega']:.5f} rad/us; transfer reaches {s['max_transfer']:.4f}")
print(f"fitted exchange rate {s['rate_fitted']:.6f} rad/us vs A_perp/2 = {s['rate_predicted']:.6f}")
print("P(|+, down>) at every eighth of the run:", (np.round(p[:: len(p) // 8], 3) + 0.0).tolist())

a_perp = cfg.system.decomposition(0).A_perp
detuned = ex.hh_transfer_experiment(cfg.system, detuning=10 * a_perp)
print(f"detuned by 10 A_perp: transfer never exceeds {detuned.summary['max_transfer']:.4f}")

heading("polarising a three-spin bath")
cfg, res = run("polarization.yaml")
print("nuclei: " + ", ".join(f"{n.label} (w = {w:.3f} rad/us)" for n, w in zip(cfg.system.nuclei,
                                                                                  cfg.system.resonances())))
print("cycle  target  bath    oracle")
for r in res.rows:
    target = r["target"] if r["cycle"] else "-"
    print(f"{r['cycle']:>5}  {target:>6}  {r['bath']:.4f}  {r['bath_oracle']:.4f}")
s = res.summary
print(f"after {len(res.rows) - 1} cycles: {s['final_fraction']:.1%} of the maximum, monotone = {s['monotone']}")
