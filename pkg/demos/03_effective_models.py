"""When can the effective Hamiltonians be trusted?

Every effective model carries validity margins: for each term it drops, the
ratio between what suppresses the term (its detuning, or the coupling that
sets the time window) and the term's strength. This script compares each model
with exact propagation over one effective pi rotation, first in the nominal
regime and then with one margin pushed to 1.

Run:  python demos/03_effective_models.py
"""

import warnings

import numpy as np
from scipy.optimize import brentq

from _common import heading
from nvdd import experiments as ex
from nvdd.system import NVCenter, Nucleus, SpinSystem

warnings.simplefilter("ignore", UserWarning)
target = Nucleus((1.2, 0.6, 1.0))
system = SpinSystem(NVCenter(0.09), (target,))


def show(label, system, model, params=None):
    s = ex.effective_validation_experiment(system, model, params or {}, n_checkpoints=6).summary
    margins = ", ".join(f"{k[7:]} {v:.3g}" for k, v in s.items() if k.startswith("margin_"))
    print(f"  {label:<34} fidelity {s['min_fidelity']:.4f}   [{margins}]")


heading("nominal regimes")
for model, params in (("pulsed", {}), ("hh", {}), ("ja", {}), ("ccd", {"rabi1": 1.0})):
    show(model, system, model, params)

heading("off resonance by one coupling")
for model in ("pulsed", "hh", "ja"):
    coupling = ex.build_model_and_schedule(system, model, {})[1].coupling_scale
    show(f"{model}, detuning = coupling", system, model, {"detuning": coupling})

heading("a second 13C pulled closer")
direction = np.array([-0.9, 0.4, 0.7]) / np.linalg.norm([-0.9, 0.4, 0.7])
for model, key in (("hh", "crosstalk"), ("pulsed", "crosstalk"), ("ja", "sidebands")):
    for goal in (10.0, 1.0):
        def pair(r):
            return SpinSystem(NVCenter(0.09), (target, Nucleus(tuple(r * direction))))

        r = brentq(lambda r: ex.build_model_and_schedule(pair(r), model, {})[1].validity[key] - goal, 1.0, 30.0)
        show(f"{model}, spectator at {r:.2f} nm", pair(r), model)
