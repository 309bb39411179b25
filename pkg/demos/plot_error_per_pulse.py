r"""
Error per pulse
===============

The fractional decay per pulse, ``eta(n) = -ln(s(n)/s(0)) / n``, is
computed after the irreducible envelope has been divided out, so it
isolates what the pulses themselves do.  Values are read after 40 pulses,
a whole number of cycles for every sequence in the catalog.
"""

import numpy as np

from ddrobust import noise
from ddrobust.experiment import ExperimentConfig, error_per_pulse, run_ensemble

model = noise.calibrate()
tau, eps, n_star = 100e-6, 0.01, 40

for name in ("cp", "cpmg", "xy4s", "xy4a", "xy8s", "xy8a", "kddx", "kddxy"):
    variants = [None] if name in ("cp", "cpmg") else ["x", "y"]
    etas = []
    for v in variants:
        cfg = ExperimentConfig(name, tau, noise=model, eps=eps, variant=v,
                               duration=n_star * tau, n_realizations=500)
        n, eta = error_per_pulse(run_ensemble(cfg), cfg.cycle().n_pulses, model.t2_irr)
        etas.append(eta[n == n_star][0])
    print(f"{name:6s} eta = {np.mean(etas):.3e}")
