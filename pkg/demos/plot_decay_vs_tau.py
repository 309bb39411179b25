r"""
Decay time as a function of the pulse delay
===========================================

At long delays every sequence is limited by the slow drift and then by the
irreducible envelope, so all decay times meet at the plateau.  At short
delays the flip-angle error accumulates over many pulses and the
sequences separate.  This scan uses a reduced ensemble to keep it quick.
"""

from ddrobust import noise
from ddrobust.experiment import ExperimentConfig
from ddrobust.fitting import decay_vs_tau_scan

model = noise.calibrate()
base = ExperimentConfig("cpmg", 1e-3, noise=model, eps=0.01, n_realizations=300)
taus = [100e-6, 500e-6, 2e-3, 8e-3]
rows = decay_vs_tau_scan(base, taus, ["cp", "cpmg", "xy4s", "xy8s", "kddx"])

print(f"{'sequence':8s}" + "".join(f"{t * 1e6:>10.0f} us" for t in taus))
for name in ("cp", "cpmg", "xy4s", "xy8s", "kddx"):
    cells = [r for r in rows if r.sequence == name]
    print(f"{name:8s}" + "".join(f"{r.t2 * 1e3:>10.1f} ms" for r in cells))
