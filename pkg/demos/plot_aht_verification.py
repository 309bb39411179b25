r"""
Average Hamiltonian of imperfect pulse cycles
=============================================

Each pulse with flip-angle error ``eps`` is split into two half-kicks
around an ideal pi pulse.  The kicks are moved into the toggling frame and
summed with the Magnus expansion.  Independently, the exact cycle
propagator is inverted and its ``eps`` dependence is fitted.  Both columns
should agree.  The 'predicted' column holds the closed forms under test.
"""

from ddrobust import aht
from ddrobust.sequences import build_cycle

rows = aht.verify_closed_forms(eps=1e-3)
print(aht.format_verification(rows))

###############################################################################
# How the leading error scales with ``eps`` for each cycle.

for name in ("cpmg", "xy4s", "xy8s", "kddx", "kddxy"):
    cycle = build_cycle(name, 1.0)
    exp = aht.eps_expansion(cycle)
    leading = next(p for p in range(1, 5) if abs(exp.coefficients[p - 1]).max() > 1e-6)
    print(f"{name:6s} leading error ~ eps^{leading}")
