"""Average-Hamiltonian analysis of flip-angle errors in delta-pulse cycles.

Each imperfect pulse ``exp(-i (1+eps) pi S_phi)`` is split into a half-kick
``exp(-i eps pi/2 S_phi)``, the ideal pi pulse and another half-kick.  The
kicks are conjugated into the toggling frame of the ideal pulses accumulated
so far.  Kicks have zero width but finite area, so the Magnus integrals
reduce to exact nested sums over the kick areas in time order; free delays
carry no error Hamiltonian in this noise-free model and drop out.

With ``U_cycle = exp(-i H tau_c)`` and ``H = H0 + H1 + H2 + ...``,
order ``k`` scales as ``eps**(k+1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spin
from .sequences import Pulse, build_cycle, normalize_name

CONVENTION = "half-kick / ideal pi / half-kick, kicks of area eps*theta/2 in the toggling frame"


@dataclass(frozen=True)
class Segment:
    """One piece of the toggling-frame Hamiltonian.

    ``area`` is the integral of the toggled Hamiltonian over the piece
    (dimensionless operator).  Kicks have ``duration == 0``.
    """

    area: np.ndarray
    duration: float
    kind: str

    @property
    def hamiltonian(self):
        if self.duration == 0:
            raise ValueError("a kick has no finite Hamiltonian; use its area")
        return self.area / self.duration


@dataclass(frozen=True)
class MagnusResult:
    """Average-Hamiltonian terms in rad/s, ``terms[k]`` of order ``k``."""

    terms: tuple
    tau_c: float
    convention: str = CONVENTION

    def total(self):
        return sum(self.terms)

    def components(self, order):
        """``(cx, cy, cz)`` of ``terms[order] = cx S_x + cy S_y + cz S_z``."""
        _, cx, cy, cz = spin.spin_components(self.terms[order])
        return np.real(np.array([cx, cy, cz]))


def toggling_frame(cycle, eps=None):
    """Piecewise toggling-frame error Hamiltonian over one cycle.

    Parameters
    ----------
    cycle : SequenceCycle
        Must use delta pulses.
    eps : float, optional
        Flip-angle error applied to every pulse; by default each pulse keeps
        its own ``eps``.
    """
    if not cycle.is_delta:
        raise ValueError("toggling-frame analysis needs delta pulses (t_p = 0)")
    if eps is not None:
        cycle = cycle.with_eps(eps)
    frame = spin.IDENTITY
    zero = np.zeros((2, 2), dtype=complex)
    out = []
    for e in cycle.elements:
        if not isinstance(e, Pulse):
            out.append(Segment(zero, e.duration, "delay"))
            continue
        p = e.spec
        kick = (p.eps * p.nominal_angle / 2) * spin.in_plane_operator(p.phase)
        out.append(Segment(spin.dagger(frame) @ kick @ frame, 0.0, "kick"))
        frame = spin.rotation_propagator(p.phase, p.nominal_angle) @ frame
        out.append(Segment(spin.dagger(frame) @ kick @ frame, 0.0, "kick"))
    return out


def _comm(a, b):
    return a @ b - b @ a


def magnus_terms(cycle, eps=None, max_order=2):
    """Average Hamiltonian orders ``0..max_order`` (at most 2) of a delta cycle."""
    if not 0 <= max_order <= 2:
        raise ValueError("max_order must be 0, 1 or 2")
    segments = toggling_frame(cycle, eps)
    areas = [s.area for s in segments if np.any(s.area != 0)]
    tau_c = cycle.tau_c
    zero = np.zeros((2, 2), dtype=complex)
    if not areas:
        return MagnusResult(tuple(zero for _ in range(max_order + 1)), tau_c)

    a = np.array(areas)
    total = a.sum(axis=0)
    # exclusive prefix / suffix sums
    prefix = np.concatenate([zero[None], np.cumsum(a, axis=0)[:-1]])
    suffix = total[None] - prefix - a

    terms = [total / tau_c]
    if max_order >= 1:
        second = sum(_comm(a[j], prefix[j]) for j in range(len(a)))
        terms.append(-0.5j * second / tau_c)
    if max_order >= 2:
        inner = [_comm(a[k], prefix[k]) for k in range(len(a))]
        nested = np.concatenate([zero[None], np.cumsum(inner, axis=0)[:-1]])
        x1 = sum(_comm(a[j], nested[j]) for j in range(len(a)))
        x2 = sum(_comm(prefix[k], _comm(a[k], suffix[k])) for k in range(len(a)))
        y1 = sum(_comm(a[j], _comm(a[j], prefix[j])) for j in range(len(a)))
        y2 = sum(_comm(a[j], _comm(a[j], suffix[j])) for j in range(len(a)))
        terms.append(-(x1 + x2 + 0.5 * (y1 + y2)) / (6 * tau_c))
    # strip rounding-level anti-Hermitian and trace parts
    terms = [(t + spin.dagger(t)) / 2 for t in terms]
    terms = [t - np.trace(t) / 2 * spin.IDENTITY for t in terms]
    return MagnusResult(tuple(terms), tau_c)


def cycle_effective_hamiltonian(cycle, eps=None):
    """Exact effective Hamiltonian of the noise-free delta cycle."""
    if eps is not None:
        cycle = cycle.with_eps(eps)
    return spin.effective_hamiltonian(cycle.propagator("delta"), cycle.tau_c)


@dataclass(frozen=True)
class EpsExpansion:
    """``H_eff(eps) = sum_p eps**p (cx_p S_x + cy_p S_y + cz_p S_z)``.

    ``coefficients[p - 1]`` holds ``(cx_p, cy_p, cz_p)`` in rad/s.
    """

    coefficients: np.ndarray
    residual: float

    def coefficient(self, power, axis):
        return float(self.coefficients[power - 1]["xyz".index(axis)])


DEFAULT_EPS_SAMPLES = (-0.004, -0.002, -0.001, 0.001, 0.002, 0.004)


def eps_expansion(cycle, eps_samples=DEFAULT_EPS_SAMPLES, max_power=4):
    """Polynomial fit in ``eps`` of the exact effective Hamiltonian.

    Independent of the Magnus sums: the cycle propagator is built for each
    sample, inverted with the principal logarithm and its spin components
    fitted by least squares (no constant term).
    """
    eps = np.asarray(eps_samples, dtype=float)
    distinct = np.unique(eps[eps != 0])
    if len(distinct) < max_power:
        raise ValueError(
            f"need at least {max_power} distinct non-zero eps samples, got {len(distinct)}"
        )
    design = np.column_stack([eps**p for p in range(1, max_power + 1)])
    cond = np.linalg.cond(design / np.abs(design).max(axis=0))
    if not cond < 1e8:
        raise ValueError(f"eps samples give an ill-conditioned fit (cond {cond:.2g})")
    comps = []
    for e in eps:
        h = cycle_effective_hamiltonian(cycle, e)
        _, cx, cy, cz = spin.spin_components(h)
        comps.append(np.real([cx, cy, cz]))
    comps = np.array(comps)
    coef, *_ = np.linalg.lstsq(design, comps, rcond=None)
    resid = float(np.linalg.norm(design @ coef - comps))
    return EpsExpansion(coef, resid)


# Closed-form average Hamiltonians with flip-angle error only, as
# (sequence, order, axes, coefficient c) meaning H_order = c eps**(order+1) / tau
# along each listed axis; c = 0 asserts the order vanishes.
CLOSED_FORMS = (
    ("cpmg", 0, "y", math.pi),
    ("cpmg", 1, "xyz", 0.0),
    ("xy4s", 0, "xyz", 0.0),
    ("xy4s", 1, "z", 5 * math.pi**2 / 16),
    ("xy4a", 0, "xyz", 0.0),
    ("xy4a", 1, "z", 5 * math.pi**2 / 16),
    ("xy8s", 0, "xyz", 0.0),
    ("xy8s", 1, "xyz", 0.0),
    ("xy8s", 2, "xy", 13 * math.pi**3 / 1536),
    ("xy8a", 0, "xyz", 0.0),
    ("xy8a", 1, "xyz", 0.0),
    ("xy8a", 2, "xy", 13 * math.pi**3 / 1536),
    ("kddx", 0, "xyz", 0.0),
    ("kddx", 1, "xyz", 0.0),
)


@dataclass(frozen=True)
class VerificationRow:
    sequence: str
    order: int
    axis: str
    predicted: float
    magnus: float
    expansion: float

    @property
    def deviation(self):
        """Relative deviation, or for a predicted zero the magnitude in units of pi."""
        if self.predicted == 0:
            return abs(self.magnus) / math.pi
        return abs(self.magnus - self.predicted) / abs(self.predicted)

    @property
    def expansion_deviation(self):
        """Relative disagreement between the Magnus sum and the eps fit."""
        scale = max(abs(self.magnus), abs(self.expansion))
        if scale < 1e-6:
            return 0.0
        return abs(self.magnus - self.expansion) / scale


def verify_closed_forms(eps=1e-3, tau=1.0, forms=CLOSED_FORMS):
    """Compare the closed-form coefficients with the Magnus sums and the eps fit.

    Coefficients are reported in units of ``eps**(order+1) / tau``.
    """
    rows = []
    cache = {}
    for name, order, axes, predicted in forms:
        name = normalize_name(name)
        if name not in cache:
            cycle = build_cycle(name, tau)
            cache[name] = (magnus_terms(cycle, eps), eps_expansion(cycle))
        magnus, expansion = cache[name]
        scale = tau / eps ** (order + 1)
        comps = magnus.components(order) * scale
        for axis in axes:
            i = "xyz".index(axis)
            rows.append(VerificationRow(
                name, order, axis, predicted, float(comps[i]),
                expansion.coefficient(order + 1, axis) * tau,
            ))
    return rows


def format_verification(rows):
    head = f"{'sequence':<8} {'order':>5} {'axis':>4} {'predicted':>14} {'magnus':>14} {'eps-fit':>14} {'deviation':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r.sequence:<8} {r.order:>5} {r.axis:>4} {r.predicted:>14.8g} "
            f"{r.magnus:>14.8g} {r.expansion:>14.8g} {r.deviation:>10.3g}"
        )
    return "\n".join(lines)
