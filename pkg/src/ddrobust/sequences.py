"""Catalog of dynamical-decoupling cycles as timed lists of delays and pulses.

Inter-pulse delays ``tau`` are measured edge to edge, so with finite pulses of
length ``t_p`` a cycle of ``n`` pulses lasts ``n * (tau + t_p)``; for delta
pulses this is ``n * tau``.  Symmetric cycles open and close with ``tau/2``;
asymmetric cycles put the full ``tau`` after every pulse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import spin

X = 0.0
Y = np.pi / 2

# pi-pulse duration for a 2*pi*13.3 kHz rf field
DEFAULT_PULSE_LENGTH = 37.5e-6


@dataclass(frozen=True)
class PulseSpec:
    """One (nominally) pi pulse.

    ``phase`` is the azimuth of the rotation axis in rad, ``t_p`` its length in
    seconds (0 for delta pulses), ``eps`` the fractional flip-angle error and
    ``offset`` an extra static detuning in rad/s felt during a finite pulse.
    """

    phase: float = 0.0
    nominal_angle: float = np.pi
    t_p: float = 0.0
    eps: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.t_p < 0:
            raise ValueError(f"pulse length must be >= 0, got {self.t_p}")

    def with_phase(self, phase):
        return replace(self, phase=float(phase))


@dataclass(frozen=True)
class Delay:
    duration: float


@dataclass(frozen=True)
class Pulse:
    spec: PulseSpec

    @property
    def duration(self):
        return self.spec.t_p


Element = Union[Delay, Pulse]


@dataclass(frozen=True)
class SequenceCycle:
    elements: tuple
    tau: float
    tau_c: float
    label: str
    time_symmetric: bool

    @property
    def pulses(self):
        return [e.spec for e in self.elements if isinstance(e, Pulse)]

    @property
    def n_pulses(self):
        return len(self.pulses)

    @property
    def is_delta(self):
        return all(p.t_p == 0 for p in self.pulses)

    def with_eps(self, eps):
        """Same cycle with every pulse's flip-angle error set to ``eps``."""
        elements = tuple(
            Pulse(replace(e.spec, eps=eps)) if isinstance(e, Pulse) else e
            for e in self.elements
        )
        return replace(self, elements=elements)

    def ideal_propagator(self):
        """Noise-free cycle propagator with ``eps = 0`` delta pulses."""
        u = spin.IDENTITY
        for p in self.pulses:
            u = spin.rotation_propagator(p.phase, p.nominal_angle) @ u
        return u

    def propagator(self, mode="delta"):
        """Noise-free cycle propagator including the pulses' own errors."""
        u = spin.IDENTITY
        for p in self.pulses:
            u = spin.imperfect_pulse(p, 0.0, mode) @ u
        return u


def _kdd_block(phi):
    return [np.pi / 6 + phi, phi, np.pi / 2 + phi, phi, np.pi / 6 + phi]


XY4_PHASES = [X, Y, X, Y]
XY8_PHASES = XY4_PHASES + XY4_PHASES[::-1]

# name -> (pulse phases, time symmetric)
_CATALOG = {
    "cp": ([Y, Y], True),
    "cpmg": ([Y, Y], True),
    "xy4s": (XY4_PHASES, True),
    "xy4a": (XY4_PHASES, False),
    "xy8s": (XY8_PHASES, True),
    "xy8a": (XY8_PHASES, False),
    "kddx": (_kdd_block(0.0) * 4, True),
    "kddxy": (_kdd_block(X) + _kdd_block(Y) + _kdd_block(X) + _kdd_block(Y), True),
}

SEQUENCE_NAMES = ("hahn",) + tuple(_CATALOG)
# DD cycles whose ideal propagator is the identity (up to sign)
CATALOG = tuple(_CATALOG)
LABELS = {
    "hahn": "Hahn",
    "cp": "CP",
    "cpmg": "CPMG",
    "xy4s": "XY4(s)",
    "xy4a": "XY4(a)",
    "xy8s": "XY8(s)",
    "xy8a": "XY8(a)",
    "kddx": "KDD_x",
    "kddxy": "KDD_xy",
    "fid": "FID",
}


def normalize_name(kind):
    name = str(kind).strip().lower().replace("_", "").replace("-", "")
    name = name.replace("(", "").replace(")", "")
    if name not in SEQUENCE_NAMES and name != "fid":
        raise ValueError(
            f"unknown sequence {kind!r}; expected one of {', '.join(SEQUENCE_NAMES)}"
        )
    return name


def build_cycle(kind, tau, pulse=None):
    """Build one cycle of the named sequence.

    Parameters
    ----------
    kind : str
        One of ``hahn, cp, cpmg, xy4s, xy4a, xy8s, xy8a, kddx, kddxy``
        (case-insensitive), or ``fid`` for plain free evolution.
    tau : float
        Inter-pulse delay in seconds.  For ``hahn`` this is the total echo
        delay (one pi pulse at its midpoint); for ``fid`` the sampling step.
    pulse : PulseSpec, optional
        Template giving ``t_p``, ``eps`` and ``offset``; its phase is replaced
        by the sequence's phases.
    """
    name = normalize_name(kind)
    if not tau >= 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    pulse = PulseSpec() if pulse is None else pulse
    tau = float(tau)

    if name == "fid":
        elements = [Delay(tau)]
        symmetric = True
    elif name == "hahn":
        elements = [Delay(tau / 2), Pulse(pulse.with_phase(Y)), Delay(tau / 2)]
        symmetric = True
    else:
        phases, symmetric = _CATALOG[name]
        elements = []
        for i, phi in enumerate(phases):
            if symmetric:
                elements.append(Delay(tau / 2 if i == 0 else tau))
            elements.append(Pulse(pulse.with_phase(phi)))
            if not symmetric:
                elements.append(Delay(tau))
        if symmetric:
            elements.append(Delay(tau / 2))

    tau_c = math.fsum(e.duration for e in elements)
    return SequenceCycle(tuple(elements), tau, tau_c, LABELS[name], symmetric)


def cycles_for_duration(T, cycle):
    """Number of complete cycles that fit in ``T`` seconds (``floor(T / tau_c)``).

    Quotients within 1e-12 relative of an integer are rounded to it so that
    exact multiples survive floating-point division.
    """
    if T < 0:
        raise ValueError(f"duration must be >= 0, got {T}")
    if cycle.tau_c <= 0:
        raise ValueError("cycle has zero duration")
    q = T / cycle.tau_c
    k = round(q)
    if abs(q - k) <= 1e-12 * max(1.0, q):
        return int(k)
    return int(math.floor(q))


def reference_axis(kind):
    """In-plane phase of the axis that defines 'parallel' for the sequence.

    CP, CPMG and Hahn pulse along y; every other cycle is referenced to x.
    """
    return Y if normalize_name(kind) in ("cp", "cpmg", "hahn") else X


def default_variant(kind):
    name = normalize_name(kind)
    return "perpendicular" if name in ("cp", "hahn") else "parallel"


def prepared_axis(kind, variant=None):
    """Bloch unit vector of the prepared transverse state.

    ``variant`` is ``"parallel"`` or ``"perpendicular"`` relative to the
    sequence's reference pulse axis, or ``"x"``/``"y"`` to pick directly.
    ``None`` selects the sequence default (CP perpendicular, CPMG parallel).
    """
    variant = default_variant(kind) if variant is None else str(variant).lower()
    ref = reference_axis(kind)
    if variant == "x":
        phi = X
    elif variant == "y":
        phi = Y
    elif variant == "parallel":
        phi = ref
    elif variant == "perpendicular":
        phi = ref - np.pi / 2 if ref == Y else ref + np.pi / 2
    else:
        raise ValueError(f"unknown initial-state variant {variant!r}")
    return np.array([np.cos(phi), np.sin(phi), 0.0])


def initial_state_for(kind, variant=None):
    """Density matrix of the prepared state; see :func:`prepared_axis`."""
    return spin.polarized_state(prepared_axis(kind, variant))
