"""Exact 2x2 linear algebra for a single spin-1/2.

Operators are plain ``numpy`` arrays of shape ``(..., 2, 2)`` and dtype
``complex128``.  Spin operators are normalized as ``S_k = sigma_k / 2`` so a
pi rotation about an in-plane axis is ``exp(-i pi S_phi)``.  All dynamics
live in the rotating frame; the Zeeman term never enters an observable.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

SX = SIGMA_X / 2
SY = SIGMA_Y / 2
SZ = SIGMA_Z / 2
SPIN_OPERATORS = (SX, SY, SZ)

# rotation angle this close to pi leaves the principal logarithm ambiguous
BRANCH_TOLERANCE = 1e-6


class BranchAmbiguityError(ValueError):
    """Raised when a propagator's rotation angle is too close to pi to take a
    unique principal logarithm."""


def in_plane_operator(phase):
    """``cos(phase) S_x + sin(phase) S_y``; broadcasts over ``phase``."""
    phase = np.asarray(phase, dtype=float)
    return np.cos(phase)[..., None, None] * SX + np.sin(phase)[..., None, None] * SY


def spin_components(op):
    """Return ``(c0, cx, cy, cz)`` with ``op = c0*1 + cx*S_x + cy*S_y + cz*S_z``.

    Coefficients are real for Hermitian ``op``; complex otherwise.
    """
    op = np.asarray(op, dtype=complex)
    c0 = (op[..., 0, 0] + op[..., 1, 1]) / 2
    cx = op[..., 0, 1] + op[..., 1, 0]
    cy = 1j * (op[..., 0, 1] - op[..., 1, 0])
    cz = op[..., 0, 0] - op[..., 1, 1]
    return c0, cx, cy, cz


def from_components(c0, cx, cy, cz):
    """Inverse of :func:`spin_components`; broadcasts over the coefficients."""
    c0, cx, cy, cz = np.broadcast_arrays(
        *(np.asarray(c, dtype=complex) for c in (c0, cx, cy, cz))
    )
    out = np.empty(c0.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c0 + cz / 2
    out[..., 1, 1] = c0 - cz / 2
    out[..., 0, 1] = (cx - 1j * cy) / 2
    out[..., 1, 0] = (cx + 1j * cy) / 2
    return out


def propagator(hamiltonian, t=1.0):
    """Closed-form ``exp(-i H t)`` for Hermitian 2x2 ``H`` (rad/s) and time ``t``.

    Uses the Euler formula for the traceless part, so the result is exact up
    to rounding; the identity component contributes a global phase.
    Broadcasts over leading dimensions of ``hamiltonian`` and ``t``.
    """
    c0, cx, cy, cz = (np.real(c) for c in spin_components(hamiltonian))
    t = np.asarray(t, dtype=float)
    bx, by, bz = cx * t, cy * t, cz * t
    angle = np.sqrt(bx**2 + by**2 + bz**2)
    half = angle / 2
    cos_h = np.cos(half)
    # sin(half)/angle, finite at angle -> 0
    s = np.sinc(half / np.pi) / 2
    phase = np.exp(-1j * c0 * t)
    out = np.empty(np.shape(angle) + (2, 2), dtype=complex)
    out[..., 0, 0] = cos_h - 1j * s * bz
    out[..., 1, 1] = cos_h + 1j * s * bz
    out[..., 0, 1] = -1j * s * (bx - 1j * by)
    out[..., 1, 0] = -1j * s * (bx + 1j * by)
    return phase[..., None, None] * out


def rotation_propagator(phase, angle):
    """Ideal rotation ``exp(-i angle (cos(phase) S_x + sin(phase) S_y))``."""
    return propagator(in_plane_operator(phase), angle)


def imperfect_pulse(pulse, detuning=0.0, mode="delta"):
    """Propagator of one pulse with flip-angle error and optional detuning.

    Parameters
    ----------
    pulse : PulseSpec
        Pulse phase, nominal angle, duration ``t_p`` and flip-angle error
        ``eps``.
    detuning : float or ndarray
        Off-resonance ``dw_z`` in rad/s acting during a finite pulse (the
        pulse's own ``offset`` is added to it).  Ignored in ``"delta"`` mode.
    mode : {"delta", "finite"}
        ``"delta"`` gives ``exp(-i (1+eps) theta S_phi)``;  ``"finite"`` gives
        ``exp(-i (dw_z S_z + w1 S_phi) t_p)`` with ``w1 = (1+eps) theta / t_p``.
    """
    angle = (1.0 + pulse.eps) * pulse.nominal_angle
    if mode == "delta":
        return rotation_propagator(pulse.phase, angle)
    if mode != "finite":
        raise ValueError(f"unknown pulse mode {mode!r}")
    if not pulse.t_p > 0:
        raise ValueError(f"finite pulse needs t_p > 0, got {pulse.t_p}")
    w1 = angle / pulse.t_p
    dz = np.asarray(detuning, dtype=float) + pulse.offset
    h = from_components(0.0, w1 * np.cos(pulse.phase), w1 * np.sin(pulse.phase), dz)
    return propagator(h, pulse.t_p)


def dagger(op):
    return np.conj(np.swapaxes(op, -1, -2))


def evolve(rho, u):
    """``rho -> U rho U^dagger``."""
    return u @ rho @ dagger(u)


def expectation(rho, op):
    """Real expectation value ``Tr(rho A)`` of a Hermitian operator."""
    return np.real(np.trace(rho @ op, axis1=-2, axis2=-1))


def magnetization(rho, axis):
    """Normalized magnetization ``2 Tr(rho n.S)`` along the unit vector ``axis``.

    Equals 1 for the fully polarized state along ``axis``.
    """
    axis = np.asarray(axis, dtype=float)
    op = from_components(0.0, axis[..., 0], axis[..., 1], axis[..., 2])
    return 2 * expectation(rho, op)


def polarized_state(axis):
    """Pure density matrix polarized along the unit Bloch vector ``axis``."""
    axis = np.asarray(axis, dtype=float)
    return from_components(0.5, axis[..., 0], axis[..., 1], axis[..., 2])


def bloch_vector(rho):
    _, cx, cy, cz = spin_components(rho)
    # rho = 1/2 + r.S  => components of rho are r
    return np.real(np.stack([cx, cy, cz], axis=-1))


def is_unitary(u, atol=1e-12):
    return bool(np.linalg.norm(dagger(u) @ u - IDENTITY) < atol)


def is_hermitian(op, atol=1e-12):
    return bool(np.linalg.norm(op - dagger(op)) < atol)


def gate_fidelity(u, v):
    """Global-phase-insensitive overlap ``|Tr(U^dagger V)| / 2`` (1 for equal gates)."""
    return float(np.abs(np.trace(dagger(u) @ v)) / 2)


def to_su2(u):
    """Project a unitary onto SU(2) with non-negative trace.

    Removes the global phase so that the remaining rotation angle lies in
    ``[0, pi]``.
    """
    det = np.linalg.det(u)
    v = u / np.sqrt(det)[..., None, None]
    sign = np.where(np.real(np.trace(v, axis1=-2, axis2=-1)) < 0, -1.0, 1.0)
    return v * sign[..., None, None]


def rotation_angle(u):
    """Rotation angle in ``[0, pi]`` of a unitary, ignoring global phase."""
    v = to_su2(u)
    c0, cx, cy, cz = spin_components(v)
    a = np.sqrt(np.abs(cx) ** 2 + np.abs(cy) ** 2 + np.abs(cz) ** 2) / 2
    return 2 * np.arctan2(a, np.real(c0))


def effective_hamiltonian(u, tau_c):
    """Traceless Hermitian ``H`` with ``exp(-i H tau_c) = U`` up to global phase.

    Principal branch: the rotation angle of ``U`` must stay below pi.

    Raises
    ------
    BranchAmbiguityError
        If the rotation angle is within ``BRANCH_TOLERANCE`` of pi.
    """
    if not tau_c > 0:
        raise ValueError(f"tau_c must be positive, got {tau_c}")
    v = to_su2(u)
    c0, cx, cy, cz = spin_components(v)
    # v = cos(h) - i sin(h) n.sigma, so i*c_k = 2 sin(h) n_k
    ax, ay, az = (np.real(1j * c) for c in (cx, cy, cz))
    norm = np.sqrt(ax**2 + ay**2 + az**2) / 2
    half = np.arctan2(norm, np.real(c0))
    if np.any(np.pi - 2 * half < BRANCH_TOLERANCE):
        raise BranchAmbiguityError(
            "rotation angle within %.0e of pi; principal logarithm ambiguous"
            % BRANCH_TOLERANCE
        )
    # H tau_c = 2h n.S
    scale = 1.0 / (np.sinc(half / np.pi) * tau_c)
    return from_components(0.0, ax * scale, ay * scale, az * scale)
