"""Monte Carlo ensemble experiment: DD cycles applied to dephasing spins.

Each ensemble member gets its own static offset and OU trajectory.  Pure
states are propagated as spinors through free delays (pure z phases) and
pulses, and the prepared magnetization component is read out at every cycle
boundary.  The irreducible envelope multiplies the result analytically.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import noise as noise_mod
from . import spin
from .sequences import (
    Delay,
    Pulse,
    PulseSpec,
    build_cycle,
    cycles_for_duration,
    normalize_name,
    prepared_axis,
)

# realizations per work unit; fixed so results do not depend on thread count
CHUNK_SIZE = 256


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one simulated decay curve.

    Times in seconds, frequencies in rad/s.
    """

    sequence: str
    tau: float
    noise: noise_mod.NoiseModel = field(default_factory=noise_mod.NoiseModel)
    eps: float = 0.0
    offset: float = 0.0
    pulse_mode: str = "delta"
    t_p: float = 37.5e-6
    duration: float = 0.5
    n_realizations: int = 2000
    variant: str | None = None
    dt: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "sequence", normalize_name(self.sequence))
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.pulse_mode not in ("delta", "finite"):
            raise ValueError(f"pulse_mode must be 'delta' or 'finite', got {self.pulse_mode!r}")
        if self.pulse_mode == "finite" and not self.t_p > 0:
            raise ValueError("finite pulses need t_p > 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.noise.sigma_ou > 0 and self.dt > self.noise.tau_corr / 10:
            raise ValueError(
                f"dt={self.dt} does not resolve tau_corr={self.noise.tau_corr} (need dt <= tau_corr/10)"
            )
        prepared_axis(self.sequence, self.variant)

    @property
    def seed(self):
        return self.noise.seed

    @property
    def pulse(self):
        t_p = self.t_p if self.pulse_mode == "finite" else 0.0
        return PulseSpec(t_p=t_p, eps=self.eps, offset=self.offset)

    def cycle(self):
        return build_cycle(self.sequence, self.tau, self.pulse)

    def n_cycles(self):
        return cycles_for_duration(self.duration, self.cycle())


@dataclass(frozen=True)
class EchoSeries:
    """Normalized magnetization sampled at cycle boundaries."""

    times: np.ndarray
    amplitudes: np.ndarray
    stderr: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.amplitudes) or len(t) != len(self.stderr):
            raise ValueError("times, amplitudes and stderr must be 1-D and equally long")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def _observation_axis(cycle, axis):
    """Image of the prepared axis under the ideal cycle (the echo direction)."""
    u = cycle.ideal_propagator()
    rho = spin.evolve(spin.polarized_state(axis), u)
    return spin.bloch_vector(rho)


def _readout(psi, axis):
    """Normalized magnetization ``<psi| n.sigma |psi>`` for spinors ``(..., 2)``."""
    a, b = psi[..., 0], psi[..., 1]
    cross = np.conj(a) * b
    return (
        axis[0] * 2 * cross.real
        + axis[1] * 2 * cross.imag
        + axis[2] * (np.abs(a) ** 2 - np.abs(b) ** 2)
    )


def _spinor(axis):
    """Spinor polarized along a Bloch unit vector."""
    theta = math.acos(max(-1.0, min(1.0, axis[2])))
    phi = math.atan2(axis[1], axis[0])
    return np.array([math.cos(theta / 2), math.sin(theta / 2) * np.exp(1j * phi)])


def _apply_phase(psi, phase):
    """Free evolution ``exp(-i phase S_z)`` with per-realization ``phase``."""
    half = np.exp(-0.5j * phase)
    psi[:, 0] *= half
    psi[:, 1] *= np.conj(half)


def _apply_unitary(psi, u):
    if u.ndim == 2:
        return psi @ u.T
    return np.einsum("nij,nj->ni", u, psi)


class _Field:
    """Static offsets plus OU trajectories of a chunk of realizations."""

    def __init__(self, config, indices, t_end):
        model = config.noise
        self.static = noise_mod.sample_static_offsets(model, indices)
        self.ou = None
        if model.sigma_ou > 0:
            T = max(t_end, 2 * config.dt)
            self.ou = noise_mod.generate_ou_ensemble(model, config.dt, T, indices)

    def phase(self, t0, t1):
        """Phases over the intervals ``[t0, t1]`` (arrays of equal shape)."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        ph = self.static[:, None] * (t1 - t0).reshape(1, -1)
        if self.ou is not None:
            ph = ph + (self.ou.integral(t1.ravel()) - self.ou.integral(t0.ravel()))
        return ph.reshape((len(self.static),) + t0.shape)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        v = np.repeat(self.static[:, None], t.size, axis=1)
        if self.ou is not None:
            v = v + self.ou.at(t.ravel())
        return v.reshape((len(self.static),) + t.shape)


def _schedule(cycle):
    """Start/end offsets of each element within one cycle."""
    starts, t = [], 0.0
    for e in cycle.elements:
        starts.append(t)
        t += e.duration
    return np.array(starts)


def _simulate_cycles(config, indices, resolution="cycle"):
    cycle = config.cycle()
    n_cycles = config.n_cycles()
    axis = prepared_axis(config.sequence, config.variant)
    obs_axis = _observation_axis(cycle, axis)
    elements = cycle.elements
    starts = _schedule(cycle)
    cycle_t0 = cycle.tau_c * np.arange(n_cycles)

    field_ = _Field(config, indices, n_cycles * cycle.tau_c)
    # precompute every free-evolution phase and every pulse detuning
    delay_idx = [j for j, e in enumerate(elements) if isinstance(e, Delay)]
    pulse_idx = [j for j, e in enumerate(elements) if isinstance(e, Pulse)]
    t0 = cycle_t0[:, None] + starts[delay_idx][None, :]
    t1 = t0 + np.array([elements[j].duration for j in delay_idx])[None, :]
    phases = field_.phase(t0, t1)
    finite = config.pulse_mode == "finite"
    delta_u = {j: spin.imperfect_pulse(elements[j].spec, 0.0, "delta") for j in pulse_idx}
    if finite:
        mid = cycle_t0[:, None] + (starts[pulse_idx] + config.pulse.t_p / 2)[None, :]
        detunings = field_.value(mid)

    psi = np.tile(_spinor(axis), (len(indices), 1))
    out = [_readout(psi, axis)]
    times = [0.0]
    for c in range(n_cycles):
        d = p = 0
        for j, e in enumerate(elements):
            if isinstance(e, Delay):
                if e.duration > 0:
                    _apply_phase(psi, phases[:, c, d])
                d += 1
            else:
                if finite:
                    u = spin.imperfect_pulse(e.spec, detunings[:, c, p], "finite")
                else:
                    u = delta_u[j]
                psi = _apply_unitary(psi, u)
                p += 1
            # zero-width pulses get no sample of their own (times stay increasing)
            if resolution == "element" and j < len(elements) - 1 and e.duration > 0:
                times.append(cycle_t0[c] + starts[j] + e.duration)
                out.append(_readout(psi, axis))
        times.append(cycle_t0[c] + cycle.tau_c)
        out.append(_readout(psi, obs_axis))
    return np.array(times), np.stack(out, axis=1)


def _simulate_hahn(config, indices):
    """Independent echo experiments at echo delays ``k * tau``."""
    cycle = config.cycle()
    (pulse,) = cycle.pulses
    n_points = cycles_for_duration(config.duration, cycle)
    k = np.arange(1, n_points + 1)
    half = k * config.tau / 2
    t_p = pulse.t_p
    field_ = _Field(config, indices, k[-1] * config.tau + t_p if n_points else 2 * config.dt)
    axis = prepared_axis(config.sequence, config.variant)
    obs_axis = _observation_axis(cycle, axis)

    n = len(indices)
    psi = np.tile(_spinor(axis), (n * n_points, 1))
    ph1 = field_.phase(np.zeros_like(half), half).reshape(-1)
    ph2 = field_.phase(half + t_p, 2 * half + t_p).reshape(-1)
    _apply_phase(psi, ph1)
    if config.pulse_mode == "finite":
        det = field_.value(half + t_p / 2).reshape(-1)
        psi = _apply_unitary(psi, spin.imperfect_pulse(pulse, det, "finite"))
    else:
        psi = _apply_unitary(psi, spin.imperfect_pulse(pulse, 0.0, "delta"))
    _apply_phase(psi, ph2)
    amps = _readout(psi, obs_axis).reshape(n, n_points)
    times = np.concatenate([[0.0], k * config.tau])
    return times, np.concatenate([np.ones((n, 1)), amps], axis=1)


def simulate_realizations(config, indices, resolution="cycle"):
    """Raw per-realization echo amplitudes, shape ``(len(indices), n_points)``.

    The irreducible envelope is already applied.  Returns ``(times, amplitudes)``.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if config.sequence == "hahn":
        if resolution != "cycle":
            raise ValueError("hahn echoes are separate experiments; only 'cycle' resolution")
        times, amps = _simulate_hahn(config, indices)
        # envelope over the true elapsed time including the pulse
        elapsed = times + np.where(times > 0, config.pulse.t_p, 0.0)
    else:
        times, amps = _simulate_cycles(config, indices, resolution)
        elapsed = times
    return times, amps * noise_mod.irreducible_envelope(elapsed, config.noise)


def run_trajectory(config, realization_index, resolution="cycle"):
    """Echo series of a single ensemble member (zero standard errors).

    ``resolution="element"`` also records the magnetization (along the
    prepared axis) after every element of nonzero duration inside each
    cycle, so around a delta pulse the state just before it is shown.
    Cycle boundaries are always included.
    """
    times, amps = simulate_realizations(config, [realization_index], resolution)
    return EchoSeries(times, amps[0], np.zeros_like(times), label=config.sequence)


def run_ensemble(config, threads=1):
    """Ensemble-averaged echo series with standard errors ``std / sqrt(N)``.

    Realizations ``0 .. N-1`` are processed in fixed chunks; the reduction is
    over the concatenated array, so the result is bit-identical for any
    ``threads``.
    """
    n = config.n_realizations
    chunks = [np.arange(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: simulate_realizations(config, idx), chunks))
    else:
        parts = [simulate_realizations(config, idx) for idx in chunks]
    times = parts[0][0]
    amps = np.concatenate([p[1] for p in parts], axis=0)
    mean = amps.mean(axis=0)
    if n > 1:
        stderr = amps.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    return EchoSeries(times, mean, stderr, label=config.sequence)


class NonPositiveAmplitudeError(ValueError):
    """The error-per-pulse metric is undefined once the echo changes sign."""


def error_per_pulse(series, pulses_per_cycle, t2_irr=math.inf, truncate=False):
    """Per-pulse fractional decay ``eta(n) = -ln(s(n)/s(0)) / n``.

    The irreducible envelope ``exp(-t/t2_irr)`` is divided out first.

    Parameters
    ----------
    series : EchoSeries
        Echo amplitudes at cycle boundaries, first point at ``t = 0``.
    pulses_per_cycle : int
    t2_irr : float
        Envelope constant to remove; ``inf`` leaves the series untouched.
    truncate : bool
        Stop silently at the first non-positive amplitude instead of raising.

    Returns
    -------
    n, eta : ndarray
        Cumulative pulse counts (``n > 0``) and the metric at each.
    """
    s = np.asarray(series.amplitudes, dtype=float) / np.exp(-np.asarray(series.times) / t2_irr)
    if s[0] <= 0:
        raise NonPositiveAmplitudeError("initial amplitude must be positive")
    bad = np.flatnonzero(s[1:] <= 0)
    stop = len(s) - 1
    if bad.size:
        if not truncate:
            raise NonPositiveAmplitudeError(
                f"amplitude non-positive after {(bad[0] + 1) * pulses_per_cycle} pulses"
            )
        stop = bad[0]
    n = pulses_per_cycle * np.arange(1, stop + 1)
    eta = -np.log(s[1 : stop + 1] / s[0]) / n
    return n, eta


def write_series_csv(series, path):
    """Write ``time_s, amplitude, stderr`` rows (caller handles atomicity)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "amplitude", "stderr"])
        for t, a, e in zip(series.times, series.amplitudes, series.stderr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(e))])


def read_series_csv(path, label=""):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        cols = {k: np.array([float(r[k]) for r in rows]) for k in ("time_s", "amplitude", "stderr")}
    except KeyError as exc:
        raise ValueError(f"{path}: missing column {exc}") from None
    return EchoSeries(cols["time_s"], cols["amplitude"], cols["stderr"], label=label)


def series_filename(sequence, tau):
    """``<sequence>_tau<microseconds>.csv``."""
    us = tau * 1e6
    tag = str(int(round(us))) if abs(us - round(us)) < 1e-6 else f"{us:g}".replace(".", "p")
    return f"{normalize_name(sequence)}_tau{tag}.csv"


def with_noise(config, **changes):
    """Config copy with fields of its noise model replaced."""
    return replace(config, noise=replace(config.noise, **changes))
