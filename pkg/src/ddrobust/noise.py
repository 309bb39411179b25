"""Classical dephasing field: quasi-static offset + Ornstein-Uhlenbeck drift.

The field ``dw_z(t)`` seen by one spin of the ensemble is a Gaussian static
offset (field inhomogeneity) plus a stationary OU process (slow molecular
motion).  Fast fluctuations are not sampled; they enter as the deterministic
envelope ``exp(-t / t2_irr)``.

Every random draw comes from a Philox stream keyed by
``(seed, realization_index, stream)``, so a realization is reproducible on its
own regardless of how an ensemble is chunked or parallelized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize, signal

_STATIC_STREAM = 0
_OU_STREAM = 1


@dataclass(frozen=True)
class NoiseModel:
    """Parameters of the dephasing environment.

    Attributes
    ----------
    sigma_static : float
        Standard deviation of the static offset, rad/s.
    sigma_ou : float
        Stationary standard deviation of the OU component, rad/s.
    tau_corr : float
        OU correlation time, s.
    t2_irr : float
        Irreducible decay constant of the fast noise (and T1), s; ``inf``
        switches the envelope off.
    seed : int
        Base seed of the ensemble.
    """

    sigma_static: float = 0.0
    sigma_ou: float = 0.0
    tau_corr: float = 1.0
    t2_irr: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.sigma_static < 0 or self.sigma_ou < 0:
            raise ValueError("noise amplitudes must be non-negative")
        if not self.tau_corr > 0:
            raise ValueError(f"tau_corr must be positive, got {self.tau_corr}")
        if not self.t2_irr > 0:
            raise ValueError(f"t2_irr must be positive, got {self.t2_irr}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class NoiseTrajectory:
    """Samples of ``dw_z(t)`` on a uniform grid starting at ``t0``.

    ``values`` may carry leading ensemble axes; time is the last axis.
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if np.shape(self.values)[-1] < 2:
            raise ValueError("a trajectory needs at least two samples")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(np.shape(self.values)[-1])

    @property
    def t_end(self):
        return self.t0 + self.dt * (np.shape(self.values)[-1] - 1)

    @cached_property
    def _cumulative(self):
        v = np.asarray(self.values, dtype=float)
        cum = np.zeros_like(v)
        cum[..., 1:] = np.cumsum((v[..., 1:] + v[..., :-1]) * (self.dt / 2), axis=-1)
        return cum

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        tol = 1e-9 * max(self.t_end - self.t0, self.dt)
        if np.any(t < self.t0 - tol) or np.any(t > self.t_end + tol):
            raise ValueError(
                f"query outside trajectory span [{self.t0}, {self.t_end}]"
            )
        n = np.shape(self.values)[-1]
        u = np.clip((t - self.t0) / self.dt, 0.0, n - 1)
        k = np.minimum(np.floor(u).astype(int), n - 2)
        return k, (u - k) * self.dt

    def at(self, t):
        """Linear interpolation of the field at times ``t``."""
        k, s = self._locate(t)
        v = np.asarray(self.values, dtype=float)
        return v[..., k] + (v[..., k + 1] - v[..., k]) * (s / self.dt)

    def integral(self, t):
        """``int_{t0}^{t} dw_z`` of the piecewise-linear interpolant.

        Exact for the interpolant, i.e. the trapezoidal rule on the grid plus
        the partial interval.  ``t`` may be an array; the result has shape
        ``values.shape[:-1] + t.shape``.
        """
        k, s = self._locate(t)
        v = np.asarray(self.values, dtype=float)
        vk = v[..., k]
        slope = (v[..., k + 1] - vk) / self.dt
        return self._cumulative[..., k] + vk * s + slope * s**2 / 2


def _rng(model, realization_index, stream):
    seq = np.random.SeedSequence(
        int(model.seed), spawn_key=(int(realization_index), stream)
    )
    return np.random.Generator(np.random.Philox(seq))


def sample_static_offset(model, realization_index):
    """Static offset (rad/s) of one ensemble member."""
    if model.sigma_static == 0:
        return 0.0
    return float(model.sigma_static * _rng(model, realization_index, _STATIC_STREAM).standard_normal())


def sample_static_offsets(model, realization_indices):
    return np.array([sample_static_offset(model, i) for i in realization_indices])


def generate_ou_trajectory(model, dt, T, realization_index):
    """Exact-discretization OU samples on ``[0, T]`` (grid rounded up to cover T).

    ``x[n+1] = x[n] exp(-dt/tau) + sigma sqrt(1 - exp(-2 dt/tau)) xi[n]`` with a
    stationary first sample.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not dt < T:
        raise ValueError(f"need dt < T, got dt={dt}, T={T}")
    n = int(math.ceil(T / dt - 1e-9)) + 1
    if model.sigma_ou == 0:
        return NoiseTrajectory(0.0, dt, np.zeros(n))
    xi = _rng(model, realization_index, _OU_STREAM).standard_normal(n)
    a = math.exp(-dt / model.tau_corr)
    b = model.sigma_ou * math.sqrt(-math.expm1(-2 * dt / model.tau_corr))
    drive = b * xi
    drive[0] = model.sigma_ou * xi[0]
    values = signal.lfilter([1.0], [1.0, -a], drive)
    return NoiseTrajectory(0.0, dt, values)


def generate_ou_ensemble(model, dt, T, realization_indices):
    """Stack of OU trajectories, one row per realization index."""
    trajs = [generate_ou_trajectory(model, dt, T, i) for i in realization_indices]
    return NoiseTrajectory(0.0, dt, np.stack([tr.values for tr in trajs]))


def accumulated_phase(traj, t0, t1):
    """Phase ``int_{t0}^{t1} dw_z dt`` in rad accumulated from the trajectory."""
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0}, {t1}")
    return traj.integral(t1) - traj.integral(t0)


def irreducible_envelope(t, model):
    """Deterministic attenuation ``exp(-t / t2_irr)`` of transverse magnetization."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("envelope is defined for t >= 0")
    return np.exp(-t / model.t2_irr)


# --- analytic decay laws used for calibration -------------------------------

def ou_free_phase_variance(t, sigma, tau_corr):
    """Variance of ``int_0^t x`` for a stationary OU process."""
    x = np.asarray(t, dtype=float) / tau_corr
    return 2 * sigma**2 * tau_corr**2 * (x + np.expm1(-x))


def ou_echo_phase_variance(t, sigma, tau_corr):
    """Variance of the Hahn-echo phase ``int_0^{t/2} x - int_{t/2}^t x``."""
    x = np.asarray(t, dtype=float) / tau_corr
    return 2 * sigma**2 * tau_corr**2 * (x - 3 + 4 * np.exp(-x / 2) - np.exp(-x))


def _log_fid(t, model):
    var = model.sigma_static**2 * np.asarray(t, dtype=float) ** 2
    var = var + ou_free_phase_variance(t, model.sigma_ou, model.tau_corr)
    return -var / 2 - np.asarray(t, dtype=float) / model.t2_irr


def _log_hahn(t, model):
    var = ou_echo_phase_variance(t, model.sigma_ou, model.tau_corr)
    return -var / 2 - np.asarray(t, dtype=float) / model.t2_irr


def fid_signal(t, model):
    """Ensemble-averaged free-induction decay of the model."""
    return np.exp(_log_fid(t, model))


def hahn_signal(t, model):
    """Ensemble-averaged Hahn-echo amplitude (ideal pulse) at echo time ``t``."""
    return np.exp(_log_hahn(t, model))


def calibrate(fid_time=2.9e-3, hahn_time=106e-3, plateau=276e-3, tau_corr=0.2, seed=0):
    """Noise model whose analytic FID and Hahn echo fall to ``1/e`` at the targets.

    ``t2_irr`` is the plateau.  Only the combination of OU amplitude and
    correlation time is fixed by the Hahn target, so ``tau_corr`` is an input.
    """
    if hahn_time / plateau >= 1:
        raise ValueError("plateau alone already decays faster than the Hahn target")

    def hahn_gap(log_sigma):
        m = NoiseModel(0.0, math.exp(log_sigma), tau_corr, plateau, seed)
        return float(_log_hahn(hahn_time, m)) + 1.0

    sigma_ou = math.exp(optimize.brentq(hahn_gap, -10.0, 20.0, xtol=1e-14))

    def fid_gap(log_sigma):
        m = NoiseModel(math.exp(log_sigma), sigma_ou, tau_corr, plateau, seed)
        return float(_log_fid(fid_time, m)) + 1.0

    sigma_static = math.exp(optimize.brentq(fid_gap, -10.0, 20.0, xtol=1e-14))
    return NoiseModel(sigma_static, sigma_ou, tau_corr, plateau, seed)
