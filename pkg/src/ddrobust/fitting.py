"""Single- and double-exponential fits of echo decays and decay-vs-delay scans.

Models are parameterized by rates internally so that a vanishing decay is a
regular point of the least-squares problem.  Fits use MINPACK's
Levenberg-Marquardt (monotone residual decrease on accepted steps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .experiment import run_ensemble
from .sequences import CATALOG, normalize_name

XTOL = 1e-10
MAX_ITERATIONS = 200
# fall back to one component when the two decay times are this close
SEPARATION_LIMIT = 0.8
NOISE_FLOOR_SIGMAS = 3.0


class FitError(RuntimeError):
    """A fit did not converge or its input was degenerate."""


@dataclass(frozen=True)
class DecayFit:
    """Fitted ``s(t) = a exp(-t/t2_f) + b exp(-t/t2_s)``.

    A single-exponential fit stores ``A exp(-t/T2)`` as ``a = A``, ``b = 0``
    and ``t2_f = t2_s = T2``.  When a double fit falls back to one component
    the amplitude is carried by the slow term instead (``a = 0``).
    """

    model: str
    a: float
    t2_f: float
    b: float
    t2_s: float
    residual: float
    converged: bool
    fallback: bool = False
    n_excluded: int = 0
    initial_residual: float = math.nan
    n_evaluations: int = 0
    message: str = ""

    @property
    def t2(self):
        return self.t2_s

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        out = self.b * np.exp(-t / self.t2_s)
        if self.a != 0:
            out = out + self.a * np.exp(-t / self.t2_f)
        return out


def _prepare(series):
    t = np.asarray(series.times, dtype=float)
    y = np.asarray(series.amplitudes, dtype=float)
    err = np.asarray(series.stderr, dtype=float)
    keep = np.ones(len(t), dtype=bool)
    if np.any(err > 0):
        keep = ~((err > 0) & (y < NOISE_FLOOR_SIGMAS * err))
        floor = err[err > 0].min()
        sigma = np.maximum(err, floor)
    else:
        sigma = np.ones_like(y)
    return t[keep], y[keep], sigma[keep], int((~keep).sum())


def _loglinear(t, y):
    """Amplitude and rate of ``A exp(-k t)`` from a line through ``log y``."""
    pos = y > 0
    if pos.sum() < 2 or np.ptp(t[pos]) == 0:
        return float(np.max(y)), 0.0
    slope, icept = np.polyfit(t[pos], np.log(y[pos]), 1)
    return float(math.exp(icept)), float(-slope)


def _single_model(p, t):
    return p[0] * np.exp(-p[1] * t)


def _single_jac(p, t):
    e = np.exp(-p[1] * t)
    return np.column_stack([e, -p[0] * t * e])


def _double_model(p, t):
    return p[0] * np.exp(-p[1] * t) + p[2] * np.exp(-p[3] * t)


def _double_jac(p, t):
    ef, es = np.exp(-p[1] * t), np.exp(-p[3] * t)
    return np.column_stack([ef, -p[0] * t * ef, es, -p[2] * t * es])


def _lsq(model, jac, p0, t, y, sigma):
    def resid(p):
        return (model(p, t) - y) / sigma

    def jacobian(p):
        return jac(p, t) / sigma[:, None]

    r0 = float(np.linalg.norm(resid(p0)))
    res = optimize.least_squares(
        resid, p0, jac=jacobian, method="lm", xtol=XTOL, ftol=1e-14, gtol=1e-14,
        max_nfev=MAX_ITERATIONS,
    )
    r = float(np.linalg.norm(res.fun))
    # keep the start point if LM could not improve on it
    if not r <= r0:
        return np.asarray(p0, dtype=float), r0, r0, False, res.nfev
    return res.x, r, r0, bool(res.status > 0), res.nfev


def fit_single_exponential(series):
    """Least-squares ``A exp(-t/T2)``.

    Weighted by the standard errors when the series carries them; points
    below the noise floor (3 standard errors) are dropped.

    Raises
    ------
    FitError
        Too few points, constant input, or no finite decay time.
    """
    t, y, sigma, n_excl = _prepare(series)
    if len(t) < 3:
        raise FitError(f"need at least 3 points above the noise floor, have {len(t)}")
    if np.ptp(y) == 0:
        raise FitError("constant series: decay time is infinite")
    p0 = np.array(_loglinear(t, y))
    p, r, r0, ok, nfev = _lsq(_single_model, _single_jac, p0, t, y, sigma)
    span = np.ptp(t)
    if not np.all(np.isfinite(p)):
        raise FitError("single-exponential fit diverged")
    if not p[1] * span > 1e-9:
        raise FitError(f"no finite decay time (rate {p[1]:.3g} 1/s)")
    return DecayFit(
        "single", float(p[0]), float(1 / p[1]), 0.0, float(1 / p[1]), r, ok,
        n_excluded=n_excl, initial_residual=r0, n_evaluations=nfev,
        message="" if ok else "iteration limit reached",
    )


def _double_start(t, y):
    n = len(t)
    third = max(2, n // 3)
    b, ks = _loglinear(t[-third:], y[-third:])
    ks = max(ks, 0.0)
    rest = y[:third] - b * np.exp(-ks * t[:third])
    a, kf = _loglinear(t[:third], rest)
    if not (a > 0 and kf > ks):
        _, k1 = _loglinear(t[:third], y[:third])
        kf = max(k1, 2 * ks, 1.0 / max(np.ptp(t), 1e-300))
        a = max(y[0] - b, 1e-3 * abs(y[0]))
    return np.array([a, kf, b, ks])


def fit_double_exponential(series):
    """Least-squares ``a exp(-t/T2f) + b exp(-t/T2s)`` with ``T2f <= T2s``.

    Starts from log-linear fits of the first and last thirds of the data.
    Falls back to :func:`fit_single_exponential` (``fallback=True``) when the
    components are ill separated (``T2f/T2s > 0.8``), one amplitude is
    negligible or non-positive, or the iteration does not converge.
    """
    t, y, sigma, n_excl = _prepare(series)
    if len(t) < 6:
        raise FitError(f"need at least 6 points above the noise floor, have {len(t)}")
    if np.ptp(y) == 0:
        raise FitError("constant series: decay time is infinite")
    p0 = _double_start(t, y)
    p, r, r0, ok, nfev = _lsq(_double_model, _double_jac, p0, t, y, sigma)
    a, kf, b, ks = p
    if kf < ks:
        a, kf, b, ks = b, ks, a, kf

    reason = ""
    if not (ok and np.all(np.isfinite(p))):
        reason = "double fit did not converge"
    elif not (ks > 0 and kf > 0):
        reason = "non-positive decay rate"
    elif ks / kf > SEPARATION_LIMIT:
        reason = "components ill separated"
    elif not (a > 0 and b > 0) or min(a, b) < 1e-3 * (a + b):
        reason = "negligible or negative component"
    if reason:
        single = fit_single_exponential(series)
        return replace(single, a=0.0, b=single.a, fallback=True, message=reason)
    return DecayFit(
        "double", float(a), float(1 / kf), float(b), float(1 / ks), r, True,
        n_excluded=n_excl, initial_residual=r0, n_evaluations=nfev,
    )


def fit(series, model="single"):
    if model == "single":
        return fit_single_exponential(series)
    if model == "double":
        return fit_double_exponential(series)
    raise ValueError(f"model must be 'single' or 'double', got {model!r}")


def decay_time(series, level=1 / math.e):
    """First time the series falls to ``level`` (log-linear interpolation).

    Used for FID and Hahn-echo decay times, which are not exponential.
    """
    t = np.asarray(series.times, dtype=float)
    y = np.asarray(series.amplitudes, dtype=float)
    below = np.flatnonzero(y <= level)
    if below.size == 0:
        raise FitError(f"series never falls to {level:.3g}")
    i = below[0]
    if i == 0:
        return float(t[0])
    y0, y1 = y[i - 1], y[i]
    if y1 > 0:
        frac = math.log(y0 / level) / math.log(y0 / y1)
    else:
        frac = (y0 - level) / (y0 - y1)
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


@dataclass(frozen=True)
class ScanRow:
    sequence: str
    tau: float
    model: str
    a: float
    t2_f: float
    b: float
    t2_s: float
    residual: float
    converged: bool
    message: str = ""

    @property
    def t2(self):
        return self.t2_s


def _variants(sequence):
    if sequence in ("cp", "cpmg", "hahn", "fid"):
        return [None]
    return ["x", "y"]


def _scan_point(base, sequence, tau, model, threads):
    fits, errors = [], []
    for variant in _variants(sequence):
        cfg = replace(base, sequence=sequence, tau=tau, variant=variant)
        try:
            fits.append(fit(run_ensemble(cfg, threads=threads), model))
        except FitError as exc:
            errors.append(f"{variant or 'default'}: {exc}")
    if errors or not fits:
        return ScanRow(sequence, tau, model, *([math.nan] * 5), False, "; ".join(errors))
    mean = lambda name: float(np.mean([getattr(f, name) for f in fits]))
    label = "double" if any(f.model == "double" for f in fits) else "single"
    notes = sorted({f.message for f in fits if f.message})
    return ScanRow(
        sequence, tau, label if model == "double" else "single",
        mean("a"), mean("t2_f"), mean("b"), mean("t2_s"), mean("residual"),
        all(f.converged for f in fits), "; ".join(notes),
    )


def decay_vs_tau_scan(base, taus, sequences=None, model="single", threads=1):
    """Fitted decay times for every ``(sequence, tau)`` pair.

    Sequences other than CP/CPMG are run from both ``I_x`` and ``I_y`` and
    their fit parameters averaged.  A failing fit flags its row
    (``converged=False``) without stopping the scan.  Rows are ordered by
    sequence (catalog order) then ``tau``.
    """
    if any(not tau > 0 for tau in taus):
        raise ValueError("tau values must be positive")
    names = [normalize_name(s) for s in (sequences or CATALOG)]
    order = {name: i for i, name in enumerate(("hahn",) + CATALOG + ("fid",))}
    names = sorted(dict.fromkeys(names), key=order.__getitem__)
    jobs = [(s, float(tau)) for s in names for tau in sorted(taus)]
    return [_scan_point(base, s, tau, model, threads) for s, tau in jobs]


SCAN_COLUMNS = ["sequence", "tau_s", "model", "a", "T2f_s", "b", "T2s_s", "residual", "converged"]


def write_scan_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_COLUMNS)
        for r in rows:
            w.writerow([
                r.sequence, repr(r.tau), r.model, repr(r.a), repr(r.t2_f), repr(r.b),
                repr(r.t2_s), repr(r.residual), str(r.converged).lower(),
            ])


def read_scan_csv(path):
    with open(path, newline="") as fh:
        return [
            ScanRow(
                row["sequence"], float(row["tau_s"]), row["model"], float(row["a"]),
                float(row["T2f_s"]), float(row["b"]), float(row["T2s_s"]),
                float(row["residual"]), row["converged"] == "true",
            )
            for row in csv.DictReader(fh)
        ]
