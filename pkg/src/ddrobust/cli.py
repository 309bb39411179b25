"""Command-line entry point: ``ddrobust {simulate,scan,aht-verify,fit,rerun}``.

Every command writes its outputs atomically next to a JSON manifest that
records the resolved configuration, so ``ddrobust rerun <manifest>``
regenerates the same files bit for bit.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict

from . import __version__
from . import aht
from .config import ConfigError, load_config, parse_config, snapshot
from .experiment import (
    NonPositiveAmplitudeError,
    read_series_csv,
    run_ensemble,
    series_filename,
    write_series_csv,
)
from .fitting import FitError, decay_vs_tau_scan, fit, write_scan_csv
from .spin import BranchAmbiguityError

OUTPUT_ENV = "DDROBUST_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "ddrobust_output"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# tolerances used by ``aht-verify --strict``
AHT_REL_TOL = {0: 1e-3, 1: 1e-3, 2: 5e-3}
AHT_ZERO_TOL = 1e-8

NUMERICAL_ERRORS = (
    FitError, NonPositiveAmplitudeError, BranchAmbiguityError, FloatingPointError,
    ArithmeticError,
)


class NumericalFailure(RuntimeError):
    pass


def atomic_write(path, write):
    """Call ``write(tmp_path)`` and move the result onto ``path``.

    The temporary file lives in the target directory so the final
    ``os.replace`` is atomic; it is removed if ``write`` raises.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _output_dir(args, config_dir=None):
    return args.out or os.environ.get(OUTPUT_ENV) or config_dir or DEFAULT_OUTPUT_DIR


def _write_manifest(out_dir, stem, command, config, seed, outputs, started, extra=None):
    manifest = {
        "tool": "ddrobust",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "outputs": [
            {"path": name, "sha256": _sha256(os.path.join(out_dir, name))} for name in outputs
        ],
        "wall_time_s": time.perf_counter() - started,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, f"{stem}.manifest.json")

    def write(tmp):
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")

    atomic_write(path, write)
    return path


# --- commands ---------------------------------------------------------------

def _simulate(run, out_dir, threads, started):
    exp = run.experiment
    series = run_ensemble(exp, threads=threads)
    name = series_filename(exp.sequence, exp.tau)
    atomic_write(os.path.join(out_dir, name), lambda tmp: write_series_csv(series, tmp))
    manifest = _write_manifest(
        out_dir, name[:-4], "simulate", snapshot(run), exp.seed, [name], started
    )
    print(f"{exp.sequence}: tau = {exp.tau * 1e6:g} us, {exp.n_cycles()} cycles, "
          f"{exp.n_realizations} realizations")
    print(f"final amplitude {series.amplitudes[-1]:.6f} +- {series.stderr[-1]:.2g}")
    if len(series) >= 3:
        try:
            f = fit(series, "single")
            print(f"single-exponential T2 = {f.t2 * 1e3:.4g} ms")
        except FitError as exc:
            print(f"no single-exponential fit: {exc}")
    print(f"wrote {os.path.join(out_dir, name)}")
    return manifest


def _scan(run, out_dir, threads, started):
    if run.scan is None:
        raise ConfigError("scan", "section required for the scan command")
    s = run.scan
    rows = decay_vs_tau_scan(run.experiment, s.taus, s.sequences, s.model, threads=threads)
    name = "scan.csv"
    atomic_write(os.path.join(out_dir, name), lambda tmp: write_scan_csv(rows, tmp))
    manifest = _write_manifest(
        out_dir, "scan", "scan", snapshot(run), run.experiment.seed, [name], started
    )
    print(f"{'sequence':<8} {'tau_us':>10} {'T2_ms':>10}  note")
    for r in rows:
        t2 = f"{r.t2 * 1e3:10.4g}" if math.isfinite(r.t2) else f"{'failed':>10}"
        print(f"{r.sequence:<8} {r.tau * 1e6:>10g} {t2}  {r.message}")
    failed = sum(not r.converged for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} rows flagged (fit did not converge)")
    print(f"wrote {os.path.join(out_dir, name)}")
    return manifest


def _aht_verify(params, out_dir, started):
    rows = aht.verify_closed_forms(eps=params["eps"], tau=params["tau_s"])
    status = []
    for r in rows:
        tol = AHT_ZERO_TOL if r.predicted == 0 else AHT_REL_TOL[r.order]
        status.append("ok" if r.deviation < tol else "DEVIATES")
    name = "aht_verify.csv"

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "order", "axis", "predicted", "magnus", "eps_fit",
                        "deviation", "status"])
            for r, st in zip(rows, status):
                w.writerow([r.sequence, r.order, r.axis, repr(r.predicted), repr(r.magnus),
                            repr(r.expansion), repr(r.deviation), st])

    atomic_write(os.path.join(out_dir, name), write)
    manifest = _write_manifest(out_dir, "aht_verify", "aht-verify", params, None, [name], started)
    print("coefficients c of H_k = c eps^(k+1) / tau; deviation is relative, "
          "or |c|/pi for predicted zeros")
    table = aht.format_verification(rows).splitlines()
    print(table[0] + "  status")
    print(table[1] + "-" * 8)
    for line, st in zip(table[2:], status):
        print(f"{line}  {st}")
    n_bad = status.count("DEVIATES")
    print(f"{len(rows) - n_bad} of {len(rows)} closed-form coefficients reproduced")
    print(f"wrote {os.path.join(out_dir, name)}")
    if n_bad and params.get("strict"):
        raise NumericalFailure(f"{n_bad} closed-form coefficients deviate")
    return manifest


def _fit(params, out_dir, started):
    series = read_series_csv(params["input"])
    f = fit(series, params["model"])
    stem = os.path.splitext(os.path.basename(params["input"]))[0]
    name = f"{stem}_fit_{params['model']}.csv"
    record = asdict(f)

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(record))
            w.writerow([repr(v) if isinstance(v, float) else v for v in record.values()])

    atomic_write(os.path.join(out_dir, name), write)
    manifest = _write_manifest(
        out_dir, name[:-4], "fit", params, None, [name], started,
        extra={"input_sha256": _sha256(params["input"])},
    )
    if f.model == "double":
        print(f"a = {f.a:.5g}, T2f = {f.t2_f * 1e3:.5g} ms, b = {f.b:.5g}, "
              f"T2s = {f.t2_s * 1e3:.5g} ms")
    else:
        amp = f.b if f.fallback else f.a
        print(f"A = {amp:.5g}, T2 = {f.t2 * 1e3:.5g} ms"
              + (f" (fallback to single: {f.message})" if f.fallback else ""))
    print(f"weighted residual {f.residual:.5g}, {f.n_excluded} points below noise floor")
    print(f"wrote {os.path.join(out_dir, name)}")
    return manifest


def _dispatch(command, config, out_dir, threads, started):
    if command in ("simulate", "scan"):
        run = parse_config(config)
        fn = _simulate if command == "simulate" else _scan
        return fn(run, out_dir, threads, started)
    if command == "aht-verify":
        return _aht_verify(config, out_dir, started)
    if command == "fit":
        return _fit(config, out_dir, started)
    raise ConfigError("command", f"unknown command {command!r}")


def _rerun(args, started):
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        command, config = manifest["command"], manifest["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError("manifest", f"cannot read {args.manifest}: {exc}") from None
    default = os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "rerun")
    out_dir = args.out or os.environ.get(OUTPUT_ENV) or default
    if os.path.abspath(out_dir) == os.path.dirname(os.path.abspath(args.manifest)):
        raise ConfigError("--out", "rerun output must not overwrite the original run")
    _dispatch(command, config, out_dir, args.threads, started)
    mismatched = []
    for entry in manifest.get("outputs", []):
        new = os.path.join(out_dir, entry["path"])
        if _sha256(new) != entry["sha256"]:
            mismatched.append(entry["path"])
    if mismatched:
        raise NumericalFailure(f"rerun differs from manifest: {', '.join(mismatched)}")
    print("all outputs reproduced bit-identically")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ddrobust",
        description="Dynamical-decoupling robustness simulator for a dephasing spin ensemble.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}, "
                       f"then [output] dir, then ./{DEFAULT_OUTPUT_DIR})")
        if threads:
            p.add_argument("--threads", type=int, default=1,
                           help="worker threads; results do not depend on this")

    p = sub.add_parser("simulate", help="ensemble echo decay for one sequence and delay")
    p.add_argument("config", help="TOML config file")
    common(p)

    p = sub.add_parser("scan", help="fitted decay times over a grid of delays and sequences")
    p.add_argument("config", help="TOML config file")
    common(p)

    p = sub.add_parser("aht-verify", help="check closed-form average Hamiltonians")
    p.add_argument("--eps", type=float, default=1e-3, help="flip-angle error for the Magnus sums")
    p.add_argument("--tau-us", type=float, default=100.0, help="pulse delay in microseconds")
    p.add_argument("--strict", action="store_true",
                   help="exit with status 3 if any coefficient deviates")
    common(p, threads=False)

    p = sub.add_parser("fit", help="fit an existing echo-series CSV")
    p.add_argument("csv", help="CSV with columns time_s, amplitude, stderr")
    p.add_argument("--model", choices=("single", "double"), default="single")
    common(p, threads=False)

    p = sub.add_parser("rerun", help="regenerate the outputs recorded in a manifest")
    p.add_argument("manifest")
    common(p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    threads = getattr(args, "threads", 1)
    try:
        if threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        if args.command == "rerun":
            _rerun(args, started)
        elif args.command in ("simulate", "scan"):
            run = load_config(args.config)
            fn = _simulate if args.command == "simulate" else _scan
            fn(run, _output_dir(args, run.output_dir), threads, started)
        elif args.command == "aht-verify":
            if not (args.eps > 0 and args.tau_us > 0):
                raise ConfigError("--eps/--tau-us", "must be positive")
            params = {"eps": args.eps, "tau_s": args.tau_us * 1e-6, "strict": args.strict}
            _aht_verify(params, _output_dir(args), started)
        elif args.command == "fit":
            if not os.path.isfile(args.csv):
                raise ConfigError("csv", f"no such file {args.csv}")
            params = {"input": os.path.abspath(args.csv), "model": args.model}
            try:
                _fit(params, _output_dir(args), started)
            except ValueError as exc:
                if isinstance(exc, NUMERICAL_ERRORS):
                    raise
                raise ConfigError("csv", str(exc)) from None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, *NUMERICAL_ERRORS) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
