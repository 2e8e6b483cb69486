"""Command line: `isopyc run` and `isopyc verify SUITE`.

Exit codes: 0 success, 1 configuration error (or unknown suite), 2 solver
failure, 3 detected blow-up (a final report is written), 4 failed checks.
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import RunConfig, load_config
from .errors import (BlownUp, CFLViolation, CompatibilityDefect, ConfigError, IOFailure,
                     IsopycError, JacobianDegenerate, NoConvergence)
from .snapshot import EnergyCSV, write_snapshot

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_BLOWUP = 3
EXIT_VERIFY = 4


@dataclass
class RunResult:
    exit_code: int
    message: str
    final_report: Optional[object] = None
    last_finite: bool = True
    steps: int = 0


def _blown_report(state, params, profile, t, jmin, reason):
    from .diagnostics import EnergyReport
    from .domain import miles_howard_margin
    if jmin is None:
        jmin = float(state.jacobian(params.epsilon).min()) if state.is_finite() else math.nan
    mh = miles_howard_margin(profile, params.g)
    rep = EnergyReport(math.nan, math.nan, {}, math.nan, float(jmin), mh, True, t, "blown_up")
    rep.reason = reason
    return rep


def _write_report(path, rep, message):
    lines = [f"status = {rep.status if rep else 'none'}", f"message = {message}"]
    if rep is not None:
        for key in ("t", "E0", "E", "div_residual", "min_jacobian", "mh_margin", "blown_up"):
            lines.append(f"{key} = {getattr(rep, key)!r}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise IOFailure(f"cannot write {path}: {e.strerror}") from None


def execute_run(cfg, outdir=None, seed=None):
    """Integrate the configured problem, writing energy.csv, snapshots and report.txt to outdir."""
    from .diagnostics import blowup_monitor, energy
    from .dynamics import integrate

    out = Path(outdir if outdir is not None else cfg["output.directory"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(cfg.to_text())
    except OSError as e:
        return RunResult(EXIT_CONFIG, f"{out}: cannot create output directory: {e.strerror}")
    try:
        grid = cfg.grid()
        params = cfg.params()
        profile = cfg.profile(grid, params)
        state = cfg.initial_state(profile, params, seed)
    except ConfigError as e:
        return RunResult(EXIT_CONFIG, str(e))
    except IsopycError as e:
        return RunResult(EXIT_SOLVER, f"t = 0: initial data: {e}")

    series_every = cfg["output.series_every"]
    snap_every = cfg["output.snapshot_every"]
    every = math.gcd(series_every, snap_every) or 1
    t0 = state.t
    n_steps = int(round((params.t_end - t0) / params.dt))
    last = {"state": state, "report": None, "n": 0}
    compiled = cfg["dynamics.compiled"] and grid.d == 1

    def record(st, n):
        if series_every and n % series_every == 0 or n == n_steps:
            rep = energy(st, profile, params)
            csv.write(rep)
            last["report"] = rep
        if snap_every and n % snap_every == 0:
            write_snapshot(out / f"snap_{n:08d}.bin", st, params)

    def callback(st):
        last["n"] = int(round((st.t - t0) / params.dt))
        last["state"] = st
        status = blowup_monitor(st, params)
        if status.blown_up:
            raise BlownUp(status.reason, st.t, status.min_jacobian)
        record(st, last["n"])

    code, message = EXIT_OK, ""
    try:
        with EnergyCSV(out / "energy.csv") as csv:
            record(state, 0)
            try:
                final = integrate(state, profile, params, n_steps=n_steps, callback=callback,
                                  every=every, compiled=compiled)
                write_snapshot(out / "final.bin", final, params)
                message = f"completed {n_steps} steps to t = {final.t:.6g}"
            except (BlownUp, JacobianDegenerate) as e:
                t = getattr(e, "t", None)
                t = last["state"].t if t is None else t
                rep = _blown_report(last["state"], params, profile, t, e.min_jacobian, str(e))
                csv.write(rep)
                last["report"] = rep
                code, message = EXIT_BLOWUP, str(e) if e.__class__ is BlownUp and e.t is not None \
                    else f"t = {t:.6g}: {e}"
            except (NoConvergence, CFLViolation, CompatibilityDefect, IsopycError) as e:
                code, message = EXIT_SOLVER, f"t = {last['state'].t:.6g}: {type(e).__name__}: {e}"
        _write_report(out / "report.txt", last["report"], message)
    except IOFailure as e:
        return RunResult(EXIT_SOLVER, str(e), last["report"], last["state"].is_finite(), last["n"])
    return RunResult(code, message, last["report"], last["state"].is_finite(), last["n"])


def _set_threads(n):
    """Size the numba worker pool; the bundled kernels themselves run serially."""
    if n is None:
        env = os.environ.get("ISOPYC_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ISOPYC_THREADS: expected an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(f"--threads must be positive, got {n}")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _load(args):
    cfg = load_config(args.config) if args.config else RunConfig.from_dict()
    if args.output:
        cfg = cfg.replace(output__directory=args.output)
    if args.seed is not None:
        cfg = cfg.replace(initial__seed=args.seed)
    return cfg


def _parser():
    p = argparse.ArgumentParser(prog="isopyc", description="Stratified Euler in isopycnal coordinates.")
    p.add_argument("--config", metavar="PATH", help="run configuration (key = value lines)")
    p.add_argument("--threads", type=int, metavar="N", help="worker threads (default: ISOPYC_THREADS)")
    p.add_argument("--output", metavar="DIR", help="output directory, overrides output.directory")
    p.add_argument("--seed", type=int, metavar="N", help="seed for random initial states")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="integrate to t_end or blow-up")
    v = sub.add_parser("verify", help="run a named acceptance suite")
    v.add_argument("suite")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        cfg = _load(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        res = execute_run(cfg, seed=args.seed)
        stream = sys.stdout if res.exit_code == EXIT_OK else sys.stderr
        print(res.message if res.exit_code == EXIT_OK else f"error: {res.message}", file=stream)
        return res.exit_code
    from .suites import SUITES, run_suite
    if args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        checks = run_suite(args.suite, cfg)
    except IsopycError as e:
        print(f"error: suite {args.suite}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SOLVER
    for c in checks:
        print(c.row())
    failed = sum(not c.passed for c in checks)
    print(f"{args.suite}: {len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
