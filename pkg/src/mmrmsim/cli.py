"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration,
3 fit did not converge (the JSON result is still printed).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

from . import harness, svg
from .dgp import ScenarioConfig, load_grid
from .estimators import ModelSpec, fit, wald_test
from .exceptions import ConfigError, NotConverged, TrialDataError
from .trial_data import read_csv

EXIT_OK, EXIT_FAILURE, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3
DEFAULT_SEED = 0


class _InvalidInput(Exception):
    """Wraps errors that map to exit code 2."""


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _workers(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _seed(value: str) -> int:
    s = int(value)
    if not 0 <= s < 2**64:
        raise argparse.ArgumentTypeError("must be in [0, 2**64)")
    return s


def _reps(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmrmsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("simulate", help="run a JSON scenario grid and write a results CSV")
    s.add_argument("--config", required=True, help="JSON grid configuration")
    s.add_argument("--out", required=True, help="results CSV path")
    s.add_argument("--workers", type=_workers, default=1)
    s.add_argument("--seed", type=_seed, default=None,
                   help="base seed; overrides the seed in the config")
    s.add_argument("--replications-out", default=None,
                   help="optional per-replication audit CSV")
    s.add_argument("--se", choices=["model", "sandwich"], default="model")

    f = sub.add_parser("fit", help="fit one estimator to a long-format CSV dataset")
    f.add_argument("data", help="CSV with columns subject_id,treatment,x1..xK,time,y")
    f.add_argument("--model", choices=["ancova", "mmrm", "mmrmx"], default="mmrm")
    f.add_argument("--se", choices=["model", "sandwich"], default="model")
    f.add_argument("--no-centering", action="store_true",
                   help="fit on raw rather than mean-centered covariates")
    f.add_argument("--alpha-level", type=float, default=0.05)

    for name, what in (("reproduce-power", "power study under MCAR dropout"),
                       ("reproduce-error", "type I error study under MAR dropout")):
        r = sub.add_parser(name, help=f"{what}: CSV and SVG")
        r.add_argument("--out", required=True, help="output directory")
        r.add_argument("--reps", type=_reps, default=1000)
        r.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
        r.add_argument("--workers", type=_workers, default=1)
        r.add_argument("--n", type=int, default=400, help="subjects per trial")

    a = sub.add_parser("asymptotics", help="large-sample check against moment limits")
    a.add_argument("--config", default=None, help="JSON with a single scenario")
    a.add_argument("--n-large", type=int, default=200_000)
    a.add_argument("--seed", type=_seed, default=None)
    a.add_argument("--b", type=float, default=None)
    a.add_argument("--rho", type=float, default=None)
    return p


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _InvalidInput(f"cannot read {path}: {exc.strerror}") from None


def cmd_simulate(args) -> int:
    try:
        grid, base_seed = load_grid(_read_text(args.config))
    except ConfigError as exc:
        raise _InvalidInput(f"{args.config}: {type(exc).__name__}: {exc}") from None
    if args.seed is not None:
        base_seed = args.seed
    results = harness.run_grid(grid, workers=args.workers, base_seed=base_seed,
                               se_kind=args.se)
    write_atomic(args.out, harness.results_csv(results))
    if args.replications_out:
        write_atomic(args.replications_out, harness.replications_csv(results))
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        ds = read_csv(_read_text(args.data))
    except TrialDataError as exc:
        raise _InvalidInput(f"{args.data}: {type(exc).__name__}: {exc}") from None
    try:
        spec = ModelSpec(args.model, centering=not args.no_centering, se_kind=args.se)
    except ValueError as exc:
        raise _InvalidInput(str(exc)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        res = fit(ds, spec)
    z, p, reject = wald_test(res.tau_J, res.se_tau_J, args.alpha_level)
    out = res.to_dict()
    out.update(se=res.se_tau_J, p=p, reject=bool(reject))
    print(json.dumps(out, indent=2))
    if not res.converged:
        print(f"warning: NotConverged after {res.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _reproduce(args, grid, stem, render) -> int:
    results = harness.run_grid(grid, workers=args.workers, base_seed=args.seed)
    text = harness.results_csv(results)
    out = Path(args.out)
    write_atomic(out / f"{stem}.csv", text)
    write_atomic(out / f"{stem}.svg", render(text))
    return EXIT_OK


def cmd_reproduce_power(args) -> int:
    grid = harness.power_grid(args.reps, args.seed, n=args.n)
    return _reproduce(args, grid, "power", svg.power_svg)


def cmd_reproduce_error(args) -> int:
    grid = harness.error_grid(args.reps, args.seed, n=args.n)
    return _reproduce(args, grid, "type1", svg.type1_svg)


def cmd_asymptotics(args) -> int:
    if args.config:
        try:
            grid, _ = load_grid(_read_text(args.config))
        except ConfigError as exc:
            raise _InvalidInput(f"{args.config}: {type(exc).__name__}: {exc}") from None
        if len(grid) != 1:
            raise _InvalidInput("asymptotics expects a single scenario")
        cfg = grid[0]
    else:
        cfg = ScenarioConfig()
    changes = {k: getattr(args, k) for k in ("seed", "b", "rho") if getattr(args, k) is not None}
    try:
        cfg = cfg.replace(**changes)
        report = harness.asymptotic_check(cfg, n_large=args.n_large)
    except (ConfigError, ValueError) as exc:
        raise _InvalidInput(f"{type(exc).__name__}: {exc}") from None
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "reproduce-power": cmd_reproduce_power,
            "reproduce-error": cmd_reproduce_error, "asymptotics": cmd_asymptotics}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except _InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
