"""Command-line entry point.

    qgeom false-flatness --config cfg.json --out runs/ff0 [--set seed=7 ...]
    qgeom local-dynamics --config cfg.json --out runs/ld0
    qgeom implicit-bias  --config cfg.json --out runs/ib0
    qgeom check
    qgeom inspect theta.json [--data data.json]

Exit status: 0 success, 1 assertion failure, 2 usage or config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, rng_stream
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qgeom", description="Quotient geometry of quadratic-activation networks.")
    parser.add_argument("--version", action="version", version=f"qgeom {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="ExperimentConfig JSON file")
        p.add_argument("--out", required=True, help="run directory to create (must not exist)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field; repeatable; tol_block.x for tolerances")
    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--only", action="append", default=[], metavar="NAME", help="run only the named check")
    p = sub.add_parser("inspect", help="print regularity and complexity reports for a parameter vector")
    p.add_argument("theta", help="Theta JSON file")
    p.add_argument("--data", help="Dataset JSON file; standard normal inputs are drawn when omitted")
    return parser


def _run_experiment(args) -> int:
    from .experiments import RUNNERS, write_run_dir

    cfg = ExperimentConfig.load(args.config).with_overrides(_parse_overrides(args.overrides))
    out = Path(args.out)
    if out.exists():
        raise FileExistsError(f"run directory already exists: {out}")
    output = RUNNERS[args.verb](cfg)
    write_run_dir(output, cfg, out)
    for item in output.summary:
        status = "PASS" if item["pass"] else "FAIL"
        print(f"{status}  {item['name']:<36} measured={item['measured']!r:<24} tol={item['tolerance']!r}")
    print(f"wrote {out}")
    return EXIT_OK if output.passed else EXIT_ASSERT


def _run_check(args) -> int:
    from .checks import CHECKS, run_checks

    known = {name for name, _, _ in CHECKS}
    unknown = sorted(set(args.only) - known)
    if unknown:
        raise ValidationError(f"unknown check(s): {', '.join(unknown)}")
    results = run_checks(args.only or None)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<30} measured={r.measured:<12.3e} tol={r.tolerance:<9.1e} {r.seconds:6.2f}s")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_ASSERT


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _run_inspect(args) -> int:
    from .complexity import complexity_report
    from .geometry import regularity_check
    from .model import Dataset, Theta, sym_dim

    theta = Theta.from_dict(_read_json(args.theta))
    if args.data:
        X = Dataset.from_dict(_read_json(args.data)).X
        if X.shape[1] != theta.d:
            raise ValidationError(f"data has d={X.shape[1]} but theta has d={theta.d}")
    else:
        n = max(theta.dim, sym_dim(theta.d)) + 5
        X = rng_stream(0, "inspect").standard_normal((n, theta.d))
    report = {
        "n": int(X.shape[0]),
        "regularity": regularity_check(theta, X).to_dict(),
        "complexity": complexity_report(theta).to_row(),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.verb in EXPERIMENTS:
            return _run_experiment(args)
        if args.verb == "check":
            return _run_check(args)
        return _run_inspect(args)
    except (ValidationError, FileExistsError) as exc:
        print(f"qgeom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"qgeom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
