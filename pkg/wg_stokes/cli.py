"""
wg-stokes command line.

    wg-stokes study --k 0 --n0 10 --levels 4 --case paper --format md
    wg-stokes study --preset table2 --format json --output table2.json
    wg-stokes verify

Exit codes: 0 success, 1 solver/study or verification failure, 2 invalid configuration.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import yaml
from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from wg_stokes.cases import CASES
from wg_stokes.schemas import CheckOut, VerifyReportOut
from wg_stokes.settings import get_settings
from wg_stokes.study import StudyConfig, StudyError, load_presets, run_study
from wg_stokes.verify import run_verify

logger = logging.getLogger("wg_stokes")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
DEFAULT_PRESETS = Path("studies.yaml")

# flag dest -> StudyConfig field; only flags given on the command line are forwarded
STUDY_FLAGS = ("k", "n0", "levels", "case", "format", "tol", "deterministic", "dump_mesh",
               "dump_system", "max_unknowns", "infsup", "output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wg-stokes", description="Weak Galerkin Stokes solver and studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="run a convergence study and print the error table")
    study.add_argument("--k", type=int, help="polynomial degree of the interior space (default 0)")
    study.add_argument("--n0", type=int, help="grid count of the coarsest mesh (default 10)")
    study.add_argument("--levels", type=int, help="number of meshes, each refined once more (default 4)")
    study.add_argument("--case", choices=sorted(CASES), help="manufactured problem (default paper)")
    study.add_argument("--format", choices=["csv", "md", "json"], help="report format (default md)")
    study.add_argument("--tol", type=float, help="relative residual required of every solve (default 1e-10)")
    study.add_argument("--deterministic", action="store_true", default=None,
                       help="always use the direct factorization")
    study.add_argument("--dump-mesh", type=Path, metavar="P", help="write each mesh to P with _n<N> appended")
    study.add_argument("--dump-system", type=Path, metavar="P", help="write each system to P with _n<N> appended")
    study.add_argument("--max-unknowns", type=int, metavar="N", help="refuse studies whose finest level exceeds N")
    study.add_argument("--infsup", action="store_true", default=None, help="add beta_h per level")
    study.add_argument("--output", type=Path, metavar="P", help="write the report to P instead of stdout")
    study.add_argument("--config", type=Path, metavar="P", help="key=value file of study options")
    study.add_argument("--preset", help="named study from the presets file")
    study.add_argument("--presets", type=Path, default=DEFAULT_PRESETS, help="presets file (default studies.yaml)")

    verify = sub.add_parser("verify", help="run the operator property suite")
    verify.add_argument("--json", action="store_true", help="print the results as JSON")
    return parser


def _read_config_file(path: Path) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    values = dotenv_values(path)
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items() if value is not None}


def resolve_study_config(args: argparse.Namespace) -> StudyConfig:
    """Defaults < preset < config file < command-line flags."""
    merged: dict = {}
    if args.preset:
        presets = load_presets(args.presets)
        if args.preset not in presets:
            raise KeyError(f"unknown preset {args.preset!r} in {args.presets}; have {', '.join(sorted(presets))}")
        merged.update(presets[args.preset])
    if args.config:
        merged.update(_read_config_file(args.config))
    merged.update({name: getattr(args, name) for name in STUDY_FLAGS if getattr(args, name) is not None})
    return StudyConfig(**merged)


def run_study_command(args: argparse.Namespace) -> int:
    try:
        config = resolve_study_config(args)
    except (ValidationError, KeyError, OSError, yaml.YAMLError) as exc:
        logger.error("invalid study configuration: %s", exc)
        return EXIT_CONFIG

    try:
        result = run_study(config)
    except StudyError as exc:
        where = "" if exc.n is None else f" (level {exc.level}, n={exc.n})"
        logger.error("study failed%s: %s", where, exc)
        return EXIT_FAILED

    if config.output:
        config.output.parent.mkdir(parents=True, exist_ok=True)
        config.output.write_text(result.report)
        logger.info("report written to %s", config.output)
    else:
        sys.stdout.write(result.report)
    return EXIT_OK


def run_verify_command(args: argparse.Namespace) -> int:
    results = run_verify()
    passed = all(r.passed for r in results)
    if args.json:
        report = VerifyReportOut(passed=passed, checks=[CheckOut(name=r.name, passed=r.passed, detail=r.detail)
                                                       for r in results])
        sys.stdout.write(report.model_dump_json(indent=2) + "\n")
    else:
        for r in results:
            sys.stdout.write(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}\n")
    return EXIT_OK if passed else EXIT_FAILED


def main(argv: Optional[list[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ValidationError as exc:
        logging.basicConfig(level=logging.INFO)
        logger.error("invalid WG_STOKES_* settings: %s", exc)
        return EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "study":
        return run_study_command(args)
    return run_verify_command(args)


if __name__ == "__main__":
    sys.exit(main())
