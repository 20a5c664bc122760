"""
Command-line surface: verify, flow, grid, oracle, symbol and the run ledger listing.

Exit codes: 0 success (including an expected blow-up), 1 failed check or unexpected blow-up,
2 configuration or model-file error.
"""

import argparse
import json
import logging
import sys
from logging import getLogger
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from app.errors import GeometryError, ModelError, ModelFileError, UnknownOracle
from app.models import Command, RunConfig, SymbolSummary
from app.run_service import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, run_service
from app.startup import startup

logger = getLogger(__name__)

FLOW_PARAMS = ("a0", "b0", "c0", "d0")
SOLV_PARAMS = ("alpha0", "beta0", "gamma0", "delta0")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="built-in model name or path to a model file")


def _add_flow(p: argparse.ArgumentParser) -> None:
    _add_model(p)
    for name in FLOW_PARAMS + SOLV_PARAMS:
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--params", type=float, nargs="+", help="initial parameters in ansatz order")
    p.add_argument("--dt", type=float)
    p.add_argument("--tmax", dest="t_max", type=float)
    p.add_argument("--output", help="directory for CSV and JSON artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iia-flow", description="Verification engine for the Type IIA flow")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--ledger", help="SQLAlchemy URL of the run ledger, e.g. sqlite:///runs.db")
    parser.add_argument("--config", type=Path, help="JSON document with RunConfig fields")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="pointwise identity suite on random invariant points")
    _add_model(verify)
    verify.add_argument("--trials", type=int)
    verify.add_argument("--seed", type=int)
    verify.add_argument("--tolerance", type=float)
    verify.add_argument("--output")

    _add_flow(sub.add_parser("flow", help="integrate an invariant flow"))

    oracle = sub.add_parser("oracle", help="compare a flow with its closed-form solution")
    _add_flow(oracle)
    oracle.add_argument("--tolerance", dest="oracle_tolerance", type=float)

    grid = sub.add_parser("grid", help="torus family on a periodic grid")
    grid.add_argument("--n", type=int)
    grid.add_argument("--dt", type=float)
    grid.add_argument("--tmax", dest="t_max", type=float)
    grid.add_argument("--snapshot", dest="snapshot_times", type=float, action="append")
    grid.add_argument("--output")

    symbol = sub.add_parser("symbol", help="principal symbol spectrum")
    symbol.add_argument("--canonical", action="store_true", default=None)
    symbol.add_argument("--covector", type=float, nargs=6)
    symbol.add_argument("--seed", type=int)
    symbol.add_argument("--tolerance", type=float)

    runs = sub.add_parser("runs", help="list the run ledger")
    runs.add_argument("--limit", type=int, default=20)
    return parser


def _initial_params(args: argparse.Namespace) -> Optional[list[float]]:
    values = vars(args)
    if args.params is not None:
        return list(args.params)
    solv = [values.get(n) for n in SOLV_PARAMS]
    if any(v is not None for v in solv):
        if any(v is None for v in solv):
            raise ModelError("give all of --alpha0 --beta0 --gamma0 --delta0")
        return [float(v) for v in solv]
    named = [values.get(n) for n in FLOW_PARAMS]
    given = [v for v in named if v is not None]
    if not given:
        return None
    if named[: len(given)] != given:
        raise ModelError("--a0 .. --d0 must be given as a prefix (a0, b0, then c0, d0)")
    return [float(v) for v in given]


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """JSON document first, flags override."""
    document: dict[str, Any] = {}
    if args.config is not None:
        document = json.loads(args.config.read_text())
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k in RunConfig.model_fields and k != "command" and v is not None
    }
    if args.command in ("flow", "oracle"):
        params = _initial_params(args)
        if params is not None:
            overrides["params"] = params
    return RunConfig.model_validate({**document, **overrides, "command": args.command})


def symbol_line(summary: SymbolSummary) -> str:
    values = " ".join(f"{round(v, 10) + 0.0:g}" for v in summary.eigenvalues)
    return f"{values} {'PASS' if summary.passed else 'FAIL'}"


def _list_runs(args: argparse.Namespace) -> int:
    if args.ledger is None:
        logger.error("Failed to list runs: no --ledger given")
        return EXIT_CONFIG
    engine = startup(args.ledger)
    for record in run_service.recent_runs(engine, args.limit):
        sys.stdout.write(run_service.describe(record) + "\n")
    return EXIT_OK


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    # suppress sqlalchemy engine logs below warning level
    logging.getLogger("sqlalchemy.engine.Engine").setLevel(logging.WARNING)
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    if args.command == "runs":
        return _list_runs(args)

    try:
        cfg = config_from_args(args)
    except (ValidationError, ValueError, OSError, GeometryError) as e:
        logger.error(f"Failed to read configuration: {e}")
        sys.stderr.write(f"configuration error: {e}\n")
        return EXIT_CONFIG

    try:
        summary, code = run_service.execute(cfg)
    except (ModelFileError, ModelError, UnknownOracle) as e:
        logger.error(f"Failed to set up {cfg.command.value}: {e}")
        sys.stderr.write(f"{e}\n")
        return EXIT_CONFIG
    except GeometryError as e:
        logger.error(f"Failed to run {cfg.command.value}: {e}")
        sys.stderr.write(f"{e}\n")
        return EXIT_FAILED

    match cfg.command:
        case Command.SYMBOL if isinstance(summary, SymbolSummary):
            sys.stdout.write(symbol_line(summary) + "\n")
        case _:
            sys.stdout.write(summary.model_dump_json(indent=2) + "\n")

    if args.ledger is not None:
        run_service.record(startup(args.ledger), cfg, summary, code)
    return code
