"""Command line: serve the engine, move snapshots and run the benchmarks.

    lightmem serve --port 8080 --config lightmem.conf
    lightmem snapshot --out state/ --config lightmem.conf
    lightmem load --in state/ --config lightmem.conf
    lightmem bench error-injection --seed 7 --k 5 --out report.json
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from collections.abc import Callable, Coroutine, Sequence
from typing import Any, Final

from aiohttp import web

from . import async_setup_engine, load_config
from .api import create_app
from .bench.corpus import split_corpus
from .bench.experiments import (
    ABLATIONS,
    DEFAULT_CHECKPOINTS,
    DEFAULT_NOISE_RATE,
    async_run_ablation,
    async_run_error_injection,
    async_run_growth,
    async_run_latency,
    async_run_significance,
    async_run_update_gaps,
    write_report,
)
from .const import CONF_EMBEDDING_DIM, CONF_STATE_PATH, DEFAULT_K, UpdateGapMode
from .exceptions import LightMemError
from .schemas import read_config_file
from .storage import load_snapshot, save_snapshot

_LOGGER = logging.getLogger(__name__)

DEFAULT_PORT: Final[int] = 8080

EXIT_OK: Final[int] = 0
EXIT_FAILED: Final[int] = 1


def _raw_config(path: str | None) -> dict[str, Any]:
    return dict(read_config_file(path)) if path else {}


def _checkpoints(value: str) -> tuple[int, ...]:
    try:
        points = tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not a list of integers: {value}") from err
    if not points or min(points) < 1:
        raise argparse.ArgumentTypeError("checkpoints must be positive integers")
    return points


#
# Commands


def cmd_serve(args: argparse.Namespace) -> int:
    config = _raw_config(args.config)

    async def async_app() -> web.Application:
        return create_app(await async_setup_engine(config))

    web.run_app(async_app(), host=args.host, port=args.port)
    return EXIT_OK


async def async_cmd_snapshot(args: argparse.Namespace) -> int:
    """Write the configured engine's stores to a snapshot directory."""

    broker = await async_setup_engine(_raw_config(args.config))
    try:
        counts = save_snapshot(broker.stores, args.out)
    finally:
        await broker.async_stop()
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


async def async_cmd_load(args: argparse.Namespace) -> int:
    """Validate a snapshot directory, installing it as the engine state if set."""

    options = load_config(args.config)
    stores = load_snapshot(args.input, dimension=options[CONF_EMBEDDING_DIM])
    if path := options.get(CONF_STATE_PATH):
        save_snapshot(stores, path)
    print(
        json.dumps(
            {"mtm_items": len(stores.mtm), **stores.ltm.stats()}, sort_keys=True
        )
    )
    return EXIT_OK


async def async_cmd_bench(args: argparse.Namespace) -> int:
    report: dict[str, Any]
    match args.experiment:
        case "error-injection":
            report = await async_run_error_injection(
                split_corpus(args.seed), k=args.k, noise_rate=args.noise_rate
            )
        case "growth":
            report = await async_run_growth(
                args.seed, checkpoints=args.checkpoints, k=args.k
            )
        case "update-gap":
            modes = (
                tuple(UpdateGapMode)
                if args.mode == "all"
                else (UpdateGapMode(args.mode),)
            )
            report = await async_run_update_gaps(
                split_corpus(args.seed), modes=modes, k=args.k
            )
        case "latency":
            report = await async_run_latency(
                args.seed, n=args.n, items=args.items, k=args.k
            )
        case "ablation":
            report = await async_run_ablation(split_corpus(args.seed), k=args.k)
        case "significance":
            report = await async_run_significance(
                range(args.seed, args.seed + args.seeds),
                baseline=args.baseline,
                system=args.system,
                k=args.k,
                resamples=args.resamples,
            )
        case _:  # pragma: no cover
            raise AssertionError(args.experiment)

    print(write_report(report, args.out))
    return EXIT_OK


#
# Parser


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("snapshot", help="write the stores to a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(async_func=async_cmd_snapshot)

    p = sub.add_parser("load", help="validate (and install) a snapshot")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config")
    p.set_defaults(async_func=async_cmd_load)

    bench = sub.add_parser("bench", help="run a seeded benchmark")
    experiments = bench.add_subparsers(dest="experiment", required=True)

    def experiment(name: str, help_: str) -> argparse.ArgumentParser:
        e = experiments.add_parser(name, help=help_)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--k", type=int, default=DEFAULT_K)
        e.add_argument("--out", help="also write the JSON report here")
        e.set_defaults(async_func=async_cmd_bench)
        return e

    e = experiment("error-injection", "score the five stress groups")
    e.add_argument("--noise-rate", type=float, default=DEFAULT_NOISE_RATE)

    e = experiment("growth", "vector-only vs full retrieval as MTM grows")
    e.add_argument(
        "--checkpoints",
        type=_checkpoints,
        default=DEFAULT_CHECKPOINTS,
        help="comma-separated MTM sizes",
    )

    e = experiment("update-gap", "recent facts against consolidated knowledge")
    e.add_argument(
        "--mode", choices=[*(str(m) for m in UpdateGapMode), "all"], default="all"
    )

    e = experiment("latency", "P50/P95 retrieval and end-to-end latency")
    e.add_argument("--n", type=int, default=200)
    e.add_argument("--items", type=int, default=10_000)

    experiment("ablation", "drop one component at a time")

    e = experiment("significance", "paired bootstrap between two ablations")
    e.add_argument("--seeds", type=int, default=10)
    e.add_argument("--baseline", choices=ABLATIONS, default="no_stage2")
    e.add_argument("--system", choices=ABLATIONS, default="full")
    e.add_argument("--resamples", type=int, default=1_000)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if func := getattr(args, "func", None):
            return int(func(args))
        async_func: Callable[
            [argparse.Namespace], Coroutine[Any, Any, int]
        ] = args.async_func
        return asyncio.run(async_func(args))
    except LightMemError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
