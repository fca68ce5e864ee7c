"""Command-line entry point: ``pyfedcdp {train,attack,account,compare}``."""
from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ExperimentConfig, load_config
from .errors import AccountingError, ConfigError, DatasetError
from .lab import Laboratory
from .reports import load_checkpoint
from .types import AccountingMethod

__all__ = ["EXIT_DATA", "EXIT_OK", "EXIT_USAGE", "build_parser", "main", "main_entry"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

_METHODS = ("base", "advanced", "zcdp", "moments", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyfedcdp",
        description="Federated learning with per-example differential privacy.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override [experiment] master_seed")
    common.add_argument("--out", help="override [experiment] output_dir")
    common.add_argument("--debug", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="run federated training")
    train.add_argument("--config", required=True, help="experiment configuration file")

    attack = sub.add_parser("attack", parents=[common], help="run a gradient leakage campaign")
    attack.add_argument("--config", required=True, help="experiment configuration file")
    attack.add_argument("--checkpoint", help="attack this model instead of the initial one")

    account = sub.add_parser("account", parents=[common], help="account a privacy ledger")
    account.add_argument("--ledger", required=True, help="ledger file")
    account.add_argument("--method", choices=_METHODS, default="all")
    account.add_argument("--delta", type=float, default=1e-5)

    compare = sub.add_parser("compare", parents=[common], help="compare experiments")
    compare.add_argument("--config", nargs="+", required=True, help="two or more configurations")
    return parser


def _load(path: str, args: argparse.Namespace) -> ExperimentConfig:
    return load_config(path).with_overrides(seed=args.seed, output_dir=args.out)


async def _train(args: argparse.Namespace) -> None:
    async with Laboratory(_load(args.config, args), debug=args.debug) as lab:
        report = await lab.train()
    spend = report.spend(AccountingMethod.MOMENTS)
    eps = f"{spend.epsilon:.4f}" if spend else "n/a"
    print(
        f"algorithm={report.algorithm} accuracy={report.final_accuracy:.4f} "
        f"eps_moments={eps} rounds={report.rounds_used} "
        f"sec_per_iteration={report.seconds_per_iteration:.6f}"
    )


async def _attack(args: argparse.Namespace) -> None:
    async with Laboratory(_load(args.config, args), debug=args.debug) as lab:
        model = await load_checkpoint(args.checkpoint) if args.checkpoint else None
        campaign = await lab.attack(model=model)
    print(
        f"algorithm={campaign.algorithm} surface={campaign.surface.value} "
        f"asr={campaign.asr:.3f} mean_distance={campaign.mean_distance:.4f} "
        f"mean_iterations={campaign.mean_iterations:.1f}"
    )


async def _account(args: argparse.Namespace) -> None:
    method = None if args.method == "all" else AccountingMethod(args.method)
    output = Path(args.out) / f"{Path(args.ledger).stem}_epsilon.csv" if args.out else None
    spends = await Laboratory.account(
        args.ledger, method, args.delta, output=output, debug=args.debug
    )
    print(f"{'method':<10}{'epsilon':>14}{'delta':>14}")
    for m, spend in spends.items():
        print(f"{m.value:<10}{spend.epsilon:>14.6f}{spend.delta:>14.3g}")


async def _compare(args: argparse.Namespace) -> None:
    configs = [_load(path, args) for path in args.config]
    output = Path(args.out) if args.out else Path(configs[0].output_dir)
    rows = await Laboratory.compare(configs, output / "compare.csv", debug=args.debug)
    for row in rows:
        print(
            f"{row['config']}: algorithm={row['algorithm']} "
            f"accuracy={row['final_accuracy']:.4f} rounds={row['rounds_used']} "
            f"eps_moments={row['eps_moments']:.4f}"
        )


_COMMANDS = {"train": _train, "attack": _attack, "account": _account, "compare": _compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        asyncio.run(_COMMANDS[args.command](args))
    except DatasetError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, AccountingError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main_entry() -> None:
    """Console-script wrapper around :func:`main`."""
    sys.exit(main())
