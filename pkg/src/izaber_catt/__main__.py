import argparse
import sys
import textwrap
from enum import Enum

from .cli import run_main


def show_help():
    help = """
    Usage: python3 -m izaber_catt [command] [options]

    Causal attention command line utilities.

    Commands:
      help             Display this help message.
      datagen          Generate the confounded train/test splits.
      train            Train a CATT or baseline model.
      eval             Evaluate a checkpoint.
      gradcheck        Finite-difference check of the model gradients.
      oracle           Exact causal quantities of a discrete SCM.
      benchmark        Baseline versus CATT over several seeds.
      kmeans-dump      Print dictionary centroids.

    Run `python3 -m izaber_catt <command> --help` for the options.
    """
    print(textwrap.dedent(help))


class Command(str, Enum):
    """Valid commands accepted by the `izaber_catt` command line utility."""

    HELP = "help"
    DATAGEN = "datagen"
    TRAIN = "train"
    EVAL = "eval"
    GRADCHECK = "gradcheck"
    ORACLE = "oracle"
    BENCHMARK = "benchmark"
    KMEANS_DUMP = "kmeans-dump"


def initialize_parse() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="izaber_catt",
        description="izaber_catt command line utilities.",
        add_help=False,
    )
    parser.add_argument("command", nargs="?", default=Command.HELP.value,
                        choices=[c.value for c in Command])
    return parser


def main(argv=None):
    """Entry point for `python -m izaber_catt`."""
    argv = sys.argv[1:] if argv is None else argv
    args, _ = initialize_parse().parse_known_args(argv[:1])
    if args.command == Command.HELP:
        show_help()
        return 0
    return run_main([args.command] + list(argv[1:]))


if __name__ == "__main__":
    main()
