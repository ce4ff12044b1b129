"""
Usage:
    catt datagen [options]
    catt train [options]
    catt eval [options]
    catt gradcheck [options]
    catt oracle [<scm-file>] [options]
    catt benchmark [options]
    catt kmeans-dump [options]
    catt (-h | --help)
    catt --version

Commands:
    datagen         Write the confounded train/test splits as JSON Lines and
                    report how often the spurious token sits with its label
    train           Fit dictionaries and train a model; writes a checkpoint
                    and one metrics record per epoch
    eval            Score a checkpoint; reports overall accuracy and accuracy
                    on the spurious-present subset
    gradcheck       Compare autodiff gradients of a tiny model with central
                    finite differences
    oracle          Print observational, interventional, front-door, backdoor
                    and per-z distributions of a discrete SCM
    benchmark       Train baseline and CATT arms over several seeds and write
                    the median table
    kmeans-dump     Print the dictionary centroids, one per line

Options:
    -c=<path>, --config=<path>
                    izaber YAML file to read instead of ~/izaber.yaml
    -e=<val>, --environment=<val>
                    The environment (defined in the config file) to use for
                    the process [default: ]
    -s=<n>, --seed=<n>
                    Seed override for the command (data seed for datagen,
                    training seed for train, model seed for gradcheck)
    -o=<path>, --out=<path>
                    Output path. A directory for datagen, a file otherwise
    -m=<mode>, --mode=<mode>
                    catt or baseline
    --checkpoint=<path>
                    Checkpoint to read (eval, kmeans-dump)
    --data=<path>   Dataset to read (train, eval, kmeans-dump)
    --x=<x>         Treatment value queried by oracle [default: 0]
    --catalog=<name>
                    Use a built-in SCM (confounded-binary, unconfounded-binary)
    --seeds=<list>  Comma separated benchmark seeds
    --which=<dict>  Dictionary to dump: features or context [default: features]
    --corrupt       Offset every autodiff gradient before the gradcheck
                    comparison (negative control)
    -q, --quiet     No progress bars
    -d, --debug     Print out debug information
    -l, --all-logs  Log everything. It essentially sets the log level to 1
                    (i.e. logs everything) and prints the logs to stdout
    -h, --help      Show this screen
    --version       Show the version

Exit codes:
    0   success
    2   configuration error (missing, out of range or inconsistent values)
    3   I/O error (unreadable or unwritable file)
    4   validation error (malformed file, bad CPT, positivity violation,
        checkpoint mismatch, invalid input)
    5   acceptance failure (gradcheck or benchmark criterion not met)

Config File:
    Every key has a default. Override any of them in an izaber YAML file:

        default:
            catt:
                train:
                    epochs: 20
                    lr: 0.001
                paths:
                    checkpoint: 'runs/catt.ckpt'

Environment:
    CATT_THREADS    Evaluation worker threads (default 1)
"""

import logging
import os
import sys
from typing import Any, Dict, List, Optional

from docopt import docopt
from izaber import initialize
from izaber.log import log

from .benchmark import check, run_benchmark, write_summary
from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .config import RunConfig
from .datagen import Split, cooccurrence_rate, generate, read_jsonl, write_jsonl
from .dictionary import format_centroids
from .errors import EXIT_IO, EXIT_OK, AcceptanceError, CattError, ConfigurationError, InputError
from .gradcheck import finite_diff_gradcheck
from .model import Batch, CattModel, batch_loss
from .oracle import CATALOG, load_scm, oracle_report
from .training import build_model, evaluate, train, write_metrics

CORRUPTION = 1.0


def eval_threads() -> int:
    raw = os.environ.get("CATT_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError("CATT_THREADS: expected an integer, got {!r}".format(raw))
    if threads < 1:
        raise ConfigurationError("CATT_THREADS: must be >= 1")
    return threads


def _emit(text: str, out: Optional[str] = None) -> None:
    if out:
        atomic_write_text(out, text if text.endswith("\n") else text + "\n")
    else:
        print(text)


# Commands --------------------------------------------------------------------

def cmd_datagen(run: RunConfig, out: Optional[str] = None) -> int:
    train_path, test_path = run.paths.train_data, run.paths.test_data
    if out:
        train_path, test_path = os.path.join(out, "train.jsonl"), os.path.join(out, "test.jsonl")
    sizes = run.data_settings
    train_set = generate(run.data, sizes.n_train, Split.TRAIN, sizes.seed)
    test_set = generate(run.data, sizes.n_test, Split.TEST, sizes.seed + 1)
    write_jsonl(train_set, train_path)
    write_jsonl(test_set, test_path)
    print("train  {:6d} samples  co-occurrence {:.4f}  -> {}".format(
        len(train_set), cooccurrence_rate(train_set, run.data, Split.TRAIN), train_path))
    print("test   {:6d} samples  co-occurrence {:.4f}  -> {}".format(
        len(test_set), cooccurrence_rate(test_set, run.data, Split.TEST), test_path))
    return EXIT_OK


def cmd_train(run: RunConfig, data: Optional[str] = None, out: Optional[str] = None,
              quiet: bool = False) -> int:
    samples = read_jsonl(data or run.paths.train_data)
    if not samples:
        raise InputError("train: dataset is empty")
    model, history = train(samples, run.model, run.train, run.dict, record_timing=run.paths.record_timing,
                           quiet=quiet)
    checkpoint = out or run.paths.checkpoint
    save_checkpoint(checkpoint, model.parameters())
    write_metrics(history, run.paths.metrics)
    print("{} model, {} parameters, {} epochs -> {}".format(
        run.model.mode.value, model.count_parameters(), len(history), checkpoint))
    return EXIT_OK


def load_model(run: RunConfig, checkpoint: Optional[str] = None) -> CattModel:
    model = CattModel(run.model)
    load_checkpoint(checkpoint or run.paths.checkpoint, model.parameters())
    return model


def cmd_eval(run: RunConfig, checkpoint: Optional[str] = None, data: Optional[str] = None,
             out: Optional[str] = None) -> int:
    model = load_model(run, checkpoint)
    samples = read_jsonl(data or run.paths.test_data)
    if not samples:
        raise InputError("eval: dataset is empty")
    report = evaluate(samples, model, eval_threads())
    _emit(report.format(), out)
    return EXIT_OK


def cmd_gradcheck(run: RunConfig, corrupt: bool = False, out: Optional[str] = None) -> int:
    settings = run.gradcheck
    model = CattModel(settings.model_config(run.model), seed=settings.seed)
    count = model.count_parameters()
    if count > settings.max_params:
        raise ConfigurationError("gradcheck.max_params: model has {} parameters, limit is {}".format(
            count, settings.max_params))
    batch = Batch.from_samples(generate(run.data, settings.batch_size, Split.TRAIN, settings.seed))
    hook = (lambda p, g: g + CORRUPTION) if corrupt else None
    report = finite_diff_gradcheck(lambda graph: batch_loss(batch, model, graph), model.parameters(),
                                   h=settings.step, tol=settings.tol, atol=settings.atol, corrupt=hook)
    lines = ["{} model, {} parameters".format(run.model.mode.value, count), report.summary()]
    lines.extend("  {} {} autodiff {:.6e} numeric {:.6e} rel {:.3e}".format(
        e.parameter, list(e.index), e.autodiff, e.numeric, e.rel_error) for e in report.failures[:10])
    _emit("\n".join(lines), out)
    if not report.passed:
        raise AcceptanceError("gradcheck failed: {} of {} entries above tol {:g}".format(
            len(report.failures), report.checked, settings.tol))
    return EXIT_OK


def cmd_oracle(scm_file: Optional[str], x: int, catalog: Optional[str] = None,
               out: Optional[str] = None) -> int:
    if catalog:
        if catalog not in CATALOG:
            raise ConfigurationError("--catalog: unknown SCM {!r}, expected one of {}".format(
                catalog, ", ".join(CATALOG)))
        scm = CATALOG[catalog]()
    elif scm_file:
        scm = load_scm(scm_file)
    else:
        raise ConfigurationError("oracle: give an SCM file or --catalog")
    _emit(oracle_report(scm, x).format(), out)
    return EXIT_OK


def cmd_benchmark(run: RunConfig, seeds: Optional[List[int]] = None, out: Optional[str] = None,
                  quiet: bool = False) -> int:
    result = run_benchmark(run, seeds, threads=eval_threads(), quiet=quiet)
    write_summary(result, out or run.paths.benchmark)
    print(result.format(), end="")
    check(result, run.benchmark.min_gap)
    return EXIT_OK


def cmd_kmeans_dump(run: RunConfig, which: str = "features", checkpoint: Optional[str] = None,
                    data: Optional[str] = None, out: Optional[str] = None) -> int:
    if not run.model.catt:
        raise ConfigurationError("model.mode: baseline models carry no dictionaries")
    if checkpoint:
        model = load_model(run, checkpoint)
    else:
        model = build_model(read_jsonl(data or run.paths.train_data), run.model, run.dict, run.train.seed)
    dictionaries = {"features": model.dict_features, "context": model.dict_context}
    if which not in dictionaries:
        raise ConfigurationError("--which: expected features or context, got {!r}".format(which))
    _emit(format_centroids(dictionaries[which]).rstrip("\n"), out)
    return EXIT_OK


# Entry point -----------------------------------------------------------------

SEED_KEYS = {
    "datagen": "data.seed",
    "train": "train.seed",
    "kmeans-dump": "train.seed",
    "gradcheck": "gradcheck.seed",
}


def _int_arg(args: Dict[str, Any], name: str) -> Optional[int]:
    value = args.get(name)
    if value in (None, ""):
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError("{}: expected an integer, got {!r}".format(name, value))


def apply_flags(run: RunConfig, args: Dict[str, Any]) -> RunConfig:
    overrides: Dict[str, Any] = {}
    seed = _int_arg(args, "--seed")
    if seed is not None:
        for verb, key in SEED_KEYS.items():
            if args.get(verb):
                overrides[key] = seed
    if args.get("--mode"):
        overrides["model.mode"] = args["--mode"]
    return run.override(**overrides) if overrides else run


def dispatch(args: Dict[str, Any], run: RunConfig) -> int:
    """Run the verb selected in ``args`` (a docopt result) against ``run``."""
    run = apply_flags(run, args)
    out = args.get("--out") or None
    quiet = bool(args.get("--quiet"))
    if args.get("datagen"):
        return cmd_datagen(run, out)
    if args.get("train"):
        return cmd_train(run, args.get("--data"), out, quiet)
    if args.get("eval"):
        return cmd_eval(run, args.get("--checkpoint"), args.get("--data"), out)
    if args.get("gradcheck"):
        return cmd_gradcheck(run, bool(args.get("--corrupt")), out)
    if args.get("oracle"):
        return cmd_oracle(args.get("<scm-file>"), _int_arg(args, "--x") or 0, args.get("--catalog"), out)
    if args.get("benchmark"):
        seeds = args.get("--seeds")
        parsed = None
        if seeds:
            try:
                parsed = [int(s) for s in seeds.split(",") if s.strip()]
            except ValueError:
                raise ConfigurationError("--seeds: expected comma separated integers, got {!r}".format(seeds))
        return cmd_benchmark(run, parsed, out, quiet)
    if args.get("kmeans-dump"):
        return cmd_kmeans_dump(run, args.get("--which") or "features", args.get("--checkpoint"),
                               args.get("--data"), out)
    raise ConfigurationError("no command given")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CattError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def load_run_config(args: Dict[str, Any]) -> RunConfig:
    environment = args.get("--environment") or "default"
    options: Dict[str, Any] = {"environment": environment}
    if args.get("--config"):
        options["config"] = {"config_filename": args["--config"]}
    if args.get("--debug"):
        print("Using env:", environment)
    initialize("catt", **options)
    return RunConfig.from_izaber()


def run_main(argv: Optional[List[str]] = None) -> int:
    from . import __version__

    args = docopt(__doc__, argv=argv, version=__version__)

    # Enable full logging if user wants
    if args["--all-logs"]:
        logging.basicConfig(stream=sys.stdout, level=1)
    elif args["--debug"]:
        logging.basicConfig(stream=sys.stderr, level=logging.DEBUG)

    try:
        code = dispatch(args, load_run_config(args))
    except (CattError, OSError) as exc:
        code = exit_code_for(exc)
        log.error("{}: {}".format(type(exc).__name__, exc))
        print("error: {}".format(exc), file=sys.stderr)
    sys.exit(code)


if __name__ == '__main__':
    run_main()
