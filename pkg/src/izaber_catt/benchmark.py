"""Deconfounding benchmark: baseline versus CATT arms over several seeds.

Each arm is a set of overrides on the run configuration. For every seed a
fresh train/test pair is generated, each arm is trained on the train split and
scored on the spurious-present part of the test split (the anti-biased
subset, where the train-time shortcut points at the wrong label).
"""

import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from izaber.log import log
from tqdm import tqdm

from .checkpoint import atomic_write_text
from .config import RunConfig
from .datagen import Split, generate
from .dictionary import DictionarySource
from .errors import AcceptanceError, ConfigurationError
from .model import Mode
from .training import evaluate, train

BASELINE = "baseline"
CATT = "catt"
CATT_RANDOM = "catt-random"
CATT_NOSHARE = "catt-noshare"
SIZE_ARM = re.compile(r"^catt-k(\d+)$")


def arm_config(run: RunConfig, arm: str) -> RunConfig:
    """The run configuration of one benchmark arm."""
    model, dict_settings = run.model, run.dict
    if arm == BASELINE:
        model = replace(model, mode=Mode.BASELINE)
    elif arm == CATT:
        model = replace(model, mode=Mode.CATT)
    elif arm == CATT_RANDOM:
        model = replace(model, mode=Mode.CATT)
        dict_settings = replace(dict_settings, init=DictionarySource.RANDOM)
    elif arm == CATT_NOSHARE:
        model = replace(model, mode=Mode.CATT, share_params=False)
    else:
        match = SIZE_ARM.match(arm)
        if not match:
            raise ConfigurationError("benchmark.arms: unknown arm {!r}".format(arm))
        model = replace(model, mode=Mode.CATT, k_img=int(match.group(1)))
    return replace(run, model=model, dict=dict_settings)


def arm_names(run: RunConfig) -> List[str]:
    names = list(run.benchmark.arms)
    names.extend("catt-k{}".format(k) for k in run.benchmark.dict_sizes)
    seen = set()
    return [n for n in names if not (n in seen or seen.add(n))]


def seed_data_seeds(run: RunConfig, seed: int) -> Tuple[int, int]:
    base = run.data_settings.seed + 100 * seed
    return base, base + 50


@dataclass
class BenchmarkResult:
    seeds: Tuple[int, ...]
    spurious: Dict[str, List[float]] = field(default_factory=dict)
    overall: Dict[str, List[float]] = field(default_factory=dict)

    def median(self, arm: str) -> float:
        return float(np.median(self.spurious[arm]))

    def format(self) -> str:
        arms = list(self.spurious)
        width = max([len("arm")] + [len(a) for a in arms])
        header = ["{:<{w}}".format("arm", w=width), "{:>8}".format("median")]
        header.extend("{:>8}".format("seed{}".format(s)) for s in self.seeds)
        lines = [
            "# accuracy on the spurious-present test subset",
            "  ".join(header),
        ]
        for arm in arms:
            row = ["{:<{w}}".format(arm, w=width), "{:8.4f}".format(self.median(arm))]
            row.extend("{:8.4f}".format(a) for a in self.spurious[arm])
            lines.append("  ".join(row))
        lines.append("# overall test accuracy")
        for arm in arms:
            row = ["{:<{w}}".format(arm, w=width), "{:8.4f}".format(float(np.median(self.overall[arm])))]
            row.extend("{:8.4f}".format(a) for a in self.overall[arm])
            lines.append("  ".join(row))
        return "\n".join(lines) + "\n"


def run_benchmark(run: RunConfig, seeds: Sequence[int] = None, threads: int = 1,
                  quiet: bool = True) -> BenchmarkResult:
    seeds = tuple(run.benchmark.seeds if seeds is None else seeds)
    if len(seeds) < 3:
        raise ConfigurationError("benchmark.seeds: need at least 3 seeds")
    arms = arm_names(run)
    configs = {arm: arm_config(run, arm) for arm in arms}
    result = BenchmarkResult(seeds=seeds, spurious={a: [] for a in arms}, overall={a: [] for a in arms})
    with tqdm(total=len(seeds) * len(arms), desc="Benchmark",
              bar_format="{l_bar}{bar:10}| {n_fmt}/{total_fmt}", disable=quiet) as bar:
        for seed in seeds:
            train_seed, test_seed = seed_data_seeds(run, seed)
            train_set = generate(run.data, run.data_settings.n_train, Split.TRAIN, train_seed)
            test_set = generate(run.data, run.data_settings.n_test, Split.TEST, test_seed)
            for arm in arms:
                cfg = configs[arm]
                model, _ = train(train_set, cfg.model, replace(cfg.train, seed=seed), cfg.dict)
                report = evaluate(test_set, model, threads)
                spurious = report.spurious_accuracy if report.spurious_accuracy is not None else 0.0
                result.spurious[arm].append(spurious)
                result.overall[arm].append(report.accuracy)
                log.info("benchmark: seed {} arm {}: spurious-present {:.4f}, overall {:.4f}".format(
                    seed, arm, spurious, report.accuracy))
                bar.update(1)
    return result


def acceptance_failures(result: BenchmarkResult, min_gap: float) -> List[str]:
    """Directional checks that apply to the arms present in ``result``."""
    failures = []
    if CATT in result.spurious and BASELINE in result.spurious:
        gap = result.median(CATT) - result.median(BASELINE)
        if gap < min_gap:
            failures.append("catt median exceeds baseline by {:.4f}, need {:.4f}".format(gap, min_gap))
    if CATT in result.spurious and CATT_RANDOM in result.spurious:
        if result.median(CATT) < result.median(CATT_RANDOM):
            failures.append("k-means initialised catt median {:.4f} is below random init {:.4f}".format(
                result.median(CATT), result.median(CATT_RANDOM)))
    return failures


def write_summary(result: BenchmarkResult, path: str) -> None:
    atomic_write_text(path, result.format())
    log.info("Wrote benchmark summary to {}".format(path))


def check(result: BenchmarkResult, min_gap: float) -> None:
    failures = acceptance_failures(result, min_gap)
    if failures:
        raise AcceptanceError("; ".join(failures))
