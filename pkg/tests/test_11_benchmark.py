#!/usr/bin/env python3

import os

import pytest

from izaber_catt.benchmark import (
    BenchmarkResult,
    acceptance_failures,
    arm_config,
    arm_names,
    check,
    run_benchmark,
    seed_data_seeds,
    write_summary,
)
from izaber_catt.config import RunConfig
from izaber_catt.dictionary import DictionarySource
from izaber_catt.errors import AcceptanceError, ConfigurationError
from izaber_catt.model import Mode


def _result(baseline, catt, random=None):
    spurious = {"baseline": baseline, "catt": catt}
    if random is not None:
        spurious["catt-random"] = random
    return BenchmarkResult(seeds=(0, 1, 2), spurious=spurious, overall={k: list(v) for k, v in spurious.items()})


def test_arm_configs():
    run = RunConfig.defaults()
    assert arm_config(run, "baseline").model.mode == Mode.BASELINE
    assert arm_config(run, "catt").model.mode == Mode.CATT
    random = arm_config(run, "catt-random")
    assert random.dict.init == DictionarySource.RANDOM
    assert run.dict.init == DictionarySource.KMEANS
    assert arm_config(run, "catt-noshare").model.share_params is False
    assert arm_config(run, "catt-k8").model.k_img == 8
    with pytest.raises(ConfigurationError):
        arm_config(run, "transformer")

    run = RunConfig.from_mapping({"benchmark": {"arms": ["catt", "baseline"], "dict_sizes": [4, 8]}})
    assert arm_names(run) == ["catt", "baseline", "catt-k4", "catt-k8"]


def test_seeds_give_distinct_data():
    run = RunConfig.defaults()
    pairs = [seed_data_seeds(run, s) for s in range(5)]
    flat = [x for pair in pairs for x in pair]
    assert len(set(flat)) == len(flat)


def test_acceptance_rules():
    assert acceptance_failures(_result([0.2, 0.3, 0.25], [0.6, 0.5, 0.7], [0.4, 0.5, 0.45]), 0.05) == []
    failures = acceptance_failures(_result([0.5, 0.5, 0.5], [0.52, 0.53, 0.51]), 0.05)
    assert len(failures) == 1 and "baseline" in failures[0]
    failures = acceptance_failures(_result([0.1, 0.1, 0.1], [0.6, 0.6, 0.6], [0.7, 0.7, 0.7]), 0.05)
    assert len(failures) == 1 and "random" in failures[0]
    with pytest.raises(AcceptanceError):
        check(_result([0.5] * 3, [0.5] * 3), 0.05)


def test_summary_table(tmp_path):
    result = _result([0.2, 0.3, 0.25], [0.6, 0.5, 0.7])
    assert result.median("catt") == 0.6
    path = str(tmp_path / "benchmark.txt")
    write_summary(result, path)
    with open(path) as f:
        text = f.read()
    assert text == result.format()
    assert "seed2" in text
    assert "0.6000" in text


def test_small_benchmark_run():
    run = RunConfig.from_mapping({
        "model": {"d": 4, "h": 2, "enc_layers": 1, "dec_layers": 1, "k_img": 4, "k_txt": 2, "ffn_mult": 1},
        "data": {"n_train": 24, "n_test": 40},
        "train": {"epochs": 1, "batch_size": 12, "lr": 0.0},
        "benchmark": {"seeds": [0, 1, 2]},
    })
    result = run_benchmark(run)
    assert list(result.spurious) == ["baseline", "catt", "catt-random"]
    for arm in result.spurious:
        assert len(result.spurious[arm]) == 3
        assert all(0.0 <= a <= 1.0 for a in result.spurious[arm] + result.overall[arm])
    with pytest.raises(ConfigurationError):
        run_benchmark(run, seeds=[0, 1])


@pytest.mark.skipif(os.environ.get("CATT_ACCEPTANCE") != "1", reason="set CATT_ACCEPTANCE=1 for the full benchmark")
def test_deconfounding_benchmark():
    run = RunConfig.defaults()
    result = run_benchmark(run)
    print(result.format())
    assert acceptance_failures(result, run.benchmark.min_gap) == []


if __name__ == '__main__':
    test_arm_configs()
    test_acceptance_rules()
    test_small_benchmark_run()
