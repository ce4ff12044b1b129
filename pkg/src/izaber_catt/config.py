"""Run configuration.

Defaults live in ``CONFIG_BASE`` and are amended into the izaber configuration
tree at start-up, so every key below always resolves. User files follow the
usual izaber layout::

    default:
        catt:
            train:
                epochs: 20

:class:`RunConfig` is the validated, immutable view of the ``catt`` section.
"""

import copy
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .datagen import ConfoundedTaskSpec
from .errors import ConfigurationError
from .model import ModelConfig
from .training import DictSettings, TrainSettings

CONFIG_BASE = """
default:
    catt:
        model:
            enc_layers: 2
            dec_layers: 2
            d: 16
            h: 2
            k_img: 32
            k_txt: 4
            vocab_in: 32
            vocab_out: 4
            share_params: true
            ffn_mult: 4
            layer_norm: false
            mode: catt
        data:
            vocab_in: 32
            vocab_out: 4
            causal_tokens: [0, 1, 2, 3]
            spurious_tokens: [4, 5, 6, 7]
            rho_train: 0.95
            rho_test: 0.05
            seq_len: 6
            context_len: 3
            noise_rate: 0.1
            family_size: 2
            n_train: 2000
            n_test: 10000
            seed: 1
        train:
            optimizer: adam
            lr: 0.003
            epochs: 8
            batch_size: 32
            seed: 0
            lr_decay: 1.0
            decay_every: 5
            holdout_fraction: 0.1
            beta1: 0.9
            beta2: 0.98
            eps: 1.0e-9
        dict:
            init: kmeans
            max_iters: 100
            random_scale: 0.35
        paths:
            train_data: data/train.jsonl
            test_data: data/test.jsonl
            checkpoint: out/model.ckpt
            metrics: out/metrics.jsonl
            benchmark: out/benchmark.txt
            record_timing: false
        benchmark:
            seeds: [0, 1, 2, 3, 4]
            arms: [baseline, catt, catt-random]
            dict_sizes: []
            min_gap: 0.05
        gradcheck:
            d: 4
            h: 2
            enc_layers: 1
            dec_layers: 1
            k_img: 2
            k_txt: 2
            ffn_mult: 1
            batch_size: 2
            step: 1.0e-5
            tol: 1.0e-4
            atol: 1.0e-8
            max_params: 1000
            seed: 0
"""

SECTIONS = ("model", "data", "train", "dict", "paths", "benchmark", "gradcheck")
DATA_EXTRA = ("n_train", "n_test", "seed")


def default_tree() -> Dict[str, Any]:
    """The ``catt`` section of ``CONFIG_BASE`` as plain dicts."""
    return yaml.safe_load(CONFIG_BASE)["default"]["catt"]


def _merge(base: Dict[str, Any], override: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = "{}{}".format(path, key)
        if key not in base:
            raise ConfigurationError("{}: unknown key".format(where))
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigurationError("{}: expected a section".format(where))
            merged[key] = _merge(base[key], value, where + ".")
        else:
            merged[key] = value
    return merged


def _typed(section: str, key: str, value: Any, default: Any) -> Any:
    """Coerce ``value`` to the type of ``default``; raise naming ``section.key``."""
    name = "{}.{}".format(section, key)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "yes", "1"):
                    return True
                if value.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            return list(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError("{}: cannot read {!r} as {}".format(name, value, type(default).__name__))
    return value


@dataclass(frozen=True)
class PathSettings:
    train_data: str = "data/train.jsonl"
    test_data: str = "data/test.jsonl"
    checkpoint: str = "out/model.ckpt"
    metrics: str = "out/metrics.jsonl"
    benchmark: str = "out/benchmark.txt"
    record_timing: bool = False


@dataclass(frozen=True)
class DataSettings:
    n_train: int = 2000
    n_test: int = 10000
    seed: int = 1

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("data.n_train/n_test: must be >= 1")


@dataclass(frozen=True)
class BenchmarkSettings:
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    arms: Tuple[str, ...] = ("baseline", "catt", "catt-random")
    dict_sizes: Tuple[int, ...] = ()
    min_gap: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "arms", tuple(str(a) for a in self.arms))
        object.__setattr__(self, "dict_sizes", tuple(int(k) for k in self.dict_sizes))
        if len(self.seeds) < 3:
            raise ConfigurationError("benchmark.seeds: need at least 3 seeds")
        if not self.arms and not self.dict_sizes:
            raise ConfigurationError("benchmark.arms: nothing to run")
        if any(k < 1 for k in self.dict_sizes):
            raise ConfigurationError("benchmark.dict_sizes: sizes must be >= 1")


@dataclass(frozen=True)
class GradcheckSettings:
    d: int = 4
    h: int = 2
    enc_layers: int = 1
    dec_layers: int = 1
    k_img: int = 2
    k_txt: int = 2
    ffn_mult: int = 1
    batch_size: int = 2
    step: float = 1e-5
    tol: float = 1e-4
    atol: float = 1e-8
    max_params: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.step <= 0 or self.tol <= 0:
            raise ConfigurationError("gradcheck.step/tol: must be > 0")
        if self.atol < 0:
            raise ConfigurationError("gradcheck.atol: must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("gradcheck.batch_size: must be >= 1")

    def model_config(self, base: ModelConfig) -> ModelConfig:
        return replace(base, d=self.d, h=self.h, enc_layers=self.enc_layers, dec_layers=self.dec_layers,
                       k_img=self.k_img, k_txt=self.k_txt, ffn_mult=self.ffn_mult)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    data: ConfoundedTaskSpec
    data_settings: DataSettings
    train: TrainSettings
    dict: DictSettings
    paths: PathSettings
    benchmark: BenchmarkSettings
    gradcheck: GradcheckSettings

    def __post_init__(self) -> None:
        if (self.model.vocab_in, self.model.vocab_out) != (self.data.vocab_in, self.data.vocab_out):
            raise ConfigurationError("model.vocab_in/vocab_out: {}/{} disagree with data {}/{}".format(
                self.model.vocab_in, self.model.vocab_out, self.data.vocab_in, self.data.vocab_out))

    @classmethod
    def from_mapping(cls, values: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        """Validate ``values`` (a ``catt`` section, possibly partial) over the defaults."""
        defaults = default_tree()
        tree = _merge(defaults, values or {})
        typed = {
            section: {key: _typed(section, key, value, defaults[section][key])
                      for key, value in tree[section].items()}
            for section in SECTIONS
        }
        data = typed["data"]
        spec_values = {k: v for k, v in data.items() if k not in DATA_EXTRA}
        return cls(
            model=ModelConfig.from_mapping(typed["model"]),
            data=ConfoundedTaskSpec(**spec_values),
            data_settings=DataSettings(**{k: data[k] for k in DATA_EXTRA}),
            train=TrainSettings.from_mapping(typed["train"]),
            dict=DictSettings.from_mapping(typed["dict"]),
            paths=PathSettings(**typed["paths"]),
            benchmark=BenchmarkSettings(**typed["benchmark"]),
            gradcheck=GradcheckSettings(**typed["gradcheck"]),
        )

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls.from_mapping({})

    @classmethod
    def from_izaber(cls) -> "RunConfig":
        """Read the live ``config.catt`` tree (after ``initialize``)."""
        from izaber import config

        root = config.catt
        values: Dict[str, Dict[str, Any]] = {}
        for section, keys in default_tree().items():
            node = getattr(root, section, None)
            if node is None:
                continue
            values[section] = {}
            for key in keys:
                found = getattr(node, key, None)
                if found is not None:
                    values[section][key] = found
        return cls.from_mapping(values)

    def to_mapping(self) -> Dict[str, Dict[str, Any]]:
        data = {f.name: getattr(self.data, f.name) for f in fields(self.data)}
        data["causal_tokens"] = list(data["causal_tokens"])
        data["spurious_tokens"] = list(data["spurious_tokens"])
        data.update({k: getattr(self.data_settings, k) for k in DATA_EXTRA})

        def plain(obj) -> Dict[str, Any]:
            out = {}
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f.name] = v.value if hasattr(v, "value") else (list(v) if isinstance(v, tuple) else v)
            return out

        return {
            "model": self.model.as_dict(),
            "data": data,
            "train": plain(self.train),
            "dict": plain(self.dict),
            "paths": plain(self.paths),
            "benchmark": plain(self.benchmark),
            "gradcheck": plain(self.gradcheck),
        }

    def override(self, **dotted: Any) -> "RunConfig":
        """Copy with ``section__key=value`` or ``{"section.key": value}`` overrides applied."""
        tree = self.to_mapping()
        for name, value in dotted.items():
            section, _, key = name.replace("__", ".").partition(".")
            if section not in tree or key not in tree[section]:
                raise ConfigurationError("{}.{}: unknown key".format(section, key))
            tree[section][key] = value
        return RunConfig.from_mapping(tree)

    def describe(self) -> List[str]:
        return ["{}.{} = {}".format(section, key, value)
                for section, values in self.to_mapping().items() for key, value in values.items()]
