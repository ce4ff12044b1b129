"""Dictionary construction, optimisation loop and evaluation."""

import json
import textwrap
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np
from izaber.log import log
from tqdm import tqdm

from .checkpoint import atomic_write_text
from .datagen import Sample
from .dictionary import DictionarySource, kmeans_init, random_init
from .errors import ConfigurationError, InputError
from .model import Batch, CattModel, ModelConfig, forward_logits, loss_and_grads
from .tensor import Graph, Parameter

EVAL_CHUNK = 256


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


def _check_section(cls, section: str, values: Mapping[str, Any]) -> Dict[str, Any]:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError("{}.{}: unknown key".format(section, unknown[0]))
    return dict(values)


@dataclass(frozen=True)
class TrainSettings:
    optimizer: OptimizerKind = OptimizerKind.SGD
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    lr_decay: float = 1.0
    decay_every: int = 5
    holdout_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        except ValueError:
            raise ConfigurationError("train.optimizer: expected sgd or adam, got {!r}".format(self.optimizer))
        if self.lr < 0:
            raise ConfigurationError("train.lr: must be >= 0")
        if self.epochs < 0:
            raise ConfigurationError("train.epochs: must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("train.batch_size: must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError("train.lr_decay: must lie in (0, 1]")
        if self.decay_every < 1:
            raise ConfigurationError("train.decay_every: must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("train.holdout_fraction: must lie in [0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or self.eps <= 0:
            raise ConfigurationError("train.beta1/beta2/eps: betas must lie in [0, 1) and eps > 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "TrainSettings":
        return cls(**_check_section(cls, "train", values))


@dataclass(frozen=True)
class DictSettings:
    init: DictionarySource = DictionarySource.KMEANS
    max_iters: int = 100
    random_scale: float = 0.35

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "init", DictionarySource(self.init))
        except ValueError:
            raise ConfigurationError("dict.init: expected kmeans or random, got {!r}".format(self.init))
        if self.max_iters < 1:
            raise ConfigurationError("dict.max_iters: must be >= 1")
        if self.random_scale < 0:
            raise ConfigurationError("dict.random_scale: must be >= 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "DictSettings":
        return cls(**_check_section(cls, "dict", values))


# Optimisers ------------------------------------------------------------------

class Sgd:
    def __init__(self, params: Sequence[Parameter], lr: float) -> None:
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        if self.lr == 0.0:
            return
        for p in self.params:
            p.value -= self.lr * p.grad


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params: Sequence[Parameter], settings: TrainSettings):
    if settings.optimizer == OptimizerKind.ADAM:
        return Adam(params, settings.lr, settings.beta1, settings.beta2, settings.eps)
    return Sgd(params, settings.lr)


# Model construction ----------------------------------------------------------

def build_model(samples: Sequence[Sample], config: ModelConfig, dict_settings: DictSettings,
                seed: int) -> CattModel:
    """Fresh model whose dictionaries are fitted to the embedded training tokens."""
    model = CattModel(config, seed=seed)
    if not config.catt:
        return model
    if dict_settings.init == DictionarySource.KMEANS:
        if not samples:
            raise InputError("build_model: k-means needs training samples")
        feature_ids = np.concatenate([np.asarray(s.features, dtype=np.int64) for s in samples])
        context_ids = np.concatenate([np.asarray(s.context, dtype=np.int64) for s in samples])
        features = kmeans_init(model.embed_features.value[feature_ids], config.k_img,
                               dict_settings.max_iters, seed, name="dict.features")
        context = kmeans_init(model.embed_context.value[context_ids], config.k_txt,
                              dict_settings.max_iters, seed, name="dict.context")
    else:
        features = random_init(config.k_img, config.d, dict_settings.random_scale, seed + 1,
                               name="dict.features")
        context = random_init(config.k_txt, config.d, dict_settings.random_scale, seed + 2,
                              name="dict.context")
    model.install_dictionaries(features, context)
    return model


# Evaluation ------------------------------------------------------------------

@dataclass
class EvalReport:
    total: int
    correct: int
    confusion: List[List[int]]
    spurious_total: int = 0
    spurious_correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def spurious_accuracy(self) -> Optional[float]:
        return self.spurious_correct / self.spurious_total if self.spurious_total else None

    @property
    def clean_total(self) -> int:
        return self.total - self.spurious_total

    @property
    def clean_correct(self) -> int:
        return self.correct - self.spurious_correct

    def merge(self, other: "EvalReport") -> "EvalReport":
        confusion = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.confusion, other.confusion)]
        return EvalReport(self.total + other.total, self.correct + other.correct, confusion,
                          self.spurious_total + other.spurious_total,
                          self.spurious_correct + other.spurious_correct)

    def format(self) -> str:
        spurious = "n/a" if self.spurious_accuracy is None else "{:.4f}".format(self.spurious_accuracy)
        lines = [
            "accuracy            {:.4f} ({}/{})".format(self.accuracy, self.correct, self.total),
            "spurious-present    {} ({}/{})".format(spurious, self.spurious_correct, self.spurious_total),
            "spurious-absent     ({}/{})".format(self.clean_correct, self.clean_total),
            "confusion (row = gold, column = predicted)",
        ]
        lines.extend("  " + " ".join("{:6d}".format(n) for n in row) for row in self.confusion)
        return "\n".join(lines)


def predicted_labels(samples: Sequence[Sample], model: CattModel) -> List[int]:
    """Argmax label per sample; ties go to the lowest class id."""
    if not samples:
        return []
    out = forward_logits(Batch.from_samples(samples), model, Graph()).data
    return [int(i) for i in np.argmax(out, axis=1)]


def _evaluate_shard(samples: Sequence[Sample], model: CattModel) -> EvalReport:
    classes = model.config.vocab_out
    report = EvalReport(0, 0, [[0] * classes for _ in range(classes)])
    for start in range(0, len(samples), EVAL_CHUNK):
        chunk = samples[start:start + EVAL_CHUNK]
        for s, pred in zip(chunk, predicted_labels(chunk, model)):
            hit = int(pred == s.label)
            report.total += 1
            report.correct += hit
            report.confusion[s.label][pred] += 1
            if s.meta.get("spurious", False):
                report.spurious_total += 1
                report.spurious_correct += hit
    return report


def evaluate(samples: Sequence[Sample], model: CattModel, threads: int = 1) -> EvalReport:
    """Accuracy, confusion counts and the spurious-present subset accuracy.

    With ``threads > 1`` contiguous shards run on a thread pool; the shard
    reports are summed in shard order.
    """
    if not samples:
        raise InputError("evaluate: empty dataset")
    threads = max(1, min(int(threads), len(samples)))
    if threads == 1:
        return _evaluate_shard(samples, model)
    bounds = np.linspace(0, len(samples), threads + 1).astype(int)
    shards = [samples[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(lambda shard: _evaluate_shard(shard, model), shards))
    merged = reports[0]
    for r in reports[1:]:
        merged = merged.merge(r)
    return merged


# Training loop ---------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    eval_accuracy: float
    seconds: Optional[float] = None


def format_metrics(history: Sequence[EpochMetrics]) -> str:
    return "".join(json.dumps(asdict(m)) + "\n" for m in history)


def write_metrics(history: Sequence[EpochMetrics], path: str) -> None:
    atomic_write_text(path, format_metrics(history))


def read_metrics(path: str) -> List[EpochMetrics]:
    with open(path) as f:
        return [EpochMetrics(**json.loads(line)) for line in f if line.strip()]


@dataclass
class TrainingProgress:
    epochs: int
    done: int = 0
    best_accuracy: float = 0.0
    last_loss: float = float("nan")


TTrainingDisplay = TypeVar("TTrainingDisplay", bound="TrainingDisplay")


class TrainingDisplay:
    """Handler for displaying the progress of a training run."""

    def __init__(self, epochs: int, desc: str = "Training", disable: bool = False):
        self.progress = TrainingProgress(epochs=epochs)
        self.disable = disable
        self.progress_bar = tqdm(
            total=epochs,
            desc=desc,
            bar_format="{l_bar}{bar:10}| {n_fmt}/{total_fmt} {postfix}",
            disable=disable,
        )

    def epoch(self, metrics: EpochMetrics) -> None:
        """Record one finished epoch.

        Args:
            metrics: The metrics of the epoch.
        """
        self.progress.done += 1
        self.progress.last_loss = metrics.train_loss
        self.progress.best_accuracy = max(self.progress.best_accuracy, metrics.eval_accuracy)
        self.progress_bar.set_postfix(loss="{:.4f}".format(metrics.train_loss),
                                      acc="{:.3f}".format(metrics.eval_accuracy))
        self.progress_bar.update(1)

    def __enter__(self: TTrainingDisplay) -> TTrainingDisplay:
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        """Output a summary upon completion."""
        self.progress_bar.close()
        if self.disable:
            return
        summary = textwrap.dedent(f"""
        {self.progress.done}/{self.progress.epochs} epochs completed.
        - final train loss {self.progress.last_loss:.6f}
        - best held-out accuracy {self.progress.best_accuracy:.4f}
        """)
        print(summary)


def split_holdout(samples: Sequence[Sample], fraction: float,
                  rng: np.random.Generator) -> Tuple[List[Sample], List[Sample]]:
    """Seeded ``(train, holdout)`` split; the holdout is the train set when too small to split."""
    samples = list(samples)
    n_hold = int(round(len(samples) * fraction))
    if fraction <= 0.0 or n_hold < 1 or n_hold >= len(samples):
        return samples, samples
    perm = rng.permutation(len(samples))
    held = sorted(perm[:n_hold])
    kept = sorted(perm[n_hold:])
    return [samples[i] for i in kept], [samples[i] for i in held]


def train_epoch(samples: Sequence[Sample], model: CattModel, optimizer, batch_size: int,
                rng: np.random.Generator) -> float:
    """One pass over shuffled mini-batches; returns the sample-weighted mean loss."""
    order = rng.permutation(len(samples))
    total = 0.0
    for start in range(0, len(order), batch_size):
        batch = Batch.from_samples([samples[i] for i in order[start:start + batch_size]])
        loss, _ = loss_and_grads(batch, model)
        optimizer.step()
        total += loss * len(batch)
        log.debug("train: batch at {} loss {:.6g}".format(start, loss))
    return total / len(samples)


def train(samples: Sequence[Sample], config: ModelConfig, settings: TrainSettings,
          dict_settings: Optional[DictSettings] = None, eval_samples: Optional[Sequence[Sample]] = None,
          model: Optional[CattModel] = None, record_timing: bool = False,
          quiet: bool = True) -> Tuple[CattModel, List[EpochMetrics]]:
    """Train from scratch (or continue ``model``); deterministic per ``settings.seed``."""
    if not samples:
        raise InputError("train: empty dataset")
    dict_settings = dict_settings or DictSettings()
    rng = np.random.default_rng(settings.seed)
    if eval_samples is None:
        train_set, eval_set = split_holdout(samples, settings.holdout_fraction, rng)
    else:
        train_set, eval_set = list(samples), list(eval_samples)
    if model is None:
        model = build_model(train_set, config, dict_settings, settings.seed)
    optimizer = make_optimizer(model.parameters(), settings)
    log.info("train: {} parameters, {} training / {} held-out samples, {} epochs".format(
        model.count_parameters(), len(train_set), len(eval_set), settings.epochs))

    history: List[EpochMetrics] = []
    with TrainingDisplay(settings.epochs, disable=quiet) as display:
        for epoch in range(1, settings.epochs + 1):
            started = time.perf_counter()
            loss = train_epoch(train_set, model, optimizer, settings.batch_size, rng)
            accuracy = evaluate(eval_set, model).accuracy
            seconds = time.perf_counter() - started
            metrics = EpochMetrics(epoch, loss, accuracy, seconds if record_timing else None)
            history.append(metrics)
            display.epoch(metrics)
            log.info("epoch {}: train loss {:.6f}, held-out accuracy {:.4f}, {:.2f}s".format(
                epoch, loss, accuracy, seconds))
            if settings.lr_decay < 1.0 and epoch % settings.decay_every == 0:
                optimizer.lr *= settings.lr_decay
                log.debug("train: learning rate now {:.6g}".format(optimizer.lr))
    return model, history
