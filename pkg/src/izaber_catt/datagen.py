"""Synthetic confounded sequence-classification tasks.

Every sample carries a causal token that fully determines its label. A hidden
confounder additionally plants a spurious token: in the training split the
spurious token of the confounder co-occurs with the label it is partnered
with, in the test split it co-occurs with a different label. A model that
leans on the spurious token does well in training and badly on the
spurious-present part of the test split.

Token roles in the feature alphabet: ``causal_tokens[label]``,
``spurious_tokens[confounder]`` and everything else as neutral filler. The
context sequence lives in the label alphabet; its first token says which label
family is asked about.
"""

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from izaber.log import log

from .checkpoint import atomic_write_text
from .errors import ConfigurationError, ParseError


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class ConfoundedTaskSpec:
    vocab_in: int = 32
    vocab_out: int = 4
    causal_tokens: Tuple[int, ...] = (0, 1, 2, 3)
    spurious_tokens: Tuple[int, ...] = (4, 5, 6, 7)
    rho_train: float = 0.95
    rho_test: float = 0.05
    seq_len: int = 6
    context_len: int = 3
    noise_rate: float = 0.1
    family_size: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "causal_tokens", tuple(int(t) for t in self.causal_tokens))
        object.__setattr__(self, "spurious_tokens", tuple(int(t) for t in self.spurious_tokens))
        problems = []
        if self.vocab_out < 2:
            problems.append("vocab_out must be >= 2")
        if len(self.causal_tokens) != self.vocab_out:
            problems.append("causal_tokens needs one token per label")
        if len(set(self.causal_tokens)) != len(self.causal_tokens):
            problems.append("causal_tokens must be distinct")
        if len(self.spurious_tokens) != self.vocab_out:
            problems.append("spurious_tokens needs one token per confounder value")
        if set(self.spurious_tokens) & set(self.causal_tokens):
            problems.append("spurious_tokens overlap causal_tokens")
        if any(not 0 <= t < self.vocab_in for t in self.causal_tokens + self.spurious_tokens):
            problems.append("token ids must lie in [0, vocab_in)")
        if len(self.filler_tokens) == 0:
            problems.append("vocab_in leaves no filler tokens")
        for name in ("rho_train", "rho_test", "noise_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append("{} must lie in [0, 1]".format(name))
        if self.seq_len < 1 or self.context_len < 1:
            problems.append("seq_len and context_len must be >= 1")
        if self.family_size < 1:
            problems.append("family_size must be >= 1")
        if problems:
            raise ConfigurationError("data: " + "; ".join(problems))

    @property
    def labels(self) -> int:
        return self.vocab_out

    @property
    def filler_tokens(self) -> List[int]:
        reserved = set(self.causal_tokens) | set(self.spurious_tokens)
        return [t for t in range(self.vocab_in) if t not in reserved]

    @property
    def noise_tokens(self) -> List[int]:
        causal = set(self.causal_tokens)
        return [t for t in range(self.vocab_in) if t not in causal]

    def rho(self, split: Split) -> float:
        return self.rho_train if Split(split) == Split.TRAIN else self.rho_test

    def partner(self, label: int, split: Split = Split.TRAIN) -> int:
        """Confounder value whose spurious token accompanies ``label`` in ``split``."""
        if Split(split) == Split.TRAIN:
            return label
        return (label + 1) % self.labels


@dataclass
class Sample:
    features: List[int]
    context: List[int]
    label: int
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def spurious(self) -> bool:
        return bool(self.meta.get("spurious", False))


def generate(spec: ConfoundedTaskSpec, n: int, split: Split, seed: int) -> List[Sample]:
    """Draw ``n`` samples of ``split``; deterministic in ``(spec, n, split, seed)``."""
    if n < 1:
        raise ConfigurationError("generate: n must be >= 1")
    split = Split(split)
    rng = np.random.default_rng(seed)
    rho = spec.rho(split)
    fillers = np.array(spec.filler_tokens)
    noise = np.array(spec.noise_tokens)
    samples = []
    for _ in range(n):
        confounder = int(rng.integers(spec.labels))
        # train: the label is the confounder's partner; test: the anti-partner
        label = confounder if split == Split.TRAIN else (confounder - 1) % spec.labels
        noisy = rng.random(spec.seq_len) < spec.noise_rate
        features = np.where(noisy, rng.choice(noise, size=spec.seq_len), rng.choice(fillers, size=spec.seq_len))
        causal_at = int(rng.integers(spec.seq_len))
        features[causal_at] = spec.causal_tokens[label]
        planted = bool(spec.seq_len > 1 and rng.random() < rho)
        if planted:
            others = [i for i in range(spec.seq_len) if i != causal_at]
            features[others[int(rng.integers(len(others)))]] = spec.spurious_tokens[confounder]
        context = [label // spec.family_size] + [int(t) for t in rng.integers(spec.labels, size=spec.context_len - 1)]
        samples.append(Sample(
            features=[int(t) for t in features],
            context=context[:spec.context_len],
            label=label,
            meta={"confounder": confounder, "spurious": planted, "split": split.value},
        ))
    return samples


def cooccurrence_rate(samples: Sequence[Sample], spec: ConfoundedTaskSpec, split: Split = Split.TRAIN) -> float:
    """Fraction of samples whose features contain the spurious partner of their label."""
    if not samples:
        return 0.0
    hits = sum(spec.spurious_tokens[spec.partner(s.label, split)] in s.features for s in samples)
    return hits / len(samples)


def shortcut_predict(sample: Sample, spec: ConfoundedTaskSpec) -> int:
    """Majority co-occurrence classifier: the label each seen spurious token sits with in training."""
    votes = np.zeros(spec.labels, dtype=int)
    index = {t: c for c, t in enumerate(spec.spurious_tokens)}
    for t in sample.features:
        if t in index:
            votes[spec.partner(index[t], Split.TRAIN)] += 1
    return int(np.argmax(votes))


def causal_predict(sample: Sample, spec: ConfoundedTaskSpec) -> int:
    """Read the label straight off the causal token."""
    for t in sample.features:
        if t in spec.causal_tokens:
            return spec.causal_tokens.index(t)
    return 0


# JSON Lines ------------------------------------------------------------------

RECORD_FIELDS = ("features", "context", "label", "meta")


def dumps_jsonl(samples: Sequence[Sample]) -> str:
    return "".join(json.dumps(asdict(s), sort_keys=False) + "\n" for s in samples)


def write_jsonl(samples: Sequence[Sample], path: str) -> None:
    atomic_write_text(path, dumps_jsonl(samples))
    log.info("Wrote {} samples to {}".format(len(samples), path))


def _parse_record(line: str, lineno: int) -> Sample:
    try:
        record = json.loads(line)
    except ValueError as err:
        raise ParseError("invalid JSON: {}".format(err), line=lineno)
    if not isinstance(record, dict):
        raise ParseError("record is not an object", line=lineno)
    for name in RECORD_FIELDS:
        if name not in record:
            raise ParseError("record is missing \"{}\"".format(name), line=lineno)
    features, context, label = record["features"], record["context"], record["label"]
    if not isinstance(features, list) or not isinstance(context, list) \
            or not all(isinstance(t, int) for t in features + context):
        raise ParseError("features and context must be lists of integers", line=lineno)
    if not isinstance(label, int) or not isinstance(record["meta"], dict):
        raise ParseError("label must be an integer and meta an object", line=lineno)
    return Sample(features, context, label, record["meta"])


def read_jsonl(path: str) -> List[Sample]:
    samples = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            samples.append(_parse_record(line, lineno))
    return samples
