"""Toy-scale Transformer with causal attention.

The encoder reads a feature-token sequence, the decoder a context-token
sequence. Both carry two streams: the in-sample stream (IS-ATT, keys from the
sample itself) and the cross-sample stream (CS-ATT, keys from a global
dictionary in the first layer). The decoder pools both streams over positions
and the predictor maps ``[Z-hat ; X-hat]`` to label logits.

Mode ``baseline`` builds the same network without the cross-sample stream and
without dictionaries; the predictor then reads Z-hat only.
"""

from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .attention import CattBlockParams, catt_block, cs_att, is_att, multi_head
from .checkpoint import unique_parameters
from .dictionary import GlobalDictionary, random_init
from .errors import ConfigurationError, InputError
from .tensor import (
    Graph,
    Parameter,
    Tensor,
    add_row,
    backward,
    concat_cols,
    concat_rows,
    cross_entropy,
    gather_rows,
    glorot,
    matmul,
    mean_axis,
    reshape,
    softmax_rows,
    zero_grad,
)


class Mode(str, Enum):
    CATT = "catt"
    BASELINE = "baseline"


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d: int = 16
    h: int = 2
    k_img: int = 32
    k_txt: int = 4
    vocab_in: int = 32
    vocab_out: int = 4
    share_params: bool = True
    ffn_mult: int = 4
    layer_norm: bool = False
    mode: Mode = Mode.CATT

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigurationError("model.mode: expected one of {}, got {!r}".format(
                [m.value for m in Mode], self.mode))
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is int and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
                raise ConfigurationError("model.{}: must be a positive integer, got {!r}".format(f.name, value))
        if self.d % self.h:
            raise ConfigurationError("model.h: width {} is not divisible by {} heads".format(self.d, self.h))

    @property
    def catt(self) -> bool:
        return self.mode == Mode.CATT

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError("model.{}: unknown key".format(unknown[0]))
        return cls(**dict(values))

    def as_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["mode"] = self.mode.value
        return values


class CattModel:
    """All trainable state of the encoder-decoder."""

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        self.config = config
        rng = np.random.default_rng(seed)
        d, h = config.d, config.h
        # baseline blocks run only their IS view; a shared set keeps the count honest
        shared = config.share_params or not config.catt

        def block(prefix: str) -> CattBlockParams:
            return CattBlockParams.create(rng, prefix, d, h, shared=shared, ffn_mult=config.ffn_mult,
                                          layer_norm=config.layer_norm)

        self.embed_features = glorot(rng, "embed.features", config.vocab_in, d)
        self.embed_context = glorot(rng, "embed.context", config.vocab_out, d)
        self.encoder = [block("encoder.{}".format(i)) for i in range(config.enc_layers)]
        self.decoder_self = [block("decoder.{}.self".format(i)) for i in range(config.dec_layers)]
        self.decoder_cross = [block("decoder.{}.cross".format(i)) for i in range(1, config.dec_layers)]
        self.dict_features: Optional[GlobalDictionary] = None
        self.dict_context: Optional[GlobalDictionary] = None
        if config.catt:
            self.dict_features = random_init(config.k_img, d, 1.0, seed + 1, name="dict.features")
            self.dict_context = random_init(config.k_txt, d, 1.0, seed + 2, name="dict.context")
        width = 2 * d if config.catt else d
        self.g_w = glorot(rng, "predictor.w", width, config.vocab_out)
        self.g_b = Parameter("predictor.b", np.zeros((1, config.vocab_out)))

    def install_dictionaries(self, features: GlobalDictionary, context: GlobalDictionary) -> None:
        if not self.config.catt:
            raise ConfigurationError("model.mode: baseline models carry no dictionaries")
        for found, name, k in ((features, "dict.features", self.config.k_img),
                               (context, "dict.context", self.config.k_txt)):
            if found.entries.shape != (k, self.config.d):
                raise ConfigurationError("{}: expected shape {}, got {}".format(
                    name, [k, self.config.d], list(found.entries.shape)))
            found.entries.name = name
        self.dict_features, self.dict_context = features, context

    def dictionaries(self) -> List[GlobalDictionary]:
        return [x for x in (self.dict_features, self.dict_context) if x is not None]

    def parameters(self) -> List[Parameter]:
        params = [self.embed_features, self.embed_context]
        for blocks in (self.encoder, self.decoder_self, self.decoder_cross):
            for b in blocks:
                params.extend(b.parameters())
        params.extend(x.entries for x in self.dictionaries())
        params.extend([self.g_w, self.g_b])
        return unique_parameters(params)

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class Batch:
    features: List[List[int]]
    contexts: List[List[int]]
    labels: List[int]

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Any]) -> "Batch":
        return cls([list(s.features) for s in samples], [list(s.context) for s in samples],
                   [int(s.label) for s in samples])

    def validate(self, config: ModelConfig) -> None:
        if not self.labels:
            raise InputError("batch: no samples")
        if not (len(self.features) == len(self.contexts) == len(self.labels)):
            raise InputError("batch: features, contexts and labels differ in length")
        for i, (f, c, y) in enumerate(zip(self.features, self.contexts, self.labels)):
            if not f or not c:
                raise InputError("batch: sample {} has an empty sequence".format(i))
            if min(f) < 0 or max(f) >= config.vocab_in:
                raise InputError("batch: sample {} has feature ids outside [0, {})".format(i, config.vocab_in))
            if min(c) < 0 or max(c) >= config.vocab_out:
                raise InputError("batch: sample {} has context ids outside [0, {})".format(i, config.vocab_out))
            if not 0 <= y < config.vocab_out:
                raise InputError("batch: sample {} has label {} outside [0, {})".format(i, y, config.vocab_out))


EncoderOutputs = Tuple[Tensor, Optional[Tensor]]


def _as_id_matrix(ids: Any, vocab: int, what: str) -> np.ndarray:
    try:
        m = np.asarray(ids, dtype=np.int64)
    except (TypeError, ValueError):
        raise InputError("{}: sequences must be integer lists of one common length".format(what))
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[1] == 0:
        raise InputError("{}: expected a nonempty [batch, length] id array, got shape {}".format(what, list(m.shape)))
    if m.min() < 0 or m.max() >= vocab:
        raise InputError("{}: ids must lie in [0, {})".format(what, vocab))
    return m


def encode(features: Any, model: CattModel, graph: Optional[Graph] = None) -> EncoderOutputs:
    """``([V_I]_E, [V_C]_E)``, each ``[batch, length, d]``; the second is None for baselines."""
    graph = Graph() if graph is None else graph
    ids = _as_id_matrix(features, model.config.vocab_in, "encode")
    x = gather_rows(graph.parameter(model.embed_features), ids)
    first = model.encoder[0]
    if model.config.catt:
        vi, vc = catt_block(x, model.dict_features, x, first)
    else:
        vi, vc = is_att(x, x, first.is_att), None
    for block in model.encoder[1:]:
        vi = is_att(vi, vi, block.is_att)
        if vc is not None:
            vc = is_att(vc, vc, block.cs_att)
    return vi, vc


def decode(context: Any, enc_outputs: EncoderOutputs, model: CattModel,
           graph: Optional[Graph] = None) -> Tuple[Tensor, Optional[Tensor]]:
    """Pooled ``(Z-hat, X-hat)`` rows, each ``[batch, d]``."""
    vi_e, vc_e = enc_outputs
    graph = vi_e.graph if graph is None else graph
    ids = _as_id_matrix(context, model.config.vocab_out, "decode")
    if ids.shape[0] != vi_e.shape[0]:
        raise InputError("decode: {} context sequences for {} encoded samples".format(ids.shape[0], vi_e.shape[0]))
    c = gather_rows(graph.parameter(model.embed_context), ids)
    first = model.decoder_self[0]
    if model.config.catt:
        z, x = catt_block(c, model.dict_context, c, first)
    else:
        z, x = is_att(c, c, first.is_att), None
    for own, cross in zip(model.decoder_self[1:], model.decoder_cross):
        z = is_att(z, z, own.is_att)
        z, _ = multi_head(z, vi_e, vi_e, cross.is_att)
        if x is not None:
            x = is_att(x, x, own.cs_att)
            x, _ = multi_head(x, vc_e, vc_e, cross.cs_att)
    z_hat = mean_axis(z, -2)
    x_hat = mean_axis(x, -2) if x is not None else None
    return z_hat, x_hat


def _as_rows(t: Tensor) -> Tensor:
    return reshape(t, (1, t.shape[0])) if t.data.ndim == 1 else t


def logits(z_hat: Tensor, x_hat: Optional[Tensor], model: CattModel) -> Tensor:
    """``g([Z-hat ; X-hat])`` as ``[batch, vocab_out]``."""
    graph = z_hat.graph
    z_hat = _as_rows(z_hat)
    if model.config.catt:
        if x_hat is None:
            raise ConfigurationError("predict: catt models need X-hat")
        features = concat_cols(z_hat, _as_rows(x_hat))
    else:
        features = z_hat
    return add_row(matmul(features, graph.parameter(model.g_w)), graph.parameter(model.g_b))


def predict(z_hat: Tensor, x_hat: Optional[Tensor], model: CattModel) -> Tensor:
    """Label distribution ``Softmax(g(Z-hat, X-hat))``, one row per sample."""
    return softmax_rows(logits(z_hat, x_hat, model))


def forward_logits(batch: Batch, model: CattModel, graph: Optional[Graph] = None) -> Tensor:
    """Logits for a batch with ragged sequence lengths, in batch order.

    Samples sharing both lengths run together; the groups are stacked and
    gathered back into the original order.
    """
    graph = Graph() if graph is None else graph
    batch.validate(model.config)
    groups: Dict[Tuple[int, int], List[int]] = {}
    for i, (f, c) in enumerate(zip(batch.features, batch.contexts)):
        groups.setdefault((len(f), len(c)), []).append(i)
    parts, order = [], []
    for members in groups.values():
        enc = encode([batch.features[i] for i in members], model, graph)
        z_hat, x_hat = decode([batch.contexts[i] for i in members], enc, model, graph)
        parts.append(logits(z_hat, x_hat, model))
        order.extend(members)
    stacked = parts[0] if len(parts) == 1 else concat_rows(parts)
    if order == sorted(order):
        return stacked
    inverse = np.empty(len(order), dtype=np.int64)
    inverse[order] = np.arange(len(order))
    return gather_rows(stacked, inverse)


def batch_loss(batch: Batch, model: CattModel, graph: Optional[Graph] = None) -> Tensor:
    """Mean cross-entropy of the gold labels as a 0-d tensor."""
    graph = Graph() if graph is None else graph
    if len(batch) == 0:
        raise InputError("loss: empty batch")
    return cross_entropy(forward_logits(batch, model, graph), batch.labels)


def loss_and_grads(batch: Batch, model: CattModel) -> Tuple[float, Dict[str, np.ndarray]]:
    """Zero every gradient, run forward and backward, return the loss and grads by name."""
    params = model.parameters()
    zero_grad(params)
    loss = batch_loss(batch, model)
    backward(loss)
    return float(loss.data), {p.name: p.grad for p in params}
