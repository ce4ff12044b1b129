"""Attention primitives of causal attention.

``is_att`` attends over the current sample (the in-sample estimate Z-hat),
``cs_att`` attends over a global dictionary (the cross-sample estimate X-hat),
and ``catt_block`` pairs them, optionally with one shared set of weights so
both estimates stay in the same representation space. ``additive_scores``
is the additive scorer used by LSTM-style captioners.

Row convention throughout: a set of n vectors is an ``[n, d]`` matrix and
projections multiply on the right.
"""

from typing import List, Tuple, Union

import numpy as np

from .dictionary import GlobalDictionary
from .errors import ConfigurationError, DimensionError, EmptyKeyError
from .tensor import (
    EmbedParams,
    Parameter,
    Tensor,
    add_row,
    concat_cols,
    embed_block,
    glorot,
    matmul,
    reshape,
    scale,
    softmax_rows,
    transpose,
)


class AttentionParams:
    """Per-head W_i^Q, W_i^K, W_i^V (each ``d x d/h``), W^H and the Embed block."""

    def __init__(self, heads: int, model_dim: int, wq: List[Parameter], wk: List[Parameter],
                 wv: List[Parameter], wh: Parameter, embed: EmbedParams) -> None:
        if heads < 1 or model_dim % heads:
            raise ConfigurationError("attention: model width {} is not divisible by {} heads".format(
                model_dim, heads))
        if not (len(wq) == len(wk) == len(wv) == heads):
            raise ConfigurationError("attention: need one W^Q, W^K, W^V per head")
        self.heads = heads
        self.model_dim = model_dim
        self.wq, self.wk, self.wv, self.wh = wq, wk, wv, wh
        self.embed = embed

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @classmethod
    def create(cls, rng: np.random.Generator, prefix: str, d: int, h: int, ffn_mult: int = 4,
               layer_norm: bool = False) -> "AttentionParams":
        if h < 1 or d % h:
            raise ConfigurationError("attention: model width {} is not divisible by {} heads".format(d, h))
        dh = d // h

        def per_head(kind: str) -> List[Parameter]:
            return [glorot(rng, "{}.{}.{}".format(prefix, kind, i), d, dh) for i in range(h)]

        return cls(
            heads=h,
            model_dim=d,
            wq=per_head("wq"),
            wk=per_head("wk"),
            wv=per_head("wv"),
            wh=glorot(rng, prefix + ".wh", d, d),
            embed=EmbedParams.create(rng, prefix + ".embed", d, ffn_mult, layer_norm),
        )

    def parameters(self) -> List[Parameter]:
        return [*self.wq, *self.wk, *self.wv, self.wh, *self.embed.parameters()]


class CattBlockParams:
    """IS-ATT and CS-ATT weights; with ``shared`` both views are one object."""

    def __init__(self, is_att: AttentionParams, cs_att: AttentionParams, shared: bool) -> None:
        if shared and is_att is not cs_att:
            raise ConfigurationError("shared CATT block needs one AttentionParams for both views")
        self.is_att = is_att
        self.cs_att = cs_att
        self.shared = shared

    @classmethod
    def create(cls, rng: np.random.Generator, prefix: str, d: int, h: int, shared: bool = True,
               ffn_mult: int = 4, layer_norm: bool = False) -> "CattBlockParams":
        if shared:
            att = AttentionParams.create(rng, prefix + ".att", d, h, ffn_mult, layer_norm)
            return cls(att, att, shared=True)
        return cls(
            AttentionParams.create(rng, prefix + ".is", d, h, ffn_mult, layer_norm),
            AttentionParams.create(rng, prefix + ".cs", d, h, ffn_mult, layer_norm),
            shared=False,
        )

    def parameters(self) -> List[Parameter]:
        if self.shared:
            return self.is_att.parameters()
        return self.is_att.parameters() + self.cs_att.parameters()


class AdditiveParams:
    """``a_n = w . (k_n W_k + q W_q)``."""

    def __init__(self, w: Parameter, w_k: Parameter, w_q: Parameter) -> None:
        d = w_k.shape[0]
        if w.value.size != d or w_k.shape != (d, d) or w_q.shape != (d, d):
            raise ConfigurationError("additive scorer: w {}, W_k {}, W_q {} are inconsistent".format(
                list(w.shape), list(w_k.shape), list(w_q.shape)))
        self.w, self.w_k, self.w_q = w, w_k, w_q

    @classmethod
    def create(cls, rng: np.random.Generator, prefix: str, d: int) -> "AdditiveParams":
        return cls(glorot(rng, prefix + ".w", 1, d), glorot(rng, prefix + ".wk", d, d),
                   glorot(rng, prefix + ".wq", d, d))

    @property
    def width(self) -> int:
        return self.w_k.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.w, self.w_k, self.w_q]


def _check_width(name: str, t: Tensor, d: int) -> None:
    if t.shape[-1] != d:
        raise DimensionError("{}: width {} does not match model width {}".format(name, t.shape[-1], d))


def multi_head(Q: Tensor, K: Tensor, V: Tensor, p: AttentionParams) -> Tuple[Tensor, List[Tensor]]:
    """``Embed([H_1..H_h] W^H)`` with ``H_i = softmax(Q W_i^Q (K W_i^K)^T / sqrt(d/h)) V W_i^V``.

    Returns the output and the per-head attention matrices.
    """
    d = p.model_dim
    _check_width("multi_head query", Q, d)
    _check_width("multi_head key", K, d)
    _check_width("multi_head value", V, d)
    if K.shape[-2] == 0:
        raise EmptyKeyError("multi_head: no keys to attend over")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError("multi_head: {} keys but {} values".format(K.shape[-2], V.shape[-2]))
    graph = Q.graph
    inv_sqrt = 1.0 / np.sqrt(p.head_dim)
    heads, maps = None, []
    for wq, wk, wv in zip(p.wq, p.wk, p.wv):
        q = matmul(Q, graph.parameter(wq))
        k = matmul(K, graph.parameter(wk))
        v = matmul(V, graph.parameter(wv))
        A = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt))
        H = matmul(A, v)
        heads = H if heads is None else concat_cols(heads, H)
        maps.append(A)
    out = embed_block(matmul(heads, graph.parameter(p.wh)), p.embed)
    return out, maps


def is_att(sample_values: Tensor, queries: Tensor, p: AttentionParams) -> Tensor:
    """In-sample attention: keys and values are the current sample."""
    out, _ = multi_head(queries, sample_values, sample_values, p)
    return out


def dictionary_tensor(dictionary: GlobalDictionary, graph) -> Tensor:
    if dictionary.size == 0:
        raise ConfigurationError("cs_att: the global dictionary is empty")
    return graph.parameter(dictionary.entries)


def cs_att(dictionary: GlobalDictionary, queries: Tensor, p: AttentionParams) -> Tensor:
    """Cross-sample attention: keys and values are the global dictionary."""
    entries = dictionary_tensor(dictionary, queries.graph)
    out, _ = multi_head(queries, entries, entries, p)
    return out


def catt_block(sample: Tensor, dictionary: GlobalDictionary, queries: Tensor,
               p: CattBlockParams) -> Tuple[Tensor, Tensor]:
    """One causal attention module: ``(Z-hat, X-hat)``."""
    return is_att(sample, queries, p.is_att), cs_att(dictionary, queries, p.cs_att)


# Additive scorer -------------------------------------------------------------

def _as_query_row(q: Tensor, d: int) -> Tensor:
    if q.data.size != d:
        raise DimensionError("additive scorer: query of shape {} for width {}".format(list(q.shape), d))
    return q if q.shape == (1, d) else reshape(q, (1, d))


def additive_scores(q: Tensor, keys: Tensor, p: AdditiveParams) -> Tensor:
    """Attention distribution ``softmax(a_1..a_N)`` as a ``[1, N]`` row."""
    d = p.width
    _check_width("additive_scores keys", keys, d)
    if keys.data.ndim != 2:
        raise DimensionError("additive_scores: keys must be [N, d], got {}".format(list(keys.shape)))
    if keys.shape[0] == 0:
        raise EmptyKeyError("additive_scores: no keys to score")
    graph = keys.graph
    projected = add_row(matmul(keys, graph.parameter(p.w_k)),
                        matmul(_as_query_row(q, d), graph.parameter(p.w_q)))
    w_col = reshape(graph.parameter(p.w), (d, 1))
    logits = transpose(matmul(projected, w_col))
    return softmax_rows(logits)


def additive_attend(q: Tensor, keys: Tensor, values: Tensor, p: AdditiveParams) -> Tensor:
    """``sum_n alpha_n v_n`` as a ``[1, d]`` row."""
    return matmul(additive_scores(q, keys, p), values)


def additive_catt_block(sample: Tensor, dictionary: Union[GlobalDictionary, Tensor], q: Tensor,
                        p: AdditiveParams) -> Tuple[Tensor, Tensor]:
    """In-sample and cross-sample additive attention sharing one scorer and query."""
    if isinstance(dictionary, GlobalDictionary):
        dictionary = dictionary_tensor(dictionary, sample.graph)
    return additive_attend(q, sample, sample, p), additive_attend(q, dictionary, dictionary, p)
