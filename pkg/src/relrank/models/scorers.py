"""The relevance architectures: each maps a query-document pair to a scalar.

Every scorer owns a ParameterSet; ``score`` returns a scalar autodiff tensor
so the training loop can backpropagate through it.  ``doc_state`` returns
the per-document value worth caching while parameters are frozen (the
recurrent document encoding), or None for models without one.
"""

from __future__ import annotations

import inspect

import numpy as np

from ..autodiff import ParameterSet, Tensor, concat, dot, gather_rows
from ..encoder import BiRnnEncoder
from ..errors import ConfigError
from .components import Mlp, glorot_uniform
from .interactions import (
    attended_match_vectors,
    cosine_attention,
    drmm_histogram,
    equality_matrix,
    gate_features,
    gate_width,
    hashed_match_vectors,
    histogram_edges,
    max_kmax_pool,
    sim_matrix,
    softmax_idf,
    term_gate,
)
from .inputs import PairInput


class Scorer:
    """Base class: parameter registry plus the scoring entry points."""

    name = "base"

    def __init__(self):
        self.params = ParameterSet()
        self.emb: Tensor | None = None

    def doc_state(self, pair: PairInput):
        return None

    def score(self, pair: PairInput, doc_state=None, dropout_rng=None) -> Tensor:
        raise NotImplementedError

    # Gating over query terms, shared by the DRMM-shaped models.

    def _init_gate(self, dim: int, rng, gate_mode: str) -> None:
        self.gate_mode = gate_mode
        width = gate_width(dim, gate_mode)
        self.w_gate = self.params.add(
            "gate.w", glorot_uniform(rng, width, 1, width))

    def _gate_feats(self, pair: PairInput) -> Tensor:
        if self.emb is None:
            return Tensor(gate_features(pair.q_emb, pair.q_idf, self.gate_mode))
        q_e = gather_rows(self.emb, pair.q_rows)
        if self.gate_mode == "emb":
            return q_e
        idf_col = Tensor(pair.q_idf[:, None])
        if self.gate_mode == "idf":
            return idf_col
        return concat([q_e, idf_col], axis=1)

    def _gates(self, pair: PairInput) -> Tensor:
        return term_gate(self._gate_feats(pair), self.w_gate)


class HistogramDrmm(Scorer):
    """Bucketed-cosine-histogram scorer with gated per-term aggregation.

    Histograms are built outside the graph: no gradient reaches the
    embeddings, only the dense stack and the gate train.
    """

    name = "drmm"

    def __init__(self, dim: int, rng, buckets: int = 30, hidden=None,
                 gate_mode: str = "emb+idf"):
        super().__init__()
        self.edges = histogram_edges(buckets)
        if hidden is None:
            hidden = (buckets, buckets)
        self.mlp = Mlp(buckets, hidden, rng)
        for name, tensor in self.mlp.parameters("mlp"):
            self.params.add(name, tensor)
        self._init_gate(dim, rng, gate_mode)

    def score(self, pair, doc_state=None, dropout_rng=None):
        hists = np.stack([drmm_histogram(q_vec, pair.d_emb, self.edges)
                          for q_vec in pair.q_emb])
        rows = self.mlp.rows(Tensor(np.log1p(hists)))
        return dot(self._gates(pair), rows)


class _ConvRowsBase(Scorer):
    """Shared similarity-matrix row assembly for the convolutional models.

    Per query row: k-max of the raw cosine row (size-1 signal), then k-max
    of each conv output (sizes 2..max_kernel, relu, max over filters), then
    the softmax-normalized IDF appended after pooling.
    """

    def __init__(self, dim: int, rng, max_query_terms: int = 30,
                 max_doc_terms: int = 300, max_kernel: int = 3,
                 filters: int = 16, k: int = 2):
        super().__init__()
        if not 2 <= max_kernel <= max_query_terms:
            raise ConfigError(
                f"kernel sizes must satisfy 2 <= max_kernel <= max_query_terms, "
                f"got max_kernel={max_kernel}, max_query_terms={max_query_terms}")
        if not 1 <= k <= max_doc_terms:
            raise ConfigError(
                f"k-max depth must satisfy 1 <= k <= max_doc_terms, got {k}")
        if filters < 1:
            raise ConfigError(f"need at least one filter, got {filters}")
        self.l_q = max_query_terms
        self.l_d = max_doc_terms
        self.max_kernel = max_kernel
        self.k = k
        self.conv_w = []
        self.conv_b = []
        for n in range(2, max_kernel + 1):
            w = self.params.add(
                f"conv{n}.w", glorot_uniform(rng, n * n, n * n, (filters, n, n)))
            b = self.params.add(f"conv{n}.b", np.zeros(filters))
            self.conv_w.append(w)
            self.conv_b.append(b)
        self.row_width = max_kernel * k + 1

    def doc_aware_rows(self, pair: PairInput) -> Tensor:
        """(max_query_terms, row_width) document-aware query-term encodings."""
        from ..autodiff import pad2d, conv2d

        sim = Tensor(sim_matrix(pair.q_emb, pair.d_emb, self.l_q, self.l_d))
        feats = [sim.kmax(self.k)]
        for n, w, b in zip(range(2, self.max_kernel + 1), self.conv_w, self.conv_b):
            top = (n - 1) // 2
            bottom = n - 1 - top
            padded = pad2d(sim, (top, bottom), (top, bottom))
            pooled = conv2d(padded, w, b).relu().max(axis=0)
            feats.append(pooled.kmax(self.k))
        feats.append(Tensor(softmax_idf(pair.q_idf, self.l_q)[:, None]))
        return concat(feats, axis=1)


class Pacrr(_ConvRowsBase):
    """Convolutional matcher scored by one dense stack over all rows."""

    name = "pacrr"

    def __init__(self, dim: int, rng, max_query_terms: int = 30,
                 max_doc_terms: int = 300, max_kernel: int = 3,
                 filters: int = 16, k: int = 2, hidden=()):
        super().__init__(dim, rng, max_query_terms, max_doc_terms,
                         max_kernel, filters, k)
        self.dense = Mlp(self.l_q * self.row_width, hidden, rng)
        for name, tensor in self.dense.parameters("dense"):
            self.params.add(name, tensor)

    def score(self, pair, doc_state=None, dropout_rng=None):
        rows = self.doc_aware_rows(pair)
        flat = rows.reshape(1, self.l_q * self.row_width)
        return self.dense.rows(flat)[0]


class PacrrDrmm(_ConvRowsBase):
    """Convolutional rows scored one at a time by a shared dense stack,
    then combined linearly (no gating)."""

    name = "pacrr-drmm"

    def __init__(self, dim: int, rng, max_query_terms: int = 30,
                 max_doc_terms: int = 300, max_kernel: int = 3,
                 filters: int = 16, k: int = 2, hidden=()):
        super().__init__(dim, rng, max_query_terms, max_doc_terms,
                         max_kernel, filters, k)
        self.row_mlp = Mlp(self.row_width, hidden, rng)
        for name, tensor in self.row_mlp.parameters("row_mlp"):
            self.params.add(name, tensor)
        self.agg_w = self.params.add(
            "agg.w", glorot_uniform(rng, self.l_q, 1, self.l_q))
        self.agg_b = self.params.add("agg.b", np.zeros(()))

    def score(self, pair, doc_state=None, dropout_rng=None):
        row_scores = self.row_mlp.rows(self.doc_aware_rows(pair))
        return dot(self.agg_w, row_scores) + self.agg_b


class _EncoderScorer(Scorer):
    """Base for models that read context-sensitive term encodings."""

    def __init__(self, dim: int, rng, dropout: float = 0.0,
                 trainable_embeddings: bool = False, emb_matrix=None):
        super().__init__()
        self.dim = dim
        self.encoder = BiRnnEncoder(dim, rng, dropout)
        self.encoder.register(self.params)
        if trainable_embeddings:
            if emb_matrix is None:
                raise ConfigError(
                    "trainable embeddings need the embedding matrix at build time")
            self.emb = self.params.add("embeddings", emb_matrix.rows.copy())

    def _q_vectors(self, pair: PairInput) -> Tensor:
        if self.emb is not None:
            return gather_rows(self.emb, pair.q_rows)
        return Tensor(pair.q_emb)

    def _d_vectors(self, pair: PairInput) -> Tensor:
        if self.emb is not None:
            return gather_rows(self.emb, pair.d_rows)
        return Tensor(pair.d_emb)

    def doc_state(self, pair: PairInput) -> np.ndarray:
        return self.encoder.encode(self._d_vectors(pair)).data

    def _contexts(self, pair, doc_state, dropout_rng):
        q_ctx = self.encoder.encode(self._q_vectors(pair), dropout_rng)
        if doc_state is not None:
            d_ctx = Tensor(doc_state)
        else:
            d_ctx = self.encoder.encode(self._d_vectors(pair), dropout_rng)
        return q_ctx, d_ctx


class AttentionDrmm(_EncoderScorer):
    """Softmax attention over document encodings; the attended vector and
    the q-term encoding meet in a normalized Hadamard product."""

    name = "attn-drmm"
    multiview = False

    def __init__(self, dim: int, rng, hidden=None, gate_mode: str = "emb+idf",
                 dropout: float = 0.0, trainable_embeddings: bool = False,
                 emb_matrix=None):
        super().__init__(dim, rng, dropout, trainable_embeddings, emb_matrix)
        width = 2 * dim
        if hidden is None:
            hidden = (width, width)
        self.mlp = Mlp(width, hidden, rng)
        for name, tensor in self.mlp.parameters("mlp"):
            self.params.add(name, tensor)
        self._init_gate(dim, rng, gate_mode)

    def _signatures(self, pair, doc_state, dropout_rng) -> Tensor:
        q_ctx, d_ctx = self._contexts(pair, doc_state, dropout_rng)
        phi = attended_match_vectors(q_ctx, d_ctx)
        if self.multiview:
            q_e = self._q_vectors(pair)
            d_e = self._d_vectors(pair)
            phi = phi + attended_match_vectors(concat([q_e, q_e], axis=1),
                                               concat([d_e, d_e], axis=1))
            q_h, d_h = hashed_match_vectors(pair.q_keys, pair.d_keys, 2 * self.dim)
            phi = phi + attended_match_vectors(Tensor(q_h), Tensor(d_h))
        return phi

    def score(self, pair, doc_state=None, dropout_rng=None):
        rows = self.mlp.rows(self._signatures(pair, doc_state, dropout_rng))
        return dot(self._gates(pair), rows)


class AttentionDrmmMv(AttentionDrmm):
    """Attention variant summing three views: context-sensitive encodings,
    duplicated raw embeddings, and hashed exact-match one-hots."""

    name = "attn-drmm-mv"
    multiview = True


class PooledCosineDrmm(_EncoderScorer):
    """Cosine attention rows pooled to <max, mean of k largest> per q-term,
    scored by a single linear layer under the gate."""

    name = "pooled-drmm"
    multiview = False

    def __init__(self, dim: int, rng, k: int = 5, gate_mode: str = "emb+idf",
                 dropout: float = 0.0, trainable_embeddings: bool = False,
                 emb_matrix=None):
        super().__init__(dim, rng, dropout, trainable_embeddings, emb_matrix)
        if k < 1:
            raise ConfigError(f"pool depth must be >= 1, got {k}")
        self.k = k
        width = 6 if self.multiview else 2
        self.dense = Mlp(width, (), rng)
        for name, tensor in self.dense.parameters("dense"):
            self.params.add(name, tensor)
        self._init_gate(dim, rng, gate_mode)

    def _signatures(self, pair, doc_state, dropout_rng) -> Tensor:
        q_ctx, d_ctx = self._contexts(pair, doc_state, dropout_rng)
        feats = max_kmax_pool(cosine_attention(q_ctx, d_ctx), self.k)
        if self.multiview:
            raw = cosine_attention(self._q_vectors(pair), self._d_vectors(pair))
            exact = Tensor(equality_matrix(pair.q_keys, pair.d_keys))
            feats = concat([feats, max_kmax_pool(raw, self.k),
                            max_kmax_pool(exact, self.k)], axis=1)
        return feats

    def score(self, pair, doc_state=None, dropout_rng=None):
        rows = self.dense.rows(self._signatures(pair, doc_state, dropout_rng))
        return dot(self._gates(pair), rows)


class PooledCosineDrmmMv(PooledCosineDrmm):
    """Pooled-cosine variant with three views: context-sensitive encodings,
    raw embeddings, and exact-match one-hots (6 features per q-term)."""

    name = "pooled-drmm-mv"
    multiview = True


class CombinedScorer(Scorer):
    """Linear mix of a base model score with the four extra features.

    With no base model this is the BM25-plus-extra-features baseline.  The
    base model's parameters are shared into this scorer's set, so one
    optimizer trains everything jointly.
    """

    def __init__(self, base: Scorer | None):
        super().__init__()
        self.base = base
        if base is not None:
            self.name = base.name + "+extra"
            for name, tensor in base.params.items():
                self.params.add(name, tensor)
            self.w_model = self.params.add("combine.w_model", np.ones(()))
        else:
            self.name = "bm25-extra"
        self.w_extra = self.params.add("combine.w_extra", np.zeros(4))
        self.bias = self.params.add("combine.b", np.zeros(()))

    def doc_state(self, pair):
        return self.base.doc_state(pair) if self.base is not None else None

    def score(self, pair, doc_state=None, dropout_rng=None):
        if pair.extra is None:
            raise ConfigError(
                f"model {self.name!r} needs extra features on every pair")
        total = dot(self.w_extra, Tensor(pair.extra)) + self.bias
        if self.base is not None:
            total = total + self.base.score(pair, doc_state, dropout_rng) * self.w_model
        return total


_ARCHITECTURES = {
    cls.name: cls
    for cls in (HistogramDrmm, Pacrr, PacrrDrmm, AttentionDrmm,
                AttentionDrmmMv, PooledCosineDrmm, PooledCosineDrmmMv)
}

BASELINE = "bm25-extra"


def model_names() -> list[str]:
    return sorted([*_ARCHITECTURES, BASELINE])


def build_model(name: str, dim: int, rng, extra_features: bool = False,
                emb_matrix=None, **hyper) -> Scorer:
    """Construct a scorer by registry name.

    Unknown hyperparameter keys are rejected up front so config typos fail
    loudly instead of silently using defaults.
    """
    if name == BASELINE:
        if hyper:
            raise ConfigError(
                f"{BASELINE} takes no hyperparameters, got {sorted(hyper)}")
        return CombinedScorer(None)
    try:
        cls = _ARCHITECTURES[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {model_names()}")
    accepted = set(inspect.signature(cls.__init__).parameters) - {"self", "dim", "rng"}
    unknown = set(hyper) - accepted
    if unknown:
        raise ConfigError(
            f"unknown {name} hyperparameters {sorted(unknown)}; "
            f"accepted: {sorted(accepted - {'emb_matrix'})}")
    if hyper.get("trainable_embeddings"):
        hyper = dict(hyper, emb_matrix=emb_matrix)
    model = cls(dim, rng, **hyper)
    if extra_features:
        model = CombinedScorer(model)
    return model
