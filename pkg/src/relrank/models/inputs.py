"""Per-pair inputs assembled once and consumed by any scorer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embeddings import EmbeddingMatrix, exact_match_keys
from ..text import IdfTable, ProcessedDocument, ProcessedQuery


@dataclass
class PairInput:
    """Everything a scorer may need for one query-document pair."""

    query_id: str
    doc_id: str
    q_emb: np.ndarray    # (n, dim) pre-trained vectors
    d_emb: np.ndarray    # (m, dim)
    q_idf: np.ndarray    # (n,)
    q_rows: np.ndarray   # (n,) embedding-matrix row indices
    d_rows: np.ndarray   # (m,)
    q_keys: list         # exact-match equality keys
    d_keys: list
    extra: np.ndarray | None = None  # (4,) extra features when enabled


def build_pair_input(query: ProcessedQuery, doc: ProcessedDocument,
                     emb: EmbeddingMatrix, idf: IdfTable,
                     extra: np.ndarray | None = None) -> PairInput:
    q_rows = emb.resolve(query.terms)
    d_rows = emb.resolve(doc.terms)
    q_keys, d_keys = exact_match_keys(query, doc)
    return PairInput(
        query_id=query.query_id,
        doc_id=doc.doc_id,
        q_emb=emb.rows[q_rows],
        d_emb=emb.rows[d_rows],
        q_idf=idf.for_terms(query.terms),
        q_rows=q_rows,
        d_rows=d_rows,
        q_keys=q_keys,
        d_keys=d_keys,
        extra=extra,
    )
