"""The 23 lexical features describing one review in its product context.

Hypothesis is always the review; references are the verdict ``v``, the
pros and cons ``pc`` and the other reviews ``r-k`` (joined with boundaries,
so no n-gram or aspect phrase crosses from one review into another).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ProductRecord
from .text_metrics import (AspectLexicon, aspect_density, aspect_scores_tagged, ngram_counts,
                           rouge_n_counts, seq_len)

FEATURE_NAMES = (
    "R2-R(r,pc)", "R1-R(r,pc)", "R2-P(r,pc)", "R1-R(r,v)", "R2-R(r,v)", "R2-P(r,r-k)",
    "R2-P(r,v)", "AR(r,pc)", "R1-R(r,r-k)", "AP(r,pc)", "R2-R(r,r-k)", "R1-P(r,pc)",
    "R1-P(r,v)", "AP(r,r-k)", "AR(r,r-k)", "LD(r,pc)", "AP(r,v)", "LD(r,v)",
    "R1-P(r,r-k)", "AR(r,v)", "AD(r)", "AD(v)", "AD(pc)",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


@dataclass
class FeatureMatrix:
    product_id: str
    values: np.ndarray  # (n_reviews, 23)

    def to_json(self) -> dict:
        return {"id": self.product_id, "columns": list(FEATURE_NAMES),
                "rows": [[float(v) for v in row] for row in self.values]}

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureMatrix":
        if tuple(doc["columns"]) != FEATURE_NAMES:
            raise ValueError(f"feature columns for {doc['id']!r} do not match the frozen order")
        vals = np.asarray(doc["rows"], dtype=np.float64).reshape(-1, N_FEATURES)
        return cls(doc["id"], vals)


class _ProductContext:
    """Per-review n-gram and aspect counters, so r-k is total minus own."""

    def __init__(self, product: ProductRecord, lex: AspectLexicon):
        self.lex = lex
        self.reviews = [list(r.tokens) for r in product.reviews]
        self.v = product.summary.verdict_tokens()
        self.pc = product.summary.pros_cons_tokens()
        self.uni = [ngram_counts(r, 1) for r in self.reviews]
        self.bi = [ngram_counts(r, 2) for r in self.reviews]
        self.tags = [lex.tag(r) for r in self.reviews]
        self.uni_all = sum(self.uni, Counter())
        self.bi_all = sum(self.bi, Counter())
        self.tags_all = sum(self.tags, Counter())
        self.ref = {}
        for name, seq in (("v", self.v), ("pc", self.pc)):
            self.ref[name] = (ngram_counts(seq, 1), ngram_counts(seq, 2), lex.tag(seq))
        self.max_len = max([len(r) for r in self.reviews] + [seq_len(self.v), seq_len(self.pc), 1])
        self.ad_v = aspect_density(self.v, lex)
        self.ad_pc = aspect_density(self.pc, lex)

    def row(self, k: int) -> np.ndarray:
        r = self.reviews[k]
        u, b, t = self.uni[k], self.bi[k], self.tags[k]
        f: dict[str, float] = {}
        for name in ("v", "pc"):
            ru, rb, rt = self.ref[name]
            r1, r2 = rouge_n_counts(u, ru), rouge_n_counts(b, rb)
            f[f"R1-P(r,{name})"], f[f"R1-R(r,{name})"] = r1.precision, r1.recall
            f[f"R2-P(r,{name})"], f[f"R2-R(r,{name})"] = r2.precision, r2.recall
            f[f"AP(r,{name})"], f[f"AR(r,{name})"] = aspect_scores_tagged(t, rt)
        rest_u = self.uni_all - u
        rest_b = self.bi_all - b
        rest_t = self.tags_all - t
        r1, r2 = rouge_n_counts(u, rest_u), rouge_n_counts(b, rest_b)
        f["R1-P(r,r-k)"], f["R1-R(r,r-k)"] = r1.precision, r1.recall
        f["R2-P(r,r-k)"], f["R2-R(r,r-k)"] = r2.precision, r2.recall
        f["AP(r,r-k)"], f["AR(r,r-k)"] = aspect_scores_tagged(t, rest_t)
        m = self.max_len
        f["LD(r,v)"] = len(r) / m - seq_len(self.v) / m
        f["LD(r,pc)"] = len(r) / m - seq_len(self.pc) / m
        f["AD(r)"] = aspect_density(r, self.lex)
        f["AD(v)"] = self.ad_v
        f["AD(pc)"] = self.ad_pc
        return np.array([f[name] for name in FEATURE_NAMES], dtype=np.float64)


def compute_features(k: int, product: ProductRecord, lex: AspectLexicon) -> np.ndarray:
    if not 0 <= k < len(product.reviews):
        raise IndexError(f"review index {k} out of range for {len(product.reviews)} reviews")
    return _ProductContext(product, lex).row(k)


def featurize_product(product: ProductRecord, lex: AspectLexicon) -> FeatureMatrix:
    ctx = _ProductContext(product, lex)
    vals = np.array([ctx.row(k) for k in range(len(product.reviews))], dtype=np.float64)
    return FeatureMatrix(product.id, vals.reshape(-1, N_FEATURES))


def featurize_corpus(records: Sequence[ProductRecord], lex: AspectLexicon) -> list[FeatureMatrix]:
    return [featurize_product(rec, lex) for rec in records]


def save_features(mats: Sequence[FeatureMatrix], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for m in mats:
            fh.write(json.dumps(m.to_json()) + "\n")


def load_features(path: str | Path) -> list[FeatureMatrix]:
    with open(path, encoding="utf-8") as fh:
        return [FeatureMatrix.from_json(json.loads(line)) for line in fh if line.strip()]


def r1_recall_scores(product: ProductRecord) -> np.ndarray:
    """ROUGE-1 recall of each review against the full gold summary."""
    ref = ngram_counts(product.summary.all_tokens(), 1)
    return np.array([rouge_n_counts(ngram_counts(r.tokens, 1), ref).recall
                     for r in product.reviews])
