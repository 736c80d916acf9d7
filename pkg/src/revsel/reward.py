"""Reconstruction reward log p(summary | selected reviews).

The default model is a two-component unigram mixture: a smoothed corpus
background and a smoothed unigram distribution of the selected reviews,
mixed with ``lam = sigmoid(lam_raw)``.  It orders subsets by lexical
coverage of the summary and has an exact gradient in its one parameter.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .nn import write_json_atomic
from .text_metrics import SEP, Vocab

REWARD_FORMAT = "revsel-reward"


class RewardModel(Protocol):
    def log_likelihood(self, summary: Sequence[str], selected: Sequence[Sequence[str]]) -> float: ...

    def grad_theta(self, summary: Sequence[str], selected: Sequence[Sequence[str]]) -> dict[str, float]: ...


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class UnigramMixtureReward:
    def __init__(self, vocab: Vocab, counts: np.ndarray, alpha: float = 0.1,
                 alpha_sub: float = 0.1, lam_raw: float = 0.0):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (len(vocab) + 1,):
            raise ValueError("counts must cover the vocabulary plus UNK")
        self.vocab = vocab
        self.counts = counts
        self.alpha = alpha
        self.alpha_sub = alpha_sub
        self.lam_raw = float(lam_raw)
        size = len(vocab) + 1
        self.p_bg = (counts + alpha) / (counts.sum() + alpha * size)

    @property
    def lam(self) -> float:
        return _sigmoid(self.lam_raw)

    @property
    def params(self) -> dict[str, float]:
        return {"lam_raw": self.lam_raw}

    # summaries and reviews may be passed pre-encoded as int arrays
    def _ids(self, seq) -> np.ndarray:
        if isinstance(seq, np.ndarray) and seq.dtype.kind == "i":
            return seq
        return np.asarray(self.vocab.encode(seq), dtype=np.int64)

    def _parts(self, summary, selected):
        s_ids = self._ids(summary)
        if s_ids.size == 0:
            raise ValueError("empty summary")
        sel = [self._ids(r) for r in selected]
        sub = np.concatenate(sel) if sel else np.zeros(0, dtype=np.int64)
        size = len(self.vocab) + 1
        cnt = np.bincount(sub, minlength=size)[s_ids]
        p_sub = (cnt + self.alpha_sub) / (sub.size + self.alpha_sub * size)
        return self.p_bg[s_ids], p_sub

    def log_likelihood(self, summary, selected) -> float:
        p_bg, p_sub = self._parts(summary, selected)
        lam = self.lam
        return float(np.log((1.0 - lam) * p_bg + lam * p_sub).sum())

    def grad_theta(self, summary, selected) -> dict[str, float]:
        """d log_likelihood / d lam_raw."""
        p_bg, p_sub = self._parts(summary, selected)
        lam = self.lam
        mix = (1.0 - lam) * p_bg + lam * p_sub
        return {"lam_raw": float(((p_sub - p_bg) / mix).sum() * lam * (1.0 - lam))}

    def to_json(self) -> dict:
        return {"format": REWARD_FORMAT, "version": 1, "vocab": self.vocab.itos,
                "counts": [int(c) for c in self.counts], "alpha": self.alpha,
                "alpha_sub": self.alpha_sub, "lam_raw": self.lam_raw}

    @classmethod
    def from_json(cls, doc: dict) -> "UnigramMixtureReward":
        if doc.get("format") != REWARD_FORMAT:
            raise ValueError("not a reward-model document")
        vocab = Vocab(doc["vocab"])
        if vocab.itos != list(doc["vocab"]):
            raise ValueError("vocabulary is not in canonical order")
        return cls(vocab, np.asarray(doc["counts"], dtype=np.float64), doc["alpha"],
                   doc["alpha_sub"], doc["lam_raw"])

    def save(self, path: str | Path) -> None:
        write_json_atomic(path, self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "UnigramMixtureReward":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_background(corpus: Iterable[Sequence[str]], alpha: float = 0.1,
                     alpha_sub: float = 0.1) -> UnigramMixtureReward:
    """Fit the background from token sequences; the vocabulary is frozen here."""
    docs = [[t for t in doc if t != SEP] for doc in corpus]
    if not docs or not any(docs):
        raise ValueError("cannot build a background from an empty corpus")
    vocab = Vocab(t for d in docs for t in d)
    counts = np.zeros(len(vocab) + 1)
    for d in docs:
        np.add.at(counts, vocab.encode(d), 1.0)
    return UnigramMixtureReward(vocab, counts, alpha, alpha_sub)


def corpus_documents(records) -> list[list[str]]:
    """Review and summary token sequences of a list of ProductRecord."""
    docs = []
    for rec in records:
        docs.extend(list(r.tokens) for r in rec.reviews)
        docs.append(rec.summary.all_tokens())
    return docs
