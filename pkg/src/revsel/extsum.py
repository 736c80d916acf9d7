"""Extractive summarization baseline.

Sentences of all reviews form a pool.  Training labels come from a greedy
ROUGE oracle run per summary section; a 4-way sentence classifier learns
them with the positive classes up-weighted; extraction fills verdict, pros
and cons in that order, never reusing a sentence.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import GoldSummary, ProductRecord
from .nn import Adam, BagAttentionScorer, load_checkpoint, save_checkpoint, softmax_rows, \
    weighted_softmax_ce
from .text_metrics import Vocab, ngram_counts, tokenize

NONE, VERDICT, PRO, CON = 0, 1, 2, 3
CLASS_NAMES = ("none", "verdict", "pros", "cons")
SECTIONS = ("verdict", "pros", "cons")
TRAIN_POOL_CAP = 550

ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "approx",
    "no", "inc", "ltd", "co", "corp", "dept", "est", "fig", "min", "max", "oz", "lb", "lbs",
    "ft", "in", "cm", "mm", "u.s", "a.m", "p.m",
})

_BOUNDARY = re.compile(r"[.!?]+(?=\s|$)")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans ``(start, end)`` of the sentences in ``text``.

    A sentence ends at a run of '.', '!' or '?' followed by whitespace or the
    end of the text, unless the word before a single '.' is a known
    abbreviation.  Spans exclude surrounding whitespace.
    """
    spans = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        if m.group() == ".":
            word = text[start:m.start()].rsplit(None, 1)
            if word and word[-1].lower().lstrip("([\"'") in ABBREVIATIONS:
                continue
        spans.append((start, m.end()))
        start = m.end()
    spans.append((start, len(text)))
    out = []
    for s, e in spans:
        chunk = text[s:e]
        stripped = chunk.strip()
        if stripped:
            s2 = s + (len(chunk) - len(chunk.lstrip()))
            out.append((s2, s2 + len(stripped)))
    return out


@dataclass(frozen=True)
class Sentence:
    review: int
    index: int  # position within its review
    start: int
    end: int
    text: str
    tokens: tuple[str, ...] = field(repr=False, compare=False)


@dataclass
class SentencePool:
    product_id: str
    sentences: list[Sentence]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.sentences)


def build_pool(product: ProductRecord, cap: int | None = None) -> SentencePool:
    """All review sentences in review order, optionally capped."""
    sents: list[Sentence] = []
    truncated = False
    for ri, rev in enumerate(product.reviews):
        for si, (s, e) in enumerate(split_sentences(rev.text)):
            if cap is not None and len(sents) >= cap:
                truncated = True
                break
            text = rev.text[s:e]
            sents.append(Sentence(ri, si, s, e, text, tuple(tokenize(text))))
    return SentencePool(product.id, sents, truncated)


@dataclass(frozen=True)
class Budgets:
    verdict: int
    pros: int
    cons: int

    def __post_init__(self):
        if min(self.verdict, self.pros, self.cons) < 1:
            raise ValueError("budgets must be positive")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.verdict, self.pros, self.cons)

    @property
    def total(self) -> int:
        return self.verdict + self.pros + self.cons


ORACLE_BUDGETS = Budgets(4, 8, 4)
EXTRACT_BUDGETS = Budgets(3, 7, 4)


# -- greedy oracle ---------------------------------------------------------

def section_score(hyp1: Counter, hyp2: Counter, ref1: Counter, ref2: Counter) -> Fraction:
    """ROUGE-1 recall plus ROUGE-2 recall, exactly."""
    total = Fraction(0)
    for h, r in ((hyp1, ref1), (hyp2, ref2)):
        n = sum(r.values())
        if n:
            total += Fraction(sum(min(c, r[g]) for g, c in h.items() if g in r), n)
    return total


@dataclass
class OracleStep:
    sentence: int
    gain: Fraction
    score: Fraction


@dataclass
class OracleResult:
    labels: list[int]
    traces: dict[str, list[OracleStep]]


def _overlap_gain(h: Counter, c: Counter, r: Counter) -> int:
    """Increase of the clipped overlap with ``r`` when ``c`` is added to ``h``."""
    return sum(min(h[g] + k, r[g]) - min(h[g], r[g]) for g, k in c.items() if g in r)


def greedy_select(cands: Sequence[tuple[Counter, Counter]], ref_tokens: Sequence[str],
                  budget: int, excluded: set[int] = frozenset()) -> list[OracleStep]:
    """Greedy R1+R2 recall-gain selection against one reference.

    Stops at the budget or when no remaining candidate has positive gain;
    ties go to the lowest index.
    """
    ref1, ref2 = ngram_counts(ref_tokens, 1), ngram_counts(ref_tokens, 2)
    n1, n2 = sum(ref1.values()), sum(ref2.values())
    h1, h2 = Counter(), Counter()
    cur = Fraction(0)
    chosen: list[OracleStep] = []
    taken = set(excluded)
    while len(chosen) < budget:
        best = None
        for i, (c1, c2) in enumerate(cands):
            if i in taken:
                continue
            d1 = _overlap_gain(h1, c1, ref1) if n1 else 0
            d2 = _overlap_gain(h2, c2, ref2) if n2 else 0
            gain = (Fraction(d1, n1) if n1 else Fraction(0)) + (Fraction(d2, n2) if n2 else 0)
            if best is None or gain > best[0]:
                best = (gain, i)
        if best is None or best[0] <= 0:
            break
        gain, i = best
        cur += gain
        chosen.append(OracleStep(i, gain, cur))
        taken.add(i)
        h1 += cands[i][0]
        h2 += cands[i][1]
    return chosen


def oracle_labels(product: ProductRecord, budgets: Budgets = ORACLE_BUDGETS,
                  pool: SentencePool | None = None) -> OracleResult:
    """Label pool sentences by greedy ROUGE against each gold section in turn."""
    pool = pool if pool is not None else build_pool(product, TRAIN_POOL_CAP)
    cands = [(ngram_counts(s.tokens, 1), ngram_counts(s.tokens, 2)) for s in pool.sentences]
    labels = [NONE] * len(cands)
    traces: dict[str, list[OracleStep]] = {}
    used: set[int] = set()
    for cls, section, budget in zip((VERDICT, PRO, CON), SECTIONS, budgets.as_tuple()):
        steps = greedy_select(cands, product.summary.section_tokens(section), budget, used)
        for st in steps:
            labels[st.sentence] = cls
            used.add(st.sentence)
        traces[section] = steps
    return OracleResult(labels, traces)


def save_labels(items: Sequence[tuple[str, Sequence[int]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pid, labels in items:
            fh.write(json.dumps({"id": pid, "labels": [int(x) for x in labels]}) + "\n")


def load_labels(path: str | Path) -> list[tuple[str, list[int]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                labels = [int(x) for x in doc["labels"]]
                if any(x not in (NONE, VERDICT, PRO, CON) for x in labels):
                    raise ValueError(f"bad class code in labels for {doc['id']!r}")
                out.append((doc["id"], labels))
    return out


# -- classifier ------------------------------------------------------------

@dataclass
class ExtSumConfig:
    dim: int = 32
    hidden: tuple[int, ...] = (100,)
    dropout: float = 0.1
    class_weights: tuple[float, ...] = (1.0, 50.0, 50.0, 50.0)
    lr: float = 3e-3
    warmup: int = 0
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if len(self.class_weights) != 4 or min(self.class_weights) <= 0:
            raise ValueError("need four positive class weights")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"], d["class_weights"] = list(self.hidden), list(self.class_weights)
        return d


class SentenceClassifier:
    def __init__(self, vocab: Vocab, model: BagAttentionScorer | None = None,
                 cfg: ExtSumConfig | None = None):
        cfg = cfg or ExtSumConfig()
        self.vocab = vocab
        self.model = model or BagAttentionScorer(len(vocab), cfg.dim, cfg.hidden, 4, cfg.dropout,
                                                 final_norm=True, seed=cfg.seed)
        if self.model.vocab_size != len(vocab) or self.model.head.n_out != 4:
            raise ValueError("model does not match the vocabulary or the four classes")

    def encode(self, pool: SentencePool) -> list[list[int]]:
        return [self.vocab.encode(s.tokens) for s in pool.sentences]

    def predict_proba(self, pool: SentencePool) -> np.ndarray:
        if len(pool) == 0:
            raise ValueError(f"empty sentence pool for {pool.product_id!r}")
        logits, _ = self.model.forward(self.encode(pool))
        return softmax_rows(logits)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.model, {"vocab": self.vocab.itos})

    @classmethod
    def load(cls, path: str | Path) -> "SentenceClassifier":
        model, extra = load_checkpoint(path)
        if not isinstance(model, BagAttentionScorer) or "vocab" not in extra:
            raise ValueError(f"{path}: not a sentence-classifier checkpoint")
        return cls(Vocab(extra["vocab"]), model)


@dataclass
class ExtSumTrainResult:
    classifier: SentenceClassifier
    loss: list[float]  # mean training loss per epoch (train mode, as seen by the optimizer)
    config: ExtSumConfig


def train_extsum(pools: Sequence[SentencePool], labels: Sequence[Sequence[int]], vocab: Vocab,
                 cfg: ExtSumConfig | None = None) -> ExtSumTrainResult:
    """One Adam step per product on the class-weighted cross-entropy."""
    cfg = cfg or ExtSumConfig()
    if len(pools) != len(labels):
        raise ValueError("pools and labels are not aligned")
    for p, y in zip(pools, labels):
        if len(p) != len(y):
            raise ValueError(f"{p.product_id!r}: {len(y)} labels for {len(p)} sentences")
    flat = [c for y in labels for c in y]
    if not any(c != NONE for c in flat) or all(c != NONE for c in flat):
        raise ValueError("degenerate labels: need both positive and 'none' sentences")
    clf = SentenceClassifier(vocab, cfg=cfg)
    model = clf.model
    items = [(clf.encode(p), np.asarray(y, dtype=np.int64)) for p, y in zip(pools, labels) if len(p)]
    opt = Adam(cfg.lr, warmup_steps=cfg.warmup)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(items))
        tot = 0.0
        for pi in order:
            ids, y = items[pi]
            rng = np.random.default_rng([cfg.seed, epoch, int(pi)])
            logits, tape = model.forward(ids, train=True, rng=rng)
            loss, dz = weighted_softmax_ce(logits, y, cfg.class_weights)
            opt.step(model.params, model.backward(tape, dz))
            tot += loss
        history.append(tot / max(len(items), 1))
    return ExtSumTrainResult(clf, history, cfg)


# -- extraction ------------------------------------------------------------

@dataclass
class Extraction:
    product_id: str
    indices: dict[str, list[int]]
    summary: GoldSummary
    short: bool  # pool smaller than the total budget

    def to_json(self) -> dict:
        doc = {"id": self.product_id, "summary": self.summary.to_json(),
               "indices": self.indices}
        if self.short:
            doc["short"] = True
        return doc


def extract_indices(probs: np.ndarray, budgets: Budgets = EXTRACT_BUDGETS) -> tuple[dict[str, list[int]], bool]:
    """Per section in order, the top-budget sentences by that class's probability.

    Sentences chosen for an earlier section are excluded; ties go to the
    lower index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    used: set[int] = set()
    out: dict[str, list[int]] = {}
    for cls, section, budget in zip((VERDICT, PRO, CON), SECTIONS, budgets.as_tuple()):
        order = np.argsort(-probs[:, cls], kind="stable")
        pick = [int(i) for i in order if int(i) not in used][:budget]
        used.update(pick)
        out[section] = pick
    return out, probs.shape[0] < budgets.total


def _summary_from(pool: SentencePool, idx: dict[str, list[int]]) -> GoldSummary:
    text = lambda i: pool.sentences[i].text
    return GoldSummary(" ".join(text(i) for i in idx["verdict"]),
                       tuple(text(i) for i in idx["pros"]), tuple(text(i) for i in idx["cons"]))


def extract_summary(clf: SentenceClassifier, product: ProductRecord,
                    budgets: Budgets = EXTRACT_BUDGETS) -> Extraction:
    pool = build_pool(product)
    idx, short = extract_indices(clf.predict_proba(pool), budgets)
    return Extraction(product.id, idx, _summary_from(pool, idx), short)


def oracle_extraction(product: ProductRecord, budgets: Budgets = ORACLE_BUDGETS) -> Extraction:
    """Summary built directly from the oracle labels (an upper-bound reference)."""
    pool = build_pool(product)
    res = oracle_labels(product, budgets, pool)
    idx = {sec: [st.sentence for st in res.traces[sec]] for sec in SECTIONS}
    return Extraction(product.id, idx, _summary_from(pool, idx), len(pool) < budgets.total)


def random_indices(n: int, rng: np.random.Generator,
                   budgets: Budgets = EXTRACT_BUDGETS) -> dict[str, list[int]]:
    """Uniform draw without replacement, split into verdict/pros/cons by budget."""
    draw = [int(i) for i in rng.permutation(n)[:min(n, budgets.total)]]
    a, b = budgets.verdict, budgets.verdict + budgets.pros
    return {"verdict": draw[:a], "pros": draw[a:b], "cons": draw[b:]}


def random_baseline(product: ProductRecord, rng: np.random.Generator,
                    budgets: Budgets = EXTRACT_BUDGETS) -> Extraction:
    pool = build_pool(product)
    idx = random_indices(len(pool), rng, budgets)
    return Extraction(product.id, idx, _summary_from(pool, idx), len(pool) < budgets.total)
