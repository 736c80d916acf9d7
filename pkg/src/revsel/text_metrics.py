"""Tokenization, ROUGE-N/L, length difference and aspect-lexicon metrics.

Token sequences are plain lists of lowercase strings.  A sequence built from
several independent pieces of text (other reviews, pros bullets, ...) carries
``SEP`` between the pieces; no n-gram, LCS match or aspect phrase may span a
``SEP`` and it never counts towards a length.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

# '\x1e' is whitespace to str.split(), so tokenize() can never emit it.
SEP = "\x1e"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


_SUFFIXES = ("ational", "ization", "fulness", "ousness", "iveness", "ments",
             "ingly", "ation", "ness", "ment", "ing", "ies", "ed", "ly", "es", "s")


def stem(token: str) -> str:
    """Strip one common English suffix, keeping a stem of at least 3 chars."""
    for suf in _SUFFIXES:
        if token.endswith(suf) and len(token) - len(suf) >= 3:
            if suf == "ies":
                return token[:-3] + "y"
            return token[: -len(suf)]
    return token


def tokenize(text: str, stemming: bool = False) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip edge punctuation.

    >>> tokenize("The cat, sat.")
    ['the', 'cat', 'sat']
    >>> tokenize("Wi-Fi works!!")
    ['wi-fi', 'works']
    """
    out = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if start < end:
            tok = raw[start:end]
            out.append(stem(tok) if stemming else tok)
    return out


def join_segments(segments: Iterable[Sequence[str]]) -> list[str]:
    """Concatenate token sequences with ``SEP`` boundaries between them."""
    out: list[str] = []
    for i, seg in enumerate(segments):
        if i:
            out.append(SEP)
        out.extend(seg)
    return out


def split_segments(seq: Sequence[str]) -> list[list[str]]:
    segs: list[list[str]] = [[]]
    for tok in seq:
        if tok == SEP:
            segs.append([])
        else:
            segs[-1].append(tok)
    return segs


def seq_len(seq: Sequence[str]) -> int:
    """Number of real tokens (boundaries excluded)."""
    return sum(1 for t in seq if t != SEP)


def ngram_counts(seq: Sequence[str], n: int) -> Counter:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts: Counter = Counter()
    for seg in split_segments(seq):
        for i in range(len(seg) - n + 1):
            counts[tuple(seg[i:i + n])] += 1
    return counts


def clipped_overlap(hyp_counts: Counter, ref_counts: Counter) -> int:
    if len(hyp_counts) > len(ref_counts):
        hyp_counts, ref_counts = ref_counts, hyp_counts
    return sum(min(c, ref_counts[g]) for g, c in hyp_counts.items() if g in ref_counts)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, hyp_total: int, ref_total: int) -> "RougeScore":
        p = overlap / hyp_total if hyp_total else 0.0
        r = overlap / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap between ``hyp`` and ``ref``."""
    hc = ngram_counts(hyp, n)
    rc = ngram_counts(ref, n)
    return RougeScore.from_counts(clipped_overlap(hc, rc), sum(hc.values()), sum(rc.values()))


def rouge_n_counts(hc: Counter, rc: Counter) -> RougeScore:
    """ROUGE-N from precomputed n-gram counters."""
    return RougeScore.from_counts(clipped_overlap(hc, rc), sum(hc.values()), sum(rc.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y and x != SEP:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence[str], ref: Sequence[str]) -> RougeScore:
    hyp = [t for t in hyp if t != SEP]
    ref = [t for t in ref if t != SEP]
    return RougeScore.from_counts(lcs_length(hyp, ref), len(hyp), len(ref))


def length_difference(a: Sequence[str], b: Sequence[str], corpus_max_len: int) -> float:
    if corpus_max_len <= 0:
        raise ValueError("corpus_max_len must be positive")
    return seq_len(a) / corpus_max_len - seq_len(b) / corpus_max_len


class AspectLexicon:
    """Set of lowercase aspect phrases matched greedily, longest first."""

    def __init__(self, phrases: Iterable[str]):
        entries: list[tuple[str, ...]] = []
        seen = set()
        for p in phrases:
            key = tuple(p.lower().split())
            if key and key not in seen:
                seen.add(key)
                entries.append(key)
        self.entries = tuple(entries)
        self._set = frozenset(entries)
        self.unigrams = frozenset(e[0] for e in entries if len(e) == 1)
        self.max_len = max((len(e) for e in entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, phrase) -> bool:
        if isinstance(phrase, str):
            phrase = tuple(phrase.split())
        return tuple(phrase) in self._set

    @classmethod
    def load(cls, path: str | Path) -> "AspectLexicon":
        phrases = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    phrases.append(line)
        return cls(phrases)

    def tag(self, seq: Sequence[str]) -> Counter:
        """Multiset of maximal lexicon matches (greedy, left to right)."""
        found: Counter = Counter()
        for seg in split_segments(seq):
            i = 0
            while i < len(seg):
                for span in range(min(self.max_len, len(seg) - i), 0, -1):
                    cand = tuple(seg[i:i + span])
                    if cand in self._set:
                        found[cand] += 1
                        i += span
                        break
                else:
                    i += 1
        return found


def default_lexicon() -> AspectLexicon:
    return AspectLexicon.load(Path(__file__).parent / "data" / "demo_lexicon.txt")


def aspect_scores_tagged(hyp_tags: Counter, ref_tags: Counter) -> tuple[float, float]:
    inter = clipped_overlap(hyp_tags, ref_tags)
    nh, nr = sum(hyp_tags.values()), sum(ref_tags.values())
    return (inter / nh if nh else 0.0), (inter / nr if nr else 0.0)


def aspect_scores(hyp: Sequence[str], ref: Sequence[str], lex: AspectLexicon) -> tuple[float, float]:
    """Aspect precision and recall over clipped multisets of matched phrases."""
    if not len(lex):
        raise ValueError("aspect lexicon is empty")
    return aspect_scores_tagged(lex.tag(hyp), lex.tag(ref))


def aspect_density(seq: Sequence[str], lex: AspectLexicon) -> float:
    toks = [t for t in seq if t != SEP]
    if not toks:
        return 0.0
    return sum(1 for t in toks if t in lex.unigrams) / len(toks)


class Vocab:
    """Frozen token -> id map; id ``len(vocab)`` is the UNK bucket."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = sorted(set(tokens) - {SEP})
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def unk(self) -> int:
        return len(self.itos)

    def encode(self, seq: Sequence[str]) -> list[int]:
        unk = self.unk
        return [self.stoi.get(t, unk) for t in seq if t != SEP]
