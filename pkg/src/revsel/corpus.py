"""Product/review corpora: JSONL loading, filtering and summary statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .text_metrics import join_segments, rouge_n, tokenize


class CorpusError(ValueError):
    """Malformed corpus input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Review:
    text: str
    tokens: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    @property
    def word_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class GoldSummary:
    verdict: str
    pros: tuple[str, ...] = ()
    cons: tuple[str, ...] = ()

    def section_tokens(self, section: str) -> list[str]:
        """Tokens of one section; bullets are joined with boundaries."""
        if section == "verdict":
            return tokenize(self.verdict)
        if section in ("pros", "cons"):
            return join_segments(tokenize(b) for b in getattr(self, section))
        raise ValueError(f"unknown section {section!r}")

    def verdict_tokens(self) -> list[str]:
        return tokenize(self.verdict)

    def pros_cons_tokens(self) -> list[str]:
        return join_segments(tokenize(b) for b in (*self.pros, *self.cons))

    def all_tokens(self) -> list[str]:
        return join_segments(tokenize(b) for b in (self.verdict, *self.pros, *self.cons))

    @property
    def word_count(self) -> int:
        return sum(len(tokenize(t)) for t in (self.verdict, *self.pros, *self.cons))

    @property
    def complete(self) -> bool:
        return bool(self.verdict.strip()) and any(p.strip() for p in self.pros) \
            and any(c.strip() for c in self.cons)

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "pros": list(self.pros), "cons": list(self.cons)}


@dataclass(frozen=True)
class ProductRecord:
    id: str
    reviews: tuple[Review, ...]
    summary: GoldSummary

    def to_json(self) -> dict:
        return {"id": self.id, "reviews": [{"text": r.text} for r in self.reviews],
                "summary": self.summary.to_json()}


@dataclass(frozen=True)
class FilterRules:
    min_review_words: int = 10
    max_review_words: int = 120
    min_reviews_per_product: int = 10
    min_summary_words: int = 5
    n_max: int = 100

    def __post_init__(self):
        vals = asdict(self).values()
        if any(v <= 0 for v in vals):
            raise ValueError("filter thresholds must be positive")
        if self.min_review_words >= self.max_review_words:
            raise ValueError("min_review_words must be < max_review_words")


@dataclass
class FilterReport:
    input_products: int = 0
    kept_products: int = 0
    dropped_products: int = 0       # too few reviews after review filtering
    dropped_summaries: int = 0      # incomplete or too-short summary
    input_reviews: int = 0
    kept_reviews: int = 0
    dropped_reviews: int = 0        # failed the word-count rule
    truncated_reviews: int = 0      # cut by the n_max cap
    truncated_review_sets: int = 0
    reviews_in_dropped_products: int = 0

    def reconciles(self) -> bool:
        return (self.kept_products + self.dropped_products + self.dropped_summaries
                == self.input_products
                and self.kept_reviews + self.dropped_reviews + self.truncated_reviews
                + self.reviews_in_dropped_products == self.input_reviews)

    def to_json(self) -> dict:
        return asdict(self)


def _parse_summary(obj, lineno: int) -> GoldSummary:
    if not isinstance(obj, dict):
        raise CorpusError("'summary' must be an object", lineno)
    verdict = obj.get("verdict") or ""
    pros = obj.get("pros") or []
    cons = obj.get("cons") or []
    if not isinstance(verdict, str):
        raise CorpusError("'summary.verdict' must be a string", lineno)
    for name, items in (("pros", pros), ("cons", cons)):
        if not isinstance(items, list) or not all(isinstance(s, str) for s in items):
            raise CorpusError(f"'summary.{name}' must be a list of strings", lineno)
    return GoldSummary(verdict, tuple(pros), tuple(cons))


def parse_record(line: str, lineno: int = 0) -> ProductRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise CorpusError("product must be a JSON object", lineno)
    for key in ("id", "reviews", "summary"):
        if key not in obj:
            raise CorpusError(f"missing field {key!r}", lineno)
    if not isinstance(obj["id"], str):
        raise CorpusError("'id' must be a string", lineno)
    if not isinstance(obj["reviews"], list):
        raise CorpusError("'reviews' must be a list", lineno)
    reviews = []
    for r in obj["reviews"]:
        if not isinstance(r, dict) or not isinstance(r.get("text"), str):
            raise CorpusError("each review needs a string 'text'", lineno)
        reviews.append(Review(r["text"]))
    return ProductRecord(obj["id"], tuple(reviews), _parse_summary(obj["summary"], lineno))


def load_corpus(path: str | Path) -> list[ProductRecord]:
    """Read one product per line; blank lines are skipped."""
    records: list[ProductRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = parse_record(line, lineno)
            if rec.id in seen:
                raise CorpusError(f"duplicate product id {rec.id!r} (first on line {seen[rec.id]})",
                                  lineno)
            seen[rec.id] = lineno
            records.append(rec)
    return records


def dumps_record(rec: ProductRecord) -> str:
    return json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True)


def save_corpus(records: Iterable[ProductRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def apply_filters(records: Sequence[ProductRecord],
                  rules: FilterRules = FilterRules()) -> tuple[list[ProductRecord], FilterReport]:
    report = FilterReport(input_products=len(records))
    kept: list[ProductRecord] = []
    for rec in records:
        report.input_reviews += len(rec.reviews)
        if not rec.summary.complete or rec.summary.word_count < rules.min_summary_words:
            report.dropped_summaries += 1
            report.reviews_in_dropped_products += len(rec.reviews)
            continue
        good = [r for r in rec.reviews
                if rules.min_review_words <= r.word_count <= rules.max_review_words]
        n_bad = len(rec.reviews) - len(good)
        if len(good) < rules.min_reviews_per_product:
            report.dropped_products += 1
            report.reviews_in_dropped_products += len(rec.reviews)
            continue
        report.dropped_reviews += n_bad
        if len(good) > rules.n_max:
            report.truncated_review_sets += 1
            report.truncated_reviews += len(good) - rules.n_max
            good = good[:rules.n_max]
        report.kept_reviews += len(good)
        kept.append(ProductRecord(rec.id, tuple(good), rec.summary))
    report.kept_products = len(kept)
    return kept, report


SECTIONS = ("verdict", "pros", "cons")


@dataclass
class StatsTable:
    """Mean section length (words) and ROUGE-1/2 coverage by the reviews (x100)."""
    n_products: int
    rows: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        return {"n_products": self.n_products, "sections": self.rows}

    def format(self) -> str:
        head = f"{'':8s} | " + " | ".join(f"{s.capitalize():^23s}" for s in SECTIONS)
        sub = f"{'':8s} | " + " | ".join(f"{'Len':>7s} {'R1':>7s} {'R2':>7s}" for _ in SECTIONS)
        cells = " | ".join(
            f"{self.rows[s]['len']:7.2f} {self.rows[s]['r1']:7.2f} {self.rows[s]['r2']:7.2f}"
            for s in SECTIONS)
        return "\n".join([head, sub, f"{'All (' + str(self.n_products) + ')':8s} | {cells}"]) + "\n"


def corpus_stats(records: Sequence[ProductRecord]) -> StatsTable:
    if not records:
        raise ValueError("corpus_stats needs at least one product")
    acc = {s: {"len": 0.0, "r1": 0.0, "r2": 0.0} for s in SECTIONS}
    for rec in records:
        reviews = join_segments(r.tokens for r in rec.reviews)
        for s in SECTIONS:
            ref = rec.summary.section_tokens(s)
            acc[s]["len"] += sum(len(tokenize(t)) for t in
                                 ((rec.summary.verdict,) if s == "verdict" else getattr(rec.summary, s)))
            acc[s]["r1"] += 100.0 * rouge_n(reviews, ref, 1).recall
            acc[s]["r2"] += 100.0 * rouge_n(reviews, ref, 2).recall
    n = len(records)
    return StatsTable(n, {s: {k: v / n for k, v in acc[s].items()} for s in SECTIONS})
