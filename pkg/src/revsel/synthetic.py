"""Synthetic corpora with planted ground truth.

Each product has a handful of "signal" reviews that talk about the same
aspects as the gold summary and "noise" reviews about delivery, gifts and
the like.  Signal reviews are recognisable without the summary (they use
aspect vocabulary), so both the posterior and a summary-blind prior can
learn to find them.
"""

from __future__ import annotations

import numpy as np

from .corpus import GoldSummary, ProductRecord, Review

ASPECTS = ("battery", "screen", "sound", "bass", "bluetooth", "charging", "cable", "design",
           "weight", "comfort", "speaker", "microphone", "volume", "buttons", "remote", "app",
           "lid", "handle", "blade", "motor", "power", "speed", "jar", "filter", "timer",
           "cleaning", "material", "plastic", "glass", "steel", "sole", "cushioning", "laces",
           "grip", "straps", "zipper", "pockets", "capacity", "wheels", "suction", "brush",
           "camera", "lens", "memory", "keyboard", "ports", "signal", "range")
POSITIVE = ("excellent", "solid", "sturdy", "reliable", "impressive", "smooth", "sharp",
            "powerful", "quiet", "responsive")
NEGATIVE = ("flimsy", "weak", "noisy", "loose", "fragile", "dim", "slow", "awkward")
FILLER = ("the", "is", "really", "quite", "and", "very", "it", "this", "so", "feels", "seems")
CHATTER = ("shipping", "arrived", "package", "box", "gift", "husband", "wife", "daughter",
           "birthday", "christmas", "ordered", "delivery", "seller", "refund", "amazon", "week",
           "yesterday", "friend", "recommended", "bought", "store", "neighbor", "weekend",
           "mail", "tracking", "order", "price", "coupon", "sale", "holiday")


def _clause(rng, aspect: str, polar: tuple[str, ...]) -> list[str]:
    return ["the", aspect, "is", str(rng.choice(("really", "very", "quite"))), str(rng.choice(polar))]


def make_signal_noise_corpus(n_products: int = 100, n_reviews: int = 20, n_signal: int = 5,
                             seed: int = 0) -> tuple[list[ProductRecord], list[set[int]]]:
    """Returns the records and, per product, the index set of signal reviews."""
    if not 0 < n_signal <= n_reviews:
        raise ValueError("need 0 < n_signal <= n_reviews")
    rng = np.random.default_rng(seed)
    records, signal = [], []
    for p in range(n_products):
        aspects = [str(a) for a in rng.choice(ASPECTS, size=6, replace=False)]
        pos, neg = aspects[:4], aspects[4:]
        verdict = " ".join(_clause(rng, pos[0], POSITIVE) + ["and"] + _clause(rng, pos[1], POSITIVE))
        pros = tuple(" ".join(_clause(rng, a, POSITIVE)) for a in pos[1:])
        cons = tuple(" ".join(_clause(rng, a, NEGATIVE)) for a in neg)
        sig_idx = set(int(i) for i in rng.choice(n_reviews, size=n_signal, replace=False))
        reviews = []
        for j in range(n_reviews):
            if j in sig_idx:
                words: list[str] = []
                for a in rng.choice(aspects, size=3, replace=False):
                    polar = POSITIVE if a in pos else NEGATIVE
                    words += _clause(rng, str(a), polar)
                words += [str(w) for w in rng.choice(FILLER, size=int(rng.integers(1, 4)))]
            else:
                n_words = int(rng.integers(12, 22))
                words = [str(w) for w in rng.choice(CHATTER + FILLER, size=n_words)]
            reviews.append(Review(" ".join(words) + "."))
        records.append(ProductRecord(f"syn-{p:03d}", tuple(reviews), GoldSummary(verdict, pros, cons)))
        signal.append(sig_idx)
    return records, signal
