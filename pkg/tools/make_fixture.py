"""Regenerate the bundled 20-product fixture corpus and its reference files.

Writes into src/revsel/data/:
  fixture_corpus.jsonl    the corpus
  fixture_manifest.json   ids, file checksum and the survivors expected
                          under the default filter rules (known by
                          construction, not computed by the package)
  fixture_stats.txt       the stats table recomputed here with plain
                          Python counting, used as a golden file

Deliberately imports nothing from the package.
"""

import hashlib
import json
import random
import unicodedata
from collections import Counter
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "revsel" / "data"

CATEGORIES = {
    "headphones": ["sound quality", "battery life", "bass", "comfort", "ear cups", "headband",
                   "noise cancellation", "bluetooth", "microphone", "price"],
    "blender": ["motor", "blades", "jar", "lid", "speed", "settings", "cleaning", "noise",
                "power", "warranty"],
    "laptop": ["screen", "keyboard", "touchpad", "battery life", "processor", "memory", "ports",
               "weight", "speaker", "wifi"],
    "running shoes": ["cushioning", "sole", "laces", "fit", "comfort", "traction", "durability",
                      "support", "weight", "color"],
    "vacuum": ["suction", "brush", "dust bin", "battery", "charging", "weight", "filter", "noise",
               "capacity", "wheels"],
    "coffee maker": ["carafe", "water tank", "temperature", "timer", "buttons", "heat", "filter",
                     "cleaning", "design", "price"],
    "backpack": ["straps", "zipper", "pockets", "capacity", "material", "comfort", "storage",
                 "design", "durability", "color"],
    "camera": ["image quality", "lens", "autofocus", "video", "battery", "screen", "buttons",
               "app", "size", "price"],
}
POS = ["excellent", "solid", "impressive", "reliable", "great", "smooth", "sturdy", "fantastic",
       "comfortable", "responsive"]
NEG = ["flimsy", "weak", "disappointing", "awkward", "noisy", "fragile", "cheap", "mediocre"]
CHATTER = [
    "It arrived two days early in a plain brown box",
    "I bought this as a birthday gift for my sister",
    "The seller answered my questions quickly and politely",
    "My husband picked this one after reading a lot of reviews",
    "Shipping was fast and the packaging was fine",
    "We have had it for about three weeks now",
    "I was replacing an older model that finally gave out",
    "The box was slightly dented but nothing inside was damaged",
    "I ordered it on a Tuesday and it came on Friday",
    "My neighbor recommended it to me last summer",
    "Honestly I did not expect much at this price point",
    "I will update this review if anything changes",
]
FILLER = ["overall", "really", "pretty", "quite", "honestly", "just", "also", "still", "very",
          "so", "and", "then", "again", "here", "more"]

# default filter rules, restated here on purpose
MIN_W, MAX_W, MIN_REVIEWS, MIN_SUMMARY, N_MAX = 10, 120, 10, 5, 100


def _is_punct(ch):
    return unicodedata.category(ch).startswith("P")


def words_of(text):
    out = []
    for raw in text.lower().split():
        tok = raw
        while tok and _is_punct(tok[0]):
            tok = tok[1:]
        while tok and _is_punct(tok[-1]):
            tok = tok[:-1]
        if tok:
            out.append(tok)
    return out


def sentence(words):
    words = list(words)
    words[0] = words[0][0].upper() + words[0][1:]
    return " ".join(words) + "."


def content_sentence(rng, cat, aspects, verdict_words):
    a = rng.choice(aspects)
    p, n = rng.choice(POS), rng.choice(NEG)
    t = rng.randrange(7)
    if t == 0:
        return f"the {a} is {p} and works exactly as described".split()
    if t == 1:
        return f"i really like how {p} the {a} is on this {cat}".split()
    if t == 2:
        return f"my only complaint is the {a} which feels a bit {n}".split()
    if t == 3:
        return f"compared to my last {cat} the {a} is much more {p}".split()
    if t == 4:
        return f"the {a} turned out {n} after a few weeks of use".split()
    if t == 5:
        return list(verdict_words)
    b = rng.choice([x for x in aspects if x != a])
    return f"for the money the {a} and the {b} are {p}".split()


def make_review(rng, cat, aspects, verdict_words, target):
    """A review with exactly ``target`` words."""
    sents = []
    total = 0
    while total < target:
        if rng.random() < 0.3:
            s = CHATTER[rng.randrange(len(CHATTER))].lower().split()
        elif rng.random() < 0.08:
            s = [rng.choice(FILLER) for _ in range(rng.randint(4, 9))]
        else:
            s = content_sentence(rng, cat, aspects, verdict_words)
        sents.append(s)
        total += len(s)
    extra = total - target
    while extra > 0:
        last = sents[-1]
        cut = min(extra, len(last))
        sents[-1] = last[:len(last) - cut]
        extra -= cut
        if not sents[-1]:
            sents.pop()
    return " ".join(sentence(s) for s in sents if s)


def make_summary(rng, cat, aspects):
    a = rng.sample(aspects, 6)
    p1, p2 = rng.sample(POS, 2)
    article = "An" if p1[0] in "aeiou" else "A"
    verdict = (f"{article} {p1} {cat} with {p2} {a[0]} and a {rng.choice(POS)} {a[1]}, "
               f"although the {a[4]} feels a bit {rng.choice(NEG)}.")
    pros = [f"{rng.choice(POS).capitalize()} {x}" for x in a[1:4]]
    pros[0] += " that works exactly as described"
    cons = [f"The {x} can be {rng.choice(NEG)}" for x in a[4:6]]
    return {"verdict": verdict, "pros": pros, "cons": cons}


def build():
    rng = random.Random(20240521)
    cats = list(CATEGORIES)
    products, expected = [], []
    for p in range(20):
        cat = cats[p % len(cats)]
        aspects = CATEGORIES[cat]
        summary = make_summary(rng, cat, aspects)
        verdict_words = words_of(summary["verdict"])
        summary_ok = True
        if p == 17:
            summary["cons"] = []                      # incomplete summary
            summary_ok = False
        elif p == 18:
            summary = {"verdict": "Works fine.", "pros": ["Cheap"], "cons": ["Loud"]}  # 4 words
            summary_ok = False
        elif p == 19:
            summary = {"verdict": "Good solid value.", "pros": ["Quiet"], "cons": ["Heavy"]}  # 5 words

        # (target word count, valid?) per review
        if p == 14:
            lengths = [rng.randint(12, 60) for _ in range(105)] + [7, 130]
        elif p == 15:
            lengths = [rng.randint(12, 60) for _ in range(9)] + [3, 9, 121, 150]
        elif p == 16:
            lengths = [10, 120] + [rng.randint(12, 90) for _ in range(8)] + [9, 121]
        else:
            n_good = rng.randint(11, 18)
            lengths = [rng.randint(12, 95) for _ in range(n_good)]
            lengths += [rng.choice([4, 6, 8, 9, 121, 125, 140]) for _ in range(rng.randint(1, 3))]
            if p % 5 == 0:
                lengths += [10, 120]
        rng.shuffle(lengths)
        if p == 14:
            # put the two invalid reviews early so the cap applies to valid ones only
            lengths.sort(key=lambda n: MIN_W <= n <= MAX_W)
        reviews = [make_review(rng, cat, aspects, verdict_words, n) for n in lengths]
        for text, n in zip(reviews, lengths):
            assert len(words_of(text)) == n, (p, n, text)
        pid = f"fx-{p:02d}-{cat.replace(' ', '-')}"
        products.append({"id": pid, "reviews": [{"text": t} for t in reviews], "summary": summary})

        valid = [i for i, n in enumerate(lengths) if MIN_W <= n <= MAX_W]
        n_summary = sum(len(words_of(t)) for t in [summary["verdict"], *summary["pros"], *summary["cons"]])
        complete = bool(summary["verdict"]) and bool(summary["pros"]) and bool(summary["cons"])
        assert summary_ok == (complete and n_summary >= MIN_SUMMARY)
        kept = summary_ok and len(valid) >= MIN_REVIEWS
        expected.append({"id": pid, "n_reviews": len(reviews), "kept": kept,
                         "kept_review_indices": valid[:N_MAX] if kept else []})
    return products, expected


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def recall(hyp_segments, ref_segments, n):
    hyp, ref = Counter(), Counter()
    for s in hyp_segments:
        hyp += ngrams(s, n)
    for s in ref_segments:
        ref += ngrams(s, n)
    total = sum(ref.values())
    if total == 0:
        return 0.0
    return sum(min(c, hyp[g]) for g, c in ref.items()) / total


def stats_table(products):
    names = ("verdict", "pros", "cons")
    acc = {s: [0.0, 0.0, 0.0] for s in names}
    for prod in products:
        revs = [words_of(r["text"]) for r in prod["reviews"]]
        for s in names:
            texts = [prod["summary"]["verdict"]] if s == "verdict" else prod["summary"][s]
            segs = [words_of(t) for t in texts]
            acc[s][0] += sum(len(x) for x in segs)
            acc[s][1] += 100.0 * recall(revs, segs, 1)
            acc[s][2] += 100.0 * recall(revs, segs, 2)
    n = len(products)
    head = f"{'':8s} | " + " | ".join(f"{s.capitalize():^23s}" for s in names)
    sub = f"{'':8s} | " + " | ".join(f"{'Len':>7s} {'R1':>7s} {'R2':>7s}" for _ in names)
    cells = " | ".join(f"{acc[s][0] / n:7.2f} {acc[s][1] / n:7.2f} {acc[s][2] / n:7.2f}" for s in names)
    return "\n".join([head, sub, f"{'All (' + str(n) + ')':8s} | {cells}"]) + "\n"


def main():
    products, expected = build()
    OUT.mkdir(parents=True, exist_ok=True)
    corpus = OUT / "fixture_corpus.jsonl"
    with open(corpus, "w", encoding="utf-8", newline="\n") as fh:
        for prod in products:
            fh.write(json.dumps(prod, sort_keys=True) + "\n")
    digest = hashlib.sha256(corpus.read_bytes()).hexdigest()
    manifest = {"file": corpus.name, "sha256": digest, "ids": [p["id"] for p in products],
                "rules": {"min_review_words": MIN_W, "max_review_words": MAX_W,
                          "min_reviews_per_product": MIN_REVIEWS,
                          "min_summary_words": MIN_SUMMARY, "n_max": N_MAX},
                "expected": expected}
    with open(OUT / "fixture_manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(OUT / "fixture_stats.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(stats_table(products))
    kept = sum(e["kept"] for e in expected)
    print(f"wrote {len(products)} products ({kept} survive filtering), sha256 {digest[:12]}")


if __name__ == "__main__":
    main()
