"""Summary-blind review selection for test time.

The posterior's mode subsets are turned into 0/1 tags per review and a
bag-of-embeddings scorer with cross-review attention learns to predict
them from the review text alone.  At test time the top-K scored reviews
are selected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ProductRecord, Review
from .features import FeatureMatrix, r1_recall_scores
from .nn import Adam, BagAttentionScorer, Model, bce_with_logits, load_checkpoint, save_checkpoint
from .subset_dist import mode_subset
from .text_metrics import Vocab


@dataclass(frozen=True)
class TaggedProduct:
    product_id: str
    tags: tuple[int, ...]

    def __post_init__(self):
        if any(t not in (0, 1) for t in self.tags):
            raise ValueError(f"tags for {self.product_id!r} must be 0/1")

    @property
    def k(self) -> int:
        return sum(self.tags)

    def to_json(self) -> dict:
        return {"id": self.product_id, "tags": list(self.tags)}

    @classmethod
    def from_json(cls, doc: dict) -> "TaggedProduct":
        return cls(doc["id"], tuple(int(t) for t in doc["tags"]))


def tags_from_indices(product_id: str, n: int, indices: Sequence[int]) -> TaggedProduct:
    tags = [0] * n
    for i in indices:
        tags[i] = 1
    return TaggedProduct(product_id, tuple(tags))


def distill_tags(posterior: Model, mats: Sequence[FeatureMatrix], k: int) -> list[TaggedProduct]:
    """Mark the reviews in each product's posterior mode subset."""
    out = []
    for m in mats:
        scores, _ = posterior.forward(m.values)
        idx = mode_subset(np.atleast_1d(scores), k)
        out.append(tags_from_indices(m.product_id, len(m.values), idx))
    return out


def save_tags(tags: Sequence[TaggedProduct], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tags:
            fh.write(json.dumps(t.to_json()) + "\n")


def load_tags(path: str | Path) -> list[TaggedProduct]:
    with open(path, encoding="utf-8") as fh:
        return [TaggedProduct.from_json(json.loads(line)) for line in fh if line.strip()]


def select_topk(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores in rank order; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 0 <= k <= s.size:
        raise ValueError(f"cannot select {k} of {s.size} reviews")
    return [int(i) for i in np.argsort(-s, kind="stable")[:k]]


def r1_topk(product: ProductRecord, k: int) -> list[int]:
    """Deterministic top-K by ROUGE-1 recall of each review against the full summary."""
    return select_topk(r1_recall_scores(product), k)


class PriorSelector:
    """A BagAttentionScorer plus the vocabulary it was built for."""

    def __init__(self, vocab: Vocab, model: BagAttentionScorer | None = None, dim: int = 32,
                 hidden: Sequence[int] = (100, 100), dropout: float = 0.1, seed: int = 0):
        self.vocab = vocab
        self.model = model or BagAttentionScorer(len(vocab), dim, hidden, 1, dropout, seed=seed)
        if self.model.vocab_size != len(vocab):
            raise ValueError("model vocabulary size does not match the vocabulary")

    def encode(self, reviews: Sequence) -> list[list[int]]:
        return [self.vocab.encode(r.tokens if isinstance(r, Review) else r) for r in reviews]

    def score_reviews(self, reviews: Sequence) -> np.ndarray:
        if len(reviews) == 0:
            raise ValueError("cannot score an empty review list")
        out, _ = self.model.forward(self.encode(reviews))
        return out[:, 0]

    def select(self, reviews: Sequence, k: int) -> list[int]:
        return select_topk(self.score_reviews(reviews), k)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.model, {"vocab": self.vocab.itos})

    @classmethod
    def load(cls, path: str | Path) -> "PriorSelector":
        model, extra = load_checkpoint(path)
        if not isinstance(model, BagAttentionScorer) or "vocab" not in extra:
            raise ValueError(f"{path}: not a prior-selector checkpoint")
        return cls(Vocab(extra["vocab"]), model)


@dataclass
class PriorConfig:
    dim: int = 32
    hidden: tuple[int, ...] = (100, 100)
    dropout: float = 0.1
    lr: float = 3e-3
    warmup: int = 0
    epochs: int = 20
    patience: int = 4
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 0 or self.patience < 1 or not 0 <= self.val_fraction < 1:
            raise ValueError("invalid prior training configuration")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class PriorTrainResult:
    prior: PriorSelector
    train_loss: list[float]      # eval-mode mean BCE on training products, per epoch
    val_f1: list[float]
    best_epoch: int
    config: PriorConfig = field(default_factory=PriorConfig)


def tag_f1(prior: PriorSelector, items: Sequence[tuple[list[list[int]], np.ndarray]]) -> float:
    """F1 of top-K predictions (K = number of gold tags) pooled over products."""
    tp = n_pred = n_gold = 0
    for ids, tags in items:
        k = int(tags.sum())
        out, _ = prior.model.forward(ids)
        pred = select_topk(out[:, 0], k)
        tp += int(tags[pred].sum())
        n_pred += len(pred)
        n_gold += k
    if tp == 0:
        return 0.0
    p, r = tp / n_pred, tp / n_gold
    return 2 * p * r / (p + r)


def _mean_loss(model: BagAttentionScorer, items) -> float:
    losses = [bce_with_logits(model.forward(ids)[0][:, 0], tags)[0] for ids, tags in items]
    return float(np.mean(losses))


def _split(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng([seed, 0x9A1]).permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    return sorted(int(i) for i in perm[n_val:]), sorted(int(i) for i in perm[:n_val])


def train_prior(records: Sequence[ProductRecord], tags: Sequence[TaggedProduct], vocab: Vocab,
                cfg: PriorConfig | None = None) -> PriorTrainResult:
    """Fit the prior to the tags with per-product BCE steps; early stop on held-out tag F1."""
    cfg = cfg or PriorConfig()
    by_id = {t.product_id: t for t in tags}
    items = []
    for rec in records:
        t = by_id.get(rec.id)
        if t is None:
            raise ValueError(f"no tags for product {rec.id!r}")
        if len(t.tags) != len(rec.reviews):
            raise ValueError(f"tag vector for {rec.id!r} has {len(t.tags)} entries, "
                             f"product has {len(rec.reviews)} reviews")
        items.append((None, np.asarray(t.tags, dtype=np.float64), rec))
    flat = np.concatenate([it[1] for it in items]) if items else np.zeros(0)
    if flat.size == 0 or flat.min() == flat.max():
        raise ValueError("degenerate tags: need both selected and unselected reviews")
    prior = PriorSelector(vocab, dim=cfg.dim, hidden=cfg.hidden, dropout=cfg.dropout, seed=cfg.seed)
    items = [(prior.encode(rec.reviews), tg) for _, tg, rec in items]
    tr_idx, val_idx = _split(len(items), cfg.val_fraction, cfg.seed)
    train_items = [items[i] for i in tr_idx]
    val_items = [items[i] for i in val_idx] or train_items
    model = prior.model
    opt = Adam(cfg.lr, warmup_steps=cfg.warmup)
    losses, f1s = [], []
    best_f1, best_epoch, best_params = -1.0, 0, {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_items))
        for pi in order:
            ids, tg = train_items[pi]
            rng = np.random.default_rng([cfg.seed, epoch, int(pi)])
            out, tape = model.forward(ids, train=True, rng=rng)
            _, dz = bce_with_logits(out[:, 0], tg)
            opt.step(model.params, model.backward(tape, dz[:, None]))
        losses.append(_mean_loss(model, train_items))
        f1 = tag_f1(prior, val_items)
        f1s.append(f1)
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.update(best_params)
    model._sync()
    return PriorTrainResult(prior, losses, f1s, best_epoch, cfg)
