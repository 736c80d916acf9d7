"""Joint training of the subset posterior (REINFORCE) and the reward model.

Per product and step: draw S ordered K-subsets from the posterior, take one
gradient step on the reward parameters using those subsets, then move the
posterior along the score-function gradient of the expected reward with a
random-subset baseline subtracted.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .corpus import ProductRecord
from .features import FeatureMatrix, featurize_corpus, r1_recall_scores
from .nn import Adam, FeedForwardScorer, Model
from .reward import UnigramMixtureReward, build_background, corpus_documents
from .subset_dist import (log_prob_grad, mode_subset, sample_subset,
                          stepwise_kld, uniform_log_prob)
from .text_metrics import AspectLexicon, rouge_l

SELECTORS = ("posterior", "random", "r1-topk")


@dataclass
class TrainConfig:
    k: int = 10
    n_max: int = 100
    samples: int = 3
    baseline_samples: int = 3
    use_baseline: bool = True
    kld_scale: float = 0.0
    selector: str = "posterior"
    posterior_lr: float = 1e-3
    posterior_warmup: int = 0
    summarizer_lr: float = 5e-2
    summarizer_warmup: int = 0
    hidden: int = 250
    epochs: int = 10
    batch_size: int = 1
    val_fraction: float = 0.1
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.baseline_samples < 1:
            raise ValueError("samples and baseline_samples must be >= 1")
        if self.k < 1 or self.k > self.n_max:
            raise ValueError("need 1 <= k <= n_max")
        if self.kld_scale < 0:
            raise ValueError("kld_scale must be >= 0")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProductData:
    """A product pre-encoded for training."""
    id: str
    features: np.ndarray                 # (N, 23)
    reviews: list[np.ndarray]            # token ids per review
    summary: np.ndarray                  # token ids of the full summary
    r1: np.ndarray = field(default=None)  # ROUGE-1 recall vs the summary

    @property
    def n(self) -> int:
        return len(self.reviews)


def prepare(records: Sequence[ProductRecord], mats: Sequence[FeatureMatrix],
            reward: UnigramMixtureReward) -> list[ProductData]:
    if len(records) != len(mats):
        raise ValueError("records and feature matrices are not aligned")
    out = []
    for rec, mat in zip(records, mats):
        if rec.id != mat.product_id:
            raise ValueError(f"feature matrix {mat.product_id!r} does not match product {rec.id!r}")
        enc = lambda seq: np.asarray(reward.vocab.encode(seq), dtype=np.int64)
        out.append(ProductData(rec.id, mat.values, [enc(r.tokens) for r in rec.reviews],
                               enc(rec.summary.all_tokens()), r1_recall_scores(rec)))
    return out


def _reward(reward, prod: ProductData, indices) -> float:
    return reward.log_likelihood(prod.summary, [prod.reviews[i] for i in indices])


def random_subset(n: int, k: int, rng: np.random.Generator) -> list[int]:
    if k > n:
        raise ValueError(f"K={k} exceeds N={n}")
    return [int(i) for i in rng.choice(n, size=k, replace=False)]


def baseline(prod: ProductData, reward, k: int, n_samples: int, rng: np.random.Generator) -> float:
    """Mean reward of ``n_samples`` uniformly drawn K-subsets."""
    return float(np.mean([_reward(reward, prod, random_subset(prod.n, k, rng))
                          for _ in range(n_samples)]))


@dataclass
class StepReport:
    mean_reward: float
    baseline: float
    grad_norm: float
    theta_grad: float
    kld: float | None = None


def _grad_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def reinforce_grad(posterior: Model, prod: ProductData, reward, cfg: TrainConfig,
                   rng: np.random.Generator, traces=None):
    """Score-function gradient (ascent direction) of the expected reward.

    Returns ``(grads, report, traces)``.  ``traces`` may be supplied to reuse
    subsets already drawn from the posterior at its current parameters.
    """
    k = cfg.k
    if k > prod.n:
        raise ValueError(f"K={k} exceeds N={prod.n} for product {prod.id!r}")
    scores, tape = posterior.forward(prod.features, train=True, rng=rng)
    scores = np.atleast_1d(scores)
    if traces is None:
        traces = [sample_subset(scores, k, rng) for _ in range(cfg.samples)]
    rewards = np.array([_reward(reward, prod, t.indices) for t in traces])
    b = baseline(prod, reward, k, cfg.baseline_samples, rng) if cfg.use_baseline else 0.0
    dscores = np.zeros_like(scores)
    kld = None
    lp_prior = uniform_log_prob(prod.n, k)
    for t, r in zip(traces, rewards):
        g = log_prob_grad(scores, t.indices)
        coef = r - b
        if cfg.kld_scale > 0:
            coef -= cfg.kld_scale * (t.total_logp - lp_prior)
        dscores += coef * g
    dscores /= len(traces)
    if cfg.kld_scale > 0:
        kld = float(np.mean([stepwise_kld(scores, t.indices) for t in traces]))
    grads = posterior.backward(tape, dscores)
    report = StepReport(float(rewards.mean()), b, _grad_norm(grads), 0.0, kld)
    return grads, report, traces


def exact_reinforce_grad(posterior: Model, prod: ProductData, reward, k: int,
                         baseline_value: float = 0.0) -> dict:
    """Brute-force expected score-function gradient by enumerating all ordered K-tuples."""
    from .subset_dist import enumerate_subset_probs
    scores, tape = posterior.forward(prod.features)
    dscores = np.zeros_like(scores)
    for tup, q in enumerate_subset_probs(scores, k).items():
        dscores += q * (_reward(reward, prod, tup) - baseline_value) * log_prob_grad(scores, tup)
    return posterior.backward(tape, dscores)


def evaluate_mode_reward(posterior: Model, data: Sequence[ProductData], reward, k: int) -> float:
    vals = []
    for prod in data:
        if prod.n < k:
            continue
        scores, _ = posterior.forward(prod.features)
        vals.append(_reward(reward, prod, mode_subset(np.atleast_1d(scores), k)))
    return float(np.mean(vals)) if vals else float("nan")


def selection_rouge_l(prod: ProductData, indices) -> float:
    """ROUGE-L F1 of the selected reviews, concatenated, against the summary (on token ids)."""
    hyp = [int(t) for i in indices for t in prod.reviews[i]]
    return rouge_l(hyp, [int(t) for t in prod.summary]).f1


def _select_fixed(cfg: TrainConfig, prod: ProductData, rng) -> list[int]:
    if cfg.selector == "random":
        return random_subset(prod.n, cfg.k, rng)
    return mode_subset(prod.r1, cfg.k)


def _scale(grads: dict, c: float) -> dict:
    return {k: v * c for k, v in grads.items()}


def _accumulate(acc: dict | None, grads: dict) -> dict:
    if acc is None:
        return {k: v.copy() for k, v in grads.items()}
    for k, v in grads.items():
        acc[k] += v
    return acc


@dataclass
class TrainResult:
    posterior: Model | None
    reward: UnigramMixtureReward
    log: list[dict]
    epoch_rewards: list[float]
    best_epoch: int
    config: TrainConfig


def train_prepared(train_data: Sequence[ProductData], val_data: Sequence[ProductData],
                   reward: UnigramMixtureReward, cfg: TrainConfig,
                   posterior: Model | None = None) -> TrainResult:
    """Alternating training loop on pre-encoded products."""
    use_posterior = cfg.selector == "posterior"
    if use_posterior and posterior is None:
        posterior = FeedForwardScorer(hidden=cfg.hidden, zero_final=True, seed=cfg.seed)
    phi_opt = Adam(cfg.posterior_lr, warmup_steps=cfg.posterior_warmup)
    theta_opt = Adam(cfg.summarizer_lr, warmup_steps=cfg.summarizer_warmup)
    theta = {"lam_raw": np.array(reward.lam_raw)}
    log: list[dict] = []
    epoch_rewards: list[float] = []
    best = (-math.inf, 0, copy.deepcopy(posterior), reward.lam_raw)
    stale = 0
    usable = [p for p in train_data if p.n >= cfg.k]
    val_usable = [p for p in val_data if p.n >= cfg.k] or usable
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(usable))
        acc_phi, acc_theta, n_acc = None, 0.0, 0
        for step, pi in enumerate(order):
            prod = usable[pi]
            rng = np.random.default_rng([cfg.seed, epoch, int(pi)])
            entry = {"epoch": epoch, "product": prod.id}
            if use_posterior:
                scores, _ = posterior.forward(prod.features)
                traces = [sample_subset(np.atleast_1d(scores), cfg.k, rng)
                          for _ in range(cfg.samples)]
                gth = float(np.mean([reward.grad_theta(prod.summary,
                                                       [prod.reviews[i] for i in t.indices])["lam_raw"]
                                     for t in traces]))
                grads, rep, _ = reinforce_grad(posterior, prod, reward, cfg, rng, traces)
                rep.theta_grad = gth
                acc_phi = _accumulate(acc_phi, grads)
                entry.update(reward=rep.mean_reward, baseline=rep.baseline,
                             grad_norm=rep.grad_norm, theta_grad=gth)
                if rep.kld is not None:
                    entry["kld"] = rep.kld
            else:
                idx = _select_fixed(cfg, prod, rng)
                sel = [prod.reviews[i] for i in idx]
                gth = reward.grad_theta(prod.summary, sel)["lam_raw"]
                entry.update(reward=reward.log_likelihood(prod.summary, sel), theta_grad=gth)
            acc_theta += gth
            n_acc += 1
            if n_acc == cfg.batch_size or step == len(order) - 1:
                theta_opt.step(theta, {"lam_raw": np.array(-acc_theta / n_acc)})
                reward.lam_raw = float(theta["lam_raw"])
                if use_posterior:
                    phi_opt.step(posterior.params, _scale(acc_phi, -1.0 / n_acc))
                acc_phi, acc_theta, n_acc = None, 0.0, 0
            entry["lam"] = reward.lam
            log.append(entry)
        if use_posterior:
            picks = [mode_subset(np.atleast_1d(posterior.forward(p.features)[0]), cfg.k)
                     for p in val_usable]
        else:
            vrng = np.random.default_rng([cfg.seed, epoch, 0xE7A1, 0])
            picks = [_select_fixed(cfg, p, vrng) for p in val_usable]
        val = float(np.mean([_reward(reward, p, idx) for p, idx in zip(val_usable, picks)]))
        # ROUGE-L of the selected text is logged for reference only
        val_rl = float(np.mean([selection_rouge_l(p, idx) for p, idx in zip(val_usable, picks)]))
        epoch_rewards.append(val)
        log.append({"epoch": epoch, "val_reward": val, "val_rouge_l": val_rl, "lam": reward.lam})
        if val > best[0]:
            best = (val, epoch, copy.deepcopy(posterior), reward.lam_raw)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _, best_epoch, best_post, best_lam = best
    reward.lam_raw = best_lam
    return TrainResult(best_post, reward, log, epoch_rewards, best_epoch, cfg)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng([seed, 0x5E1]).permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    val = sorted(int(i) for i in perm[:n_val])
    tr = sorted(int(i) for i in perm[n_val:])
    return tr, val


def train(records: Sequence[ProductRecord], lex: AspectLexicon, cfg: TrainConfig,
          mats: Sequence[FeatureMatrix] | None = None) -> TrainResult:
    """Featurize (unless ``mats`` given), build the reward model and train."""
    records = [r if len(r.reviews) <= cfg.n_max else
               ProductRecord(r.id, r.reviews[:cfg.n_max], r.summary) for r in records]
    if mats is None:
        mats = featurize_corpus(records, lex)
    else:
        mats = [FeatureMatrix(m.product_id, m.values[:cfg.n_max]) for m in mats]
    tr_idx, val_idx = split_indices(len(records), cfg.val_fraction, cfg.seed)
    reward = build_background(corpus_documents([records[i] for i in tr_idx]))
    data = prepare(records, mats, reward)
    return train_prepared([data[i] for i in tr_idx], [data[i] for i in val_idx], reward, cfg)


def dump_log(log: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
