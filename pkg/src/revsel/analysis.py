"""Feature/selection mutual information and summary evaluation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import GoldSummary
from .features import FEATURE_NAMES, FeatureMatrix
from .text_metrics import rouge_l, rouge_n, tokenize

JITTER = 1e-10


def digamma(x):
    """psi(x) for x > 0: shift up with psi(x) = psi(x+1) - 1/x, then the asymptotic series."""
    x = np.array(x, dtype=np.float64, copy=True)
    if np.any(x <= 0):
        raise ValueError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132)))))
    out = acc + np.log(x) - 0.5 / x - series
    return out if out.ndim else float(out)


def _dejitter(x: np.ndarray) -> np.ndarray:
    """Break exact ties with tiny noise seeded from the data itself."""
    if np.unique(x).size == x.size:
        return x
    seed = int.from_bytes(hashlib.sha256(x.tobytes()).digest()[:8], "little")
    scale = JITTER * max(1.0, float(np.max(np.abs(x))))
    return x + scale * np.random.default_rng(seed).uniform(-1.0, 1.0, size=x.size)


def _kth_neighbor_dist(v: np.ndarray, k: int) -> np.ndarray:
    """Distance from each value to its k-th nearest other value (1-D)."""
    order = np.argsort(v, kind="stable")
    s = v[order]
    n = s.size
    pad = np.concatenate([np.full(k, -np.inf), s, np.full(k, np.inf)])
    pos = np.arange(n) + k
    # the k nearest others lie among the k values on either side
    win = np.stack([np.abs(pad[pos + off] - s) for off in range(-k, k + 1) if off != 0], axis=1)
    d = np.sort(win, axis=1)[:, k - 1]
    out = np.empty(n)
    out[order] = d
    return out


def mi_discrete_continuous(x, y, k: int = 3) -> float:
    """Nearest-neighbour MI estimate (nats) between continuous ``x`` and discrete ``y``.

    For each sample the distance to its k-th neighbour within its own class
    sets a radius; ``m_i`` counts all other samples within that radius.
    Samples alone in their class are ignored; smaller classes use
    ``min(k, class size - 1)`` neighbours.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.size < 2 * k:
        raise ValueError(f"need at least {2 * k} samples for k={k}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ValueError("y has a single class; mutual information is undefined")
    x = _dejitter(x)
    n = x.size
    radius = np.full(n, np.nan)
    k_i = np.zeros(n)
    n_c = np.zeros(n)
    for c, cnt in zip(classes, counts):
        mask = y == c
        if cnt < 2:
            continue
        kc = min(k, int(cnt) - 1)
        radius[mask] = _kth_neighbor_dist(x[mask], kc)
        k_i[mask] = kc
        n_c[mask] = cnt
    keep = ~np.isnan(radius)
    xs, r = x[keep], radius[keep]
    sorted_all = np.sort(xs)
    hi = np.searchsorted(sorted_all, np.nextafter(xs + r, np.inf), side="right")
    lo = np.searchsorted(sorted_all, np.nextafter(xs - r, -np.inf), side="left")
    m = np.maximum(hi - lo - 1, k_i[keep])
    n_used = int(keep.sum())
    return float(digamma(n_used) - np.mean(digamma(n_c[keep])) + np.mean(digamma(k_i[keep]))
                 - np.mean(digamma(m)))


@dataclass
class MIReport:
    names: tuple[str, ...]
    raw: np.ndarray       # per column, may be slightly negative
    order: list[int]      # column indices, most informative first
    n: int
    k: int

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.raw, 0.0)

    def table(self) -> str:
        width = max(len(s) for s in self.names)
        lines = [f"{'rank':>4}  {'feature':<{width}}  {'MI (nats)':>10}",
                 f"{'-' * 4}  {'-' * width}  {'-' * 10}"]
        for rank, j in enumerate(self.order, 1):
            lines.append(f"{rank:>4}  {self.names[j]:<{width}}  {self.clamped[j]:>10.4f}")
        lines.append(f"n = {self.n}, k = {self.k}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k,
                "features": [{"name": self.names[j], "mi": float(self.clamped[j]),
                              "mi_raw": float(self.raw[j])} for j in self.order]}


def rank_columns(x: np.ndarray, y, k: int = 3, names: Sequence[str] | None = None) -> MIReport:
    x = np.asarray(x, dtype=np.float64)
    names = tuple(names) if names is not None else tuple(f"col{j}" for j in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise ValueError("one name per column required")
    raw = np.array([mi_discrete_continuous(x[:, j], y, k) for j in range(x.shape[1])])
    order = sorted(range(x.shape[1]), key=lambda j: (-raw[j], j))
    return MIReport(names, raw, order, int(x.shape[0]), k)


def rank_features(mats: Sequence[FeatureMatrix], tags: Sequence, k: int = 3) -> MIReport:
    """MI of every feature column with the 0/1 selection tags, pooled over products.

    ``tags`` holds one 0/1 vector per matrix (or objects with a ``tags`` field).
    """
    if len(mats) != len(tags):
        raise ValueError("feature matrices and tags are not aligned")
    ys = []
    for m, t in zip(mats, tags):
        vec = np.asarray(getattr(t, "tags", t))
        if hasattr(t, "product_id") and t.product_id != m.product_id:
            raise ValueError(f"tags for {t.product_id!r} paired with features of {m.product_id!r}")
        if vec.size != m.values.shape[0]:
            raise ValueError(f"{m.product_id!r}: {vec.size} tags for {m.values.shape[0]} reviews")
        ys.append(vec)
    x = np.concatenate([m.values for m in mats])
    return rank_columns(x, np.concatenate(ys), k, FEATURE_NAMES)


# -- ROUGE evaluation ------------------------------------------------------

EVAL_SECTIONS = ("verdict", "pros", "cons")


def _section_text(s: GoldSummary, section: str) -> list[str]:
    if section == "verdict":
        return tokenize(s.verdict)
    return tokenize(" ".join(getattr(s, section)))


def eval_summaries(predicted: Mapping[str, GoldSummary],
                   gold: Mapping[str, GoldSummary]) -> dict[str, dict[str, float]]:
    """Mean ROUGE-1/2/L F1 (x100) per section; pros and cons as concatenated bullets."""
    if set(predicted) != set(gold):
        missing = sorted(set(gold) - set(predicted))
        extra = sorted(set(predicted) - set(gold))
        raise ValueError(f"product ids differ: missing {missing[:5]}, unexpected {extra[:5]}")
    if not gold:
        raise ValueError("nothing to evaluate")
    out = {}
    ids = sorted(gold)
    for sec in EVAL_SECTIONS:
        r1, r2, rl = [], [], []
        for pid in ids:
            hyp, ref = _section_text(predicted[pid], sec), _section_text(gold[pid], sec)
            r1.append(rouge_n(hyp, ref, 1).f1)
            r2.append(rouge_n(hyp, ref, 2).f1)
            rl.append(rouge_l(hyp, ref).f1)
        out[sec] = {"R1": 100.0 * math.fsum(r1) / len(ids), "R2": 100.0 * math.fsum(r2) / len(ids),
                    "RL": 100.0 * math.fsum(rl) / len(ids)}
    return out
