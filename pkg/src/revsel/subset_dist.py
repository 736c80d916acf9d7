"""Sequential blocked categorical distribution over ordered K-subsets.

Logits are computed once per review.  Step ``k`` is a softmax over the
logits with every earlier pick masked to ``-inf``, so the probability of an
ordered tuple ``(i_1, ..., i_K)`` is the product of those step probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

MAX_ENUMERATION = 100_000
MAX_EXACT_KLD_N = 8


@dataclass(frozen=True)
class SelectionTrace:
    indices: tuple[int, ...]
    step_logps: tuple[float, ...]

    @property
    def total_logp(self) -> float:
        return float(sum(self.step_logps))

    def to_json(self) -> dict:
        return {"indices": list(self.indices), "step_logps": list(self.step_logps),
                "total_logp": self.total_logp}


def _as_logits(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("logits must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    return x


def _masked_log_softmax(x: np.ndarray, blocked: Iterable[int]) -> np.ndarray:
    z = x.copy()
    idx = list(blocked)
    if idx:
        z[idx] = -np.inf
    m = z.max()
    if not np.isfinite(m):
        raise ValueError("all indices are blocked")
    z = z - m
    return z - np.log(np.exp(z).sum())


def step_distribution(logits, blocked: Iterable[int] = ()) -> np.ndarray:
    """Softmax over the unblocked logits; blocked entries are exactly 0."""
    x = _as_logits(logits)
    return np.exp(_masked_log_softmax(x, blocked))


def _check_k(n: int, k: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")


def sample_subset(logits, k: int, rng: np.random.Generator) -> SelectionTrace:
    x = _as_logits(logits)
    _check_k(x.size, k)
    picked: list[int] = []
    logps: list[float] = []
    for _ in range(k):
        lp = _masked_log_softmax(x, picked)
        p = np.exp(lp)
        cdf = np.cumsum(p)
        u = rng.random() * cdf[-1]
        j = int(np.searchsorted(cdf, u, side="right"))
        j = min(j, x.size - 1)
        while p[j] == 0.0:  # u landed on a flat stretch of a blocked tail
            j -= 1
        picked.append(j)
        logps.append(float(lp[j]))
    return SelectionTrace(tuple(picked), tuple(logps))


def sample_subsets(logits, k: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``sample_subset``: an ``(n_samples, k)`` array of ordered picks."""
    x = _as_logits(logits)
    _check_k(x.size, k)
    n = x.size
    p0 = np.exp(x - x.max())
    weights = np.broadcast_to(p0, (n_samples, n)).copy()
    out = np.empty((n_samples, k), dtype=np.int64)
    rows = np.arange(n_samples)
    for step in range(k):
        cdf = np.cumsum(weights, axis=1)
        u = rng.random(n_samples) * cdf[:, -1]
        j = (cdf <= u[:, None]).sum(axis=1)
        j = np.minimum(j, n - 1)
        # float ties can leave j on a zero-weight entry; walk back to a live one
        dead = weights[rows, j] == 0.0
        while dead.any():
            j[dead] -= 1
            dead = weights[rows, j] == 0.0
        out[:, step] = j
        weights[rows, j] = 0.0
    return out


def log_prob(logits, indices: Sequence[int]) -> float:
    x = _as_logits(logits)
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate index in selection")
    if any(not 0 <= i < x.size for i in idx):
        raise ValueError("index out of range")
    total = 0.0
    for step, i in enumerate(idx):
        total += float(_masked_log_softmax(x, idx[:step])[i])
    return total


def log_prob_grad(logits, indices: Sequence[int]) -> np.ndarray:
    """d log q(indices) / d logits: sum over steps of (onehot - step probs)."""
    x = _as_logits(logits)
    g = np.zeros_like(x)
    idx = [int(i) for i in indices]
    for step, i in enumerate(idx):
        g -= step_distribution(x, idx[:step])
        g[i] += 1.0
    return g


def mode_subset(logits, k: int) -> list[int]:
    """Greedy argmax at every step; ties go to the lower index."""
    x = _as_logits(logits)
    _check_k(x.size, k)
    # a stable sort on -x is exactly repeated argmax with lowest-index tie-breaks
    return [int(i) for i in np.argsort(-x, kind="stable")[:k]]


def enumerate_subset_probs(logits, k: int) -> dict[tuple[int, ...], float]:
    x = _as_logits(logits)
    n = x.size
    _check_k(n, k)
    if math.perm(n, k) > MAX_ENUMERATION:
        raise ValueError(f"{math.perm(n, k)} ordered tuples exceed the enumeration limit")
    out = {}
    for tup in permutations(range(n), k):
        lp = 0.0
        for step, i in enumerate(tup):
            lp += float(_masked_log_softmax(x, tup[:step])[i])
        out[tup] = math.exp(lp)
    return out


def uniform_log_prob(n: int, k: int) -> float:
    """Log-probability of any ordered K-tuple under the uniform blocked prior."""
    return -sum(math.log(n - s) for s in range(k))


def stepwise_kld(logits, indices: Sequence[int]) -> float:
    """Sum over the trace of KL(q_step || uniform_step) given the sampled history.

    Each term is an exact KL between two step distributions, so the value
    is never negative; its expectation under q is the full tuple KL.
    """
    x = _as_logits(logits)
    total = 0.0
    idx = list(indices)
    n = x.size
    for step in range(len(idx)):
        lp = _masked_log_softmax(x, idx[:step])
        p = np.exp(lp)
        live = p > 0
        total += float(np.sum(p[live] * lp[live])) + math.log(n - step)
    return max(total, 0.0)


def kld_to_prior(logits, k: int, estimator: str = "exact",
                 rng: np.random.Generator | None = None, n_samples: int = 1000) -> float:
    """KL(q || uniform blocked prior) over ordered K-tuples."""
    x = _as_logits(logits)
    n = x.size
    _check_k(n, k)
    if estimator == "exact":
        if n > MAX_EXACT_KLD_N:
            raise ValueError(f"exact KLD only supported for N <= {MAX_EXACT_KLD_N}")
        lp_prior = uniform_log_prob(n, k)
        total = 0.0
        for q in enumerate_subset_probs(x, k).values():
            if q > 0:
                total += q * (math.log(q) - lp_prior)
        return max(total, 0.0)
    if estimator == "mc":
        if rng is None:
            raise ValueError("mc estimator needs an rng")
        return float(np.mean(kld_samples(x, k, n_samples, rng)))
    raise ValueError(f"unknown estimator {estimator!r}")


def kld_samples(logits, k: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Per-trace stepwise KLD values for ``n_samples`` traces drawn from q."""
    x = _as_logits(logits)
    picks = sample_subsets(x, k, n_samples, rng)
    n = x.size
    lse_all = np.log(np.exp(x - x.max()).sum()) + x.max()
    p_all = np.exp(x - lse_all)
    ent_all = float(np.sum(p_all * (x - lse_all)))
    vals = np.zeros(n_samples)
    # Group identical histories so each distinct prefix is evaluated once.
    for step in range(k):
        if step == 0:
            vals += ent_all + math.log(n)
            continue
        prefixes, inverse = np.unique(np.sort(picks[:, :step], axis=1), axis=0,
                                      return_inverse=True)
        per = np.empty(len(prefixes))
        for r, pre in enumerate(prefixes):
            lp = _masked_log_softmax(x, pre.tolist())
            p = np.exp(lp)
            live = p > 0
            per[r] = float(np.sum(p[live] * lp[live])) + math.log(n - step)
        vals += per[np.asarray(inverse).reshape(-1)]
    return vals
