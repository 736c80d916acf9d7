"""Tiny float64 networks with exact hand-written backward passes.

Every model keeps its parameters in ``self.params`` (name -> ndarray) and
implements ``forward(x, train=False, rng=None) -> (out, Tape)`` and
``backward(tape, dout) -> grads`` with ``grads`` keyed like ``params``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

LN_EPS = 1e-12
CHECKPOINT_FORMAT = "revsel-checkpoint"
CHECKPOINT_VERSION = 1


class Tape:
    """Activations cached by one forward pass; ``backward`` may read it once."""

    __slots__ = ("_cache", "consumed")

    def __init__(self, **cache):
        self._cache = cache
        self.consumed = False

    def take(self) -> dict:
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self.consumed = True
        return self._cache


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


# -- elementwise pieces ----------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout_mask(shape, p: float, train: bool, rng: np.random.Generator | None):
    if not train or p <= 0.0:
        return None
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    return (rng.random(shape) >= p) / (1.0 - p)


def layer_norm_forward(x, gamma, beta, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbeta = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gamma
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def softmax_rows(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- losses ----------------------------------------------------------------

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (sigmoid(z) - t) / z.size


def weighted_softmax_ce(logits, labels, class_weights=None):
    """Mean over rows of ``w[y] * CE(row)``; weights are not renormalized."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, c = z.shape
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    zm = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zm).sum(axis=1))
    ce = lse - zm[np.arange(n), y]
    wy = w[y]
    p = np.exp(zm - lse[:, None])
    p[np.arange(n), y] -= 1.0
    return float((wy * ce).mean()), p * (wy / n)[:, None]


# -- models ----------------------------------------------------------------

class Model:
    kind = "model"
    params: dict[str, np.ndarray]

    def config(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_config(cls, config: dict, params: dict[str, np.ndarray]):
        obj = cls(**config)
        for name, value in params.items():
            if obj.params[name].shape != value.shape:
                raise ValueError(f"parameter {name}: shape {value.shape} != {obj.params[name].shape}")
            obj.params[name] = value
        return obj

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class FeedForwardScorer(Model):
    """features -> tanh(250) -> tanh(250) -> layer norm -> linear score.

    ``norm_position='first'`` moves the layer norm after the first hidden
    layer instead.
    """

    kind = "feedforward_scorer"

    def __init__(self, n_in: int = 23, hidden: int = 250, dropout: float = 0.0,
                 norm_position: str = "final", zero_final: bool = False, seed: int = 0):
        if norm_position not in ("final", "first"):
            raise ValueError("norm_position must be 'final' or 'first'")
        self.n_in, self.hidden, self.dropout = n_in, hidden, dropout
        self.norm_position, self.zero_final, self.seed = norm_position, zero_final, seed
        rng = np.random.default_rng(seed)
        self.params = {
            "W1": glorot(rng, n_in, hidden), "b1": np.zeros(hidden),
            "W2": glorot(rng, hidden, hidden), "b2": np.zeros(hidden),
            "ln_g": np.ones(hidden), "ln_b": np.zeros(hidden),
            "W3": glorot(rng, hidden, 1), "b3": np.zeros(1),
        }
        if zero_final:
            # uniform initial policy: every review starts with the same score
            self.params["W3"][:] = 0.0

    def config(self) -> dict:
        return {"n_in": self.n_in, "hidden": self.hidden, "dropout": self.dropout,
                "norm_position": self.norm_position, "zero_final": self.zero_final,
                "seed": self.seed}

    def forward(self, x, train: bool = False, rng=None):
        p = self.params
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_in:
            raise ValueError(f"expected {self.n_in} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input features")
        h1_act = np.tanh(X @ p["W1"] + p["b1"])
        h1, ln1 = h1_act, None
        if self.norm_position == "first":
            h1, ln1 = layer_norm_forward(h1_act, p["ln_g"], p["ln_b"])
        m1 = dropout_mask(h1.shape, self.dropout, train, rng)
        h1d = h1 * m1 if m1 is not None else h1
        h2 = np.tanh(h1d @ p["W2"] + p["b2"])
        m2 = dropout_mask(h2.shape, self.dropout, train, rng)
        h2d = h2 * m2 if m2 is not None else h2
        ln2 = None
        z = h2d
        if self.norm_position == "final":
            z, ln2 = layer_norm_forward(h2d, p["ln_g"], p["ln_b"])
        s = (z @ p["W3"] + p["b3"])[:, 0]
        tape = Tape(X=X, h1_act=h1_act, h1d=h1d, m1=m1, h2=h2, m2=m2, z=z, ln1=ln1, ln2=ln2,
                    single=single)
        return (float(s[0]) if single else s), tape

    def backward(self, tape: Tape, dscore):
        c = tape.take()
        p = self.params
        ds = np.atleast_1d(np.asarray(dscore, dtype=np.float64))[:, None]
        g = {}
        g["W3"] = c["z"].T @ ds
        g["b3"] = ds.sum(axis=0)
        dz = ds @ p["W3"].T
        g["ln_g"] = np.zeros_like(p["ln_g"])
        g["ln_b"] = np.zeros_like(p["ln_b"])
        if c["ln2"] is not None:
            dh2d, g["ln_g"], g["ln_b"] = layer_norm_backward(dz, c["ln2"])
        else:
            dh2d = dz
        dh2 = dh2d * c["m2"] if c["m2"] is not None else dh2d
        da2 = dh2 * (1.0 - c["h2"] ** 2)
        g["W2"] = c["h1d"].T @ da2
        g["b2"] = da2.sum(axis=0)
        dh1d = da2 @ p["W2"].T
        dh1 = dh1d * c["m1"] if c["m1"] is not None else dh1d
        if c["ln1"] is not None:
            dh1, g["ln_g"], g["ln_b"] = layer_norm_backward(dh1, c["ln1"])
        da1 = dh1 * (1.0 - c["h1_act"] ** 2)
        g["W1"] = c["X"].T @ da1
        g["b1"] = da1.sum(axis=0)
        return g


class LinearScorer(Model):
    """score = features @ w + b; the smallest posterior usable by the trainer."""

    kind = "linear_scorer"

    def __init__(self, n_in: int = 23, bias: bool = False, seed: int = 0):
        self.n_in, self.bias, self.seed = n_in, bias, seed
        rng = np.random.default_rng(seed)
        self.params = {"w": rng.normal(0.0, 0.1, size=n_in)}
        if bias:
            self.params["b"] = np.zeros(1)

    def config(self) -> dict:
        return {"n_in": self.n_in, "bias": self.bias, "seed": self.seed}

    def forward(self, x, train: bool = False, rng=None):
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        s = X @ self.params["w"] + (self.params["b"][0] if self.bias else 0.0)
        return s, Tape(X=X)

    def backward(self, tape: Tape, dscore):
        c = tape.take()
        ds = np.atleast_1d(np.asarray(dscore, dtype=np.float64))
        g = {"w": c["X"].T @ ds}
        if self.bias:
            g["b"] = np.array([ds.sum()])
        return g


class SelfAttention(Model):
    """Single-head scaled dot-product self-attention + residual + layer norm.

    No positional encoding, so the map is permutation-equivariant.
    """

    kind = "self_attention"

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim, self.seed = dim, seed
        rng = np.random.default_rng(seed)
        self.params = {name: glorot(rng, dim, dim) for name in ("Wq", "Wk", "Wv", "Wo")}
        self.params["ln_g"] = np.ones(dim)
        self.params["ln_b"] = np.zeros(dim)

    def config(self) -> dict:
        return {"dim": self.dim, "seed": self.seed}

    def forward(self, x, train: bool = False, rng=None):
        p = self.params
        X = np.asarray(x, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("attention needs a non-empty (n, d) input")
        Q, K, V = X @ p["Wq"], X @ p["Wk"], X @ p["Wv"]
        scale = 1.0 / math.sqrt(self.dim)
        A = softmax_rows((Q @ K.T) * scale)
        C = A @ V
        R = X + C @ p["Wo"]
        Y, ln = layer_norm_forward(R, p["ln_g"], p["ln_b"])
        return Y, Tape(X=X, Q=Q, K=K, V=V, A=A, C=C, ln=ln, scale=scale)

    def backward(self, tape: Tape, dY):
        c = tape.take()
        p = self.params
        g = {}
        dR, g["ln_g"], g["ln_b"] = layer_norm_backward(dY, c["ln"])
        dX = dR.copy()
        g["Wo"] = c["C"].T @ dR
        dC = dR @ p["Wo"].T
        A = c["A"]
        dA = dC @ c["V"].T
        dV = A.T @ dC
        dS = A * (dA - (dA * A).sum(axis=1, keepdims=True)) * c["scale"]
        dQ = dS @ c["K"]
        dK = dS.T @ c["Q"]
        X = c["X"]
        g["Wq"], g["Wk"], g["Wv"] = X.T @ dQ, X.T @ dK, X.T @ dV
        dX += dQ @ p["Wq"].T + dK @ p["Wk"].T + dV @ p["Wv"].T
        return dX, g


def attention_contextualize(reviews_repr, attn: SelfAttention | None = None) -> np.ndarray:
    """Contextualize a list of d-vectors against each other."""
    X = np.asarray(reviews_repr, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty list of d-vectors")
    attn = attn or SelfAttention(X.shape[1])
    return attn.forward(X)[0]


class MLPHead(Model):
    """ReLU hidden layers with dropout, optional layer norm, linear output."""

    kind = "mlp_head"

    def __init__(self, n_in: int, hidden: Sequence[int] = (100, 100), n_out: int = 1,
                 dropout: float = 0.1, final_norm: bool = False, seed: int = 0):
        self.n_in, self.hidden, self.n_out = n_in, tuple(hidden), n_out
        self.dropout, self.final_norm, self.seed = dropout, final_norm, seed
        rng = np.random.default_rng(seed)
        sizes = (n_in, *self.hidden)
        self.params = {}
        for i in range(len(self.hidden)):
            self.params[f"W{i}"] = glorot(rng, sizes[i], sizes[i + 1])
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])
        if final_norm:
            self.params["ln_g"] = np.ones(sizes[-1])
            self.params["ln_b"] = np.zeros(sizes[-1])
        self.params["Wout"] = glorot(rng, sizes[-1], n_out)
        self.params["bout"] = np.zeros(n_out)

    def config(self) -> dict:
        return {"n_in": self.n_in, "hidden": list(self.hidden), "n_out": self.n_out,
                "dropout": self.dropout, "final_norm": self.final_norm, "seed": self.seed}

    def forward(self, x, train: bool = False, rng=None):
        p = self.params
        h = np.asarray(x, dtype=np.float64)
        layers = []
        for i in range(len(self.hidden)):
            inp = h
            a = inp @ p[f"W{i}"] + p[f"b{i}"]
            h = np.maximum(a, 0.0)
            m = dropout_mask(h.shape, self.dropout, train, rng)
            if m is not None:
                h = h * m
            layers.append((inp, a, m))
        ln = None
        if self.final_norm:
            h, ln = layer_norm_forward(h, p["ln_g"], p["ln_b"])
        out = h @ p["Wout"] + p["bout"]
        return out, Tape(layers=layers, top=h, ln=ln)

    def backward(self, tape: Tape, dout):
        c = tape.take()
        p = self.params
        g = {}
        dout = np.asarray(dout, dtype=np.float64)
        g["Wout"] = c["top"].T @ dout
        g["bout"] = dout.sum(axis=0)
        dh = dout @ p["Wout"].T
        if c["ln"] is not None:
            dh, g["ln_g"], g["ln_b"] = layer_norm_backward(dh, c["ln"])
        for i in reversed(range(len(self.hidden))):
            inp, a, m = c["layers"][i]
            if m is not None:
                dh = dh * m
            da = dh * (a > 0)
            g[f"W{i}"] = inp.T @ da
            g[f"b{i}"] = da.sum(axis=0)
            dh = da @ p[f"W{i}"].T
        return dh, g


class BagAttentionScorer(Model):
    """Scores a set of token sequences (reviews or sentences).

    Each item is a salience-weighted average of its token embeddings (the
    weights are a softmax over a learned per-token salience), the averages
    attend to each other, and an MLP head maps each to ``n_out`` logits.
    """

    kind = "bag_attention_scorer"

    def __init__(self, vocab_size: int, dim: int = 32, hidden: Sequence[int] = (100, 100),
                 n_out: int = 1, dropout: float = 0.1, final_norm: bool = False, seed: int = 0):
        self.vocab_size, self.dim = vocab_size, dim
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.attn = SelfAttention(dim, seed=seed + 1)
        self.head = MLPHead(dim, hidden, n_out, dropout, final_norm, seed=seed + 2)
        self.params = {"emb": rng.normal(0.0, 1.0 / math.sqrt(dim), size=(vocab_size + 1, dim)),
                       "sal": np.zeros(vocab_size + 1)}
        for k, v in self.attn.params.items():
            self.params["attn." + k] = v
        for k, v in self.head.params.items():
            self.params["head." + k] = v

    def config(self) -> dict:
        h = self.head
        return {"vocab_size": self.vocab_size, "dim": self.dim, "hidden": list(h.hidden),
                "n_out": h.n_out, "dropout": h.dropout, "final_norm": h.final_norm,
                "seed": self.seed}

    @classmethod
    def from_config(cls, config: dict, params: dict[str, np.ndarray]):
        obj = super().from_config(config, params)
        obj._sync()
        return obj

    def _sync(self):
        # sub-modules read from the shared flat dict
        for k in self.attn.params:
            self.attn.params[k] = self.params["attn." + k]
        for k in self.head.params:
            self.head.params[k] = self.params["head." + k]

    def forward(self, items: Sequence[Sequence[int]], train: bool = False, rng=None):
        if len(items) == 0:
            raise ValueError("need at least one item to score")
        self._sync()
        unk = self.vocab_size
        emb, sal = self.params["emb"], self.params["sal"]
        ids_list, alphas = [], []
        reps = np.empty((len(items), self.dim))
        for i, ids in enumerate(items):
            ids = np.asarray(ids if len(ids) else [unk], dtype=np.int64)
            w = sal[ids]
            a = np.exp(w - w.max())
            a /= a.sum()
            reps[i] = a @ emb[ids]
            ids_list.append(ids)
            alphas.append(a)
        ctx, t_attn = self.attn.forward(reps)
        out, t_head = self.head.forward(ctx, train, rng)
        return out, Tape(ids=ids_list, alphas=alphas, t_attn=t_attn, t_head=t_head)

    def backward(self, tape: Tape, dout):
        c = tape.take()
        self._sync()
        dctx, gh = self.head.backward(c["t_head"], np.asarray(dout, dtype=np.float64))
        dreps, ga = self.attn.backward(c["t_attn"], dctx)
        emb = self.params["emb"]
        demb = np.zeros_like(emb)
        dsal = np.zeros_like(self.params["sal"])
        for i, (ids, a) in enumerate(zip(c["ids"], c["alphas"])):
            e = emb[ids]
            np.add.at(demb, ids, a[:, None] * dreps[i][None, :])
            de = e @ dreps[i]
            np.add.at(dsal, ids, a * (de - a @ de))
        g = {"emb": demb, "sal": dsal}
        g.update({"attn." + k: v for k, v in ga.items()})
        g.update({"head." + k: v for k, v in gh.items()})
        return g


# -- optimization ----------------------------------------------------------

class Adam:
    """Adam with bias correction and a linear learning-rate warm-up."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, warmup_steps: int = 0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.warmup_steps = warmup_steps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def current_lr(self) -> float:
        if self.warmup_steps > 0 and self.step_count < self.warmup_steps:
            return self.lr * self.step_count / self.warmup_steps
        return self.lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for k, g in grads.items():
            if k not in params:
                raise ValueError(f"gradient for unknown parameter {k!r}")
            if params[k].shape != np.shape(g):
                raise ValueError(f"shape mismatch for {k}: {params[k].shape} vs {np.shape(g)}")
        self.step_count += 1
        t = self.step_count
        lr = self.current_lr()
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def grad_check(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
               grads: dict[str, np.ndarray], eps: float = 1e-5, per_tensor: int = 20,
               rng: np.random.Generator | None = None, floor: float = 1e-6) -> float:
    """Max relative error between ``grads`` and central differences of ``loss_fn``.

    ``loss_fn`` must read ``params`` live.  At most ``per_tensor`` random
    entries of each tensor are probed.  Error per entry is
    ``|a - n| / max(|a| + |n|, floor)``.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > per_tensor:
            idx = rng.choice(flat.size, per_tensor, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = loss_fn()
            flat[i] = old - eps
            fm = loss_fn()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            err = abs(num - gflat[i]) / max(abs(num) + abs(gflat[i]), floor)
            worst = max(worst, err)
    return worst


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path: str | Path, model: Model, extra: dict | None = None) -> None:
    """Versioned JSON: layout descriptor plus one flat parameter array."""
    names = sorted(model.params)
    layout = [[n, list(model.params[n].shape)] for n in names]
    flat = np.concatenate([model.params[n].reshape(-1) for n in names]) if names else np.zeros(0)
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": model.kind,
           "config": model.config(), "layout": layout,
           "params": [float(v) for v in flat]}
    if extra:
        doc["extra"] = extra
    write_json_atomic(path, doc)


def load_checkpoint(path: str | Path, registry: dict[str, type] | None = None):
    """Returns ``(model, extra)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    registry = registry or MODEL_REGISTRY
    cls = registry.get(doc["kind"])
    if cls is None:
        raise ValueError(f"{path}: unknown model kind {doc['kind']!r}")
    flat = np.asarray(doc["params"], dtype=np.float64)
    params, off = {}, 0
    for name, shape in doc["layout"]:
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[off:off + size].reshape(shape).copy()
        off += size
    if off != flat.size:
        raise ValueError(f"{path}: parameter array length does not match layout")
    return cls.from_config(doc["config"], params), doc.get("extra", {})


def write_json_atomic(path: str | Path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")
    tmp.replace(path)


MODEL_REGISTRY: dict[str, type] = {
    FeedForwardScorer.kind: FeedForwardScorer,
    LinearScorer.kind: LinearScorer,
    SelfAttention.kind: SelfAttention,
    MLPHead.kind: MLPHead,
    BagAttentionScorer.kind: BagAttentionScorer,
}
