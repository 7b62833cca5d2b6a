"""A tiny causal transformer over the shared vocabulary, in numpy.

The whole parameter set lives in one flat float64 vector; named views give
access to the individual weight matrices. Forward and backward passes are
hand-written so exact log-probabilities and exact gradients are available
without an autograd framework. The architecture follows the usual small
decoder recipe: token + position embeddings, pre-norm attention and MLP
blocks with residuals, rmsnorm, ReLU, no biases, untied output head.

All computations are float64. Temperature-0 sampling breaks ties toward
the lowest token index, which makes evaluation runs reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RMSNORM_EPS = 1e-5


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 256

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def mlp_dim(self) -> int:
        return 4 * self.d_model


def _layout(cfg: PolicyConfig):
    shapes = [("wte", (cfg.vocab_size, cfg.d_model)),
              ("wpe", (cfg.context, cfg.d_model)),
              ("head", (cfg.d_model, cfg.vocab_size))]
    for i in range(cfg.n_layers):
        d, m = cfg.d_model, cfg.mlp_dim
        shapes += [(f"l{i}.wq", (d, d)), (f"l{i}.wk", (d, d)),
                   (f"l{i}.wv", (d, d)), (f"l{i}.wo", (d, d)),
                   (f"l{i}.fc1", (d, m)), (f"l{i}.fc2", (m, d))]
    layout = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        layout[name] = (offset, shape)
        offset += size
    return layout, offset


def _rmsnorm(x: np.ndarray):
    ms = np.mean(x * x, axis=-1, keepdims=True)
    scale = 1.0 / np.sqrt(ms + RMSNORM_EPS)
    return x * scale, scale


def _rmsnorm_backward(dy: np.ndarray, x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    dot = np.sum(dy * x, axis=-1, keepdims=True)
    return dy * scale - x * (scale ** 3) * (dot / d)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


class PolicyModel:
    """Stateless forward/backward machinery for one architecture config."""

    def __init__(self, cfg: PolicyConfig) -> None:
        self.cfg = cfg
        self.layout, self.num_params = _layout(cfg)

    def init_params(self, seed: int, scale: float = 0.08) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x706f6c)))
        return rng.standard_normal(self.num_params) * scale

    def zero_params(self) -> np.ndarray:
        return np.zeros(self.num_params)

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return params[offset:offset + int(np.prod(shape))].reshape(shape)

    def _check_tokens(self, ids) -> np.ndarray:
        arr = np.asarray(ids, dtype=np.int64)
        if arr.size == 0:
            raise ValueError("empty token sequence")
        if arr.min() < 0 or arr.max() >= self.cfg.vocab_size:
            raise ValueError("token id outside the vocabulary")
        if arr.shape[-1] > self.cfg.context:
            raise ValueError(
                f"sequence of {arr.shape[-1]} tokens exceeds context {self.cfg.context}")
        return arr

    # ------------------------------------------------------------------
    # single-sequence forward / backward (the exact path used by losses)
    # ------------------------------------------------------------------

    def forward(self, params: np.ndarray, ids, need_cache: bool = False):
        cfg = self.cfg
        ids = self._check_tokens(ids)
        L = ids.shape[0]
        inv_sqrt_hd = 1.0 / math.sqrt(cfg.head_dim)
        causal = np.tril(np.ones((L, L), dtype=bool))

        x0 = self.view(params, "wte")[ids] + self.view(params, "wpe")[:L]
        x, scale0 = _rmsnorm(x0)
        layers = []
        for i in range(cfg.n_layers):
            wq = self.view(params, f"l{i}.wq")
            wk = self.view(params, f"l{i}.wk")
            wv = self.view(params, f"l{i}.wv")
            wo = self.view(params, f"l{i}.wo")
            w1 = self.view(params, f"l{i}.fc1")
            w2 = self.view(params, f"l{i}.fc2")

            a_in = x
            h, scale_a = _rmsnorm(a_in)
            q = h @ wq
            k = h @ wk
            v = h @ wv
            qh = q.reshape(L, cfg.n_heads, cfg.head_dim).transpose(1, 0, 2)
            kh = k.reshape(L, cfg.n_heads, cfg.head_dim).transpose(1, 0, 2)
            vh = v.reshape(L, cfg.n_heads, cfg.head_dim).transpose(1, 0, 2)
            scores = (qh @ kh.transpose(0, 2, 1)) * inv_sqrt_hd
            scores = np.where(causal, scores, -np.inf)
            m = scores.max(axis=2, keepdims=True)
            w = np.exp(scores - m)
            attn = w / w.sum(axis=2, keepdims=True)
            ctx = (attn @ vh).transpose(1, 0, 2).reshape(L, cfg.d_model)
            x = a_in + ctx @ wo

            b_in = x
            h2, scale_b = _rmsnorm(b_in)
            u = h2 @ w1
            r = np.maximum(u, 0.0)
            x = b_in + r @ w2
            if need_cache:
                layers.append((a_in, h, scale_a, qh, kh, vh, attn, ctx,
                               b_in, h2, scale_b, u, r))
        logits = x @ self.view(params, "head")
        cache = (ids, x0, scale0, x, layers) if need_cache else None
        return logits, cache

    def backward(self, params: np.ndarray, cache, dlogits: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        ids, x0, scale0, x_final, layers = cache
        L = ids.shape[0]
        inv_sqrt_hd = 1.0 / math.sqrt(cfg.head_dim)
        grad = np.zeros_like(params)

        gv = lambda name: self.view(grad, name)
        head = self.view(params, "head")
        gv("head")[...] += x_final.T @ dlogits
        dx = dlogits @ head.T

        for i in reversed(range(cfg.n_layers)):
            (a_in, h, scale_a, qh, kh, vh, attn, ctx, b_in, h2, scale_b, u, r) = layers[i]
            wq = self.view(params, f"l{i}.wq")
            wk = self.view(params, f"l{i}.wk")
            wv = self.view(params, f"l{i}.wv")
            wo = self.view(params, f"l{i}.wo")
            w1 = self.view(params, f"l{i}.fc1")
            w2 = self.view(params, f"l{i}.fc2")

            # MLP block: x = b_in + relu(rmsnorm(b_in) @ w1) @ w2
            gv(f"l{i}.fc2")[...] += r.T @ dx
            dr = dx @ w2.T
            du = dr * (u > 0.0)
            gv(f"l{i}.fc1")[...] += h2.T @ du
            dh2 = du @ w1.T
            dx = dx + _rmsnorm_backward(dh2, b_in, scale_b)

            # attention block: x = a_in + ctx @ wo
            gv(f"l{i}.wo")[...] += ctx.T @ dx
            dctx = (dx @ wo.T).reshape(L, cfg.n_heads, cfg.head_dim).transpose(1, 0, 2)
            dattn = dctx @ vh.transpose(0, 2, 1)
            dvh = attn.transpose(0, 2, 1) @ dctx
            dot = np.sum(dattn * attn, axis=2, keepdims=True)
            dscores = attn * (dattn - dot) * inv_sqrt_hd
            dqh = dscores @ kh
            dkh = dscores.transpose(0, 2, 1) @ qh
            dq = dqh.transpose(1, 0, 2).reshape(L, cfg.d_model)
            dk = dkh.transpose(1, 0, 2).reshape(L, cfg.d_model)
            dv = dvh.transpose(1, 0, 2).reshape(L, cfg.d_model)
            gv(f"l{i}.wq")[...] += h.T @ dq
            gv(f"l{i}.wk")[...] += h.T @ dk
            gv(f"l{i}.wv")[...] += h.T @ dv
            dh = dq @ wq.T + dk @ wk.T + dv @ wv.T
            dx = dx + _rmsnorm_backward(dh, a_in, scale_a)

        dx0 = _rmsnorm_backward(dx, x0, scale0)
        gv("wpe")[:L] += dx0
        np.add.at(gv("wte"), ids, dx0)
        return grad

    # ------------------------------------------------------------------
    # batched forward used by the evaluation rollout engine
    # ------------------------------------------------------------------

    def forward_batch(self, params: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Logits for a (B, L) batch of right-padded rows.

        Causality makes the padding harmless: logits at a row's last valid
        position never depend on the padded tail.
        """
        cfg = self.cfg
        ids = np.asarray(ids, dtype=np.int64)
        B, L = ids.shape
        if L > cfg.context:
            raise ValueError(f"sequence of {L} tokens exceeds context {cfg.context}")

        x = self.view(params, "wte")[ids] + self.view(params, "wpe")[:L]
        x, _ = _rmsnorm(x)
        for i in range(cfg.n_layers):
            x = x + self._attend_batch(params, i, x)
            h2, _ = _rmsnorm(x)
            r = np.maximum(h2 @ self.view(params, f"l{i}.fc1"), 0.0)
            x = x + r @ self.view(params, f"l{i}.fc2")
        return x @ self.view(params, "head")

    def next_token_logits(self, params: np.ndarray, ids: np.ndarray,
                          lengths: np.ndarray) -> np.ndarray:
        """(B, V) logits predicting the token after each row's last position.

        Same computation as forward_batch restricted to what the final
        position needs: the last layer only evaluates one attention query
        per row, and the head projects a single vector per row.
        """
        cfg = self.cfg
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        B, L = ids.shape
        if L > cfg.context:
            raise ValueError(f"sequence of {L} tokens exceeds context {cfg.context}")
        last = lengths - 1
        rows = np.arange(B)

        x = self.view(params, "wte")[ids] + self.view(params, "wpe")[:L]
        x, _ = _rmsnorm(x)
        for i in range(cfg.n_layers - 1):
            x = x + self._attend_batch(params, i, x)
            h2, _ = _rmsnorm(x)
            r = np.maximum(h2 @ self.view(params, f"l{i}.fc1"), 0.0)
            x = x + r @ self.view(params, f"l{i}.fc2")

        i = cfg.n_layers - 1
        h, _ = _rmsnorm(x)
        q = (h[rows, last] @ self.view(params, f"l{i}.wq")) \
            .reshape(B, cfg.n_heads, cfg.head_dim)
        k = (h @ self.view(params, f"l{i}.wk")) \
            .reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)
        v = (h @ self.view(params, f"l{i}.wv")) \
            .reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)
        scores = np.einsum("bhd,bhld->bhl", q, k) / math.sqrt(cfg.head_dim)
        valid = np.arange(L)[None, :] <= last[:, None]  # (B, L) causal + padding
        scores = np.where(valid[:, None, :], scores, -np.inf)
        m = scores.max(axis=2, keepdims=True)
        w = np.exp(scores - m)
        attn = w / w.sum(axis=2, keepdims=True)
        ctx = np.einsum("bhl,bhld->bhd", attn, v).reshape(B, cfg.d_model)
        x_last = x[rows, last] + ctx @ self.view(params, f"l{i}.wo")
        h2, _ = _rmsnorm(x_last)
        r = np.maximum(h2 @ self.view(params, f"l{i}.fc1"), 0.0)
        x_last = x_last + r @ self.view(params, f"l{i}.fc2")
        return x_last @ self.view(params, "head")

    def _attend_batch(self, params: np.ndarray, i: int, x: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        B, L, _ = x.shape
        h, _ = _rmsnorm(x)
        q = h @ self.view(params, f"l{i}.wq")
        k = h @ self.view(params, f"l{i}.wk")
        v = h @ self.view(params, f"l{i}.wv")
        qh = q.reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)
        kh = k.reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)
        vh = v.reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) / math.sqrt(cfg.head_dim)
        causal = np.tril(np.ones((L, L), dtype=bool))
        scores = np.where(causal, scores, -np.inf)
        m = scores.max(axis=3, keepdims=True)
        w = np.exp(scores - m)
        attn = w / w.sum(axis=3, keepdims=True)
        ctx = (attn @ vh).transpose(0, 2, 1, 3).reshape(B, L, cfg.d_model)
        return ctx @ self.view(params, f"l{i}.wo")
