"""Exact per-step policy operations: log-probabilities, gradients, KL, sampling."""

from __future__ import annotations

import numpy as np

from ..vocab import Vocabulary
from .model import PolicyModel, log_softmax, softmax


def validate_step_output(vocab: Vocabulary, step_output) -> tuple[int, ...]:
    step = tuple(step_output)
    if not step or step[-1] != vocab.eos:
        raise ValueError("step output must end with the end-of-step sentinel")
    if vocab.eot not in step[:-1]:
        raise ValueError("step output must contain the end-of-thought sentinel")
    return step


def _predicting_rows(history_len: int, step_len: int) -> slice:
    # logits at row p predict token p + 1
    return slice(history_len - 1, history_len + step_len - 1)


def step_logprob(model: PolicyModel, params: np.ndarray, history, step_output,
                 vocab: Vocabulary) -> float:
    """Sum of log pi(token | prefix) over the emitted step tokens. Exact."""
    step = validate_step_output(vocab, step_output)
    seq = tuple(history) + step
    logits, _ = model.forward(params, seq)
    rows = log_softmax(logits[_predicting_rows(len(history), len(step))])
    targets = np.asarray(step, dtype=np.int64)
    return float(np.sum(rows[np.arange(len(step)), targets]))


def logprob_gradient(model: PolicyModel, params: np.ndarray, history, step_output,
                     vocab: Vocabulary) -> np.ndarray:
    """Exact gradient of step_logprob with respect to every parameter."""
    step = validate_step_output(vocab, step_output)
    seq = tuple(history) + step
    logits, cache = model.forward(params, seq, need_cache=True)
    rows = _predicting_rows(len(history), len(step))
    dlogits = np.zeros_like(logits)
    probs = softmax(logits[rows])
    dlogits[rows] = -probs
    dlogits[np.arange(rows.start, rows.stop), np.asarray(step, dtype=np.int64)] += 1.0
    return model.backward(params, cache, dlogits)


def kl_to_reference(model: PolicyModel, params_theta: np.ndarray, params_ref: np.ndarray,
                    history, step_output, vocab: Vocabulary) -> float:
    """Mean over step positions of exact full-vocabulary KL(pi_theta || pi_ref)."""
    if params_theta.shape != params_ref.shape or len(params_theta) != model.num_params:
        raise ValueError("policies do not share an architecture/vocabulary")
    step = validate_step_output(vocab, step_output)
    seq = tuple(history) + step
    rows = _predicting_rows(len(history), len(step))
    logits_t, _ = model.forward(params_theta, seq)
    logits_r, _ = model.forward(params_ref, seq)
    lsm_t = log_softmax(logits_t[rows])
    lsm_r = log_softmax(logits_r[rows])
    per_position = np.sum(np.exp(lsm_t) * (lsm_t - lsm_r), axis=-1)
    return float(np.mean(per_position))


def sample_step(model: PolicyModel, params: np.ndarray, history, temperature: float,
                max_step_tokens: int, rng, vocab: Vocabulary) -> tuple[int, ...]:
    """Autoregressive sampling of one step, always terminated with <eos>.

    Temperature 0 decodes greedily with ties broken toward the lowest token
    index. The cap is enforced by forcing <eos> as the final token.
    """
    if max_step_tokens < 2:
        raise ValueError("max_step_tokens must be at least 2")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if len(history) + max_step_tokens > model.cfg.context:
        raise ValueError("history leaves no room for a step within the context window")
    seq = list(history)
    out = []
    for i in range(max_step_tokens):
        logits, _ = model.forward(params, seq)
        last = logits[-1]
        if temperature == 0.0:
            tok = int(np.argmax(last))
        else:
            probs = softmax(last / temperature)
            tok = int(rng.choice(len(probs), p=probs))
        if i == max_step_tokens - 1 and tok != vocab.eos:
            tok = vocab.eos
        out.append(tok)
        seq.append(tok)
        if tok == vocab.eos:
            break
    return tuple(out)
