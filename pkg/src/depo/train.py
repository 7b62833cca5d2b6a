"""Losses and optimization: behavioral cloning, vanilla KTO, and the
dual-efficiency extension.

The preference loss contrasts desirable against undesirable trajectories
through an implied reward: the per-step mean log-probability ratio of the
current policy to the frozen reference, plus a parameter-free efficiency
bonus for desirable samples (and, optionally, a mirrored penalty offset on
undesirable ones). The KL reference point z0 is the batch mean of exact
per-trajectory KL divergences and is treated as a constant: no gradient
flows through it or through the bonus/penalty terms.

Scalar bookkeeping (per-step ratios, z0, the sigmoid value function) is
done in plain Python floats with a fixed accumulation order, so a
separately coded vanilla-KTO routine built on the same log-probability
primitives reproduces the loss bit for bit when the bonus is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .envs import ContractViolation, Environment, EnvKind, Task
from .labeling import LabeledDataset
from .policy import PolicyModel, encode_trajectory_rows, log_softmax, save_checkpoint
from .trajectory import Label, Trajectory, token_stats
from .vocab import Vocabulary, default_vocab


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.2
    lambda_d: float = 1.0
    lambda_u: float = 1.0
    alpha1: float = 3.0
    alpha2: float = 3.0
    penalty_enabled: bool = False
    learning_rate: float = 1e-3
    epochs: int = 3
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beta <= 0 or self.lambda_d <= 0 or self.lambda_u <= 0:
            raise ValueError("beta, lambda_d and lambda_u must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha coefficients must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size positive")


@dataclass(frozen=True)
class LossReport:
    loss: float
    mean_implied_reward_d: float
    mean_implied_reward_u: float
    z0: float
    mean_bonus: float
    grad_norm: float


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# trajectory encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedTrajectory:
    rows: tuple  # ((token array, spans), ...); span = (start, end, step_index)
    num_steps: int
    num_positions: int


class TrajectoryEncoder:
    """Turns trajectories into token rows for the policy, with caching.

    The initial observation is recovered deterministically by resetting the
    environment with the trajectory's task, so it never needs to be stored
    in dataset files.
    """

    def __init__(self, model: PolicyModel, envs: dict[EnvKind, Environment],
                 vocab: Vocabulary | None = None) -> None:
        self.model = model
        self.envs = dict(envs)
        self.vocab = vocab or default_vocab()
        self._obs_cache: dict = {}
        self._enc_cache: dict = {}

    def initial_observation(self, task: Task) -> tuple[int, ...]:
        key = (task.env_kind, task.seed)
        if key not in self._obs_cache:
            env = self.envs.get(task.env_kind)
            if env is None:
                raise ContractViolation(f"no environment configured for {task.env_kind}")
            _state, obs = env.reset(task)
            self._obs_cache[key] = obs
        return self._obs_cache[key]

    def encode(self, traj: Trajectory) -> EncodedTrajectory:
        if not traj.steps:
            raise ContractViolation("cannot encode an empty trajectory")
        cached = self._enc_cache.get(traj)
        if cached is not None:
            return cached
        rows = encode_trajectory_rows(self.vocab, traj.task.instruction_tokens,
                                      self.initial_observation(traj.task),
                                      traj.steps, self.model.cfg.context)
        packed = tuple((np.asarray(tokens, dtype=np.int64), tuple(spans))
                       for tokens, spans in rows)
        positions = sum(e - s for _, spans in packed for (s, e, _i) in spans)
        enc = EncodedTrajectory(rows=packed, num_steps=len(traj.steps),
                                num_positions=positions)
        self._enc_cache[traj] = enc
        return enc


# ---------------------------------------------------------------------------
# log-probability and KL primitives
# ---------------------------------------------------------------------------


def _row_span_data(model: PolicyModel, params, tokens, spans, need_cache=False):
    logits, cache = model.forward(params, tokens, need_cache=need_cache)
    data = []
    for (s, e, step_idx) in spans:
        sl = slice(s - 1, e - 1)
        lsm = log_softmax(logits[sl])
        targets = tokens[s:e]
        lp = float(np.sum(lsm[np.arange(e - s), targets]))
        data.append((step_idx, sl, lsm, targets, lp))
    return data, cache


def trajectory_step_logprobs(model: PolicyModel, params, enc: EncodedTrajectory) -> np.ndarray:
    """Exact log pi(step_t | history_t) for every step, as float64."""
    lps = np.empty(enc.num_steps)
    for tokens, spans in enc.rows:
        data, _ = _row_span_data(model, params, tokens, spans)
        for step_idx, _sl, _lsm, _targets, lp in data:
            lps[step_idx] = lp
    return lps


def trajectory_kl(model: PolicyModel, params_theta, params_ref,
                  enc: EncodedTrajectory) -> float:
    """Mean over all emitted positions of exact KL(pi_theta || pi_ref)."""
    values: list[float] = []
    for tokens, spans in enc.rows:
        data_t, _ = _row_span_data(model, params_theta, tokens, spans)
        data_r, _ = _row_span_data(model, params_ref, tokens, spans)
        for (_, _, lsm_t, _, _), (_, _, lsm_r, _, _) in zip(data_t, data_r):
            kl_rows = np.sum(np.exp(lsm_t) * (lsm_t - lsm_r), axis=-1)
            values.extend(float(x) for x in kl_rows)
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def sft_loss(model: PolicyModel, params, batch, encoder: TrajectoryEncoder,
             want_grad: bool = True):
    """Mean negative log-likelihood per emitted token over the batch.

    Only agent-emitted positions contribute (thought, action and sentinel
    tokens); instructions and observations are conditioning context.
    """
    batch = list(batch)
    if not batch:
        raise ContractViolation("sft_loss requires a non-empty batch")
    encs = [encoder.encode(t) for t in batch]
    total_positions = sum(e.num_positions for e in encs)
    total_lp = 0.0
    grad = np.zeros(model.num_params) if want_grad else None
    for enc in encs:
        for tokens, spans in enc.rows:
            data, cache = _row_span_data(model, params, tokens, spans,
                                         need_cache=want_grad)
            for _idx, sl, lsm, targets, lp in data:
                total_lp += lp
            if want_grad:
                dlogits = np.zeros((len(tokens), model.cfg.vocab_size))
                for _idx, sl, lsm, targets, _lp in data:
                    probs = np.exp(lsm)
                    probs[np.arange(len(targets)), targets] -= 1.0
                    dlogits[sl] = probs / total_positions
                grad += model.backward(params, cache, dlogits)
    loss = -total_lp / total_positions
    return (loss, grad) if want_grad else (loss, None)


def efficiency_bonus(traj: Trajectory, alpha1: float, alpha2: float,
                     vocab: Vocabulary | None = None) -> float:
    """alpha1 / mean-tokens-per-step + alpha2 / steps, for desirable samples."""
    if traj.label is Label.DESIRABLE:
        stats = token_stats(traj, vocab)
        return alpha1 / stats.mean_tokens_per_step + alpha2 / stats.total_steps
    if traj.label is Label.UNDESIRABLE:
        return 0.0
    raise ContractViolation("efficiency_bonus requires a desirable/undesirable label")


def penalty(traj: Trajectory, alpha1: float, alpha2: float,
            vocab: Vocabulary | None = None) -> float:
    """Mirror of the bonus, applied to undesirable samples only."""
    if traj.label is Label.UNDESIRABLE:
        stats = token_stats(traj, vocab)
        return alpha1 / stats.mean_tokens_per_step + alpha2 / stats.total_steps
    if traj.label is Label.DESIRABLE:
        return 0.0
    raise ContractViolation("penalty requires a desirable/undesirable label")


def kto_value(r: float, z0: float, label: Label, cfg: TrainConfig) -> float:
    """Sigmoid value of a trajectory under the current policy."""
    if label is Label.DESIRABLE:
        return cfg.lambda_d * sigmoid(cfg.beta * (r - z0))
    if label is Label.UNDESIRABLE:
        return cfg.lambda_u * sigmoid(cfg.beta * (z0 - r))
    raise ContractViolation("kto_value requires a desirable/undesirable label")


def _offset(traj: Trajectory, cfg: TrainConfig, vocab) -> float:
    """The constant reward offset: bonus, plus the penalty when enabled."""
    off = efficiency_bonus(traj, cfg.alpha1, cfg.alpha2, vocab)
    if cfg.penalty_enabled:
        off += penalty(traj, cfg.alpha1, cfg.alpha2, vocab)
    return off


def implied_reward(model: PolicyModel, params_theta, params_ref, traj: Trajectory,
                   cfg: TrainConfig, encoder: TrajectoryEncoder,
                   want_grad: bool = False):
    """Per-step mean log-ratio to the reference plus the constant offset.

    The offset carries zero gradient; the returned gradient is exactly the
    gradient of the log-ratio term.
    """
    if traj.label not in (Label.DESIRABLE, Label.UNDESIRABLE):
        raise ContractViolation("implied_reward requires a labeled trajectory")
    enc = encoder.encode(traj)
    lp_t = trajectory_step_logprobs(model, params_theta, enc)
    lp_r = trajectory_step_logprobs(model, params_ref, enc)
    diffs = [float(a) - float(b) for a, b in zip(lp_t, lp_r)]
    r = sum(diffs) / enc.num_steps + _offset(traj, cfg, encoder.vocab)
    if not want_grad:
        return r
    grad = np.zeros(model.num_params)
    scale = 1.0 / enc.num_steps
    for tokens, spans in enc.rows:
        data, cache = _row_span_data(model, params_theta, tokens, spans, need_cache=True)
        dlogits = np.zeros((len(tokens), model.cfg.vocab_size))
        for _idx, sl, lsm, targets, _lp in data:
            probs = -np.exp(lsm)
            probs[np.arange(len(targets)), targets] += 1.0
            dlogits[sl] = probs * scale
        grad += model.backward(params_theta, cache, dlogits)
    return r, grad


def depo_loss(model: PolicyModel, params_theta, params_ref, batch_d, batch_u,
              cfg: TrainConfig, encoder: TrajectoryEncoder,
              z0_override: float | None = None, want_grad: bool = True):
    """The preference loss over one mixed batch; returns (report, gradient).

    With alpha1 = alpha2 = 0 and the penalty disabled this is exactly the
    vanilla KTO objective. z0 defaults to the batch mean of per-trajectory
    KL values and never carries gradient; pass ``z0_override`` to freeze it
    (finite-difference checks rely on that).
    """
    batch_d, batch_u = list(batch_d), list(batch_u)
    for traj in batch_d:
        if traj.label is not Label.DESIRABLE:
            raise ContractViolation("batch_d contains a non-desirable trajectory")
    for traj in batch_u:
        if traj.label is not Label.UNDESIRABLE:
            raise ContractViolation("batch_u contains a non-undesirable trajectory")
    combined = batch_d + batch_u
    if not combined:
        raise ContractViolation("depo_loss requires a non-empty batch")

    per_traj = []
    kls = []
    for traj in combined:
        enc = encoder.encode(traj)
        lp_t = trajectory_step_logprobs(model, params_theta, enc)
        lp_r = trajectory_step_logprobs(model, params_ref, enc)
        diffs = [float(a) - float(b) for a, b in zip(lp_t, lp_r)]
        ratio = sum(diffs) / enc.num_steps
        kls.append(trajectory_kl(model, params_theta, params_ref, enc))
        per_traj.append((traj, enc, ratio))
    z0 = z0_override if z0_override is not None else sum(kls) / len(kls)

    n = len(combined)
    terms = []
    coeffs = []
    rewards_d, rewards_u, offsets = [], [], []
    for traj, enc, ratio in per_traj:
        offset = _offset(traj, cfg, encoder.vocab)
        r = ratio + offset
        offsets.append(offset)
        if traj.label is Label.DESIRABLE:
            lam, s = cfg.lambda_d, sigmoid(cfg.beta * (r - z0))
            coeff = -(lam * cfg.beta * s * (1.0 - s)) / n
            rewards_d.append(r)
        else:
            lam, s = cfg.lambda_u, sigmoid(cfg.beta * (z0 - r))
            coeff = (lam * cfg.beta * s * (1.0 - s)) / n
            rewards_u.append(r)
        terms.append(lam - lam * s)
        coeffs.append(coeff)
    loss = sum(terms) / n

    grad = None
    if want_grad:
        grad = np.zeros(model.num_params)
        for (traj, enc, _ratio), coeff in zip(per_traj, coeffs):
            scale = coeff / enc.num_steps
            for tokens, spans in enc.rows:
                data, cache = _row_span_data(model, params_theta, tokens, spans,
                                             need_cache=True)
                dlogits = np.zeros((len(tokens), model.cfg.vocab_size))
                for _idx, sl, lsm, targets, _lp in data:
                    d = -np.exp(lsm)
                    d[np.arange(len(targets)), targets] += 1.0
                    dlogits[sl] = d * scale
                grad += model.backward(params_theta, cache, dlogits)

    report = LossReport(
        loss=loss,
        mean_implied_reward_d=sum(rewards_d) / len(rewards_d) if rewards_d else 0.0,
        mean_implied_reward_u=sum(rewards_u) / len(rewards_u) if rewards_u else 0.0,
        z0=z0,
        mean_bonus=sum(offsets) / len(offsets),
        grad_norm=float(np.linalg.norm(grad)) if grad is not None else 0.0,
    )
    return report, grad


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
LOSS_KINDS = ("sft", "kto", "depo")


def train(model: PolicyModel, params_init, params_ref, dataset: LabeledDataset,
          cfg: TrainConfig, loss_kind: str, encoder: TrajectoryEncoder,
          checkpoint_dir=None):
    """Mini-batch Adam over the dataset; returns (params, per-epoch reports).

    ``kto`` is ``depo`` with both alpha coefficients forced to zero and the
    penalty disabled. Shuffling is deterministic from cfg.seed; checkpoint
    files are written per epoch when a directory is given.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
    if loss_kind == "kto":
        cfg = replace(cfg, alpha1=0.0, alpha2=0.0, penalty_enabled=False)
    if loss_kind == "sft":
        data = list(dataset.desirable)
    else:
        data = list(dataset.desirable) + list(dataset.undesirable)
        if params_ref is None:
            raise ContractViolation("preference training requires a reference policy")
    if not data:
        raise ContractViolation(f"dataset is empty for loss kind {loss_kind!r}")

    params = np.array(params_init, dtype=np.float64, copy=True)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(cfg.seed), 0x7472)))
    reports = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        batch_stats = []
        for start in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            if loss_kind == "sft":
                loss, grad = sft_loss(model, params, batch, encoder)
                report = LossReport(loss, 0.0, 0.0, 0.0, 0.0,
                                    float(np.linalg.norm(grad)))
            else:
                bd = [x for x in batch if x.label is Label.DESIRABLE]
                bu = [x for x in batch if x.label is Label.UNDESIRABLE]
                report, grad = depo_loss(model, params, params_ref, bd, bu,
                                         cfg, encoder)
                loss = report.loss
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(
                    f"non-finite loss or gradient in epoch {epoch + 1}, "
                    f"batch starting at index {start}")
            t += 1
            m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad * grad
            m_hat = m / (1 - ADAM_BETA1 ** t)
            v_hat = v / (1 - ADAM_BETA2 ** t)
            params -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            batch_stats.append((len(batch), report))
        reports.append(_aggregate(batch_stats))
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"epoch_{epoch + 1:03d}.ckpt"
            save_checkpoint(path, model.cfg, params)
    return params, reports


def _aggregate(batch_stats) -> LossReport:
    total = sum(n for n, _ in batch_stats)
    wmean = lambda get: sum(n * get(rep) for n, rep in batch_stats) / total
    return LossReport(
        loss=wmean(lambda r: r.loss),
        mean_implied_reward_d=wmean(lambda r: r.mean_implied_reward_d),
        mean_implied_reward_u=wmean(lambda r: r.mean_implied_reward_u),
        z0=wmean(lambda r: r.z0),
        mean_bonus=wmean(lambda r: r.mean_bonus),
        grad_norm=wmean(lambda r: r.grad_norm),
    )
