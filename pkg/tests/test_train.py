import math

import numpy as np
import pytest

from depo.envs import ContractViolation, EnvAction, EnvKind, make_env, make_task
from depo.labeling import LabeledDataset
from depo.policy import PolicyConfig, PolicyModel, encode_history, step_logprob
from depo.trajectory import AgentStep, Label, Trajectory
from depo.train import (TrainConfig, TrainingError, TrajectoryEncoder,
                        depo_loss, efficiency_bonus, implied_reward, kto_value,
                        penalty, sft_loss, train, trajectory_kl,
                        trajectory_step_logprobs)
from depo.vocab import default_vocab

# words with token ids below 25, safe for every sub-1k-parameter model
SMALL_WORDS = ("goal", "go", "east", "west", "see", "i", "the", "will")


class StubGrid:
    """Initial-observation provider for synthetic grid trajectories."""
    kind = EnvKind.GRID_WORLD

    def __init__(self, vocab):
        self._obs = vocab.ids("goal", "east", "here")

    def reset(self, task):
        return None, self._obs


def small_setup():
    vocab = default_vocab()
    cfg = PolicyConfig(vocab_size=32, d_model=4, n_layers=1, n_heads=2, context=48)
    model = PolicyModel(cfg)
    assert model.num_params <= 1000
    encoder = TrajectoryEncoder(model, {EnvKind.GRID_WORLD: StubGrid(vocab)}, vocab)
    return vocab, model, encoder


def small_traj(vocab, seed, label, n_steps=None, thought_lens=None, task_seed=None):
    rng = np.random.default_rng(seed)
    task = make_task("grid", int(rng.integers(500)) if task_seed is None else task_seed)
    n = n_steps if n_steps is not None else int(rng.integers(1, 5))
    dirs = ("north", "east", "south", "west")
    steps = []
    for i in range(n):
        tlen = thought_lens[i] if thought_lens else int(rng.integers(0, 5))
        thought = tuple(vocab.id(SMALL_WORDS[int(rng.integers(len(SMALL_WORDS)))])
                        for _ in range(tlen))
        action = EnvAction("move", (vocab.id(dirs[int(rng.integers(4))]),))
        obs = vocab.ids("goal", dirs[int(rng.integers(4))], "here")
        steps.append(AgentStep(thought=thought, action=action, observation=obs))
    return Trajectory(task=task, steps=tuple(steps), final_reward=1.0, label=label)


def rand_params(model, seed, scale=0.3):
    return np.random.default_rng(seed).standard_normal(model.num_params) * scale


# ---------------------------------------------------------------------------
# independent vanilla-KTO implementation (the reduction-identity oracle)
# ---------------------------------------------------------------------------

def oracle_sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def vanilla_kto_oracle(model, theta, ref, batch_d, batch_u, cfg, encoder):
    """Eqs. for vanilla KTO coded from scratch on the shared primitives."""
    combined = list(batch_d) + list(batch_u)
    kls = [trajectory_kl(model, theta, ref, encoder.encode(t)) for t in combined]
    z0 = sum(kls) / len(kls)
    terms = []
    for t in combined:
        enc = encoder.encode(t)
        lp_t = trajectory_step_logprobs(model, theta, enc)
        lp_r = trajectory_step_logprobs(model, ref, enc)
        r = sum(float(a) - float(b) for a, b in zip(lp_t, lp_r)) / enc.num_steps
        if t.label is Label.DESIRABLE:
            v = cfg.lambda_d * oracle_sigmoid(cfg.beta * (r - z0))
            terms.append(cfg.lambda_d - v)
        else:
            v = cfg.lambda_u * oracle_sigmoid(cfg.beta * (z0 - r))
            terms.append(cfg.lambda_u - v)
    return sum(terms) / len(terms)


class TestBonusAndPenalty:
    def test_paper_alpha_setting(self, vocab):
        traj = small_traj(vocab, 0, Label.DESIRABLE, n_steps=6,
                          thought_lens=[28] * 6)  # 28 thought + 2 action = 30
        assert efficiency_bonus(traj, 3.0, 3.0) == 0.6

    def test_undesirable_bonus_is_zero(self, vocab):
        traj = small_traj(vocab, 1, Label.UNDESIRABLE)
        assert efficiency_bonus(traj, 3.0, 3.0) == 0.0

    def test_zero_alphas(self, vocab):
        traj = small_traj(vocab, 2, Label.DESIRABLE)
        assert efficiency_bonus(traj, 0.0, 0.0) == 0.0

    def test_penalty_mirror(self, vocab):
        traj = small_traj(vocab, 3, Label.UNDESIRABLE, n_steps=10,
                          thought_lens=[18] * 10)  # 18 + 2 = 20 tokens per step
        assert penalty(traj, 2.0, 2.0) == pytest.approx(2 / 20 + 2 / 10, abs=0)
        assert penalty(small_traj(vocab, 4, Label.DESIRABLE), 2.0, 2.0) == 0.0

    def test_unlabeled_rejected(self, vocab):
        traj = small_traj(vocab, 5, None)
        with pytest.raises(ContractViolation):
            efficiency_bonus(traj, 1.0, 1.0)
        with pytest.raises(ContractViolation):
            penalty(traj, 1.0, 1.0)

    def test_bonus_strictly_decreasing(self, vocab):
        cfgs = [(10, 2), (20, 2), (20, 4)]
        vals = []
        for tokens_per_step, steps in cfgs:
            traj = small_traj(vocab, 6, Label.DESIRABLE, n_steps=steps,
                              thought_lens=[tokens_per_step - 2] * steps)
            vals.append(efficiency_bonus(traj, 3.0, 3.0))
        assert vals[0] > vals[1] > vals[2]


class TestKtoValue:
    CFG = TrainConfig()

    def test_midpoint(self):
        assert kto_value(1.3, 1.3, Label.DESIRABLE, self.CFG) == 0.5

    def test_saturation(self):
        assert kto_value(1e6, 0.0, Label.DESIRABLE, self.CFG) \
            == pytest.approx(1.0, abs=1e-9)

    def test_beta_point_two(self):
        assert kto_value(1.0, 0.0, Label.DESIRABLE, self.CFG) \
            == pytest.approx(0.5498, abs=1e-4)

    def test_undesirable_orientation(self):
        assert kto_value(-5.0, 0.0, Label.UNDESIRABLE, self.CFG) > 0.5


class TestSftLoss:
    def test_uniform_policy_log_vocab(self, vocab):
        cfg = PolicyConfig(vocab_size=256, d_model=8, n_layers=1, n_heads=2,
                           context=96)
        model = PolicyModel(cfg)
        env = make_env("grid", size=4, wall_density=0.0, max_steps=8)
        encoder = TrajectoryEncoder(model, {EnvKind.GRID_WORLD: env}, vocab)
        rng = np.random.default_rng(0)
        batch = [small_traj(vocab, s, Label.DESIRABLE) for s in range(4)]
        loss, grad = sft_loss(model, model.zero_params(), batch, encoder)
        assert loss == pytest.approx(math.log(256), rel=1e-12)

    def test_batch_is_token_weighted_mean(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 0)
        batch = [small_traj(vocab, s, Label.DESIRABLE) for s in range(3)]
        whole, _ = sft_loss(model, params, batch, encoder, want_grad=False)
        parts = []
        for t in batch:
            loss_i, _ = sft_loss(model, params, [t], encoder, want_grad=False)
            n_i = encoder.encode(t).num_positions
            parts.append((loss_i, n_i))
        expect = sum(l * n for l, n in parts) / sum(n for _, n in parts)
        assert whole == pytest.approx(expect, rel=1e-12)

    def test_empty_batch_rejected(self, vocab):
        _, model, encoder = small_setup()
        with pytest.raises(ContractViolation):
            sft_loss(model, model.zero_params(), [], encoder)

    def test_gradient_finite_differences(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 1)
        batch = [small_traj(vocab, s, Label.DESIRABLE) for s in range(3)]
        loss, grad = sft_loss(model, params, batch, encoder)
        rng = np.random.default_rng(2)
        h = 1e-5
        for i in rng.choice(model.num_params, size=80, replace=False):
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            lu, _ = sft_loss(model, up, batch, encoder, want_grad=False)
            ld, _ = sft_loss(model, down, batch, encoder, want_grad=False)
            assert grad[i] == pytest.approx((lu - ld) / (2 * h), rel=1e-4, abs=1e-8)


class TestTrajectoryPrimitives:
    def test_fused_matches_per_step_op(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 3)
        traj = small_traj(vocab, 10, Label.DESIRABLE, n_steps=4)
        enc = encoder.encode(traj)
        lps = trajectory_step_logprobs(model, params, enc)
        initial = encoder.initial_observation(traj.task)
        for t in range(4):
            step = traj.steps[t].thought + (vocab.eot,) \
                + traj.steps[t].action.tokens(vocab) + (vocab.eos,)
            hist = encode_history(vocab, traj.task.instruction_tokens, initial,
                                  traj.steps[:t],
                                  limit=model.cfg.context - len(step))
            direct = step_logprob(model, params, hist, step, vocab)
            assert lps[t] == pytest.approx(direct, rel=1e-10)

    def test_kl_zero_for_identical(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 4)
        enc = encoder.encode(small_traj(vocab, 11, Label.DESIRABLE))
        assert trajectory_kl(model, params, params.copy(), enc) \
            == pytest.approx(0.0, abs=1e-15)

    def test_kl_nonnegative(self, vocab):
        _, model, encoder = small_setup()
        enc = encoder.encode(small_traj(vocab, 12, Label.UNDESIRABLE))
        for seed in range(4):
            a, b = rand_params(model, seed), rand_params(model, seed + 30)
            assert trajectory_kl(model, a, b, enc) >= 0.0


class TestImpliedReward:
    def test_theta_equals_ref_gives_offset(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 5)
        traj = small_traj(vocab, 13, Label.DESIRABLE, n_steps=6,
                          thought_lens=[28] * 6)
        cfg = TrainConfig(alpha1=3.0, alpha2=3.0)
        r = implied_reward(model, params, params.copy(), traj, cfg, encoder)
        assert r == 0.6

    def test_theta_equals_ref_undesirable_zero(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 6)
        traj = small_traj(vocab, 14, Label.UNDESIRABLE)
        cfg = TrainConfig(alpha1=3.0, alpha2=3.0, penalty_enabled=False)
        assert implied_reward(model, params, params.copy(), traj, cfg, encoder) == 0.0

    def test_log_ratio_matches_per_step_recomputation(self, vocab):
        _, model, encoder = small_setup()
        theta, ref = rand_params(model, 7), rand_params(model, 8)
        traj = small_traj(vocab, 15, Label.UNDESIRABLE, n_steps=3)
        cfg = TrainConfig(alpha1=0.0, alpha2=0.0)
        got = implied_reward(model, theta, ref, traj, cfg, encoder)
        enc = encoder.encode(traj)
        lp_t = trajectory_step_logprobs(model, theta, enc)
        lp_r = trajectory_step_logprobs(model, ref, enc)
        assert got == sum(float(a) - float(b) for a, b in zip(lp_t, lp_r)) / 3

    def test_gradient_matches_fd(self, vocab):
        _, model, encoder = small_setup()
        theta, ref = rand_params(model, 9), rand_params(model, 10)
        traj = small_traj(vocab, 16, Label.DESIRABLE, n_steps=2)
        cfg = TrainConfig(alpha1=3.0, alpha2=3.0)
        r, grad = implied_reward(model, theta, ref, traj, cfg, encoder,
                                 want_grad=True)
        rng = np.random.default_rng(3)
        h = 1e-5
        for i in rng.choice(model.num_params, size=60, replace=False):
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            fd = (implied_reward(model, up, ref, traj, cfg, encoder)
                  - implied_reward(model, down, ref, traj, cfg, encoder)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def mixed_batches(vocab, n_d=3, n_u=3, seed0=20):
    batch_d = [small_traj(vocab, seed0 + i, Label.DESIRABLE) for i in range(n_d)]
    batch_u = [small_traj(vocab, seed0 + 50 + i, Label.UNDESIRABLE)
               for i in range(n_u)]
    return batch_d, batch_u


class TestDepoLoss:
    def test_reduction_identity_bit_exact(self, vocab):
        _, model, encoder = small_setup()
        cfg = TrainConfig(alpha1=0.0, alpha2=0.0, penalty_enabled=False)
        for seed in range(6):
            theta, ref = rand_params(model, seed), rand_params(model, seed + 100)
            bd, bu = mixed_batches(vocab, seed0=30 + 10 * seed)
            report, _ = depo_loss(model, theta, ref, bd, bu, cfg, encoder,
                                  want_grad=False)
            oracle = vanilla_kto_oracle(model, theta, ref, bd, bu, cfg, encoder)
            assert report.loss == oracle  # to the last unit of double precision

    def test_theta_equals_ref_all_terms_half(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 11)
        cfg = TrainConfig(alpha1=0.0, alpha2=0.0)
        bd, bu = mixed_batches(vocab, seed0=60)
        report, _ = depo_loss(model, params, params.copy(), bd, bu, cfg, encoder,
                              z0_override=0.0, want_grad=False)
        assert report.loss == pytest.approx(0.5, abs=1e-12)

    def test_efficient_desirable_has_lower_term(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 12)
        cfg = TrainConfig(alpha1=3.0, alpha2=0.0)
        lean = small_traj(vocab, 70, Label.DESIRABLE, n_steps=2,
                          thought_lens=[8, 8])   # 10 tokens per step
        heavy = small_traj(vocab, 70, Label.DESIRABLE, n_steps=2,
                           thought_lens=[38, 38])  # 40 tokens per step
        z0 = 0.3
        terms = []
        for t in (lean, heavy):
            r = implied_reward(model, params, params.copy(), t, cfg, encoder)
            terms.append(cfg.lambda_d - kto_value(r, z0, Label.DESIRABLE, cfg))
        assert terms[0] < terms[1]

    def test_loss_bounds_and_z0(self, vocab):
        _, model, encoder = small_setup()
        cfg = TrainConfig(alpha1=2.0, alpha2=2.0)
        for seed in range(4):
            theta, ref = rand_params(model, seed + 200), rand_params(model, seed + 300)
            bd, bu = mixed_batches(vocab, seed0=80 + 10 * seed)
            report, _ = depo_loss(model, theta, ref, bd, bu, cfg, encoder,
                                  want_grad=False)
            assert 0.0 < report.loss < 1.0
            assert report.z0 >= 0.0

    def test_mislabeled_batches_rejected(self, vocab):
        _, model, encoder = small_setup()
        params = rand_params(model, 13)
        bd, bu = mixed_batches(vocab)
        with pytest.raises(ContractViolation):
            depo_loss(model, params, params, bu, bd, TrainConfig(), encoder)
        with pytest.raises(ContractViolation):
            depo_loss(model, params, params, [], [], TrainConfig(), encoder)

    def test_gradient_matches_fd_multiple_alphas(self, vocab):
        _, model, encoder = small_setup()
        theta, ref = rand_params(model, 14), rand_params(model, 15)
        bd, bu = mixed_batches(vocab, n_d=2, n_u=2, seed0=120)
        rng = np.random.default_rng(4)
        h = 1e-5
        for alpha, pen in ((0.0, False), (3.0, False), (2.0, True)):
            cfg = TrainConfig(alpha1=alpha, alpha2=alpha, penalty_enabled=pen)
            report, grad = depo_loss(model, theta, ref, bd, bu, cfg, encoder)
            z0 = report.z0
            for i in rng.choice(model.num_params, size=35, replace=False):
                up, down = theta.copy(), theta.copy()
                up[i] += h
                down[i] -= h
                lu, _ = depo_loss(model, up, ref, bd, bu, cfg, encoder,
                                  z0_override=z0, want_grad=False)
                ld, _ = depo_loss(model, down, ref, bd, bu, cfg, encoder,
                                  z0_override=z0, want_grad=False)
                fd = (lu.loss - ld.loss) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestTrainLoop:
    def _dataset(self, vocab, n_d=5, n_u=4):
        bd = tuple(small_traj(vocab, 500 + i, Label.DESIRABLE) for i in range(n_d))
        bu = tuple(small_traj(vocab, 600 + i, Label.UNDESIRABLE) for i in range(n_u))
        return LabeledDataset(bd, bu, 0)

    def test_zero_learning_rate_is_noop(self, vocab):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        init = rand_params(model, 16)
        cfg = TrainConfig(learning_rate=0.0, epochs=2, batch_size=4, seed=0)
        out, reports = train(model, init, init.copy(), ds, cfg, "depo", encoder)
        assert np.array_equal(out, init)
        assert len(reports) == 2

    def test_zero_epochs_returns_init(self, vocab):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        init = rand_params(model, 17)
        cfg = TrainConfig(epochs=0)
        out, reports = train(model, init, None, ds, cfg, "sft", encoder)
        assert np.array_equal(out, init) and reports == []

    def test_seeded_determinism(self, vocab):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        init = rand_params(model, 18)
        cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=4, seed=9)
        a, ra = train(model, init, init.copy(), ds, cfg, "depo", encoder)
        b, rb = train(model, init, init.copy(), ds, cfg, "depo", encoder)
        assert np.array_equal(a, b) and ra == rb

    def test_sft_toy_memorization(self, vocab):
        _, model, encoder = small_setup()
        ds = LabeledDataset(tuple(small_traj(vocab, 700 + i, Label.DESIRABLE,
                                             n_steps=2) for i in range(5)), (), 0)
        cfg = TrainConfig(learning_rate=2e-2, epochs=200, batch_size=8, seed=1)
        params, reports = train(model, model.init_params(3), None, ds, cfg, "sft",
                                encoder)
        losses = [r.loss for r in reports]
        assert losses[-1] < 0.1 * losses[0]
        # the descent is monotone over 10-epoch means (Adam wiggles per epoch)
        blocks = [np.mean(losses[i:i + 10]) for i in range(0, len(losses), 10)]
        assert all(b <= a * 1.02 for a, b in zip(blocks, blocks[1:]))

    def test_kto_kind_equals_depo_with_zero_alpha(self, vocab):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        init = rand_params(model, 19)
        kto_cfg = TrainConfig(alpha1=5.0, alpha2=5.0, penalty_enabled=True,
                              learning_rate=1e-3, epochs=1, batch_size=4, seed=3)
        depo_cfg = TrainConfig(alpha1=0.0, alpha2=0.0, penalty_enabled=False,
                               learning_rate=1e-3, epochs=1, batch_size=4, seed=3)
        a, _ = train(model, init, init.copy(), ds, kto_cfg, "kto", encoder)
        b, _ = train(model, init, init.copy(), ds, depo_cfg, "depo", encoder)
        assert np.array_equal(a, b)

    def test_nonfinite_aborts_with_batch_named(self, vocab):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        bad = rand_params(model, 20)
        bad[model.layout["head"][0]] = np.nan  # poison a weight that is always used
        cfg = TrainConfig(learning_rate=1e-3, epochs=1, batch_size=4, seed=0)
        with pytest.raises(TrainingError, match="batch"):
            train(model, bad, bad.copy(), ds, cfg, "depo", encoder)

    def test_checkpoints_written_per_epoch(self, vocab, tmp_path):
        _, model, encoder = small_setup()
        ds = self._dataset(vocab)
        cfg = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=4, seed=0)
        train(model, rand_params(model, 21), rand_params(model, 21), ds, cfg,
              "depo", encoder, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["epoch_001.ckpt", "epoch_002.ckpt", "epoch_003.ckpt"]

    def test_empty_dataset_rejected(self, vocab):
        _, model, encoder = small_setup()
        with pytest.raises(ContractViolation):
            train(model, rand_params(model, 22), None,
                  LabeledDataset((), (), 0), TrainConfig(), "sft", encoder)
