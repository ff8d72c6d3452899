import math

import numpy as np
import pytest

from qrouter.envs import ConstantReward, QuadraticBandit
from qrouter.ppo import (
    Adam,
    GaussianPolicy,
    PpoConfig,
    PpoOptimizer,
    STD_FLOOR,
    TrainingAborted,
    a2c_gradient,
    advantage,
    critic_gradient,
    critic_loss,
    load_policy,
    ppo_gradient,
    ppo_objective,
    ppo_update,
    sample_batch,
    save_policy,
    train,
)


def _random_pair(rng, d=4):
    old = GaussianPolicy(rng.normal(size=d), rng.normal(-0.5, 0.3, size=d))
    new = GaussianPolicy(old.a_mean + 0.1 * rng.normal(size=d), old.log_std + 0.1 * rng.normal(size=d))
    return new, old


def _fd_gradient(fun, mean, log_std, h=1e-6):
    x = np.concatenate([mean, log_std])
    d = len(mean)
    out = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (fun(xp[:d], xp[d:]) - fun(xm[:d], xm[d:])) / (2 * h)
    return out


def test_policy_floor_and_shapes():
    p = GaussianPolicy.create(np.zeros(3), 1e-8)
    assert np.allclose(p.a_std, STD_FLOOR)
    with pytest.raises(ValueError):
        GaussianPolicy(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        GaussianPolicy.create(np.zeros(2), -1.0)


def test_log_prob_matches_scipy():
    from scipy.stats import norm

    p = GaussianPolicy.create([0.5, -1.0], [0.3, 2.0])
    a = np.array([[0.1, 0.2], [1.0, -3.0]])
    ref = norm.logpdf(a, loc=p.a_mean, scale=p.a_std).sum(axis=1)
    assert np.allclose(p.log_prob(a), ref)


def test_sample_batch_from_old_policy():
    p = GaussianPolicy.create(np.zeros(2), 1.0)
    b = sample_batch(p, p, 5, seed=0)
    assert b.actions.shape == (5, 2)
    assert np.allclose(b.ratios, 1.0)
    far = GaussianPolicy.create(np.full(2, 100.0), 1e-3)
    b = sample_batch(p, far, 200, seed=1)
    # actions come from the old policy, so they cluster near 100
    assert np.abs(b.actions.mean(axis=0) - 100.0).max() < 1e-3


def test_advantage_and_critic():
    assert np.allclose(advantage([1.0, 0.5], 0.25), [0.75, 0.25])
    assert critic_loss([1.0, 3.0], 2.0) == 0.5
    assert critic_gradient([1.0, 3.0], 1.0) == pytest.approx(-1.0)


def test_config_validation():
    for kw in ({"eps": 0.0}, {"eps": 1.5}, {"Nb": 0}, {"lr_decay": 0.0}, {"mode": "sac"}):
        with pytest.raises(ValueError):
            PpoConfig(**kw)
    assert PpoConfig(eps=math.inf).eps == math.inf


def test_zero_advantage_leaves_actor_unchanged():
    p = GaussianPolicy.create(np.array([0.1, 0.2]), 0.5, value=0.7)
    b = sample_batch(p, p, 10, seed=0)
    new = ppo_update(p, p, b, np.full(10, 0.7), PpoConfig(eta_a=0.1))
    assert np.array_equal(new.a_mean, p.a_mean)
    assert np.array_equal(new.log_std, p.log_std)


def test_update_moves_mean_toward_better_action():
    p = GaussianPolicy.create(np.zeros(1), 1.0)
    b = sample_batch(p, p, 50, seed=3)
    rewards = b.actions[:, 0]
    new = ppo_update(p, p, b, rewards, PpoConfig(eta_a=0.1))
    assert new.a_mean[0] > 0
    assert new.value > p.value


def test_clipped_samples_carry_no_gradient():
    old = GaussianPolicy.create(np.zeros(1), 1.0)
    new = GaussianPolicy.create(np.array([2.0]), 1.0)
    # action far on the side new prefers: ratio >> 1 + eps with positive advantage
    a = np.array([[3.0]])
    assert np.exp(new.log_prob(a) - old.log_prob(a))[0] > 1.2
    g_mean, g_std = ppo_gradient(new, old, a, np.array([1.0]), 0.2)
    assert g_mean[0] == 0.0 and g_std[0] == 0.0
    # negative advantage on the same sample keeps the unclipped branch
    g_mean, _ = ppo_gradient(new, old, a, np.array([-1.0]), 0.2)
    assert g_mean[0] != 0.0


@pytest.mark.parametrize("eps", [0.2, math.inf])
def test_ppo_gradient_matches_finite_differences(eps):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        new, old = _random_pair(rng)
        actions = old.sample(10, rng)
        adv = rng.normal(size=10)

        def fun(mean, log_std):
            return ppo_objective(GaussianPolicy(mean, log_std), old, actions, adv, eps)

        fd = _fd_gradient(fun, new.a_mean, new.log_std)
        g = np.concatenate(ppo_gradient(new, old, actions, adv, eps))
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst < 1e-5


def test_a2c_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    p, _ = _random_pair(rng)
    actions = p.sample(10, rng)
    adv = rng.normal(size=10)

    def fun(mean, log_std):
        pol = GaussianPolicy(mean, log_std)
        return float(np.mean(adv * pol.log_prob(actions)))

    fd = _fd_gradient(fun, p.a_mean, p.log_std)
    g = np.concatenate(a2c_gradient(p, actions, adv))
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_unclipped_ppo_reduces_to_a2c():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p, _ = _random_pair(rng)
        actions = p.sample(10, rng)
        adv = rng.normal(size=10)
        g_ppo = np.concatenate(ppo_gradient(p, p, actions, adv, math.inf))
        g_a2c = np.concatenate(a2c_gradient(p, actions, adv))
        assert np.max(np.abs(g_ppo - g_a2c)) < 1e-10


def test_adam_first_step_is_lr_sign():
    opt = Adam(3, 0.1)
    x = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    assert np.allclose(x, [-0.1, 0.1, 0.0], atol=1e-6)


def test_adam_minimizes_quadratic():
    opt = Adam(2, 0.05)
    x = np.array([3.0, -2.0])
    for _ in range(2000):
        x = opt.step(x, 2 * x)
    assert np.abs(x).max() < 1e-3


def test_bandit_converges():
    rng = np.random.default_rng(4)
    target = rng.uniform(-1, 1, 4)
    res = train(QuadraticBandit(tuple(target)), PpoConfig(eta_a=0.01, eta_c=0.1, epochs=2000),
                GaussianPolicy.create(np.zeros(4), 0.3), seed=4)
    assert np.abs(res.a_mean - target).max() < 0.05


def test_critic_tracks_expected_reward():
    env = ConstantReward(2, mean=0.5, noise=0.05)
    res = train(env, PpoConfig(eta_a=1e-3, eta_c=0.01, epochs=1000), GaussianPolicy.create(np.zeros(2), 0.1), seed=0)
    assert abs(res.policy.value - 0.5) < 0.01


def test_training_is_reproducible(tmp_path):
    env = QuadraticBandit((0.3, -0.2))
    cfg = PpoConfig(eta_a=0.01, epochs=50, checkpoint_every=25)
    a = train(env, cfg, GaussianPolicy.create(np.zeros(2), 0.3), seed=9, log_path=tmp_path / "a.csv")
    b = train(env, cfg, GaussianPolicy.create(np.zeros(2), 0.3), seed=9, log_path=tmp_path / "b.csv")
    assert np.array_equal(a.rewards, b.rewards)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = train(env, cfg, GaussianPolicy.create(np.zeros(2), 0.3), seed=10)
    assert not np.array_equal(a.rewards, c.rewards)


def test_checkpoints_round_trip(tmp_path):
    env = QuadraticBandit((0.3, -0.2))
    res = train(env, PpoConfig(eta_a=0.01, epochs=50, checkpoint_every=25), GaussianPolicy.create(np.zeros(2), 0.3),
                seed=1, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["policy_000025.txt", "policy_000050.txt"]
    loaded = load_policy(tmp_path / "policy_000050.txt")
    assert np.array_equal(loaded.a_mean, res.policy.a_mean)
    assert np.allclose(loaded.log_std, res.policy.log_std, rtol=0, atol=1e-15)
    assert loaded.value == res.policy.value
    save_policy(loaded, tmp_path / "again.txt")
    again = load_policy(tmp_path / "again.txt")
    assert np.array_equal(again.a_mean, loaded.a_mean) and np.array_equal(again.log_std, loaded.log_std)


class _Flaky:
    dimension = 1

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def evaluate(self, action, seed):
        self.calls += 1
        if self.calls in self.failures:
            raise RuntimeError("instrument timeout")
        return 0.5, {}


def test_env_failure_retried_once():
    env = _Flaky({3})
    res = train(env, PpoConfig(epochs=5, Nb=2), GaussianPolicy.create(np.zeros(1), 0.1), seed=0)
    assert res.rewards.shape == (5, 2) and not res.aborted


def test_env_failure_twice_aborts():
    env = _Flaky({3, 4})
    with pytest.raises(TrainingAborted) as info:
        train(env, PpoConfig(epochs=5, Nb=2), GaussianPolicy.create(np.zeros(1), 0.1), seed=0)
    assert info.value.result.aborted
    assert info.value.result.rewards.shape == (1, 2)


def test_non_finite_gradient_skipped():
    p = GaussianPolicy.create(np.zeros(1), 1.0)
    opt = PpoOptimizer(p, PpoConfig(eta_a=0.1))
    b = sample_batch(p, p, 3, seed=0)
    new, applied = opt.update(b, np.array([np.inf, 0.0, 0.0]))
    assert not applied and new is p


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        train(QuadraticBandit((0.0,)), PpoConfig(epochs=1), GaussianPolicy.create(np.zeros(2), 1.0))


def test_lr_decay_applied():
    res = train(ConstantReward(1), PpoConfig(eta_a=0.01, eta_c=0.1, epochs=3, lr_decay=0.5),
                GaussianPolicy.create(np.zeros(1), 1.0))
    assert [row["lr_actor"] for row in res.log] == pytest.approx([0.01, 0.005, 0.0025])
