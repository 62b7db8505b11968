"""Tests unitaires de l'agent PPO (pytest)."""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import io
import math
from dataclasses import replace

import numpy as np
import pytest

from ..crawler.crawler import CrawlerEnv, make_task, preset
from ..myutils import FormatError
from .ppo import (
    LOG_STD_FLOOR,
    PolicyValuePair,
    PpoConfig,
    PpoError,
    RolloutBuffer,
    compute_gae,
    evaluate_policy,
    evaluate_random,
    gaussian_log_prob,
    normalize_advantages,
    ppo_update,
    read_agent,
    record_trace,
    sample_action,
    surrogate_gradients,
    train,
    write_agent,
)


def replace_horizon(config, horizon):
    return replace(config, horizon=horizon)


def make_agent(obs_dim=10, act_dim=2, seed=0):
    return PolicyValuePair.create(
        obs_dim, act_dim, np.random.default_rng(seed)
    )


def filled_buffer(rewards, values, dones, truncated=None):
    buffer = RolloutBuffer()
    truncated = truncated or [False] * len(rewards)
    for r, v, d, t in zip(rewards, values, dones, truncated):
        buffer.add(np.zeros(2), np.zeros(1), 0.0, r, v, d, t)
    return buffer


def brute_force_gae(rewards, values, ends, last_value, gamma, lam):
    """Somme directe des deltas actualisés jusqu'à la fin d'épisode."""
    n = len(rewards)
    next_values = list(values[1:]) + [last_value]
    deltas = [
        rewards[t] + gamma * next_values[t] * (0.0 if ends[t] else 1.0)
        - values[t]
        for t in range(n)
    ]
    advantages = []
    for t in range(n):
        total, weight = 0.0, 1.0
        for k in range(t, n):
            total += weight * deltas[k]
            if ends[k]:
                break
            weight *= gamma * lam
        advantages.append(total)
    return np.array(advantages)


def random_batch(agent, n, seed):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, agent.obs_dim))
    samples = [sample_action(agent, o, rng) for o in obs]
    raw = np.array([s.raw for s in samples])
    log_probs = np.array([s.log_prob for s in samples])
    advantages = normalize_advantages(rng.normal(size=n))
    return obs, raw, log_probs, advantages


class TestSampleAction:
    """
    Tests pour la fonction sample_action.
    """

    def test_deterministic_is_clamped_mean(self):
        """Mode déterministe : action = moyenne écrêtée."""
        agent = make_agent()
        agent.log_std = np.full(2, LOG_STD_FLOOR)
        obs = np.linspace(-1.0, 1.0, 10)
        sample = sample_action(
            agent, obs, np.random.default_rng(0), deterministic=True
        )
        np.testing.assert_array_equal(
            sample.action, np.clip(agent.mean_action(obs), -1.0, 1.0)
        )

    def test_reproducible(self):
        """Même graine : même suite d'actions."""
        agent = make_agent()
        obs = np.ones(10)
        first_rng, second_rng = (np.random.default_rng(5) for _ in range(2))
        for _ in range(5):
            first = sample_action(agent, obs, first_rng)
            second = sample_action(agent, obs, second_rng)
            assert first.action.tobytes() == second.action.tobytes()

    def test_log_prob_matches_density(self):
        """log_prob = log-densité gaussienne calculée indépendamment."""
        agent = make_agent()
        obs = np.linspace(0.0, 1.0, 10)
        sample = sample_action(agent, obs, np.random.default_rng(1))
        mean = agent.mean_action(obs)
        expected = 0.0
        for u, mu, log_sigma in zip(sample.raw, mean, agent.log_std):
            sigma = math.exp(log_sigma)
            density = math.exp(-0.5 * ((u - mu) / sigma) ** 2) / (
                sigma * math.sqrt(2.0 * math.pi)
            )
            expected += math.log(density)
        assert sample.log_prob == pytest.approx(expected, abs=1e-10)

    def test_action_in_range(self):
        agent = make_agent()
        agent.log_std = np.full(2, math.log(5.0))
        rng = np.random.default_rng(2)
        for _ in range(50):
            sample = sample_action(agent, np.zeros(10), rng)
            assert np.all(np.abs(sample.action) <= 1.0)

    def test_non_finite_observation(self):
        obs = np.zeros(10)
        obs[0] = np.nan
        with pytest.raises(PpoError, match="non finie"):
            sample_action(make_agent(), obs, np.random.default_rng(0))

    def test_wrong_observation_size(self):
        with pytest.raises(PpoError, match="attendus"):
            sample_action(make_agent(), np.zeros(9), np.random.default_rng(0))


class TestComputeGae:
    """
    Tests pour la fonction compute_gae.
    """

    def test_telescoping(self):
        """lambda = gamma = 1, fin terminale : A_t = somme des r - V(s_t)."""
        rewards = [1.0, 2.0, -0.5, 3.0]
        values = [0.3, -0.2, 0.7, 1.1]
        buffer = filled_buffer(rewards, values, [False, False, False, True])
        compute_gae(buffer, 99.0, PpoConfig(gamma=1.0, gae_lambda=1.0))
        expected = [sum(rewards[t:]) - values[t] for t in range(4)]
        np.testing.assert_allclose(buffer.advantages, expected, atol=1e-12)
        np.testing.assert_allclose(
            buffer.returns, np.array(expected) + values, atol=1e-12
        )

    @pytest.mark.parametrize("done", [True, False])
    def test_one_step(self, done):
        """Un pas : A_0 = r_0 + gamma V(s_1)(1 - done) - V(s_0)."""
        buffer = filled_buffer([0.5], [0.2], [done])
        compute_gae(buffer, 0.8, PpoConfig(gamma=0.9))
        expected = 0.5 + 0.9 * 0.8 * (0.0 if done else 1.0) - 0.2
        assert buffer.advantages[0] == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("gamma", [0.9, 0.99])
    @pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
    def test_brute_force(self, gamma, lam):
        """Séquence aléatoire de 50 pas : égale à la somme directe."""
        rng = np.random.default_rng(7)
        rewards = rng.normal(size=50)
        values = rng.normal(size=50)
        dones = rng.random(50) < 0.1
        buffer = filled_buffer(list(rewards), list(values), list(dones))
        compute_gae(buffer, 0.37, PpoConfig(gamma=gamma, gae_lambda=lam))
        expected = brute_force_gae(rewards, values, dones, 0.37, gamma, lam)
        np.testing.assert_allclose(
            buffer.advantages, expected, atol=1e-10, rtol=0
        )

    def test_truncated_step_not_bootstrapped(self):
        """Un pas tronqué termine l'épisode sans amorçage."""
        buffer = filled_buffer(
            [1.0, 1.0], [0.5, 0.5], [False, True], [True, False]
        )
        compute_gae(buffer, 10.0, PpoConfig(gamma=1.0, gae_lambda=1.0))
        assert buffer.advantages[0] == pytest.approx(0.5)


class TestNormalizeAdvantages:
    def test_mean_zero_std_one(self):
        """Moyenne nulle et écart-type unitaire après normalisation."""
        advantages = np.random.default_rng(0).normal(3.0, 7.0, size=257)
        normalized = normalize_advantages(advantages)
        assert abs(normalized.mean()) < 1e-9
        assert normalized.std() == pytest.approx(1.0, abs=1e-6)

    def test_constant_batch(self):
        np.testing.assert_array_equal(
            normalize_advantages(np.full(4, 2.5)), np.zeros(4)
        )


class TestSurrogateGradients:
    """
    Tests pour le surrogat écrêté et ses gradients.
    """

    def test_ratio_one_equals_policy_gradient(self):
        """Paramètres inchangés : gradient écrêté = gradient simple."""
        agent = make_agent()
        obs, raw, log_probs, advantages = random_batch(agent, 64, 0)
        config = PpoConfig()
        clipped = surrogate_gradients(
            agent, obs, raw, log_probs, advantages, config
        )
        plain = surrogate_gradients(
            agent, obs, raw, log_probs, advantages, config, clip=False
        )
        for a, b in zip(clipped.policy.arrays(), plain.policy.arrays()):
            np.testing.assert_allclose(a, b, atol=1e-8, rtol=0)
        np.testing.assert_allclose(
            clipped.log_std, plain.log_std, atol=1e-8, rtol=0
        )
        assert clipped.loss == plain.loss
        assert not clipped.clipped.any()

    def test_clip_plateau(self):
        """A > 0 et rho > 1 + eps : contribution nulle."""
        agent = make_agent()
        obs, raw, log_probs, _ = random_batch(agent, 1, 1)
        grads = surrogate_gradients(
            agent, obs, raw, log_probs - 0.5, np.array([1.0]), PpoConfig()
        )
        for array in grads.policy.arrays():
            assert not array.any()
        assert not grads.log_std.any()
        assert grads.clipped.all()

    def test_finite_differences(self):
        """Gradients analytiques = différences finies (ratio dans l'intervalle)."""
        agent = make_agent()
        obs, raw, log_probs, advantages = random_batch(agent, 16, 2)
        offsets = np.random.default_rng(3).uniform(-0.05, 0.05, size=16)
        old = log_probs + offsets
        config = PpoConfig(entropy_coef=0.01)
        grads = surrogate_gradients(agent, obs, raw, old, advantages, config)

        def loss_with(log_std=None, bias=None):
            policy_net = agent.policy_net
            if bias is not None:
                params = policy_net.parameters()
                params[-1] = bias
                policy_net = policy_net.with_parameters(params)
            other = PolicyValuePair(
                policy_net,
                agent.log_std if log_std is None else log_std,
                agent.value_net,
            )
            return surrogate_gradients(
                other, obs, raw, old, advantages, config
            ).loss

        step = 1e-6
        for j in range(2):
            shift = np.zeros(2)
            shift[j] = step
            numeric = (
                loss_with(log_std=agent.log_std + shift)
                - loss_with(log_std=agent.log_std - shift)
            ) / (2 * step)
            assert grads.log_std[j] == pytest.approx(numeric, rel=1e-5,
                                                     abs=1e-8)
            bias = agent.policy_net.biases[-1]
            numeric = (
                loss_with(bias=bias + shift) - loss_with(bias=bias - shift)
            ) / (2 * step)
            assert grads.policy.biases[-1][j] == pytest.approx(
                numeric, rel=1e-5, abs=1e-8
            )


class TestPpoUpdate:
    """
    Tests pour la fonction ppo_update.
    """

    def collect(self, agent, n=200, seed=0):
        config = preset("crawler-2")
        env = CrawlerEnv(config, make_task("walk", config), seed)
        rng = np.random.default_rng(seed)
        buffer = RolloutBuffer()
        obs = env.reset()
        for _ in range(n):
            sample = sample_action(agent, obs, rng)
            result = env.step(sample.action)
            buffer.add(obs, sample.raw, sample.log_prob, result.reward,
                       float(agent.value(obs)), result.done)
            obs = env.reset() if result.done else result.obs
        return compute_gae(buffer, float(agent.value(obs)), PpoConfig())

    def test_stored_log_probs_consistent(self):
        """Log-probabilités stockées = recalcul avec les mêmes paramètres."""
        agent = make_agent()
        buffer = self.collect(agent)
        recomputed = gaussian_log_prob(
            buffer.actions,
            agent.mean_action(buffer.observations),
            agent.log_std,
        )
        np.testing.assert_allclose(
            recomputed, buffer.log_probs, atol=1e-10, rtol=0
        )

    def test_statistics(self):
        """Statistiques finies, fraction écrêtée dans [0, 1]."""
        agent = make_agent()
        buffer = self.collect(agent)
        stats = ppo_update(
            agent, buffer, PpoConfig(epochs_per_update=3),
            np.random.default_rng(0),
        )
        assert 0.0 <= stats.clip_fraction <= 1.0
        assert np.isfinite(stats.policy_loss)
        assert np.isfinite(stats.value_loss)
        assert np.all(agent.log_std >= LOG_STD_FLOOR)

    def test_parameters_change(self):
        agent = make_agent()
        before = agent.copy()
        ppo_update(agent, self.collect(agent), PpoConfig(epochs_per_update=1),
                   np.random.default_rng(0))
        assert not np.array_equal(
            before.policy_net.weights[0], agent.policy_net.weights[0]
        )
        assert not np.array_equal(
            before.value_net.weights[0], agent.value_net.weights[0]
        )

    def test_missing_advantages(self):
        buffer = filled_buffer([1.0], [0.0], [True])
        with pytest.raises(PpoError, match="avantages"):
            ppo_update(make_agent(2, 1), buffer, PpoConfig(),
                       np.random.default_rng(0))


class TestPpoConfig:
    @pytest.mark.parametrize("kwargs", [
        {"gamma": 0.0},
        {"gamma": 1.5},
        {"gae_lambda": -0.1},
        {"clip_eps": 0.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(PpoError):
            PpoConfig(**kwargs)


class TestTrain:
    """
    Tests pour la fonction train.
    """

    SMALL = PpoConfig(
        rollout_batch=128,
        minibatch_size=32,
        epochs_per_update=2,
        total_step_budget=300,
    )

    def test_zero_budget(self):
        """Budget nul : agent inchangé, aucun pas."""
        config = preset("crawler-2")
        env = CrawlerEnv(config, make_task("walk", config), seed=0)
        agent = make_agent()
        before = agent.copy()
        result = train(agent, env, PpoConfig(total_step_budget=0), seed=0)
        assert result.curve == []
        assert env.step_count == 0
        for a, b in zip(before.policy_net.parameters(),
                        result.agent.policy_net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_exact_budget(self):
        """Le budget de pas est consommé exactement."""
        config = replace_horizon(preset("crawler-2"), 50)
        env = CrawlerEnv(config, make_task("walk", config), seed=0)
        train(make_agent(), env, self.SMALL, seed=0)
        assert env.step_count == 300

    def test_same_seed_same_curve(self):
        """Même graine : même courbe d'apprentissage."""
        config = replace_horizon(preset("crawler-2"), 50)
        curves = []
        for _ in range(2):
            env = CrawlerEnv(config, make_task("walk", config), seed=1)
            curves.append(train(make_agent(), env, self.SMALL, seed=1).curve)
        assert curves[0] == curves[1]
        steps = [p.steps for p in curves[0]]
        assert steps and steps == sorted(steps) and steps[-1] <= 300

    @pytest.mark.slow
    def test_learns_to_walk(self):
        """crawler-2, 200k pas réels : au moins 5 fois le hasard."""
        config = preset("crawler-2")
        task = make_task("walk", config)
        env = CrawlerEnv(config, task, seed=0)
        agent = make_agent()
        train(agent, env, PpoConfig(total_step_budget=200_000), seed=0)
        trained = evaluate_policy(agent, config, task, seed=123)
        random = evaluate_random(config, task, seed=123)
        assert trained.mean_return >= 5.0 * abs(random.mean_return)


class TestEvaluate:
    """
    Tests pour evaluate_policy et evaluate_random.
    """

    def test_repeatable(self):
        """Politique et resets déterministes : résultats identiques."""
        config = preset("crawler-2")
        task = make_task("walk", config)
        agent = make_agent()
        first = evaluate_policy(agent, config, task, n_episodes=3, seed=4)
        second = evaluate_policy(agent, config, task, n_episodes=3, seed=4)
        assert first == second
        assert len(first.returns) == 3
        assert first.mean_return == pytest.approx(np.mean(first.returns))

    def test_random_finite(self):
        config = preset("crawler-2")
        result = evaluate_random(config, make_task("walk", config),
                                 n_episodes=2, seed=0)
        assert np.isfinite(result.mean_return)

    def test_invalid_episode_count(self):
        config = preset("crawler-2")
        with pytest.raises(PpoError):
            evaluate_policy(make_agent(), config, make_task("walk", config),
                            n_episodes=0)


class TestRecordTrace:
    def test_zero_action_trace(self):
        """Sans politique, le corps reste à peu près sur place."""
        config = replace_horizon(preset("crawler-2"), 40)
        trace = record_trace(None, config, make_task("walk", config))
        assert len(trace.x) == len(trace.z) == 41
        assert np.max(np.abs(trace.x)) < 0.05

    def test_agent_trace_deterministic(self):
        config = replace_horizon(preset("crawler-2"), 40)
        task = make_task("walk", config)
        agent = make_agent()
        first = record_trace(agent, config, task, seed=2)
        second = record_trace(agent, config, task, seed=2)
        np.testing.assert_array_equal(first.z, second.z)


class TestAgentFile:
    """
    Tests pour le format "SMPG".
    """

    def test_rewrite_identical(self):
        """Un agent relu se réécrit à l'identique."""
        first = io.BytesIO()
        write_agent(first, make_agent(14, 4))
        first.seek(0)
        agent = read_agent(first)
        assert agent.act_dim == 4
        second = io.BytesIO()
        write_agent(second, agent)
        assert first.getvalue() == second.getvalue()
        assert first.getvalue()[:4] == b"SMPG"

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            read_agent(io.BytesIO(b"SDNN" + bytes(20)))
