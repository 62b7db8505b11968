"""Tests unitaires de l'environnement crawler (pytest)."""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

from dataclasses import replace

import numpy as np
import pytest

from .crawler import (
    OBS_ROLL,
    OBS_VY,
    CrawlerConfig,
    CrawlerEnv,
    CrawlerError,
    PhysicsState,
    body_energy,
    env_reset,
    env_step,
    foot_state,
    make_task,
    observe,
    preset,
    standing_state,
)


def airborne_state(config, vz=0.0, pitch_rate=0.0):
    return replace(standing_state(config), z=2.0, vz=vz, vx=0.3,
                   pitch_rate=pitch_rate)


class TestEnvReset:
    """
    Tests pour la fonction env_reset.
    """

    def test_same_seed_same_observation(self):
        """Même config et même graine : observations identiques."""
        config = preset("crawler-4")
        _, first = env_reset(config, 7)
        _, second = env_reset(config, 7)
        assert first.tobytes() == second.tobytes()

    def test_seed_changes_only_jittered_entries(self):
        """Changer la graine ne change que les angles bruités."""
        config = preset("crawler-4")
        _, first = env_reset(config, 1)
        _, second = env_reset(config, 2)
        np.testing.assert_array_equal(first[:6], second[:6])
        np.testing.assert_array_equal(first[6 + 4:], second[6 + 4:])
        assert not np.array_equal(first[6:10], second[6:10])
        assert np.all(np.abs(first[6:10]) <= 0.05)

    def test_observation_length(self):
        """m = 4 : observation de longueur 14."""
        _, obs = env_reset(preset("crawler-4"), 0)
        assert obs.shape == (14,)

    def test_body_at_origin_standing(self):
        """Corps en x = 0 à la hauteur debout."""
        config = preset("crawler-6")
        state, obs = env_reset(config, 3)
        assert state.x == 0.0
        assert obs[0] == pytest.approx(config.standing_height)
        assert state.step_index == 0


class TestEnvStep:
    """
    Tests pour la fonction env_step.
    """

    def test_free_fall(self):
        """Sans contact ni couple, vz diminue exactement de g.dt."""
        config = preset("crawler-4")
        task = make_task("walk", config)
        state = airborne_state(config, vz=0.5)
        nxt, obs, _, _ = env_step(state, np.zeros(4), config, task)
        assert nxt.vz == pytest.approx(0.5 - 9.81 * 0.01, abs=1e-15)
        assert obs[3] == nxt.vz

    def test_free_fall_trajectory(self):
        """Chute libre depuis le repos : vz = -g.t à chaque pas."""
        config = preset("crawler-2")
        task = make_task("walk", config)
        state = replace(standing_state(config), z=5.0)
        for step in range(1, 50):
            state, _, _, _ = env_step(state, np.zeros(2), config, task)
            assert state.vz == pytest.approx(-9.81 * 0.01 * step, abs=1e-9)

    @pytest.mark.parametrize("name", ["crawler-2", "crawler-8", "crawler-16"])
    def test_standing_equilibrium(self, name):
        """Debout au repos, couple nul, 100 pas : dérive en x < 1 mm."""
        config = preset(name)
        task = make_task("walk", config)
        state = standing_state(config)
        depth_limit = 3.0 * config.standing_depth
        for _ in range(100):
            state, _, _, _ = env_step(
                state, np.zeros(config.dof), config, task
            )
            assert -np.min(foot_state(config, state).z) <= depth_limit
        assert abs(state.x) < 1e-3

    @pytest.mark.parametrize("value", [1.0001, -1.5, np.nan])
    def test_action_out_of_range(self, value):
        """Une composante hors de [-1, 1] ou non finie est refusée."""
        config = preset("crawler-2")
        state, _ = env_reset(config, 0)
        with pytest.raises(CrawlerError, match="Action"):
            env_step(state, [0.0, value], config, make_task("walk", config))

    def test_action_wrong_length(self):
        """Une action de mauvaise longueur est refusée."""
        config = preset("crawler-2")
        state, _ = env_reset(config, 0)
        with pytest.raises(CrawlerError, match="composantes"):
            env_step(state, [0.0], config, make_task("walk", config))

    def test_walk_reward_is_vx_dt(self):
        """Marche : récompense = vx.dt de l'état suivant."""
        config = preset("crawler-4")
        state = airborne_state(config)
        nxt, _, reward, _ = env_step(
            state, np.zeros(4), config, make_task("walk", config)
        )
        assert reward == pytest.approx(nxt.vx * config.dt)

    def test_jump_reward_and_termination(self):
        """Saut : récompense vz.dt, arrêt au-dessus de z_terminate."""
        config = preset("crawler-4")
        task = make_task("jump", config)
        state = replace(
            standing_state(config), z=task.z_terminate + 0.1, vz=1.0
        )
        nxt, _, reward, done = env_step(state, np.zeros(4), config, task)
        assert reward == pytest.approx(nxt.vz * config.dt)
        assert done

    def test_fall_terminates(self):
        """Corps sous la hauteur de chute : épisode terminé."""
        config = preset("crawler-2")
        state = replace(standing_state(config), z=0.01)
        _, _, _, done = env_step(
            state, np.zeros(2), config, make_task("walk", config)
        )
        assert done

    def test_horizon_terminates(self):
        """Le pas d'indice horizon termine l'épisode."""
        config = replace(preset("crawler-2"), horizon=3)
        task = make_task("walk", config)
        state = standing_state(config)
        dones = []
        for _ in range(3):
            state, _, _, done = env_step(state, np.zeros(2), config, task)
            dones.append(done)
        assert dones == [False, False, True]

    def test_determinism(self):
        """(état, action) -> état suivant est une fonction pure."""
        config = preset("crawler-8")
        task = make_task("walk", config)
        state, _ = env_reset(config, 4)
        action = np.linspace(-1.0, 1.0, 8)
        first = env_step(state, action, config, task)
        second = env_step(state, action, config, task)
        assert first[0].equals(second[0])
        assert first[1].tobytes() == second[1].tobytes()

    def test_observation_consistency(self):
        """observe(état suivant) = observation retournée."""
        config = preset("crawler-6")
        task = make_task("walk", config)
        state, _ = env_reset(config, 5)
        rng = np.random.default_rng(0)
        for _ in range(20):
            state, obs, _, _ = env_step(
                state, rng.uniform(-1, 1, 6), config, task
            )
            np.testing.assert_array_equal(observe(state, config), obs)

    def test_energy_non_increasing_without_contact(self):
        """Sans contact ni couple, l'énergie du corps ne croît pas."""
        config = preset("crawler-4")
        task = make_task("walk", config)
        state = replace(airborne_state(config, vz=2.0, pitch_rate=1.5),
                        z=50.0)
        energy = body_energy(config, state)
        for _ in range(100):
            state, _, _, _ = env_step(state, np.zeros(4), config, task)
            current = body_energy(config, state)
            assert current <= energy + 1e-6
            energy = current

    def test_joint_limits_random_actions(self):
        """10^5 pas d'actions aléatoires : butées toujours respectées."""
        config = preset("crawler-8")
        env = CrawlerEnv(config, make_task("walk", config), seed=3)
        rng = np.random.default_rng(3)
        low, high = config.joint_angle_limits
        env.reset()
        for _ in range(100_000):
            result = env.step(rng.uniform(-1.0, 1.0, config.dof))
            q = env.state.q
            assert np.all(q >= low) and np.all(q <= high)
            if result.done:
                env.reset()


class TestObserve:
    """
    Tests pour la fonction observe.
    """

    def test_rest_has_zero_velocities(self):
        """Au repos, toutes les vitesses sont nulles."""
        config = preset("crawler-4")
        obs = observe(standing_state(config), config)
        assert obs[1] == obs[2] == obs[3] == 0.0
        np.testing.assert_array_equal(obs[6 + 4:], np.zeros(4))

    def test_planar_slots_are_zero(self):
        """Les canaux vy et roulis sont toujours nuls."""
        config = preset("crawler-6")
        task = make_task("walk", config)
        state, _ = env_reset(config, 2)
        rng = np.random.default_rng(2)
        for _ in range(30):
            state, obs, _, _ = env_step(
                state, rng.uniform(-1, 1, 6), config, task
            )
            assert obs[OBS_VY] == 0.0 and obs[OBS_ROLL] == 0.0

    def test_equal_states_equal_observations(self):
        """Deux états égaux donnent des observations égales."""
        config = preset("crawler-2")
        first = PhysicsState(0.1, 0.2, 0.3, 0.4, 0.05, 0.0,
                             np.array([0.1, -0.1]), np.array([1.0, 2.0]))
        second = PhysicsState(0.1, 0.2, 0.3, 0.4, 0.05, 0.0,
                              np.array([0.1, -0.1]), np.array([1.0, 2.0]))
        assert first.equals(second)
        np.testing.assert_array_equal(
            observe(first, config), observe(second, config)
        )


class TestPreset:
    """
    Tests pour la fonction preset.
    """

    @pytest.mark.parametrize("name, dof", [
        ("crawler-2", 2),
        ("crawler-4", 4),
        ("crawler-6", 6),
        ("crawler-8", 8),
        ("crawler-12", 12),
        ("crawler-16", 16),
    ])
    def test_dof_ladder(self, name, dof):
        """L'échelle de DoF {2, 4, 6, 8, 12, 16}."""
        assert preset(name).dof == dof

    def test_observation_length_sixteen(self):
        """crawler-16 : observation de longueur 38."""
        assert preset("crawler-16").obs_dim == 38
        _, obs = env_reset(preset("crawler-16"), 0)
        assert len(obs) == 38

    def test_shared_constants(self):
        """Seule la morphologie change d'un préréglage à l'autre."""
        small, large = preset("crawler-2"), preset("crawler-16")
        assert replace(large, legs=2, joints_per_leg=1) == small

    def test_unknown_preset(self):
        """Un nom inconnu est refusé."""
        with pytest.raises(CrawlerError, match="crawler-5"):
            preset("crawler-5")


class TestCrawlerEnv:
    """
    Tests pour l'environnement instrumenté.
    """

    def test_counters(self):
        """Les compteurs suivent les pas et les resets."""
        config = preset("crawler-2")
        env = CrawlerEnv(config, make_task("walk", config), seed=0)
        env.reset()
        for _ in range(5):
            env.step(np.zeros(2))
        env.reset()
        assert env.step_count == 5
        assert env.reset_count == 2

    def test_episode_seeds_differ(self):
        """Deux épisodes successifs ont des états initiaux différents."""
        config = preset("crawler-4")
        env = CrawlerEnv(config, make_task("walk", config), seed=0)
        assert not np.array_equal(env.reset(), env.reset())

    def test_step_before_reset(self):
        """step() avant reset() est refusé."""
        config = preset("crawler-2")
        env = CrawlerEnv(config, make_task("walk", config), seed=0)
        with pytest.raises(CrawlerError, match="reset"):
            env.step(np.zeros(2))

    def test_invalid_config(self):
        """Une config sans articulation est refusée."""
        with pytest.raises(CrawlerError, match="Morphologie"):
            CrawlerConfig(legs=0)
