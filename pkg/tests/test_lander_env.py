import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from brainca.lander_env import (CRASHED, FLYING, LANDED, SPAWN_OMEGA, SPAWN_THETA, SPAWN_VX,
                                SPAWN_VY, SPAWN_X, SPAWN_Y, TIMEOUT, EnvConfig, LanderEnv,
                                LanderState, env_reset, env_step, run_policy, scripted_action)
from brainca.topology import LEFT, MAIN, NOOP, RIGHT

CALM = EnvConfig(wind_power=0.0, turbulence_power=0.0)


def rollout(cfg, seed, actions):
    state, obs = env_reset(cfg, seed)
    out = [obs]
    for a in actions:
        if state.done:
            break
        state, res = env_step(state, a, cfg)
        out.append(res.observation)
    return np.array(out)


class TestReset:
    def test_deterministic(self):
        assert np.array_equal(env_reset(EnvConfig(), 7)[1], env_reset(EnvConfig(), 7)[1])

    def test_contacts_clear(self):
        assert env_reset(EnvConfig(), 3)[1][6:].tolist() == [0.0, 0.0]

    def test_spawn_bounds(self):
        obs = np.array([env_reset(EnvConfig(), s)[1] for s in range(1000)])
        assert np.all(np.abs(obs[:, 0]) <= SPAWN_X) and np.all(obs[:, 1] == SPAWN_Y)
        assert np.all(np.abs(obs[:, 2]) <= SPAWN_VX)
        assert np.all((obs[:, 3] >= SPAWN_VY[0]) & (obs[:, 3] <= SPAWN_VY[1]))
        assert np.all(np.abs(obs[:, 4]) <= SPAWN_THETA) and np.all(np.abs(obs[:, 5]) <= SPAWN_OMEGA)
        assert obs[:, 0].std() > 0.1


class TestDynamics:
    def test_free_fall(self):
        state, _ = env_reset(CALM, 0)
        new, res = env_step(state, NOOP, CALM)
        assert new.vy == state.vy - CALM.gravity * CALM.dt
        assert new.vx == state.vx and res.outcome == FLYING

    def test_main_engine_pushes_up(self):
        state = replace(env_reset(CALM, 0)[0], theta=0.0, omega=0.0)
        new, res = env_step(state, MAIN, CALM)
        assert new.vy - state.vy == pytest.approx((CALM.main_accel - CALM.gravity) * CALM.dt)

    @pytest.mark.parametrize("action, sign", [(LEFT, 1), (RIGHT, -1)])
    def test_side_engines(self, action, sign):
        state = replace(env_reset(CALM, 0)[0], theta=0.0, omega=0.0, vx=0.0)
        new, _ = env_step(state, action, CALM)
        assert np.sign(new.vx) == sign and np.sign(new.omega) == sign

    def test_calm_is_bit_identical(self):
        actions = [MAIN, NOOP, LEFT, RIGHT] * 60
        assert np.array_equal(rollout(CALM, 5, actions), rollout(CALM, 5, actions))

    def test_wind_is_seeded_and_bounded(self):
        cfg = EnvConfig()
        a, b = rollout(cfg, 5, [NOOP] * 50), rollout(cfg, 5, [NOOP] * 50)
        assert np.array_equal(a, b)
        dvx = np.diff(a[:, 2])
        assert np.all(np.abs(dvx) <= cfg.wind_power * cfg.wind_scale * cfg.dt + 1e-15)
        assert not np.array_equal(a, rollout(CALM, 5, [NOOP] * 50))

    def test_mirror_symmetry(self):
        state, _ = env_reset(CALM, 11)
        mirror = replace(state, x=-state.x, vx=-state.vx, theta=-state.theta, omega=-state.omega,
                         prev_shaping=state.prev_shaping)
        swap = {NOOP: NOOP, MAIN: MAIN, LEFT: RIGHT, RIGHT: LEFT}
        seq = [MAIN, MAIN, LEFT, NOOP, RIGHT, RIGHT, MAIN] * 40
        for a in seq:
            if state.done:
                break
            state, r1 = env_step(state, a, CALM)
            mirror, r2 = env_step(mirror, swap[a], CALM)
            o1, o2 = r1.observation, r2.observation
            assert np.array_equal(o2, [-o1[0], o1[1], -o1[2], o1[3], -o1[4], -o1[5], o1[7], o1[6]])
            assert r1.reward == r2.reward and r1.outcome == r2.outcome

    def test_step_after_done(self):
        state = replace(env_reset(CALM, 0)[0], done=True)
        with pytest.raises(RuntimeError):
            env_step(state, NOOP, CALM)

    def test_unknown_action(self):
        with pytest.raises(ValueError):
            env_step(env_reset(CALM, 0)[0], 4, CALM)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            EnvConfig(max_steps=0)


class TestEpisodes:
    def test_timeout_bounds_length(self):
        cfg = replace(CALM, max_steps=20)
        total, outcome, steps = run_policy(cfg, 0, lambda o: MAIN if o[3] < 0 else NOOP)
        assert outcome == TIMEOUT and steps == 20

    def test_free_fall_crashes(self):
        total, outcome, steps = run_policy(CALM, 0, lambda o: NOOP)
        assert outcome == CRASHED and steps < CALM.max_steps

    def test_scripted_controller_lands(self):
        results = [run_policy(CALM, s, scripted_action) for s in range(10)]
        good = sum(out == LANDED and r > 200 for r, out, _ in results)
        assert good >= 8

    def test_landing_beats_crash(self):
        landed = run_policy(CALM, 1, scripted_action)[0]
        crashed = run_policy(CALM, 1, lambda o: NOOP)[0]
        assert landed - crashed > 250

    def test_rewards_finite(self):
        state, _ = env_reset(EnvConfig(), 2)
        while not state.done:
            state, res = env_step(state, scripted_action(res.observation if state.step else state.observation()),
                                  EnvConfig())
            assert math.isfinite(res.reward) and abs(res.reward) < 200


class TestWrapper:
    def test_log(self, tmp_path):
        path = tmp_path / "traj.csv"
        env = LanderEnv(CALM, log_path=path)
        obs = env.reset(4)
        res = env.step(scripted_action(obs))
        while not res.done:
            res = env.step(scripted_action(res.observation))
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["step"] + [f"obs{k}" for k in range(8)] + ["action", "reward", "done", "outcome"]
        assert rows[-1][-1] == LANDED and rows[-1][-2] == "1" and len(rows) - 1 == env.state.step

    def test_specs(self):
        assert LanderEnv.observation_spec == (8,) and LanderEnv.action_spec == 4
