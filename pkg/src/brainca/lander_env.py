"""Deterministic planar lander with optional wind and turbulence.

Units are the observation units directly: the pad is centered at x = 0 on
flat ground at y = 0 and the lander spawns near y = 1.4. Integration is
semi-implicit Euler (velocities first, then positions) at a fixed ``dt``.

Body frame: ``theta`` is counter-clockwise, the body "up" axis is
``(-sin theta, cos theta)`` and "right" is ``(cos theta, sin theta)``.

* MAIN accelerates along body up by ``main_accel``.
* LEFT accelerates along body right by ``side_accel`` and spins the body
  counter-clockwise by ``side_torque``; RIGHT is its mirror image.
* Wind is a horizontal acceleration ``wind_power * wind_scale * tanh(...)``
  of two incommensurate sines with seeded phases; turbulence is an angular
  acceleration of the same form scaled by ``turbulence_power * turbulence_scale``.

Rewards follow the usual potential-shaping scheme: each step pays
``shaping_t - shaping_{t-1}`` with
``shaping = -100 |pos| - 100 |vel| - 100 |theta| + 10 (left + right contact)``,
minus ``0.3`` for a MAIN step and ``0.03`` for a side-engine step, plus
``+100`` on landing and ``-100`` on a crash. The episode ends when the
lander rests on the pad with both legs down (landed), when the hull touches
the ground, a leg lands too fast, or the lander leaves the box
``|x| < 1, y < 2.5`` (crashed), or after ``max_steps`` steps (timeout).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .rng import Rng
from .topology import ACTIONS, LEFT, MAIN, NOOP, RIGHT

FLYING, LANDED, CRASHED, TIMEOUT = "flying", "landed", "crashed", "timeout"
OBS_DIM = 8
N_ACTIONS = 4

# spawn bounds, uniform: position x, velocities, angle, angular velocity
SPAWN_X = 0.3
SPAWN_Y = 1.4
SPAWN_VX = 0.3
SPAWN_VY = (-0.3, 0.0)
SPAWN_THETA = 0.1
SPAWN_OMEGA = 0.1


@dataclass(frozen=True)
class EnvConfig:
    wind_power: float = 5.0
    turbulence_power: float = 1.5
    gravity: float = 1.5
    max_steps: int = 1000
    dt: float = 0.02
    main_accel: float = 3.0
    side_accel: float = 0.5
    side_torque: float = 4.0
    wind_scale: float = 0.02
    turbulence_scale: float = 0.2
    pad_half_width: float = 0.2
    leg_dx: float = 0.08
    leg_dy: float = 0.07
    hull_dx: float = 0.06
    hull_dy: float = 0.04
    crash_speed: float = 0.6
    rest_speed: float = 0.05
    rest_spin: float = 0.05
    ground_friction: float = 0.1
    leveling: float = 20.0
    main_cost: float = 0.3
    side_cost: float = 0.03
    seed: int = 0

    def __post_init__(self):
        mags = (self.wind_power, self.turbulence_power, self.gravity, self.main_accel,
                self.side_accel, self.side_torque, self.pad_half_width)
        if min(mags) < 0 or self.max_steps < 1 or self.dt <= 0:
            raise ValueError("magnitudes must be non-negative, max_steps >= 1 and dt > 0")


@dataclass(frozen=True)
class LanderState:
    x: float
    y: float
    vx: float
    vy: float
    theta: float
    omega: float
    left_contact: bool = False
    right_contact: bool = False
    step: int = 0
    wind_phase: Tuple[float, float] = (0.0, 0.0)
    turb_phase: Tuple[float, float] = (0.0, 0.0)
    prev_shaping: Optional[float] = None
    done: bool = False

    def observation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.theta, self.omega,
                         float(self.left_contact), float(self.right_contact)])


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    outcome: str


def shaping(s: LanderState) -> float:
    return (-100.0 * math.hypot(s.x, s.y) - 100.0 * math.hypot(s.vx, s.vy)
            - 100.0 * abs(s.theta) + 10.0 * s.left_contact + 10.0 * s.right_contact)


def env_reset(cfg: EnvConfig, episode_seed: int) -> Tuple[LanderState, np.ndarray]:
    rng = Rng(episode_seed).spawn(cfg.seed)
    u = rng.uniform(10)
    s = LanderState(
        x=SPAWN_X * (2 * u[0] - 1),
        y=SPAWN_Y,
        vx=SPAWN_VX * (2 * u[1] - 1),
        vy=SPAWN_VY[0] + (SPAWN_VY[1] - SPAWN_VY[0]) * u[2],
        theta=SPAWN_THETA * (2 * u[3] - 1),
        omega=SPAWN_OMEGA * (2 * u[4] - 1),
        wind_phase=(1000.0 * u[5], 1000.0 * u[6]),
        turb_phase=(1000.0 * u[7], 1000.0 * u[8]),
    )
    s = replace(s, prev_shaping=shaping(s))
    return s, s.observation()


def _smooth(k: int, phase: Tuple[float, float]) -> float:
    return math.tanh(math.sin(0.02 * (k + phase[0])) + math.sin(math.pi * 0.01 * (k + phase[1])))


def _points(cfg: EnvConfig, x, y, theta):
    """Leg tips (left, right) and hull bottom corners in world coordinates."""
    c, s = math.cos(theta), math.sin(theta)

    def world(px, py):
        return x + c * px - s * py, y + s * px + c * py
    legs = (world(-cfg.leg_dx, -cfg.leg_dy), world(cfg.leg_dx, -cfg.leg_dy))
    hull = (world(-cfg.hull_dx, -cfg.hull_dy), world(cfg.hull_dx, -cfg.hull_dy))
    return legs, hull


def env_step(state: LanderState, action: int, cfg: EnvConfig) -> Tuple[LanderState, StepResult]:
    if state.done:
        raise RuntimeError("episode is over; call env_reset")
    if action not in (NOOP, LEFT, MAIN, RIGHT):
        raise ValueError(f"unknown action {action}")
    c, s = math.cos(state.theta), math.sin(state.theta)
    ax, ay, alpha = 0.0, -cfg.gravity, 0.0
    fuel = 0.0
    if action == MAIN:
        ax += -s * cfg.main_accel
        ay += c * cfg.main_accel
        fuel = cfg.main_cost
    elif action == LEFT:
        ax += c * cfg.side_accel
        ay += s * cfg.side_accel
        alpha += cfg.side_torque
        fuel = cfg.side_cost
    elif action == RIGHT:
        ax -= c * cfg.side_accel
        ay -= s * cfg.side_accel
        alpha -= cfg.side_torque
        fuel = cfg.side_cost
    airborne = not (state.left_contact or state.right_contact)
    if airborne and cfg.wind_power > 0:
        ax += cfg.wind_power * cfg.wind_scale * _smooth(state.step, state.wind_phase)
    if airborne and cfg.turbulence_power > 0:
        alpha += cfg.turbulence_power * cfg.turbulence_scale * _smooth(state.step, state.turb_phase)

    vx = state.vx + ax * cfg.dt
    vy = state.vy + ay * cfg.dt
    omega = state.omega + alpha * cfg.dt
    x = state.x + vx * cfg.dt
    y = state.y + vy * cfg.dt
    theta = state.theta + omega * cfg.dt

    crashed = False
    (lx, ly), (rx, ry) = _points(cfg, x, y, theta)[0]
    hull = _points(cfg, x, y, theta)[1]
    left, right = ly <= 0.0, ry <= 0.0
    if (left or right) and airborne and math.hypot(vx, vy) > cfg.crash_speed:
        # a hard touchdown keeps its velocity so the shaping term still sees it
        crashed = True
    elif left or right:
        y -= min(ly, ry)
        if vy < 0:
            vy = 0.0
        vx *= 1.0 - cfg.ground_friction
        omega = (1.0 - cfg.ground_friction) * omega - cfg.leveling * theta * cfg.dt
    if any(hy <= 0.0 for _, hy in hull) and not (left or right):
        crashed = True
    if abs(x) >= 1.0 or y >= 2.5:
        crashed = True

    new = LanderState(x, y, vx, vy, theta, omega, left, right, state.step + 1,
                      state.wind_phase, state.turb_phase, None, False)
    shp = shaping(new)
    reward = shp - state.prev_shaping - fuel
    outcome = FLYING
    at_rest = (left and right and math.hypot(vx, vy) < cfg.rest_speed
               and abs(omega) < cfg.rest_spin)
    if crashed:
        reward, outcome = reward - 100.0, CRASHED
    elif at_rest and abs(x) <= cfg.pad_half_width:
        reward, outcome = reward + 100.0, LANDED
    elif new.step >= cfg.max_steps:
        outcome = TIMEOUT
    done = outcome != FLYING
    new = replace(new, prev_shaping=shp, done=done)
    return new, StepResult(new.observation(), float(reward), done, outcome)


class LanderEnv:
    """Stateful wrapper with a reset/step interface and optional trajectory logging."""

    observation_spec = (OBS_DIM,)
    action_spec = N_ACTIONS

    def __init__(self, cfg: EnvConfig = EnvConfig(), log_path=None):
        self.cfg = cfg
        self.state: Optional[LanderState] = None
        self.log_path = log_path
        self._rows: List[list] = []

    def reset(self, episode_seed: int) -> np.ndarray:
        self.state, obs = env_reset(self.cfg, episode_seed)
        self._rows = []
        return obs

    def step(self, action: int) -> StepResult:
        self.state, res = env_step(self.state, action, self.cfg)
        if self.log_path is not None:
            self._rows.append([self.state.step, *res.observation.tolist(), action, res.reward,
                               int(res.done), res.outcome])
            if res.done:
                self.write_log()
        return res

    def write_log(self):
        with open(self.log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step"] + [f"obs{k}" for k in range(OBS_DIM)]
                       + ["action", "reward", "done", "outcome"])
            w.writerows(self._rows)


def scripted_action(obs) -> int:
    """Proportional attitude/hover controller used as a reference pilot."""
    x, y, vx, vy, theta, omega, lc, rc = obs
    angle_target = float(np.clip(0.5 * x + 1.0 * vx, -0.4, 0.4))
    hover_target = 0.55 * abs(x)
    angle_todo = (angle_target - theta) * 0.5 - omega * 1.0
    hover_todo = (hover_target - y) * 0.5 - vy * 0.5
    if lc or rc:
        angle_todo = 0.0
        hover_todo = -vy * 0.5
    if hover_todo > abs(angle_todo) and hover_todo > 0.05:
        return MAIN
    if angle_todo < -0.05:
        return RIGHT
    if angle_todo > 0.05:
        return LEFT
    return NOOP


def run_policy(cfg: EnvConfig, episode_seed: int, policy) -> Tuple[float, str, int]:
    """Total reward, outcome and length of one episode under ``policy(obs) -> action``."""
    state, obs = env_reset(cfg, episode_seed)
    total = 0.0
    while True:
        state, res = env_step(state, policy(obs), cfg)
        total += res.reward
        obs = res.observation
        if res.done:
            return total, res.outcome, state.step
