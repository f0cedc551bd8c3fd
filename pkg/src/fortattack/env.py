"""The FortAttack world: guards defend a fort at the top of the arena,
attackers spawn at the bottom and try to reach it. Every agent can fire a
laser that kills opponents inside its beam sector.

The world is a value (`WorldState`); `reset` and `step` are pure functions of
their arguments, so a (config, seed, action sequence) triple always yields
the same trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError


class Team(IntEnum):
    GUARD = 0
    ATTACKER = 1

    @property
    def opponent(self) -> "Team":
        return Team(1 - self)

    @classmethod
    def parse(cls, value) -> "Team":
        if isinstance(value, Team):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown team {value!r}", "team") from None


class Action(IntEnum):
    ACCEL_POS_X = 0
    ACCEL_NEG_X = 1
    ACCEL_POS_Y = 2
    ACCEL_NEG_Y = 3
    ROTATE_CW = 4
    ROTATE_CCW = 5
    NOOP = 6


N_MOVES = len(Action)
FEATURE_DIM = 6  # x, y, cos(heading), sin(heading), vx, vy (velocity scaled by max speed)

_ACCEL_DIRS = np.array(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [0, 0], [0, 0], [0, 0]], dtype=np.float64
)


@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, p) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


@dataclass(frozen=True)
class RewardConfig:
    """One signed magnitude per reward event.

    Only the signs and the guard/attacker wasted-shot ordering are fixed;
    the magnitudes are tuning defaults.
    """

    leave_fort: float = -0.2
    return_fort: float = 0.2
    approach_fort: float = 0.5  # per unit of distance gained toward the fort
    hit_bonus: float = 1.0
    hit_penalty: float = -1.0
    wasted_shot_guard: float = -0.1
    wasted_shot_attacker: float = -0.3
    all_dead_guard: float = 10.0
    all_dead_attacker: float = -10.0
    fort_reached_guard: float = -10.0
    fort_reached_attacker: float = 10.0

    def validate(self) -> None:
        positive = ("return_fort", "approach_fort", "hit_bonus", "all_dead_guard", "fort_reached_attacker")
        negative = ("leave_fort", "hit_penalty", "wasted_shot_guard", "wasted_shot_attacker",
                    "all_dead_attacker", "fort_reached_guard")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", f"rewards.{name}")
        for name in negative:
            if not getattr(self, name) < 0:
                raise ConfigError("must be negative", f"rewards.{name}")
        if not abs(self.wasted_shot_attacker) > abs(self.wasted_shot_guard):
            raise ConfigError("attacker wasted-shot penalty must exceed the guard's in magnitude",
                              "rewards.wasted_shot_attacker")


@dataclass(frozen=True)
class EnvConfig:
    n_guards: int = 5
    n_attackers: int = 5
    arena_half_extent: float = 1.0
    fort_center: tuple[float, float] = (0.0, 1.0)
    fort_radius: float = 0.15
    guard_zone_radius: float = 0.6
    laser_range: float = 0.6
    laser_half_angle: float = 0.2
    accel: float = 0.01
    rotation_step: float = math.pi / 12
    damping: float = 0.1
    max_speed: float = 0.05
    agent_radius: float = 0.04
    max_steps: int = 100
    guard_spawn: Box = Box(-0.35, 0.35, 0.55, 0.8)
    attacker_spawn: Box = Box(-0.9, 0.9, -0.95, -0.7)
    seed: int = 0
    rewards: RewardConfig = field(default_factory=RewardConfig)

    @property
    def n_agents(self) -> int:
        return self.n_guards + self.n_attackers

    def team_of(self, agent_id: int) -> Team:
        return Team.GUARD if agent_id < self.n_guards else Team.ATTACKER

    def team_ids(self, team: Team) -> range:
        if team == Team.GUARD:
            return range(self.n_guards)
        return range(self.n_guards, self.n_agents)

    def team_size(self, team: Team) -> int:
        return self.n_guards if team == Team.GUARD else self.n_attackers

    def validate(self) -> None:
        for name in ("n_guards", "n_attackers", "max_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", name)
        for name in ("arena_half_extent", "fort_radius", "guard_zone_radius", "laser_range",
                     "laser_half_angle", "accel", "rotation_step", "max_speed", "agent_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        if not 0 <= self.damping < 1:
            raise ConfigError("must lie in [0, 1)", "damping")
        if self.laser_half_angle > math.pi:
            raise ConfigError("must be at most pi", "laser_half_angle")
        if self.guard_zone_radius <= self.fort_radius:
            raise ConfigError("guard zone must be larger than the fort", "guard_zone_radius")
        L = self.arena_half_extent
        for name in ("guard_spawn", "attacker_spawn"):
            b = getattr(self, name)
            if not (-L <= b.xmin < b.xmax <= L and -L <= b.ymin < b.ymax <= L):
                raise ConfigError("spawn box must be non-empty and inside the arena", name)
        self.rewards.validate()


@dataclass(frozen=True)
class AgentState:
    id: int
    team: Team
    position: np.ndarray
    orientation: float
    velocity: np.ndarray
    alive: bool


@dataclass(frozen=True)
class WorldState:
    position: np.ndarray  # (N, 2)
    orientation: np.ndarray  # (N,)
    velocity: np.ndarray  # (N, 2)
    alive: np.ndarray  # (N,) bool
    team: np.ndarray  # (N,) int
    t: int = 0
    done: bool = False
    winner: Team | None = None

    @property
    def n_agents(self) -> int:
        return len(self.alive)

    def agent(self, i: int) -> AgentState:
        return AgentState(i, Team(int(self.team[i])), self.position[i].copy(),
                          float(self.orientation[i]), self.velocity[i].copy(), bool(self.alive[i]))

    def alive_ids(self, team: Team | None = None) -> list[int]:
        mask = self.alive if team is None else self.alive & (self.team == team)
        return [int(i) for i in np.flatnonzero(mask)]

    def equals(self, other: "WorldState") -> bool:
        """Bit-level equality of every field."""
        return (
            self.t == other.t and self.done == other.done and self.winner == other.winner
            and all(getattr(self, f).tobytes() == getattr(other, f).tobytes()
                    for f in ("position", "orientation", "velocity", "alive", "team"))
        )


class Event(NamedTuple):
    t: int
    kind: str
    actor: int
    target: int = -1


SHOT_HIT = "shot_hit"
SHOT_MISS = "shot_miss"
LEAVE_FORT = "leave_fort"
RETURN_FORT = "return_fort"
FORT_REACHED = "fort_reached"
ALL_ATTACKERS_DEAD = "all_attackers_dead"
EVENT_KINDS = (SHOT_HIT, SHOT_MISS, LEAVE_FORT, RETURN_FORT, FORT_REACHED, ALL_ATTACKERS_DEAD)


@dataclass
class ObservationView:
    agent_id: int
    team: Team
    self_features: np.ndarray  # (F,)
    teammates: np.ndarray  # (k, F)
    opponents: np.ndarray  # (m, F)
    teammate_ids: list[int]
    opponent_ids: list[int]


@dataclass
class StepOutcome:
    state: WorldState
    rewards: np.ndarray
    events: list[Event]
    config: EnvConfig

    @property
    def done(self) -> bool:
        return self.state.done

    @property
    def winner(self) -> Team | None:
        return self.state.winner

    @property
    def observations(self) -> dict[int, ObservationView]:
        return observations(self.config, self.state)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _in_beam(dx, dy, heading, config: EnvConfig):
    dist = np.hypot(dx, dy)
    rel = wrap_angle(np.arctan2(dy, dx) - heading)
    return (dist <= config.laser_range) & ((dist == 0) | (np.abs(rel) <= config.laser_half_angle))


def laser_hit_test(shooter: AgentState, target: AgentState, config: EnvConfig) -> bool:
    """Would a shot from ``shooter`` kill ``target`` right now?"""
    if not target.alive or target.team == shooter.team:
        return False
    d = target.position - shooter.position
    return bool(_in_beam(d[0], d[1], shooter.orientation, config))


def _spawn(box: Box, n: int, min_sep: float, rng: np.random.Generator, name: str) -> np.ndarray:
    if n * min_sep * min_sep > 0.5 * box.area:
        raise ConfigError(f"cannot place {n} agents {min_sep} apart", name)
    pts: list[np.ndarray] = []
    for _ in range(n):
        for _attempt in range(1000):
            p = np.array([rng.uniform(box.xmin, box.xmax), rng.uniform(box.ymin, box.ymax)])
            if all(np.hypot(*(p - q)) >= min_sep for q in pts):
                pts.append(p)
                break
        else:
            raise ConfigError(f"no room for {n} agents", name)
    return np.array(pts).reshape(n, 2)


def reset(config: EnvConfig, seed: int | None = None) -> WorldState:
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    sep = 2 * config.agent_radius
    guards = _spawn(config.guard_spawn, config.n_guards, sep, rng, "guard_spawn")
    attackers = _spawn(config.attacker_spawn, config.n_attackers, sep, rng, "attacker_spawn")
    n = config.n_agents
    team = np.array([Team.GUARD] * config.n_guards + [Team.ATTACKER] * config.n_attackers, dtype=np.int64)
    return WorldState(
        position=np.concatenate([guards, attackers]),
        orientation=np.where(team == Team.GUARD, -np.pi / 2, np.pi / 2).astype(np.float64),
        velocity=np.zeros((n, 2)),
        alive=np.ones(n, dtype=bool),
        team=team,
    )


def _normalize_actions(state: WorldState, actions: Mapping[int, Sequence]) -> tuple[np.ndarray, np.ndarray]:
    n = state.n_agents
    move = np.full(n, Action.NOOP, dtype=np.int64)
    shoot = np.zeros(n, dtype=bool)
    for i, act in actions.items():
        i = int(i)
        if not 0 <= i < n:
            raise ContractError(f"unknown agent id {i}")
        if not state.alive[i]:
            raise ContractError(f"action supplied for dead agent {i}")
        m, s = (act, False) if isinstance(act, (int, np.integer)) else act
        if not 0 <= int(m) < N_MOVES:
            raise ContractError(f"agent {i}: movement action {m} out of range")
        move[i] = int(m)
        shoot[i] = bool(s)
    missing = [i for i in state.alive_ids() if i not in actions]
    if missing:
        raise ContractError(f"no action for alive agents {missing}")
    return move, shoot


def step(config: EnvConfig, state: WorldState, actions: Mapping[int, Sequence]) -> StepOutcome:
    """Advance the world one tick.

    ``actions`` maps every alive agent id to ``(movement, shoot)``.
    Movement is integrated first, then all lasers fire simultaneously against
    the agents alive at the start of the tick, then terminal checks run.
    """
    if state.done:
        raise ContractError("episode is over; call reset")
    move, shoot = _normalize_actions(state, actions)
    alive = state.alive
    t = state.t

    # physics: heading, damped velocity with speed cap, clamped position
    ori = state.orientation.copy()
    rot = np.where(move == Action.ROTATE_CW, -config.rotation_step,
                   np.where(move == Action.ROTATE_CCW, config.rotation_step, 0.0))
    ori[alive] = wrap_angle(ori[alive] + rot[alive])
    vel = state.velocity.copy()
    acc = _ACCEL_DIRS[move] * config.accel
    vel[alive] = (1.0 - config.damping) * vel[alive] + acc[alive]
    speed = np.hypot(vel[:, 0], vel[:, 1])
    fast = alive & (speed > config.max_speed)
    vel[fast] *= (config.max_speed / speed[fast])[:, None]
    pos = state.position.copy()
    pos[alive] += vel[alive]
    L = config.arena_half_extent
    clamped = (np.abs(pos) > L) & alive[:, None]
    pos = np.clip(pos, -L, L)
    vel[clamped] = 0.0

    # lasers
    events: list[Event] = []
    killed = np.zeros_like(alive)
    for i in np.flatnonzero(alive & shoot):
        targets = alive & (state.team != state.team[i])
        d = pos - pos[i]
        hit = targets & _in_beam(d[:, 0], d[:, 1], ori[i], config)
        if hit.any():
            for j in np.flatnonzero(hit):
                events.append(Event(t, SHOT_HIT, int(i), int(j)))
            killed |= hit
        else:
            events.append(Event(t, SHOT_MISS, int(i)))
    alive_next = alive & ~killed

    # guard zone membership
    fort = np.asarray(config.fort_center)
    guard_alive = alive & (state.team == Team.GUARD)
    was_in = np.hypot(*(state.position - fort).T) <= config.guard_zone_radius
    now_in = np.hypot(*(pos - fort).T) <= config.guard_zone_radius
    for i in np.flatnonzero(guard_alive & was_in & ~now_in):
        events.append(Event(t, LEAVE_FORT, int(i)))
    for i in np.flatnonzero(guard_alive & ~was_in & now_in):
        events.append(Event(t, RETURN_FORT, int(i)))

    # terminal checks
    attackers_next = alive_next & (state.team == Team.ATTACKER)
    in_fort = attackers_next & (np.hypot(*(pos - fort).T) <= config.fort_radius)
    winner = None
    if in_fort.any():
        for j in np.flatnonzero(in_fort):
            events.append(Event(t, FORT_REACHED, int(j)))
        winner = Team.ATTACKER
    elif not attackers_next.any():
        events.append(Event(t, ALL_ATTACKERS_DEAD, -1))
        winner = Team.GUARD
    elif t + 1 >= config.max_steps:
        winner = Team.GUARD

    nxt = WorldState(pos, ori, vel, alive_next, state.team, t + 1, winner is not None, winner)
    rewards = compute_rewards(events, state, nxt, config.rewards, config)
    return StepOutcome(nxt, rewards, events, config)


def compute_rewards(events: Sequence[Event], prev: WorldState, nxt: WorldState,
                    rc: RewardConfig, config: EnvConfig) -> np.ndarray:
    """Per-agent reward for one transition; every event contributes additively."""
    r = np.zeros(prev.n_agents)
    fort = np.asarray(config.fort_center)
    attackers = prev.alive & (prev.team == Team.ATTACKER)
    d_prev = np.hypot(*(prev.position - fort).T)
    d_next = np.hypot(*(nxt.position - fort).T)
    r[attackers] += rc.approach_fort * (d_prev - d_next)[attackers]

    guards_alive_next = nxt.alive & (nxt.team == Team.GUARD)
    fort_penalized = False
    for ev in events:
        if ev.kind == SHOT_HIT:
            r[ev.actor] += rc.hit_bonus
            r[ev.target] += rc.hit_penalty
        elif ev.kind == SHOT_MISS:
            is_guard = prev.team[ev.actor] == Team.GUARD
            r[ev.actor] += rc.wasted_shot_guard if is_guard else rc.wasted_shot_attacker
        elif ev.kind == LEAVE_FORT:
            r[ev.actor] += rc.leave_fort
        elif ev.kind == RETURN_FORT:
            r[ev.actor] += rc.return_fort
        elif ev.kind == ALL_ATTACKERS_DEAD:
            r[guards_alive_next] += rc.all_dead_guard
            r[attackers & ~nxt.alive] += rc.all_dead_attacker
        elif ev.kind == FORT_REACHED:
            r[ev.actor] += rc.fort_reached_attacker
            if not fort_penalized:
                r[guards_alive_next] += rc.fort_reached_guard
                fort_penalized = True
        else:
            raise ContractError(f"unknown event kind {ev.kind!r}")
    return r


def agent_features(config: EnvConfig, state: WorldState) -> np.ndarray:
    """(N, FEATURE_DIM) feature rows for every agent."""
    return np.column_stack([
        state.position,
        np.cos(state.orientation),
        np.sin(state.orientation),
        state.velocity / config.max_speed,
    ])


def _view(config: EnvConfig, state: WorldState, i: int, feats: np.ndarray) -> ObservationView:
    team = Team(int(state.team[i]))
    mates = [j for j in state.alive_ids(team) if j != i]
    opps = state.alive_ids(team.opponent)
    return ObservationView(i, team, feats[i], feats[mates], feats[opps], mates, opps)


def observation_of(config: EnvConfig, state: WorldState, agent_id: int) -> ObservationView:
    """What a living agent sees: itself plus every living teammate and opponent."""
    if not state.alive[agent_id]:
        raise ContractError(f"agent {agent_id} is dead")
    return _view(config, state, agent_id, agent_features(config, state))


def observations(config: EnvConfig, state: WorldState) -> dict[int, ObservationView]:
    feats = agent_features(config, state)
    return {i: _view(config, state, i, feats) for i in state.alive_ids()}


def with_state(state: WorldState, **changes) -> WorldState:
    """Copy of ``state`` with fields replaced (arrays copied)."""
    base = {f: getattr(state, f).copy() for f in ("position", "orientation", "velocity", "alive", "team")}
    base.update(changes)
    return replace(state, **base)
