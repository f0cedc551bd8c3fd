"""Per-team PPO: rollout collection, GAE, clipped-surrogate updates, and the
self-play training loop.

Every agent of a team acts with the team's single parameter set, and all of
its agents' transitions are pooled into one batch, so teammates share
experience. Each team is updated only from its own batch.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .env import N_MOVES, EnvConfig, Team, WorldState, observations, reset, step
from .errors import ConfigError, NonFiniteError
from .nn import (
    AdamHyper,
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    clip,
    clip_by_global_norm,
    exp,
    log_sigmoid,
    mean,
    minimum,
    reshape,
    sigmoid,
    square,
    take_along,
    tsum,
)
from .policy import GraphConfig, ObservationBatch, PolicyParams, forward_batch, init_policy, sample_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    steps_per_iteration: int = 4096  # env steps per iteration, summed over parallel envs
    num_envs: int = 8
    epochs: int = 4
    minibatch_size: int = 256
    clip_ratio: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    lr: float = 3e-4
    checkpoint_every: int = 50
    alternate_every: int = 0  # >0: only one team learns at a time, switching every N iterations

    def validate(self) -> None:
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("must lie in (0, 1)", "ppo.clip_ratio")
        for name in ("gamma", "lam"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError("must lie in [0, 1]", f"ppo.{name}")
        for name in ("num_envs", "epochs", "minibatch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", f"ppo.{name}")
        if self.steps_per_iteration < 0 or self.steps_per_iteration % self.num_envs:
            raise ConfigError("must be a non-negative multiple of num_envs", "ppo.steps_per_iteration")
        for name in ("value_coef", "entropy_coef", "max_grad_norm", "lr", "checkpoint_every", "alternate_every"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", f"ppo.{name}")


# who drives a team

class Controller:
    """Chooses the parameters a team plays with, once per episode."""

    learn = False

    def begin_episode(self, rng: np.random.Generator):
        return 0

    def params_for(self, token) -> PolicyParams | None:
        raise NotImplementedError


class PolicyController(Controller):
    def __init__(self, params: PolicyParams, learn: bool = False):
        self.params = params
        self.learn = learn

    def params_for(self, token):
        return self.params


class RandomController(Controller):
    """Scripted agents that pick movement uniformly and shoot with fixed probability."""

    def __init__(self, shoot_prob: float = 0.5):
        self.shoot_prob = shoot_prob

    def begin_episode(self, rng):
        return None

    def params_for(self, token):
        return None


# GAE

def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Advantages by the backward recursion, reset at every done; returns = advantages + values.

    ``last_value`` bootstraps the step after the final one (ignored if that step is done).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    next_value, next_adv = float(last_value), 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


# rollouts

@dataclass
class RolloutBatch:
    team: Team
    obs: ObservationBatch
    moves: np.ndarray
    shoots: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    agent_ids: np.ndarray
    env_ids: np.ndarray
    steps: np.ndarray

    def __len__(self) -> int:
        return len(self.moves)

    @classmethod
    def empty(cls, team: Team, max_teammates: int, max_opponents: int, feature_dim: int = 6) -> "RolloutBatch":
        obs = ObservationBatch(np.zeros((0, feature_dim)), np.zeros((0, max_teammates, feature_dim)),
                               np.zeros((0, max_teammates), bool), np.zeros((0, max_opponents, feature_dim)),
                               np.zeros((0, max_opponents), bool))
        z = np.zeros(0)
        return cls(team, obs, np.zeros(0, np.int64), np.zeros(0, bool), z, z, z, np.zeros(0, bool), z, z,
                   np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass
class EpisodeStats:
    env_index: int
    seed: int
    length: int
    winner: Team
    guard_reward: float  # episode return averaged over guard agents
    attacker_reward: float
    actions: list[dict] | None = None
    end_step: int = 0

    def team_reward(self, team: Team) -> float:
        return self.guard_reward if team == Team.GUARD else self.attacker_reward


@dataclass
class _EnvSlot:
    """One environment instance with its own RNG streams and episode bookkeeping."""

    index: int
    reset_rng: np.random.Generator
    opponent_rng: np.random.Generator
    action_rng: dict
    state: WorldState | None = None
    seed: int = 0
    tokens: dict = field(default_factory=dict)
    returns: np.ndarray | None = None
    actions: list = field(default_factory=list)

    def start_episode(self, config: EnvConfig, controllers: dict) -> None:
        self.seed = int(self.reset_rng.integers(2**31 - 1))
        self.state = reset(config, self.seed)
        self.tokens = {team: controllers[team].begin_episode(self.opponent_rng) for team in (Team.GUARD, Team.ATTACKER)}
        self.returns = np.zeros(config.n_agents)
        self.actions = []


@dataclass
class _ChunkResult:
    slots: list
    rows: dict  # team -> list of transition tuples
    segments: dict  # team -> list of (row indices, bootstrap value)
    episodes: list


def _act(config: EnvConfig, team: Team, ctrl: Controller, slots: list, views_by_env: list):
    """Actions for every living agent of ``team`` in ``slots``.

    Rows sharing parameters go through one batched forward pass; sampling
    then draws from each environment's own stream, in agent order.
    """
    rows = [(k, i) for k, views in enumerate(views_by_env) for i in config.team_ids(team) if i in views]
    n = len(rows)
    moves = np.zeros(n, np.int64)
    shoots = np.zeros(n, bool)
    logps = np.zeros(n)
    values = np.zeros(n)
    groups: dict = {}
    for r, (k, _) in enumerate(rows):
        groups.setdefault(slots[k].tokens[team], []).append(r)
    for token, members in groups.items():
        idx = np.array(members)
        params = ctrl.params_for(token)
        if params is None:
            for k in sorted({rows[r][0] for r in members}):
                sel = idx[[rows[r][0] == k for r in members]]
                rng = slots[k].action_rng[team]
                moves[sel] = rng.integers(N_MOVES, size=len(sel))
                shoots[sel] = rng.random(len(sel)) < ctrl.shoot_prob
            continue
        sub = ObservationBatch.from_views([views_by_env[rows[r][0]][rows[r][1]] for r in members],
                                          config.team_size(team) - 1, config.team_size(team.opponent))
        out = forward_batch(params, sub)
        values[idx] = out.value.data
        env_of = np.array([rows[r][0] for r in members])
        for k in sorted(set(env_of)):
            pos = np.flatnonzero(env_of == k)
            m, s, lp = sample_batch(out.move_logp.data[pos], out.shoot_logit.data[pos], slots[k].action_rng[team])
            moves[idx[pos]], shoots[idx[pos]], logps[idx[pos]] = m, s, lp
    return rows, moves, shoots, logps, values


def _run_chunk(config: EnvConfig, slots: list, controllers: dict, n_steps: int, step0: int,
               record_actions: bool) -> _ChunkResult:
    """Step a group of environments ``n_steps`` times in lockstep."""
    for slot in slots:
        if slot.state is None:
            slot.start_episode(config, controllers)
    learning = [t for t in (Team.GUARD, Team.ATTACKER) if controllers[t].learn]
    rows = {t: [] for t in learning}
    open_segs = {t: {} for t in learning}
    closed = {t: [] for t in learning}
    episodes = []
    guards = list(config.team_ids(Team.GUARD))
    attackers = list(config.team_ids(Team.ATTACKER))

    for n in range(n_steps):
        views_by_env = [observations(config, s.state) for s in slots]
        acted = {team: _act(config, team, controllers[team], slots, views_by_env) for team in (Team.GUARD, Team.ATTACKER)}
        actions = [dict() for _ in slots]
        for team in (Team.GUARD, Team.ATTACKER):
            r_rows, moves, shoots, _, _ = acted[team]
            for r, (k, i) in enumerate(r_rows):
                actions[k][i] = (int(moves[r]), bool(shoots[r]))
        outcomes = [step(config, s.state, a) for s, a in zip(slots, actions)]

        for team in learning:
            r_rows, moves, shoots, logps, values = acted[team]
            for r, (k, i) in enumerate(r_rows):
                out = outcomes[k]
                done = out.done or not out.state.alive[i]
                key = (slots[k].index, i)
                open_segs[team].setdefault(key, []).append(len(rows[team]))
                rows[team].append((views_by_env[k][i], int(moves[r]), bool(shoots[r]), logps[r], values[r],
                                   out.rewards[i], done, i, slots[k].index, step0 + n))
                if done:
                    closed[team].append((open_segs[team].pop(key), 0.0))

        for k, (slot, out) in enumerate(zip(slots, outcomes)):
            slot.returns += out.rewards
            if record_actions:
                slot.actions.append(actions[k])
            slot.state = out.state
            if out.done:
                episodes.append(EpisodeStats(
                    slot.index, slot.seed, out.state.t, out.winner,
                    float(slot.returns[guards].mean()), float(slot.returns[attackers].mean()),
                    slot.actions if record_actions else None, step0 + n))
                slot.start_episode(config, controllers)

    # bootstrap segments cut off by the end of collection from the current state's value
    for team in learning:
        keys = sorted(open_segs[team])
        if not keys:
            continue
        by_index = {s.index: s for s in slots}
        views = [observations(config, by_index[e].state)[i] for e, i in keys]
        batch = ObservationBatch.from_views(views, config.team_size(team) - 1, config.team_size(team.opponent))
        boot = forward_batch(controllers[team].params_for(0), batch).value.data
        for key, v in zip(keys, boot):
            closed[team].append((open_segs[team].pop(key), float(v)))
    return _ChunkResult(slots, rows, closed, episodes)


class RolloutCollector:
    """Steps ``num_envs`` environments in lockstep, persisting them across calls.

    Episodes auto-reset; each reset draws a fresh spawn seed and lets every
    controller pick its parameters for the new episode. Each environment owns
    its RNG streams. With ``workers > 1`` contiguous groups of environments
    are stepped in separate processes against a read-only copy of the
    controllers and merged back in worker order, so a given (seed, workers)
    pair is deterministic.
    """

    def __init__(self, env_config: EnvConfig, num_envs: int, seed, record_actions: bool = False,
                 workers: int = 1, gamma: float = 0.99, lam: float = 0.95):
        env_config.validate()
        if num_envs < 1:
            raise ConfigError("must be >= 1", "num_envs")
        if workers < 1:
            raise ConfigError("must be >= 1", "workers")
        self.config = env_config
        self.num_envs = num_envs
        self.record_actions = record_actions
        self.workers = min(workers, num_envs)
        self.gamma, self.lam = gamma, lam
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.slots = []
        for e, child in enumerate(ss.spawn(num_envs)):
            reset_ss, opp_ss, g_ss, a_ss = child.spawn(4)
            self.slots.append(_EnvSlot(e, np.random.default_rng(reset_ss), np.random.default_rng(opp_ss),
                                       {Team.GUARD: np.random.default_rng(g_ss),
                                        Team.ATTACKER: np.random.default_rng(a_ss)}))
        self.total_steps = 0

    @property
    def states(self) -> list[WorldState | None]:
        return [s.state for s in self.slots]

    def collect(self, controllers: dict[Team, Controller], steps: int):
        """Run ``steps`` env steps in total (split evenly over the envs).

        Returns ``(batches, episodes)``: a RolloutBatch for every learning
        team and the stats of every episode that finished, ordered by
        finishing step then environment.
        """
        if steps < 0 or steps % self.num_envs:
            raise ConfigError("must be a non-negative multiple of num_envs", "steps")
        per_env = steps // self.num_envs
        step0 = self.total_steps // self.num_envs
        bounds = np.linspace(0, self.num_envs, self.workers + 1).astype(int)
        chunks = [self.slots[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        args = (self.config, controllers, per_env, step0, self.record_actions)
        if self.workers == 1:
            results = [_run_chunk(args[0], chunks[0], *args[1:])]
        else:
            with ProcessPoolExecutor(self.workers) as pool:
                futures = [pool.submit(_run_chunk, args[0], c, *args[1:]) for c in chunks]
                results = [f.result() for f in futures]
        self.slots = [s for res in results for s in res.slots]
        self.total_steps += steps

        episodes = sorted((ep for res in results for ep in res.episodes), key=lambda ep: (ep.end_step, ep.env_index))
        batches = {}
        for team in (Team.GUARD, Team.ATTACKER):
            if not controllers[team].learn:
                continue
            rows, segments, offset = [], [], 0
            for res in results:
                rows += res.rows[team]
                segments += [(np.asarray(idx, np.int64) + offset, v) for idx, v in res.segments[team]]
                offset = len(rows)
            # canonical (step, env, agent) order, independent of the worker split
            order = sorted(range(len(rows)), key=lambda r: (rows[r][9], rows[r][8], rows[r][7]))
            where = np.empty(len(rows), np.int64)
            where[order] = np.arange(len(rows))
            rows = [rows[r] for r in order]
            segments = [(where[idx], v) for idx, v in segments]
            batches[team] = self._finish(team, rows, segments)
        return batches, episodes

    def _finish(self, team: Team, rows: list, segments: list) -> RolloutBatch:
        cfg = self.config
        Tm, Om = cfg.team_size(team) - 1, cfg.team_size(team.opponent)
        if not rows:
            return RolloutBatch.empty(team, Tm, Om)
        n = len(rows)
        rewards = np.array([r[5] for r in rows])
        values = np.array([r[4] for r in rows])
        dones = np.array([r[6] for r in rows])
        adv = np.zeros(n)
        ret = np.zeros(n)
        for idx, last_value in segments:
            adv[idx], ret[idx] = compute_gae(rewards[idx], values[idx], dones[idx], self.gamma, self.lam, last_value)
        return RolloutBatch(
            team, ObservationBatch.from_views([r[0] for r in rows], Tm, Om),
            np.array([r[1] for r in rows], np.int64), np.array([r[2] for r in rows], bool),
            np.array([r[3] for r in rows]), values, rewards, dones, adv, ret,
            np.array([r[7] for r in rows], np.int64), np.array([r[8] for r in rows], np.int64),
            np.array([r[9] for r in rows], np.int64))


def collect_rollouts(env_config: EnvConfig, guard, attacker, steps: int, seed, num_envs: int = 1,
                     gamma: float = 0.99, lam: float = 0.95, record_actions: bool = False, workers: int = 1):
    """One-shot collection from fresh environments.

    ``guard``/``attacker`` are Controllers or PolicyParams (treated as learning
    policies so their transitions are returned). Returns (guard batch,
    attacker batch, episode stats); a batch is None for a team that is not
    learning.
    """
    controllers = {Team.GUARD: _as_controller(guard), Team.ATTACKER: _as_controller(attacker)}
    col = RolloutCollector(env_config, num_envs, seed, record_actions, workers, gamma, lam)
    batches, episodes = col.collect(controllers, steps)
    return batches.get(Team.GUARD), batches.get(Team.ATTACKER), episodes



def _as_controller(x) -> Controller:
    if isinstance(x, Controller):
        return x
    if isinstance(x, PolicyParams):
        return PolicyController(x, learn=True)
    if x is None:
        return RandomController()
    raise TypeError(f"cannot drive a team with {type(x).__name__}")


# update

@dataclass
class TrainStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    updates: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def clipped_surrogate(log_probs: Tensor, old_log_probs, advantages, clip_ratio: float) -> Tensor:
    """Mean over the batch of min(r*A, clip(r, 1-eps, 1+eps)*A), r = exp(new - old)."""
    ratio = exp(log_probs - old_log_probs)
    return mean(minimum(ratio * advantages, clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages))


def policy_terms(params: PolicyParams, obs: ObservationBatch, moves, shoots):
    """(joint log-prob of the taken actions, per-row entropy, value) as tensors."""
    out = forward_batch(params, obs)
    B = len(obs)
    lp_move = reshape(take_along(out.move_logp, np.asarray(moves)[:, None]), (B,))
    sign = np.where(np.asarray(shoots, bool), 1.0, -1.0)
    lp_shoot = log_sigmoid(out.shoot_logit * sign)
    move_ent = -tsum(exp(out.move_logp) * out.move_logp, axis=-1)
    p = sigmoid(out.shoot_logit)
    shoot_ent = -(p * log_sigmoid(out.shoot_logit) + (1.0 - p) * log_sigmoid(-out.shoot_logit))
    return lp_move + lp_shoot, move_ent + shoot_ent, out.value


def ppo_loss(params: PolicyParams, obs, moves, shoots, old_log_probs, advantages, returns,
             config: PPOConfig):
    logp, ent, value = policy_terms(params, obs, moves, shoots)
    surrogate = clipped_surrogate(logp, old_log_probs, advantages, config.clip_ratio)
    v_loss = mean(square(value - returns))
    entropy = mean(ent)
    loss = -surrogate + config.value_coef * v_loss - config.entropy_coef * entropy
    return loss, {"policy_loss": -surrogate.item(), "value_loss": v_loss.item(), "entropy": entropy.item(),
                  "log_probs": logp.data}


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean() if len(adv) else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(params: PolicyParams, batch: RolloutBatch, config: PPOConfig,
               opt_state: AdamState | None = None, rng: np.random.Generator | None = None):
    """Epochs of minibatch PPO on one team's batch.

    Returns (new params, new optimizer state, TrainStats). The input params
    are not modified.
    """
    opt_state = opt_state or AdamState.zeros_like(params.arrays())
    rng = rng or np.random.default_rng(0)
    hyper = AdamHyper(lr=config.lr)
    stats = TrainStats()
    n = len(batch)
    if n == 0:
        return params, opt_state, stats
    sums = dict(policy_loss=0.0, value_loss=0.0, entropy=0.0, clip_fraction=0.0, approx_kl=0.0, grad_norm=0.0)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            adv = normalize_advantages(batch.advantages[idx])
            try:
                with Tape() as tape:
                    loss, info = ppo_loss(params, batch.obs.take(idx), batch.moves[idx], batch.shoots[idx],
                                          batch.log_probs[idx], adv, batch.returns[idx], config)
                grads = backward(tape, loss, params.parameters())
            except NonFiniteError as exc:
                raise NonFiniteError(f"{batch.team.name.lower()} update aborted at epoch {epoch}, "
                                     f"minibatch offset {start}: {exc}") from exc
            grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
            new_arrays, opt_state = adam_step(params.arrays(), grads, opt_state, hyper)
            params = params.with_arrays(new_arrays)
            log_ratio = info["log_probs"] - batch.log_probs[idx]
            sums["policy_loss"] += info["policy_loss"]
            sums["value_loss"] += info["value_loss"]
            sums["entropy"] += info["entropy"]
            sums["clip_fraction"] += float(np.mean(np.abs(np.exp(log_ratio) - 1.0) > config.clip_ratio))
            sums["approx_kl"] += float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio))
            sums["grad_norm"] += norm
            stats.updates += 1
    for k, v in sums.items():
        setattr(stats, k, v / stats.updates)
    return params, opt_state, stats


class TeamLearner:
    """A team's trainable parameters plus optimizer state and update RNG."""

    def __init__(self, params: PolicyParams, seed):
        self.params = params
        self.opt_state = AdamState.zeros_like(params.arrays())
        self.rng = np.random.default_rng(seed)

    def update(self, batch: RolloutBatch, config: PPOConfig) -> TrainStats:
        self.params, self.opt_state, stats = ppo_update(self.params, batch, config, self.opt_state, self.rng)
        return stats


# training loop

@dataclass
class CurvePoint:
    iteration: int
    team: Team
    mean_episode_reward: float
    win_rate: float
    episodes: int
    env_steps: int

    def row(self) -> str:
        return (f"{self.iteration}\t{self.team.name.lower()}\t{self.mean_episode_reward!r}\t"
                f"{self.win_rate!r}\t{self.episodes}\t{self.env_steps}")


CURVE_HEADER = "iteration\tteam\tmean_episode_reward\twin_rate\tepisodes\tenv_steps"


@dataclass
class IterationResult:
    iteration: int
    curve: list[CurvePoint]
    stats: dict[Team, TrainStats]
    params: dict[Team, PolicyParams]
    episodes: list[EpisodeStats] = field(default_factory=list)


def curve_points(iteration: int, episodes: Sequence[EpisodeStats], env_steps: int) -> list[CurvePoint]:
    pts = []
    for team in (Team.GUARD, Team.ATTACKER):
        if episodes:
            reward = float(np.mean([ep.team_reward(team) for ep in episodes]))
            wins = float(np.mean([ep.winner == team for ep in episodes]))
        else:
            reward = wins = math.nan
        pts.append(CurvePoint(iteration, team, reward, wins, len(episodes), env_steps))
    return pts


def train_iter(env_config: EnvConfig, ppo_config: PPOConfig, graph_config: GraphConfig,
               iterations: int, seed: int, *, guard=None, attacker=None,
               workers: int = 1) -> Iterator[IterationResult]:
    """Alternate rollout collection and per-team PPO updates.

    ``guard``/``attacker`` choose how each team is driven: None trains a
    freshly initialized policy, a PolicyParams trains starting from those
    weights, and a Controller plays without learning.
    """
    env_config.validate()
    ppo_config.validate()
    graph_config.validate()
    ss = np.random.SeedSequence(seed)
    col_ss, init_g, init_a, upd_g, upd_a = ss.spawn(5)
    learners: dict[Team, TeamLearner] = {}
    controllers: dict[Team, Controller] = {}
    for team, spec, init_ss, upd_ss in ((Team.GUARD, guard, init_g, upd_g), (Team.ATTACKER, attacker, init_a, upd_a)):
        if isinstance(spec, Controller):
            controllers[team] = spec
            continue
        params = init_policy(graph_config, np.random.default_rng(init_ss)) if spec is None else spec.copy()
        learners[team] = TeamLearner(params, upd_ss)
        controllers[team] = PolicyController(learners[team].params, learn=True)

    collector = RolloutCollector(env_config, ppo_config.num_envs, col_ss, workers=workers,
                                 gamma=ppo_config.gamma, lam=ppo_config.lam)
    for it in range(1, iterations + 1):
        active = set(learners)
        if ppo_config.alternate_every and len(learners) == 2:
            phase = ((it - 1) // ppo_config.alternate_every) % 2
            active = {Team.GUARD if phase == 0 else Team.ATTACKER}
        for team, learner in learners.items():
            controllers[team].params = learner.params
            controllers[team].learn = True
        batches, episodes = collector.collect(controllers, ppo_config.steps_per_iteration)
        stats = {}
        for team in (Team.GUARD, Team.ATTACKER):
            if team in active and team in batches:
                stats[team] = learners[team].update(batches[team], ppo_config)
        pts = curve_points(it, episodes, collector.total_steps)
        log.info("iter %d: guard %.3f attacker %.3f (%d episodes)", it, pts[0].mean_episode_reward,
                 pts[1].mean_episode_reward, len(episodes))
        yield IterationResult(it, pts, stats, {t: l.params for t, l in learners.items()}, episodes)


@dataclass
class TrainResult:
    curve: list[CurvePoint]
    params: dict[Team, PolicyParams]
    stats: list[dict[Team, TrainStats]]


def train(env_config: EnvConfig, ppo_config: PPOConfig, graph_config: GraphConfig,
          iterations: int, seed: int, **kwargs) -> TrainResult:
    curve, stats, params = [], [], {}
    for res in train_iter(env_config, ppo_config, graph_config, iterations, seed, **kwargs):
        curve += res.curve
        stats.append(res.stats)
        params = res.params
    return TrainResult(curve, params, stats)


def write_curve(points: Sequence[CurvePoint], path) -> None:
    with open(path, "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for p in points:
            fh.write(p.row() + "\n")


def read_curve(path) -> list[CurvePoint]:
    points = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CURVE_HEADER:
            raise ConfigError("unexpected curve header", str(path))
        for line in fh:
            it, team, reward, win, eps, steps = line.rstrip("\n").split("\t")
            points.append(CurvePoint(int(it), Team.parse(team), float(reward), float(win), int(eps), int(steps)))
    return points


def team_curve(points: Sequence[CurvePoint], team: Team) -> np.ndarray:
    return np.array([p.mean_episode_reward for p in points if p.team == team])
