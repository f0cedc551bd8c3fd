"""Strategy snapshots, opponent libraries, ensemble training, and matchup evaluation."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .env import FEATURE_DIM, N_MOVES, EnvConfig, Team, observations, step
from .errors import ConfigError
from .policy import GraphConfig, PolicyParams
from .ppo import (
    Controller,
    IterationResult,
    PolicyController,
    PPOConfig,
    RandomController,
    TrainResult,
    _act,
    _EnvSlot,
    train_iter,
)
from .replay import smooth_curve


# extrema

def _extrema_at(s: np.ndarray, window: int, indices) -> list[int]:
    found = []
    n = len(s)
    for i in indices:
        if i <= 0 or i >= n - 1:
            continue
        left = s[max(0, i - window):i]
        right = s[i + 1:i + 1 + window]
        if left.max() < s[i] and right.max() <= s[i] and right.min() < s[i]:
            found.append(i)
        elif left.min() > s[i] and right.min() >= s[i] and right.max() > s[i]:
            found.append(i)
    return found


def _fill_gaps(curve) -> np.ndarray:
    """Carry the last finite value over NaN entries (iterations with no finished episode)."""
    v = np.array(curve, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(v))
    if finite.size == 0:
        return np.zeros_like(v)
    idx = np.maximum.accumulate(np.where(np.isfinite(v), np.arange(len(v)), finite[0]))
    return v[idx]


def detect_extrema(curve, sigma: float, window: int) -> list[int]:
    """Interior local maxima and minima of the Gaussian-smoothed curve.

    Index i is a maximum when it beats every point up to ``window`` steps to
    its left, is not beaten on its right, and something on its right is
    strictly lower (so plateaus report their first point, and monotone
    stretches report nothing). Minima mirror this.
    """
    values = _fill_gaps(curve)
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(values) <= window:
        raise ValueError(f"curve of length {len(values)} is not longer than window {window}")
    s = smooth_curve(values, sigma)
    return _extrema_at(s, window, range(1, len(s) - 1))


class SnapshotTracker:
    """Online snapshot schedule: every ``every`` iterations plus reward extrema.

    An extremum at iteration i can only be confirmed once the smoothed value
    of every point in its window has stopped changing, so parameters are held
    for that long. Fed a whole curve, it selects exactly what
    ``detect_extrema`` reports on that curve.
    """

    def __init__(self, sigma: float, window: int, every: int = 50):
        self.sigma, self.window, self.every = sigma, window, every
        self.delay = window + max(1, math.ceil(4 * sigma))
        self.rewards: list[float] = []
        self.pending: dict[int, object] = {}
        self.checked = 0

    def feed(self, reward: float, params) -> list[tuple[int, str, object]]:
        """Record one iteration; returns (index, reason, params) to snapshot now."""
        i = len(self.rewards)
        self.rewards.append(reward)
        self.pending[i] = params
        out = []
        if self.every and (i + 1) % self.every == 0:
            out.append((i, "scheduled", params))
        ready = len(self.rewards) - 1 - self.delay
        out += self._confirm(range(self.checked, ready + 1))
        return out

    def finish(self) -> list[tuple[int, str, object]]:
        return self._confirm(range(self.checked, len(self.rewards)))

    def _confirm(self, indices) -> list[tuple[int, str, object]]:
        indices = list(indices)
        if not indices:
            return []
        out = []
        vals = _fill_gaps(self.rewards)
        if len(vals) > self.window:
            s = smooth_curve(vals, self.sigma)
            out = [(i, "extremum", self.pending[i]) for i in _extrema_at(s, self.window, indices)]
        self.checked = indices[-1] + 1
        keep_from = self.checked - self.window - 1
        self.pending = {k: v for k, v in self.pending.items() if k >= keep_from}
        return out


# snapshots and libraries

@dataclass
class StrategySnapshot:
    team: Team
    checkpoint: str
    iteration: int = 0
    mean_reward: float = math.nan
    label: str = ""
    params: PolicyParams | None = field(default=None, repr=False, compare=False)

    def load(self) -> PolicyParams:
        if self.params is None:
            params, meta = PolicyParams.load(self.checkpoint)
            team = meta.get("team")
            if team is not None and Team.parse(team) != self.team:
                raise ConfigError(f"checkpoint {self.checkpoint} holds a {team} policy, listed as {self.team.name.lower()}",
                                  "library.team")
            self.params = params
        return self.params


class OpponentLibrary:
    """Frozen snapshots of one team with normalized sampling weights (uniform by default)."""

    def __init__(self, snapshots: Sequence[StrategySnapshot], weights: Sequence[float] | None = None):
        if not snapshots:
            raise ConfigError("opponent library is empty", "library.snapshots")
        teams = {s.team for s in snapshots}
        if len(teams) != 1:
            raise ConfigError("all snapshots must belong to one team", "library.team")
        self.snapshots = list(snapshots)
        self.team = teams.pop()
        w = np.ones(len(snapshots)) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (len(snapshots),) or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ConfigError("weights must be non-negative with a positive sum, one per snapshot", "library.weight")
        self.weights = w / w.sum()

    def __len__(self) -> int:
        return len(self.snapshots)

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.snapshots), p=self.weights))

    def params(self) -> list[PolicyParams]:
        return [s.load() for s in self.snapshots]

    @classmethod
    def from_manifest(cls, path) -> "OpponentLibrary":
        """Read a manifest; checkpoint paths are relative to the manifest's directory."""
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON ({exc})", "library") from exc
        entries = data.get("snapshots") if isinstance(data, dict) else data
        if not isinstance(entries, list):
            raise ConfigError("expected a list of snapshots", "library.snapshots")
        snaps, weights = [], []
        for n, e in enumerate(entries):
            if not isinstance(e, dict) or "checkpoint" not in e or "team" not in e:
                raise ConfigError("each entry needs checkpoint and team", f"library.snapshots[{n}]")
            try:
                team = Team.parse(e["team"])
            except ValueError as exc:
                raise ConfigError(str(exc), f"library.snapshots[{n}].team") from exc
            ckpt = Path(e["checkpoint"])
            if not ckpt.is_absolute():
                ckpt = path.parent / ckpt
            snaps.append(StrategySnapshot(team, str(ckpt), int(e.get("iteration", 0)),
                                          float(e.get("mean_reward") if e.get("mean_reward") is not None else math.nan), str(e.get("label", ""))))
            weights.append(float(e.get("weight", 1.0)))
        return cls(snaps, weights if snaps else None)

    def to_manifest(self, path) -> None:
        path = Path(path)
        entries = []
        for s, w in zip(self.snapshots, self.weights):
            ckpt = Path(s.checkpoint)
            try:
                ckpt = ckpt.resolve().relative_to(path.parent.resolve())
            except ValueError:
                pass
            entries.append({"checkpoint": str(ckpt), "team": s.team.name.lower(), "label": s.label,
                            "weight": float(w), "iteration": s.iteration,
                            "mean_reward": None if math.isnan(s.mean_reward) else s.mean_reward})
        path.write_text(json.dumps({"snapshots": entries}, indent=2) + "\n")


class LibraryController(Controller):
    """Plays one library snapshot per episode, drawn by the library weights."""

    def __init__(self, library: OpponentLibrary):
        self.library = library
        self._params = library.params()

    def begin_episode(self, rng):
        return self.library.sample(rng)

    def params_for(self, token):
        return self._params[token]


def ensemble_train(train_team: Team, library: OpponentLibrary, env_config: EnvConfig, ppo_config: PPOConfig,
                   graph_config: GraphConfig, iterations: int, seed: int, init: PolicyParams | None = None,
                   workers: int = 1) -> Iterator[IterationResult]:
    """Train one team against opponents drawn per episode from ``library``.

    Only ``train_team`` learns; it starts from ``init`` or from scratch.
    """
    if len(library) == 0:
        raise ConfigError("opponent library is empty", "library.snapshots")
    if library.team != train_team.opponent:
        raise ConfigError(f"library holds {library.team.name.lower()} snapshots but the "
                          f"{train_team.name.lower()} team needs {train_team.opponent.name.lower()} opponents",
                          "library.team")
    opp = LibraryController(library)
    sides = {train_team: init, train_team.opponent: opp}
    return train_iter(env_config, ppo_config, graph_config, iterations, seed,
                      guard=sides[Team.GUARD], attacker=sides[Team.ATTACKER], workers=workers)


def run_ensemble(*args, **kwargs) -> TrainResult:
    curve, stats, params = [], [], {}
    for res in ensemble_train(*args, **kwargs):
        curve += res.curve
        stats.append(res.stats)
        params = res.params
    return TrainResult(curve, params, stats)


# evaluation

@dataclass
class EpisodeResult:
    index: int
    seed: int
    winner: Team
    length: int
    guard_reward: float
    attacker_reward: float


@dataclass
class MatchupReport:
    episodes: list[EpisodeResult]

    @property
    def guard_wins(self) -> int:
        return sum(r.winner == Team.GUARD for r in self.episodes)

    @property
    def win_rate(self) -> float:
        """Fraction of episodes won by the guards."""
        return self.guard_wins / len(self.episodes)

    @property
    def guard_mean_reward(self) -> float:
        return float(np.mean([r.guard_reward for r in self.episodes]))

    @property
    def attacker_mean_reward(self) -> float:
        return float(np.mean([r.attacker_reward for r in self.episodes]))

    def as_dict(self) -> dict:
        return {"episodes": len(self.episodes), "guard_wins": self.guard_wins, "win_rate": self.win_rate,
                "guard_mean_reward": self.guard_mean_reward, "attacker_mean_reward": self.attacker_mean_reward,
                "results": [{"index": r.index, "seed": r.seed, "winner": r.winner.name.lower(), "length": r.length,
                             "guard_reward": r.guard_reward, "attacker_reward": r.attacker_reward}
                            for r in self.episodes]}


def _controller(x) -> Controller:
    if isinstance(x, Controller):
        return x
    if isinstance(x, PolicyParams):
        if x.config.feature_dim != FEATURE_DIM or x.config.n_moves != N_MOVES:
            raise ConfigError("policy does not match the environment's observation/action sizes", "graph")
        return PolicyController(x)
    if x is None:
        return RandomController()
    raise TypeError(f"cannot drive a team with {type(x).__name__}")


def _play(config: EnvConfig, controllers: dict, seqs: list, first: int) -> list[EpisodeResult]:
    """Play one episode per seed sequence, all in lockstep."""
    slots = []
    for n, ss in enumerate(seqs):
        reset_ss, opp_ss, g_ss, a_ss = ss.spawn(4)
        slot = _EnvSlot(first + n, np.random.default_rng(reset_ss), np.random.default_rng(opp_ss),
                        {Team.GUARD: np.random.default_rng(g_ss), Team.ATTACKER: np.random.default_rng(a_ss)})
        slot.start_episode(config, controllers)
        slots.append(slot)
    guards, attackers = list(config.team_ids(Team.GUARD)), list(config.team_ids(Team.ATTACKER))
    results: dict[int, EpisodeResult] = {}
    live = slots
    while live:
        views = [observations(config, s.state) for s in live]
        actions = [dict() for _ in live]
        for team in (Team.GUARD, Team.ATTACKER):
            rows, moves, shoots, _, _ = _act(config, team, controllers[team], live, views)
            for r, (k, i) in enumerate(rows):
                actions[k][i] = (int(moves[r]), bool(shoots[r]))
        still = []
        for slot, acts in zip(live, actions):
            out = step(config, slot.state, acts)
            slot.returns += out.rewards
            slot.state = out.state
            if out.done:
                results[slot.index] = EpisodeResult(slot.index, slot.seed, out.winner, out.state.t,
                                                    float(slot.returns[guards].mean()),
                                                    float(slot.returns[attackers].mean()))
            else:
                still.append(slot)
        live = still
    return [results[k] for k in sorted(results)]


def evaluate_matchup(guard, attacker, env_config: EnvConfig, episodes: int, seed: int,
                     workers: int = 1) -> MatchupReport:
    """Play ``episodes`` independent episodes; episode i draws everything from child i of ``seed``.

    ``guard``/``attacker`` are PolicyParams, Controllers, or None for random
    play. With ``workers > 1`` contiguous blocks of episodes run in separate
    processes and are merged back in episode order.
    """
    if episodes < 1:
        raise ConfigError("must be >= 1", "episodes")
    env_config.validate()
    controllers = {Team.GUARD: _controller(guard), Team.ATTACKER: _controller(attacker)}
    seqs = np.random.SeedSequence(seed).spawn(episodes)
    workers = max(1, min(workers, episodes))
    bounds = np.linspace(0, episodes, workers + 1).astype(int)
    parts = [(seqs[a:b], int(a)) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers == 1:
        results = _play(env_config, controllers, seqs, 0)
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_play, env_config, controllers, s, first) for s, first in parts]
            results = [r for f in futures for r in f.result()]
    return MatchupReport(results)
