"""Episode recording, bit-exact playback, frame rendering, and curve smoothing.

Trajectory files are JSON lines. The first line is a header::

    {"format": "fortattack-trajectory", "version": 1, "env": {...}, "seed": 7,
     "focus_agent": 0, "guard": "<checkpoint or null>", "attacker": "...",
     "initial_state": <state>}

and every following line is one environment step::

    {"t": 0, "actions": {"0": [move, shoot], ...}, "rewards": [...],
     "events": [[t, kind, actor, target], ...], "state": <state after the step>,
     "attention": {"3": 0.25, ...} or null}

A <state> holds position, orientation, velocity, alive, team, t, done and
winner. Floats are written with their shortest round-tripping repr, so a
loaded record reproduces the recorded arrays bit for bit. ``attention`` is
the focus agent's ring weights for the observation it acted on; it is null
once the focus agent is dead or when its team plays randomly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .config import RenderStyle, env_from_dict, to_dict
from .env import (
    N_MOVES,
    EnvConfig,
    Event,
    Team,
    WorldState,
    compute_rewards,
    observation_of,
    reset,
    step,
)
from .errors import ReplayMismatchError, TrajectoryFormatError
from .policy import PolicyParams, forward, sample_action

FORMAT = "fortattack-trajectory"
VERSION = 1


# records

@dataclass
class StepRecord:
    t: int
    actions: dict[int, tuple[int, bool]]
    rewards: np.ndarray
    events: list[Event]
    state: WorldState
    attention: dict[int, float] | None = None


@dataclass
class TrajectoryRecord:
    env: EnvConfig
    seed: int
    focus_agent: int
    initial: WorldState
    steps: list[StepRecord]
    guard: str | None = None
    attacker: str | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def states(self) -> list[WorldState]:
        return [self.initial] + [s.state for s in self.steps]

    def to_lines(self) -> list[str]:
        header = {"format": FORMAT, "version": VERSION, "env": to_dict(self.env), "seed": self.seed,
                  "focus_agent": self.focus_agent, "guard": self.guard, "attacker": self.attacker,
                  "initial_state": state_to_dict(self.initial)}
        lines = [json.dumps(header, sort_keys=True)]
        for s in self.steps:
            lines.append(json.dumps({
                "t": s.t,
                "actions": {str(k): [int(m), bool(sh)] for k, (m, sh) in sorted(s.actions.items())},
                "rewards": [float(r) for r in s.rewards],
                "events": [[e.t, e.kind, e.actor, e.target] for e in s.events],
                "state": state_to_dict(s.state),
                "attention": None if s.attention is None else {str(k): v for k, v in s.attention.items()},
            }, sort_keys=True))
        return lines

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n")

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "TrajectoryRecord":
        lines = [ln for ln in lines if ln.strip()]
        if not lines:
            raise TrajectoryFormatError("empty trajectory file (no header)")
        try:
            header = json.loads(lines[0])
            if header.get("format") != FORMAT:
                raise TrajectoryFormatError(f"not a trajectory file (format {header.get('format')!r})")
            if header.get("version") != VERSION:
                raise TrajectoryFormatError(f"unsupported trajectory version {header.get('version')!r}")
            env = env_from_dict(header["env"])
            steps = []
            for n, line in enumerate(lines[1:], start=2):
                try:
                    d = json.loads(line)
                    steps.append(StepRecord(
                        int(d["t"]),
                        {int(k): (int(v[0]), bool(v[1])) for k, v in d["actions"].items()},
                        np.array(d["rewards"], dtype=np.float64),
                        [Event(int(e[0]), str(e[1]), int(e[2]), int(e[3])) for e in d["events"]],
                        state_from_dict(d["state"]),
                        None if d["attention"] is None else {int(k): float(v) for k, v in d["attention"].items()},
                    ))
                except (KeyError, TypeError, ValueError, IndexError) as exc:
                    raise TrajectoryFormatError(f"line {n}: {exc}") from exc
            return cls(env, int(header["seed"]), int(header["focus_agent"]), state_from_dict(header["initial_state"]),
                       steps, header.get("guard"), header.get("attacker"))
        except TrajectoryFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise TrajectoryFormatError(f"bad header: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TrajectoryRecord":
        return cls.from_lines(Path(path).read_text().splitlines())


def state_to_dict(s: WorldState) -> dict:
    return {"position": s.position.tolist(), "orientation": s.orientation.tolist(),
            "velocity": s.velocity.tolist(), "alive": s.alive.tolist(), "team": s.team.tolist(),
            "t": s.t, "done": s.done, "winner": None if s.winner is None else s.winner.name.lower()}


def state_from_dict(d: dict) -> WorldState:
    n = len(d["alive"])
    return WorldState(
        position=np.array(d["position"], dtype=np.float64).reshape(n, 2),
        orientation=np.array(d["orientation"], dtype=np.float64).reshape(n),
        velocity=np.array(d["velocity"], dtype=np.float64).reshape(n, 2),
        alive=np.array(d["alive"], dtype=bool),
        team=np.array(d["team"], dtype=np.int64),
        t=int(d["t"]), done=bool(d["done"]),
        winner=None if d["winner"] is None else Team.parse(d["winner"]),
    )


# recording and playback

def record_episode(env_config: EnvConfig, guard: PolicyParams | None, attacker: PolicyParams | None,
                   seed: int, focus_agent: int = 0, guard_ref: str | None = None,
                   attacker_ref: str | None = None) -> TrajectoryRecord:
    """Play one episode and log everything needed to replay and render it.

    A team given ``None`` plays uniformly random moves and shoots with
    probability 1/2. Action sampling draws from one stream seeded by ``seed``.
    """
    if not 0 <= focus_agent < env_config.n_agents:
        raise ValueError(f"focus agent {focus_agent} is not in 0..{env_config.n_agents - 1}")
    params = {Team.GUARD: guard, Team.ATTACKER: attacker}
    state = reset(env_config, seed)
    initial = state
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    steps = []
    while not state.done:
        actions, attention = {}, None
        for i in state.alive_ids():
            p = params[env_config.team_of(i)]
            if p is None:
                actions[i] = (int(rng.integers(N_MOVES)), bool(rng.random() < 0.5))
                continue
            dist, _, report = forward(observation_of(env_config, state, i), p)
            move, shoot, _ = sample_action(dist, rng)
            actions[i] = (int(move), shoot)
            if i == focus_agent:
                attention = report.ring_weights()
        out = step(env_config, state, actions)
        steps.append(StepRecord(state.t, actions, out.rewards, list(out.events), out.state, attention))
        state = out.state
    return TrajectoryRecord(env_config, seed, focus_agent, initial, steps, guard_ref, attacker_ref)


@dataclass
class ReplayReport:
    steps: int
    winner: Team | None
    total_rewards: np.ndarray


def replay_episode(record: TrajectoryRecord) -> ReplayReport:
    """Re-run the recorded actions and check every state and reward bit for bit.

    Rewards are checked twice: against the environment's own output and
    against a recomputation from the recorded events alone.
    """
    cfg = record.env
    state = reset(cfg, record.seed)
    if not state.equals(record.initial):
        raise ReplayMismatchError("initial state differs from a fresh reset with the recorded seed")
    totals = np.zeros(cfg.n_agents)
    for n, rec in enumerate(record.steps):
        out = step(cfg, state, rec.actions)
        if not out.state.equals(rec.state):
            raise ReplayMismatchError(f"step {n}: replayed state differs from the record")
        if list(out.events) != rec.events:
            raise ReplayMismatchError(f"step {n}: replayed events differ from the record")
        recomputed = compute_rewards(rec.events, state, rec.state, cfg.rewards, cfg)
        if recomputed.tobytes() != rec.rewards.tobytes() or out.rewards.tobytes() != rec.rewards.tobytes():
            raise ReplayMismatchError(f"step {n}: rewards differ from the record")
        totals += rec.rewards
        state = out.state
    return ReplayReport(len(record.steps), state.winner, totals)


# rendering

def ring_radius(weight: float, style: RenderStyle) -> float:
    """Ring radius in arena units, affine in the attention weight."""
    return style.ring_min + weight * (style.ring_max - style.ring_min)


class _Canvas:
    def __init__(self, env: EnvConfig, style: RenderStyle):
        self.L = env.arena_half_extent
        self.scale = (style.size - 1) / (2 * self.L)

    def xy(self, p) -> tuple[float, float]:
        return ((p[0] + self.L) * self.scale, (self.L - p[1]) * self.scale)

    def box(self, p, r) -> list[float]:
        x, y = self.xy(p)
        d = r * self.scale
        return [x - d, y - d, x + d, y + d]


def render_frame(env: EnvConfig, state: WorldState, actions: dict, attention: dict | None,
                 focus_agent: int | None, style: RenderStyle) -> Image.Image:
    c = _Canvas(env, style)
    img = Image.new("RGBA", (style.size, style.size), style.background + (255,))
    overlay = Image.new("RGBA", img.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)
    ov = ImageDraw.Draw(overlay)

    fort = env.fort_center
    draw.ellipse(c.box(fort, env.guard_zone_radius), outline=style.fort_color + (255,), width=1)
    draw.pieslice(c.box(fort, env.fort_radius), 0, 360, fill=style.fort_color + (255,))

    half = math.degrees(env.laser_half_angle)
    for i, (_, shoot) in sorted(actions.items()):
        if not shoot:
            continue
        color = style.guard_color if state.team[i] == Team.GUARD else style.attacker_color
        heading = -math.degrees(float(state.orientation[i]))  # image y axis points down
        ov.pieslice(c.box(state.position[i], env.laser_range), heading - half, heading + half,
                    fill=color + (style.laser_alpha,))
    img.alpha_composite(overlay)
    draw = ImageDraw.Draw(img)

    for i in range(state.n_agents):
        p = state.position[i]
        if state.alive[i]:
            color = style.guard_color if state.team[i] == Team.GUARD else style.attacker_color
            draw.ellipse(c.box(p, env.agent_radius), fill=color + (255,))
            tip = p + env.agent_radius * np.array([math.cos(state.orientation[i]), math.sin(state.orientation[i])])
            draw.line([c.xy(p), c.xy(tip)], fill=(0, 0, 0, 255), width=1)
        else:
            draw.ellipse(c.box(p, env.agent_radius), outline=style.dead_color + (255,), width=1)
    for j, w in sorted((attention or {}).items()):
        draw.ellipse(c.box(state.position[j], ring_radius(w, style)), outline=style.ring_color + (255,),
                     width=style.ring_width)
    if focus_agent is not None and state.alive[focus_agent]:
        draw.ellipse(c.box(state.position[focus_agent], env.agent_radius / 3), fill=style.focus_color + (255,))
    return img.convert("RGB")


def _render_one(args) -> str:
    env, state, actions, attention, focus, style, path = args
    render_frame(env, state, actions, attention, focus, style).save(path, format="PNG")
    return path


def render_frames(record: TrajectoryRecord, style: RenderStyle, out_dir, workers: int = 1) -> list[Path]:
    """One PNG per recorded step plus ``index.txt`` listing them in order."""
    style.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(record.env, s.state, s.actions, s.attention, record.focus_agent, style, str(out / f"frame_{n:04d}.png"))
            for n, s in enumerate(record.steps)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            paths = list(pool.map(_render_one, jobs))
    else:
        paths = [_render_one(j) for j in jobs]
    (out / "index.txt").write_text("".join(Path(p).name + "\n" for p in paths))
    return [Path(p) for p in paths]


# curves

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian on offsets -ceil(4 sigma)..ceil(4 sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    radius = max(1, math.ceil(4 * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_curve(values, sigma: float) -> np.ndarray:
    """Gaussian smoothing that renormalizes the kernel where it overhangs the ends."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v.copy()
    k = gaussian_kernel(sigma)
    return _conv_same(v, k) / _conv_same(np.ones_like(v), k)


def _conv_same(v: np.ndarray, k: np.ndarray) -> np.ndarray:
    # np.convolve's "same" mode returns max(len(v), len(k)) samples; keep the signal's length
    full = np.convolve(v, k, mode="full")
    start = (len(k) - 1) // 2
    return full[start:start + len(v)]


def plot_curves(curves: dict[str, Sequence[float]], path, sigma: float = 2.0, size=(640, 360)) -> None:
    """Smoothed reward curves as a PNG line plot: guard-like names green, others red."""
    w, h = size
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    smoothed = {k: smooth_curve(np.nan_to_num(np.asarray(v, float)), sigma) for k, v in curves.items() if len(v)}
    if smoothed:
        lo = min(s.min() for s in smoothed.values())
        hi = max(s.max() for s in smoothed.values())
        span = hi - lo or 1.0
        pad = 20
        draw.rectangle([pad, pad, w - pad, h - pad], outline=(0, 0, 0))
        if lo < 0 < hi:
            y0 = h - pad - (0 - lo) / span * (h - 2 * pad)
            draw.line([(pad, y0), (w - pad, y0)], fill=(200, 200, 200))
        palette = [(30, 150, 40), (200, 40, 40), (40, 120, 200), (120, 60, 160)]
        for n, (name, s) in enumerate(sorted(smoothed.items())):
            color = (30, 150, 40) if "guard" in name else (200, 40, 40) if "attacker" in name else palette[n % 4]
            xs = np.linspace(pad, w - pad, len(s)) if len(s) > 1 else np.array([w / 2])
            ys = h - pad - (s - lo) / span * (h - 2 * pad)
            draw.line(list(zip(xs.tolist(), ys.tolist())), fill=color, width=2)
            draw.text((pad + 4, pad + 4 + 12 * n), name, fill=color)
    img.save(path, format="PNG")
