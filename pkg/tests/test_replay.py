import math
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fortattack.config import RenderStyle
from fortattack.env import EnvConfig, Event, SHOT_HIT, SHOT_MISS, Team, WorldState
from fortattack.errors import ReplayMismatchError, TrajectoryFormatError
from fortattack.policy import GraphConfig, init_policy
from fortattack.replay import (
    StepRecord,
    TrajectoryRecord,
    gaussian_kernel,
    record_episode,
    render_frame,
    render_frames,
    replay_episode,
    ring_radius,
    smooth_curve,
)

GOLDEN = Path(__file__).parent / "golden"
SMALL = GraphConfig(d1=4, d2=4, hidden_a=(8,), hidden_b=(8,), hidden_c=(8,), hidden_d=(8,), hidden_v=(8,))
ENV = EnvConfig(n_guards=2, n_attackers=2, max_steps=25)


def synthetic_record() -> TrajectoryRecord:
    """Two hand-written steps: guard 0 shoots and kills attacker 2, then attacker 3 wastes a shot."""
    env = EnvConfig(n_guards=2, n_attackers=2, max_steps=10)

    def state(t, pos, ori, alive):
        return WorldState(np.array(pos, float), np.array(ori, float), np.zeros((4, 2)), np.array(alive),
                          np.array([0, 0, 1, 1], dtype=np.int64), t)

    pos = [[-0.2, 0.6], [0.3, 0.7], [-0.2, 0.2], [0.5, -0.6]]
    s0 = state(0, pos, [-math.pi / 2, -math.pi / 2, math.pi / 2, 2.0], [True] * 4)
    s1 = state(1, pos, [-math.pi / 2, -math.pi / 2, math.pi / 2, 2.0], [True, True, False, True])
    s2 = state(2, [[-0.2, 0.6], [0.3, 0.7], [-0.2, 0.2], [0.5, -0.55]], [-math.pi / 2, -math.pi / 2, math.pi / 2, 2.0],
               [True, True, False, True])
    steps = [
        StepRecord(0, {0: (6, True), 1: (6, False), 2: (6, False), 3: (6, False)}, np.array([1.0, 0, -1.0, 0]),
                   [Event(0, SHOT_HIT, 0, 2)], s1, {1: 0.5, 2: 0.5, 3: 0.0}),
        StepRecord(1, {0: (6, False), 1: (6, False), 3: (2, True)}, np.array([0, 0, 0, -0.3]),
                   [Event(1, SHOT_MISS, 3, -1)], s2, {1: 0.5, 3: 0.5}),
    ]
    return TrajectoryRecord(env, 0, 0, s0, steps)


# recording and replay

def test_replay_reproduces_recording_bit_exactly(tmp_path):
    rec = record_episode(ENV, init_policy(SMALL, 1), init_policy(SMALL, 2), seed=5, focus_agent=0)
    rec.save(tmp_path / "ep.jsonl")
    loaded = TrajectoryRecord.load(tmp_path / "ep.jsonl")
    for a, b in zip(rec.states(), loaded.states()):
        assert a.equals(b)
    report = replay_episode(loaded)
    assert report.steps == len(rec) <= ENV.max_steps
    assert report.winner == rec.steps[-1].state.winner
    np.testing.assert_array_equal(report.total_rewards, sum(s.rewards for s in rec.steps))


def test_recording_is_deterministic():
    g, a = init_policy(SMALL, 1), init_policy(SMALL, 2)
    r1 = record_episode(ENV, g, a, 9, 1).to_lines()
    r2 = record_episode(ENV, g, a, 9, 1).to_lines()
    assert r1 == r2


def test_focus_ring_weights_sum_to_one_over_living_agents():
    rec = record_episode(ENV, init_policy(SMALL, 1), None, seed=3, focus_agent=0)
    prev = rec.initial
    for s in rec.steps:
        if s.attention is not None:
            assert abs(sum(s.attention.values()) - 1.0) < 1e-12
            assert set(s.attention) == set(prev.alive_ids()) - {0}
        prev = s.state


def test_random_team_focus_has_no_attention():
    rec = record_episode(ENV, None, None, seed=3, focus_agent=2)
    assert all(s.attention is None for s in rec.steps)


def test_tampered_record_is_rejected():
    rec = record_episode(ENV, None, None, seed=1, focus_agent=0)
    bad = rec.steps[len(rec) // 2]
    bad.state.position[0, 0] = np.nextafter(bad.state.position[0, 0], 10.0)
    with pytest.raises(ReplayMismatchError, match="state"):
        replay_episode(rec)

    rec = record_episode(ENV, None, None, seed=1, focus_agent=0)
    rec.steps[0].rewards[0] += 1e-12
    with pytest.raises(ReplayMismatchError, match="rewards"):
        replay_episode(rec)


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ('{"format": "other"}', "not a trajectory"),
    ('{"format": "fortattack-trajectory", "version": 99}', "version"),
    ("not json", "header"),
])
def test_corrupt_files_raise_format_error(tmp_path, text, match):
    path = tmp_path / "bad.jsonl"
    path.write_text(text)
    with pytest.raises(TrajectoryFormatError, match=match):
        TrajectoryRecord.load(path)


def test_truncated_step_line_raises_format_error(tmp_path):
    lines = synthetic_record().to_lines()
    (tmp_path / "t.jsonl").write_text(lines[0] + "\n" + lines[1][: len(lines[1]) // 2] + "\n")
    with pytest.raises(TrajectoryFormatError, match="line 2"):
        TrajectoryRecord.load(tmp_path / "t.jsonl")


# rendering

def test_ring_radius_is_affine_in_weight():
    style = RenderStyle()
    assert ring_radius(0.0, style) == style.ring_min
    assert ring_radius(1.0, style) == style.ring_max
    mid = [ring_radius(w, style) for w in (0.25, 0.5, 0.75)]
    assert mid[1] - mid[0] == pytest.approx(mid[2] - mid[1], abs=1e-15)


def _ring_pixels(img, style, env, center, radius):
    """Count ring-colored pixels on a circle of the given arena radius."""
    arr = np.asarray(img)
    L = env.arena_half_extent
    scale = (style.size - 1) / (2 * L)
    cx, cy = (center[0] + L) * scale, (L - center[1]) * scale
    hits = 0
    for a in np.linspace(0, 2 * np.pi, 64, endpoint=False):
        x, y = int(round(cx + radius * scale * np.cos(a))), int(round(cy - radius * scale * np.sin(a)))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if 0 <= y + dy < arr.shape[0] and 0 <= x + dx < arr.shape[1] and tuple(arr[y + dy, x + dx]) == style.ring_color:
                    hits += 1
                    break
            else:
                continue
            break
    return hits


def test_zero_weight_gets_minimum_ring_and_equal_weights_equal_rings():
    rec = synthetic_record()
    style = RenderStyle()
    s = rec.steps[0]
    img = render_frame(rec.env, s.state, {}, {1: 0.5, 3: 0.0, 2: 0.5}, 0, style)
    env = rec.env
    assert _ring_pixels(img, style, env, s.state.position[3], style.ring_min) > 50
    r_half = ring_radius(0.5, style)
    assert _ring_pixels(img, style, env, s.state.position[1], r_half) > 50
    assert _ring_pixels(img, style, env, s.state.position[2], r_half) > 50


def test_rendering_is_pure(tmp_path):
    rec = synthetic_record()
    a = render_frames(rec, RenderStyle(), tmp_path / "a")
    b = render_frames(rec, RenderStyle(), tmp_path / "b", workers=2)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert (tmp_path / "a" / "index.txt").read_text() == "frame_0000.png\nframe_0001.png\n"


def test_golden_frames(tmp_path):
    paths = render_frames(synthetic_record(), RenderStyle(), tmp_path)
    if os.environ.get("FORTATTACK_REGEN_GOLDEN"):
        GOLDEN.mkdir(exist_ok=True)
        for p in paths:
            (GOLDEN / p.name).write_bytes(p.read_bytes())
    for p in paths:
        assert p.read_bytes() == (GOLDEN / p.name).read_bytes(), p.name


def test_empty_record_renders_zero_frames(tmp_path):
    rec = replace(synthetic_record(), steps=[])
    assert render_frames(rec, RenderStyle(), tmp_path) == []
    assert (tmp_path / "index.txt").read_text() == ""


# smoothing

def test_constant_sequence_unchanged():
    np.testing.assert_allclose(smooth_curve(np.full(17, 2.5), 3.0), 2.5, atol=1e-15)


def test_unit_impulse_gives_kernel():
    sigma = 1.5
    v = np.zeros(41)
    v[20] = 1.0
    radius = math.ceil(4 * sigma)
    x = np.arange(-radius, radius + 1)
    direct = np.exp(-x ** 2 / (2 * sigma ** 2))
    direct /= direct.sum()
    np.testing.assert_allclose(smooth_curve(v, sigma)[20 - radius:21 + radius], direct, atol=1e-15)
    np.testing.assert_allclose(gaussian_kernel(sigma), direct, atol=1e-15)


def test_tiny_sigma_is_identity():
    v = np.random.default_rng(0).standard_normal(50)
    assert np.abs(smooth_curve(v, 1e-3) - v).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.integers(1, 40), st.floats(0.2, 6.0))
def test_smoothing_preserves_constant_padded_mean(c, n, sigma):
    # padding of two kernel radii keeps the bump's spread clear of the renormalized ends
    pad = 2 * max(1, math.ceil(4 * sigma))
    v = np.concatenate([np.full(pad, c), np.full(n, c + 1.0), np.full(pad, c)])
    s = smooth_curve(v, sigma)
    assert len(s) == len(v)
    assert abs(s.mean() - v.mean()) < 1e-9


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        smooth_curve([1.0, 2.0], 0.0)
