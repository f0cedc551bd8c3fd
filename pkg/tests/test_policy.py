import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fortattack.env import EnvConfig, ObservationView, Team, observation_of, reset
from fortattack.nn import Layer, MlpParams, Tape, Tensor, backward, mlp_forward
from fortattack.policy import (
    GraphConfig,
    ObservationBatch,
    PolicyParams,
    distribution_from_probs,
    embed_self,
    forward,
    forward_batch,
    fuse,
    init_policy,
    joint_log_prob,
    opponent_attention,
    sample_action,
    teammate_propagate,
)

SMALL = GraphConfig(d1=4, d2=4, k=1, hidden_a=(8,), hidden_b=(8,), hidden_c=(8,), hidden_d=(8,), hidden_v=(8,))


def random_view(rng, n_mates, n_opps, agent_id=0):
    def feats(n):
        f = rng.uniform(-1, 1, size=(n, 6))
        ang = rng.uniform(-math.pi, math.pi, size=n)
        f[:, 2], f[:, 3] = np.cos(ang), np.sin(ang)
        return f

    return ObservationView(agent_id, Team.GUARD, feats(1)[0], feats(n_mates), feats(n_opps),
                           list(range(1, n_mates + 1)), list(range(100, 100 + n_opps)))


def permuted(view, rng):
    pm = rng.permutation(len(view.teammates))
    po = rng.permutation(len(view.opponents))
    return ObservationView(view.agent_id, view.team, view.self_features, view.teammates[pm],
                           view.opponents[po], [view.teammate_ids[i] for i in pm],
                           [view.opponent_ids[i] for i in po]), pm, po


def dense(w, b, act="identity"):
    return MlpParams([Layer(Tensor(np.array(w, float), True), Tensor(np.array(b, float), True), act)])


# embed_self

def test_embed_self_deterministic():
    params = init_policy(GraphConfig(), 0)
    x = np.linspace(-1, 1, 6)
    a1, h1 = embed_self(params, x)
    a2, h2 = embed_self(params, x)
    assert a1.data.tobytes() == a2.data.tobytes() and h1.data.tobytes() == h2.data.tobytes()
    assert h1.shape == (32,) and a1.shape == (32,)


def test_embed_self_zero_weights_gives_zero():
    params = init_policy(SMALL, 0)
    params.blocks["a"] = dense(np.zeros((4, 6)), np.zeros(4))
    params.blocks["a_readout"] = dense(np.eye(4), np.zeros(4))
    node, h = embed_self(params, np.ones(6))
    np.testing.assert_array_equal(h.data, np.zeros(4))


def test_embed_self_hand_evaluated():
    params = init_policy(SMALL, 0)
    w = np.arange(24.0).reshape(4, 6) / 50.0
    params.blocks["a"] = dense(w, [0.1, 0.0, -0.1, 0.2], "tanh")
    params.blocks["a_readout"] = dense(np.eye(4), np.zeros(4))
    x = np.array([0.5, -0.5, 1.0, 0.0, 0.25, -1.0])
    expected = [math.tanh(sum(w[r, c] * x[c] for c in range(6)) + [0.1, 0.0, -0.1, 0.2][r]) for r in range(4)]
    np.testing.assert_allclose(embed_self(params, x)[1].data, expected, atol=1e-15)


# opponent_attention

def test_single_opponent_gets_all_attention():
    psi, e = opponent_attention(np.array([0.3, -0.2]), np.array([[1.5, 2.5]]))
    np.testing.assert_array_equal(psi.data, [1.0])
    np.testing.assert_array_equal(e.data, [1.5, 2.5])


def test_orthogonal_opponents_get_uniform_attention():
    psi, _ = opponent_attention(np.array([1.0, 0.0, 0.0]), np.array([[0, 1.0, 0], [0, 0, 2.0], [0, -3.0, 1.0]]))
    np.testing.assert_allclose(psi.data, [1 / 3] * 3, atol=1e-15)


def test_opponent_attention_scalar_oracle():
    psi, e = opponent_attention(np.array([1.0, 0.0]), np.array([[2.0, 0.0], [0.0, 2.0]]))
    p1 = math.exp(1) / (math.exp(1) + 1)
    np.testing.assert_allclose(psi.data, [p1, 1 - p1], atol=1e-15)
    np.testing.assert_allclose(psi.data, [0.7311, 0.2689], atol=5e-5)
    np.testing.assert_allclose(e.data, [2 * p1, 2 * (1 - p1)], atol=1e-15)
    np.testing.assert_allclose(e.data, [1.4622, 0.5378], atol=1e-4)


def test_empty_opponent_set_gives_zero_embedding():
    psi, e = opponent_attention(np.ones((1, 3)), np.zeros((1, 0, 3)), np.zeros((1, 0), bool))
    assert psi.shape == (1, 0)
    np.testing.assert_array_equal(e.data, np.zeros((1, 3)))


# fuse

def test_fuse_of_zeros_is_projection_bias():
    params = init_policy(SMALL, 1)
    params.blocks["fuse"].layers[0].bias.data[:] = [0.5, -1.0, 2.0, 0.0]
    np.testing.assert_array_equal(fuse(params, np.zeros(4), np.zeros(4)).data, [0.5, -1.0, 2.0, 0.0])


def test_fuse_order_matters_and_matches_hand_evaluation():
    params = init_policy(SMALL, 1)
    w = params.blocks["fuse"].layers[0].weight.data
    b = params.blocks["fuse"].layers[0].bias.data
    h = np.array([1.0, 2.0, 3.0, 4.0])
    e = np.array([-1.0, 0.5, 0.0, 2.0])
    cat = np.concatenate([h, e])
    expected = [sum(w[r, c] * cat[c] for c in range(8)) + b[r] for r in range(4)]
    np.testing.assert_allclose(fuse(params, h, e).data, expected, atol=1e-14)
    assert not np.allclose(fuse(params, e, h).data, expected)


# teammate_propagate

def test_two_agent_team_attends_to_the_other():
    params = init_policy(SMALL, 2)
    H0 = np.random.default_rng(0).standard_normal((2, 4))
    _, phis = teammate_propagate(params, H0)
    np.testing.assert_array_equal(phis[0].data[0], [[0.0, 1.0], [1.0, 0.0]])


def test_identical_embeddings_give_uniform_attention():
    params = init_policy(SMALL, 2)
    H0 = np.tile([0.3, -0.1, 0.7, 0.2], (4, 1))
    _, phis = teammate_propagate(params, H0)
    expected = (np.ones((4, 4)) - np.eye(4)) / 3
    np.testing.assert_allclose(phis[0].data[0], expected, atol=1e-15)


@pytest.mark.parametrize("residual", [True, False])
def test_three_agent_propagation_matrix_oracle(residual):
    params = init_policy(replace(SMALL, residual=residual), 3)
    wc = np.array([[0.5, 0, 0, 0.1], [0, -1.0, 0, 0], [0.2, 0, 0.3, 0], [0, 0, 0, 1.0]])
    bc = np.array([0.0, 0.1, -0.2, 0.05])
    params.blocks["c"] = dense(wc, bc, "tanh")
    H0 = np.array([[1.0, 0.0, 0.5, -0.5], [0.0, 1.0, -1.0, 0.0], [0.5, 0.5, 0.5, 0.5]])
    HK, _ = teammate_propagate(params, H0, k=1)

    expected = np.zeros_like(H0)
    for i in range(3):
        others = [j for j in range(3) if j != i]
        logits = [sum(H0[i] * H0[j]) / 4 for j in others]
        z = [math.exp(l) for l in logits]
        pooled = sum(z[n] / sum(z) * H0[j] for n, j in enumerate(others))
        expected[i] = [math.tanh(sum(wc[r, c] * pooled[c] for c in range(4)) + bc[r]) for r in range(4)]
        if residual:
            expected[i] += H0[i]
    np.testing.assert_allclose(HK.data[0], expected, atol=1e-14)


@pytest.mark.parametrize("residual", [True, False])
def test_lone_agent_pools_zero_vector(residual):
    params = init_policy(replace(SMALL, residual=residual), 4)
    HK, phis = teammate_propagate(params, np.ones((1, 4)))
    np.testing.assert_array_equal(phis[0].data, np.zeros((1, 1, 1)))
    expected = mlp_forward(params.blocks["c"], np.zeros(4)).data + (1.0 if residual else 0.0)
    np.testing.assert_array_equal(HK.data[0, 0], expected)


def test_residual_keeps_own_state_in_lone_agent_policy():
    rng = np.random.default_rng(0)
    for residual, differs in ((True, True), (False, False)):
        params = init_policy(replace(SMALL, residual=residual), 5)
        outs = [forward(random_view(rng, 0, 2), params)[0].move_probs for _ in range(2)]
        assert (np.abs(outs[0] - outs[1]).max() > 1e-9) == differs


# forward

def test_forward_outputs_are_normalized():
    params = init_policy(GraphConfig(), 0)
    cfg = EnvConfig()
    dist, value, report = forward(observation_of(cfg, reset(cfg, 0), 0), params)
    assert abs(dist.move_probs.sum() - 1) < 1e-9
    assert 0 <= dist.shoot_prob <= 1
    assert math.isfinite(value)
    assert abs(report.psi.sum() - 1) < 1e-6 and abs(report.phi[0].sum() - 1) < 1e-6
    assert len(report.psi) == 5 and len(report.phi[0]) == 4
    assert abs(sum(report.ring_weights().values()) - 1) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_forward_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    params = init_policy(GraphConfig(k=2), seed)
    view = random_view(rng, 4, 5)
    d0, v0, r0 = forward(view, params)
    pview, pm, po = permuted(view, rng)
    d1, v1, r1 = forward(pview, params)
    assert np.abs(d0.move_probs - d1.move_probs).max() < 1e-9
    assert abs(d0.shoot_prob - d1.shoot_prob) < 1e-9 and abs(v0 - v1) < 1e-9
    np.testing.assert_allclose(r1.psi, r0.psi[po], atol=1e-12)
    for a, b in zip(r0.phi, r1.phi):
        np.testing.assert_allclose(b, a[pm], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n_mates=st.integers(0, 9), n_opps=st.integers(0, 10), seed=st.integers(0, 1000))
def test_forward_handles_every_set_size(n_mates, n_opps, seed):
    params = init_policy(SMALL, 0)
    dist, value, report = forward(random_view(np.random.default_rng(seed), n_mates, n_opps), params)
    assert abs(dist.move_probs.sum() - 1) < 1e-9
    if n_opps:
        assert abs(report.psi.sum() - 1) < 1e-6
    else:
        assert len(report.psi) == 0
    if n_mates:
        assert abs(report.phi[0].sum() - 1) < 1e-6


def test_padded_batch_matches_single_forward():
    rng = np.random.default_rng(7)
    params = init_policy(SMALL, 0)
    views = [random_view(rng, m, o) for m, o in [(0, 3), (2, 1), (3, 0), (1, 4)]]
    out = forward_batch(params, ObservationBatch.from_views(views, 4, 5))
    for r, v in enumerate(views):
        d, val, _ = forward(v, params)
        np.testing.assert_allclose(np.exp(out.move_logp.data[r]), d.move_probs, atol=1e-12)
        assert out.value.data[r] == pytest.approx(val, abs=1e-12)


def test_parameter_count_independent_of_team_size():
    cfg = GraphConfig()
    sizes = set()
    for n in (1, 5, 10):
        params = init_policy(cfg, n)
        view = random_view(np.random.default_rng(n), n - 1, n)
        forward(view, params)
        sizes.add((params.num_parameters(), params.nbytes()))
    assert len(sizes) == 1


def test_full_graph_gradient_check():
    rng = np.random.default_rng(0)
    params = init_policy(SMALL, 0)
    batch = ObservationBatch.from_views([random_view(rng, 1, 2)])
    move, shoot = np.array([3]), np.array([True])

    def logp():
        out = forward_batch(params, batch)
        return float(joint_log_prob(out.move_logp.data, out.shoot_logit.data, move, shoot)[0])

    from fortattack.nn import log_sigmoid, take_along
    with Tape() as tape:
        out = forward_batch(params, batch)
        lp = take_along(out.move_logp, move[:, None])[0, 0] + log_sigmoid(out.shoot_logit)[0]
    grads = backward(tape, lp, params.parameters())
    assert lp.item() == pytest.approx(logp(), abs=1e-14)
    errs = []
    for p, g in zip(params.parameters(), grads):
        for i in np.ndindex(p.shape):
            old = p.data[i]
            p.data[i] = old + 1e-5
            hi = logp()
            p.data[i] = old - 1e-5
            lo = logp()
            p.data[i] = old
            num = (hi - lo) / 2e-5
            errs.append(abs(num - g[i]) / max(1e-6, abs(num) + abs(g[i])))
    assert max(errs) < 1e-4


# sampling

def test_one_hot_distribution_samples_that_action():
    dist = distribution_from_probs(np.eye(7)[4], 0.0)
    a, shoot, lp = sample_action(dist, np.random.default_rng(0))
    assert int(a) == 4 and not shoot and lp == 0.0


def test_sampling_is_reproducible():
    dist = distribution_from_probs(np.full(7, 1 / 7), 0.5)
    draws = [sample_action(dist, np.random.default_rng(3)) for _ in range(2)]
    assert draws[0] == draws[1]


def test_sampling_frequencies_within_three_sigma():
    probs = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.2, 0.05])
    dist = distribution_from_probs(probs, 0.3)
    rng = np.random.default_rng(0)
    n = 100_000
    from fortattack.policy import sample_batch
    moves, shoots, lps = sample_batch(np.tile(dist.move_logp, (n, 1)), np.full(n, dist.shoot_logit), rng)
    counts = np.bincount(moves, minlength=7)
    sigma = np.sqrt(n * probs * (1 - probs))
    assert (np.abs(counts - n * probs) < 3 * sigma).all()
    assert abs(shoots.sum() - 0.3 * n) < 3 * math.sqrt(n * 0.3 * 0.7)
    expected_lp = np.log(probs[moves]) + np.where(shoots, math.log(0.3), math.log(0.7))
    np.testing.assert_allclose(lps, expected_lp, atol=1e-12)


def test_checkpoint_round_trip_bit_exact():
    params = init_policy(GraphConfig(), 5)
    blob = params.to_bytes({"team": "guard"})
    loaded, meta = PolicyParams.from_bytes(blob)
    assert meta == {"team": "guard"} and loaded.config == params.config
    view = random_view(np.random.default_rng(0), 3, 4)
    a, va, _ = forward(view, params)
    b, vb, _ = forward(view, loaded)
    assert a.move_probs.tobytes() == b.move_probs.tobytes() and va == vb
    assert loaded.to_bytes({"team": "guard"}) == blob
