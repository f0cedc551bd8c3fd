"""Graph-attention team policy.

Each agent embeds itself and every living opponent, pools the opponents by
scaled dot-product attention, fuses the pooled vector with its own
embedding, then runs K rounds of attention-weighted message passing over its
living teammates. A categorical head over the 7 movement actions, an
independent logistic shoot unit, and a value head read the final embedding.

All functions work on padded batches: teammate and opponent sets are padded
to a fixed width and masked, so one call can serve a whole team (or many
environments) at once and set sizes can differ row to row.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .env import FEATURE_DIM, N_MOVES, Action, ObservationView
from .errors import ConfigError, DimensionError
from .nn import (
    MlpParams,
    Tensor,
    as_tensor,
    concat,
    dump_arrays,
    getitem,
    init_mlp,
    load_arrays,
    log_sigmoid,
    log_softmax,
    masked_softmax,
    matmul,
    mlp_forward,
    mul,
    reshape,
    swap_last,
    tsum,
)
from .nn.mlp import Layer

BLOCKS = ("a", "a_readout", "b", "fuse", "c", "d", "v")


@dataclass(frozen=True)
class GraphConfig:
    d1: int = 32
    d2: int = 32
    k: int = 1
    residual: bool = True  # H^{k+1} = H^k + f_c(pooled); False drops H^k entirely
    hidden_a: tuple[int, ...] = (64, 64)
    hidden_b: tuple[int, ...] = (64, 64)
    hidden_c: tuple[int, ...] = (64, 64)
    hidden_d: tuple[int, ...] = (64, 64)
    hidden_v: tuple[int, ...] = (64, 64)
    feature_dim: int = FEATURE_DIM
    n_moves: int = N_MOVES

    def __post_init__(self):
        for name in ("hidden_a", "hidden_b", "hidden_c", "hidden_d", "hidden_v"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))

    def validate(self) -> None:
        for name in ("d1", "d2", "k", "feature_dim", "n_moves"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", f"graph.{name}")
        if not isinstance(self.residual, bool):
            raise ConfigError("must be true or false", "graph.residual")
        for name in ("hidden_a", "hidden_b", "hidden_c", "hidden_d", "hidden_v"):
            if any(h < 1 for h in getattr(self, name)):
                raise ConfigError("hidden sizes must be >= 1", f"graph.{name}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class PolicyParams:
    """One team's shared parameters; the block shapes depend on GraphConfig only."""

    config: GraphConfig
    blocks: dict[str, MlpParams]

    def parameters(self) -> list[Tensor]:
        return [p for name in BLOCKS for p in self.blocks[name].parameters()]

    def arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def nbytes(self) -> int:
        return sum(p.data.nbytes for p in self.parameters())

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        """New params with the same structure and the given arrays (in `parameters()` order)."""
        it = iter(arrays)
        blocks = {}
        for name in BLOCKS:
            layers = []
            for layer in self.blocks[name].layers:
                w, b = next(it), next(it)
                layers.append(Layer(Tensor(np.array(w, dtype=np.float64), True),
                                    Tensor(np.array(b, dtype=np.float64), True), layer.activation))
            blocks[name] = MlpParams(layers)
        if next(it, None) is not None:
            raise DimensionError("too many arrays for this parameter structure")
        return PolicyParams(self.config, blocks)

    def copy(self) -> "PolicyParams":
        return self.with_arrays(self.arrays())

    def to_bytes(self, meta: dict | None = None) -> bytes:
        arrays = {}
        acts = {}
        for name in BLOCKS:
            acts[name] = [layer.activation for layer in self.blocks[name].layers]
            for i, layer in enumerate(self.blocks[name].layers):
                arrays[f"{name}.{i}.weight"] = layer.weight.data
                arrays[f"{name}.{i}.bias"] = layer.bias.data
        header = {"kind": "fortattack-policy", "graph": self.config.to_dict(),
                  "activations": acts, "user": meta or {}}
        return dump_arrays(arrays, header)

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["PolicyParams", dict]:
        arrays, header = load_arrays(blob)
        if header.get("kind") != "fortattack-policy":
            raise ConfigError("not a policy checkpoint", "checkpoint")
        config = GraphConfig(**header["graph"])
        blocks = {}
        for name in BLOCKS:
            layers = []
            for i, act in enumerate(header["activations"][name]):
                layers.append(Layer(Tensor(arrays[f"{name}.{i}.weight"], True),
                                    Tensor(arrays[f"{name}.{i}.bias"], True), act))
            blocks[name] = MlpParams(layers)
        return cls(config, blocks), header["user"]

    def save(self, path, meta: dict | None = None) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(meta))

    @classmethod
    def load(cls, path) -> tuple["PolicyParams", dict]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_policy(config: GraphConfig, rng: np.random.Generator | int) -> PolicyParams:
    config.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    F, d1, d2 = config.feature_dim, config.d1, config.d2

    def tanh_net(sizes):
        return init_mlp(sizes, rng, ["tanh"] * (len(sizes) - 1))

    blocks = {
        "a": tanh_net([F, *config.hidden_a, d2]),
        "a_readout": init_mlp([d2, d1], rng, ["identity"]),
        "b": tanh_net([F, *config.hidden_b, d1]),
        "fuse": init_mlp([2 * d1, d2], rng, ["identity"]),
        "c": tanh_net([d2, *config.hidden_c, d2]),
        "d": init_mlp([d2, *config.hidden_d, config.n_moves + 1], rng, out_scale=0.01),
        "v": init_mlp([d2, *config.hidden_v, 1], rng, out_scale=1.0),
    }
    return PolicyParams(config, blocks)


# batched observations

@dataclass
class ObservationBatch:
    self_features: np.ndarray  # (B, F)
    teammates: np.ndarray  # (B, Tm, F)
    teammate_mask: np.ndarray  # (B, Tm) bool
    opponents: np.ndarray  # (B, Om, F)
    opponent_mask: np.ndarray  # (B, Om) bool

    def __len__(self) -> int:
        return len(self.self_features)

    @classmethod
    def from_views(cls, views: Sequence[ObservationView], max_teammates: int | None = None,
                   max_opponents: int | None = None) -> "ObservationBatch":
        B = len(views)
        F = views[0].self_features.shape[-1] if views else FEATURE_DIM
        Tm = max([len(v.teammates) for v in views], default=0) if max_teammates is None else max_teammates
        Om = max([len(v.opponents) for v in views], default=0) if max_opponents is None else max_opponents
        batch = cls(np.zeros((B, F)), np.zeros((B, Tm, F)), np.zeros((B, Tm), bool),
                    np.zeros((B, Om, F)), np.zeros((B, Om), bool))
        for r, v in enumerate(views):
            batch.self_features[r] = v.self_features
            nt, no = len(v.teammates), len(v.opponents)
            if nt > Tm or no > Om:
                raise DimensionError("observation exceeds padded batch width")
            batch.teammates[r, :nt] = v.teammates
            batch.teammate_mask[r, :nt] = True
            batch.opponents[r, :no] = v.opponents
            batch.opponent_mask[r, :no] = True
        return batch

    def take(self, idx) -> "ObservationBatch":
        return ObservationBatch(self.self_features[idx], self.teammates[idx], self.teammate_mask[idx],
                                self.opponents[idx], self.opponent_mask[idx])

    @staticmethod
    def concat(batches: Sequence["ObservationBatch"]) -> "ObservationBatch":
        return ObservationBatch(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                                  ("self_features", "teammates", "teammate_mask", "opponents", "opponent_mask")))


# graph stages

def embed_self(params: PolicyParams, self_features) -> tuple[Tensor, Tensor]:
    """f_a on the agent's own state: returns (width-d2 node embedding, width-d1 read-out h)."""
    node = mlp_forward(params.blocks["a"], self_features)
    return node, mlp_forward(params.blocks["a_readout"], node)


def embed_opponents(params: PolicyParams, opponent_features) -> Tensor:
    return mlp_forward(params.blocks["b"], opponent_features)


def opponent_attention(h, opp_embeddings, mask=None) -> tuple[Tensor, Tensor]:
    """Attention of each agent over its opponents.

    ``h`` is (B, d1) and ``opp_embeddings`` (B, O, d1); unbatched inputs
    ((d1,), (O, d1)) are accepted too. Logits are dot products divided by d1.
    Rows with no opponents get all-zero weights and a zero joint embedding.
    """
    h, opp = as_tensor(h), as_tensor(opp_embeddings)
    unbatched = h.ndim == 1
    if unbatched:
        h = reshape(h, (1, h.shape[0]))
        opp = reshape(opp, (1, *opp.shape))
        mask = None if mask is None else np.asarray(mask)[None]
    B, O, d1 = opp.shape
    if h.shape != (B, d1):
        raise DimensionError(f"self embedding {h.shape} vs opponent embeddings {opp.shape}")
    mask = np.ones((B, O), bool) if mask is None else np.asarray(mask, bool)
    logits = tsum(mul(reshape(h, (B, 1, d1)), opp), axis=-1) / float(d1)
    psi = masked_softmax(logits, mask, allow_empty=True)
    e = tsum(mul(reshape(psi, (B, O, 1)), opp), axis=1)
    if unbatched:
        return getitem(psi, 0), getitem(e, 0)
    return psi, e


def fuse(params: PolicyParams, h, e) -> Tensor:
    """Concatenate (h, e) in that order and project to width d2."""
    return mlp_forward(params.blocks["fuse"], concat([h, e], axis=-1))


def teammate_propagate(params: PolicyParams, H0, mask=None, k: int | None = None) -> tuple[Tensor, list[Tensor]]:
    """K rounds of attention over teammates.

    ``H0`` is (B, G, d2): row 0 of each group is the acting agent, the rest
    its teammates (padded entries masked out). Each member attends to every
    other living member but never to itself; a member with no living
    teammates pools a zero vector. With ``config.residual`` the f_c output
    is added to the member's current embedding, otherwise it replaces it.
    Returns H^K and the (B, G, G) attention matrix of every round.
    """
    H = as_tensor(H0)
    if H.ndim == 2:
        H = reshape(H, (1, *H.shape))
        mask = None if mask is None else np.asarray(mask)[None]
    B, G, d2 = H.shape
    k = params.config.k if k is None else k
    mask = np.ones((B, G), bool) if mask is None else np.asarray(mask, bool)
    pair = mask[:, :, None] & mask[:, None, :] & ~np.eye(G, dtype=bool)[None]
    phis = []
    for _ in range(k):
        logits = matmul(H, swap_last(H)) / float(d2)
        phi = masked_softmax(logits, pair, allow_empty=True)
        update = mlp_forward(params.blocks["c"], matmul(phi, H))
        H = H + update if params.config.residual else update
        phis.append(phi)
    return H, phis


@dataclass
class PolicyOutput:
    move_logp: Tensor  # (B, n_moves) log-probabilities
    shoot_logit: Tensor  # (B,)
    value: Tensor  # (B,)
    psi: Tensor  # (B, Om)
    phi: list[Tensor]  # per round, (B, Tm): the acting agent's weights over its teammates


def forward_batch(params: PolicyParams, batch: ObservationBatch) -> PolicyOutput:
    cfg = params.config
    B, F = batch.self_features.shape
    if F != cfg.feature_dim:
        raise DimensionError(f"feature width {F} != configured {cfg.feature_dim}")
    Tm, Om = batch.teammates.shape[1], batch.opponents.shape[1]

    node_self, h = embed_self(params, batch.self_features)
    hopp = embed_opponents(params, batch.opponents)
    psi, e = opponent_attention(h, hopp, batch.opponent_mask)
    H0_self = fuse(params, h, e)
    H0_team = mlp_forward(params.blocks["a"], batch.teammates)
    H0 = concat([reshape(H0_self, (B, 1, cfg.d2)), H0_team], axis=1)
    group_mask = np.concatenate([np.ones((B, 1), bool), batch.teammate_mask], axis=1)
    HK, phis = teammate_propagate(params, H0, group_mask)
    final = getitem(HK, (slice(None), 0))

    head = mlp_forward(params.blocks["d"], final)
    move_logp = log_softmax(getitem(head, (slice(None), slice(0, cfg.n_moves))))
    shoot_logit = getitem(head, (slice(None), cfg.n_moves))
    value = reshape(mlp_forward(params.blocks["v"], final), (B,))
    phi_self = [getitem(p, (slice(None), 0, slice(1, Tm + 1))) for p in phis]
    return PolicyOutput(move_logp, shoot_logit, value, psi, phi_self)


# single-agent view

@dataclass
class ActionDistribution:
    move_probs: np.ndarray  # (n_moves,)
    shoot_prob: float
    move_logp: np.ndarray
    shoot_logit: float


@dataclass
class AttentionReport:
    opponent_ids: list[int]
    psi: np.ndarray  # one weight per opponent
    teammate_ids: list[int]
    phi: list[np.ndarray] = field(default_factory=list)  # per round, one weight per teammate

    def ring_weights(self) -> dict[int, float]:
        """Attention per other agent for ring rendering, normalized to sum to 1.

        Opponent weights and last-round teammate weights are pooled and
        rescaled by their total.
        """
        weights = dict(zip(self.opponent_ids, self.psi.tolist()))
        if self.phi:
            weights.update(zip(self.teammate_ids, self.phi[-1].tolist()))
        total = sum(weights.values())
        return {k: v / total for k, v in weights.items()} if total > 0 else weights


def forward(obs: ObservationView, params: PolicyParams) -> tuple[ActionDistribution, float, AttentionReport]:
    out = forward_batch(params, ObservationBatch.from_views([obs]))
    logp = out.move_logp.data[0]
    z = float(out.shoot_logit.data[0])
    dist = ActionDistribution(np.exp(logp), _sigmoid(z), logp, z)
    nt, no = len(obs.teammates), len(obs.opponents)
    report = AttentionReport(list(obs.opponent_ids), out.psi.data[0, :no].copy(),
                             list(obs.teammate_ids), [p.data[0, :nt].copy() for p in out.phi])
    return dist, float(out.value.data[0]), report


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def _log_sigmoid_np(z):
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def joint_log_prob(move_logp: np.ndarray, shoot_logit: np.ndarray, moves: np.ndarray, shoots: np.ndarray) -> np.ndarray:
    """log pi(move) + log p(shoot flag), treating the two channels as independent."""
    moves = np.asarray(moves, dtype=np.intp)
    lp_move = np.take_along_axis(move_logp, moves[:, None], axis=1)[:, 0]
    signed = np.where(np.asarray(shoots, bool), shoot_logit, -shoot_logit)
    return lp_move + _log_sigmoid_np(signed)


def sample_batch(move_logp: np.ndarray, shoot_logit: np.ndarray, rng: np.random.Generator):
    """Sample (moves, shoots, joint log-probs) for a batch of distributions."""
    B = len(move_logp)
    u = rng.random((B, 2))
    cdf = np.cumsum(np.exp(move_logp), axis=1)
    moves = np.minimum((u[:, :1] >= cdf).sum(axis=1), move_logp.shape[1] - 1)
    # round-off at the top of the cdf must not select a zero-probability action
    probs = np.exp(move_logp)
    bad = probs[np.arange(B), moves] == 0
    if bad.any():
        last_positive = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
        moves = np.where(bad, last_positive, moves)
    shoots = u[:, 1] < 1.0 / (1.0 + np.exp(-np.clip(shoot_logit, -700.0, 700.0)))
    return moves, shoots, joint_log_prob(move_logp, shoot_logit, moves, shoots)


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> tuple[Action, bool, float]:
    moves, shoots, logp = sample_batch(dist.move_logp[None], np.array([dist.shoot_logit]), rng)
    return Action(int(moves[0])), bool(shoots[0]), float(logp[0])


def distribution_from_probs(move_probs, shoot_prob: float) -> ActionDistribution:
    """Build a distribution directly from probabilities (used by tests and scripted agents)."""
    p = np.asarray(move_probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    shoot_prob = float(shoot_prob)
    if shoot_prob <= 0.0:
        z = -1000.0
    elif shoot_prob >= 1.0:
        z = 1000.0
    else:
        z = math.log(shoot_prob) - math.log1p(-shoot_prob)
    return ActionDistribution(p, shoot_prob, logp, z)
