import numpy as np
import pytest

from fortattack.env import EnvConfig, Team
from fortattack.policy import GraphConfig
from fortattack.ppo import PPOConfig, train_iter

DESK_ENV = EnvConfig(n_guards=2, n_attackers=2)
DESK_PPO = PPOConfig(steps_per_iteration=2048, num_envs=8)


@pytest.fixture(scope="session")
def selfplay_2v2():
    """40 iterations of desk-scale 2v2 self-play; attacker snapshots kept at iterations 20 and 40."""
    rewards = {Team.GUARD: [], Team.ATTACKER: []}
    snaps = {}
    for res in train_iter(DESK_ENV, DESK_PPO, GraphConfig(), 40, 1):
        for p in res.curve:
            rewards[p.team].append(p.mean_episode_reward)
        if res.iteration in (20, 40):
            snaps[res.iteration] = res.params[Team.ATTACKER].copy()
    return {team: np.array(v) for team, v in rewards.items()}, snaps
