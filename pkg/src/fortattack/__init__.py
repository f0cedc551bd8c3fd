"""FortAttack: two-team self-play with graph-attention policies and PPO."""

__version__ = "0.1.0"
