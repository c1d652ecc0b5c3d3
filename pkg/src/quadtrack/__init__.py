"""Quadrotor trajectory-tracking lab: simulator, MDP environments, T-TD3 trainer, evaluation."""

__version__ = "0.1.0"
