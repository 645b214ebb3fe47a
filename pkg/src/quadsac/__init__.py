"""Soft Actor-Critic low-level control of a simulated quadrotor."""

__version__ = "0.1.0"
