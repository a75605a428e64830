"""Adversarial imitation learning: discriminator rewards driving SAC, TD3 or PPO."""

from ._rail import *  # noqa: F401,F403
from ._rail import __doc__  # noqa: F401
