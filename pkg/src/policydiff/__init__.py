"""Conditional diffusion over grid-world policy parameters.

Pipeline: enumerate tasks -> train PPO experts -> distill a farm of 32x82
behavior-cloned policies -> train a conditional diffusion model in parameter
space -> evaluate sampled policies against parameter-statistic baselines and
mixture-of-samples voting.
"""

from .backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
