"""Dual-efficiency preference optimization for tiny interactive agents.

The package covers the full offline pipeline: tree-search trajectory
generation in simulated environments, desirability labeling, behavioral
cloning, KTO/DEPO preference post-training, and success/reward/token/step
evaluation metrics.
"""

__version__ = "0.1.0"
