"""Renderless UAV point-to-point navigation benchmark.

Seeded arena generation, latency-aware closed-loop flight dynamics,
from-scratch DQN/PPO training, quality-of-flight metrics, and a TCP
inference boundary for profiling decision latency on a separate host.
"""

__version__ = "0.1.0"
