"""Multi-agent data harvesting: simulator, PPO training, smoothing, baselines."""

__version__ = "0.1.0"
