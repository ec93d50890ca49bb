"""Lewis discrimination game simulator: autodiff core, agents, training and language metrics."""

__version__ = "0.1.0"
