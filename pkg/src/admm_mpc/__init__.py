"""Real-time ADMM model predictive control and its closed-loop analysis."""

__version__ = "0.1.0"
