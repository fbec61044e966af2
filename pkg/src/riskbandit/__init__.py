"""Risk-constrained multi-armed bandits with CVaR constraints."""

__version__ = "0.1.0"
