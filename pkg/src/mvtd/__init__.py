"""Mean-variance TD learning with linear features and an SPSA actor-critic."""

__version__ = "0.1.0"
