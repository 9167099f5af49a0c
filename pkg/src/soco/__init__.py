"""Solo-to-collaborative multi-agent RL: reuse a behavior-cloned solo policy inside MATD3."""

__version__ = "0.1.0"
