"""Layer matrix decomposition of trained feedforward networks, plus a
universal Hopfield network engine for memory-capacity experiments."""

__version__ = "0.1.0"
