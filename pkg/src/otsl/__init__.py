"""Transport stability on Whitney-type decompositions."""

__version__ = "0.1.0"
