"""Wide and deep graph neural networks with offline and online learning."""

__version__ = "0.1.0"
