"""Safe deep Q-learning for three-lane highway driving."""

__version__ = "0.1.0"
