"""Multi-agent perception toolkit producing service level specifications for flying networks."""

__version__ = "0.1.0"
