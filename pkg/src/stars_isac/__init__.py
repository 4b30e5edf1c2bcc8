"""STARS-enabled integrated sensing and communication: CRB-driven design toolkit."""

__version__ = "0.1.0"
