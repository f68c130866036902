"""Change-point intrusion detection for software-defined sensor networks."""

__version__ = "0.1.0"
