"""LMI certification and synthesis for networked control with mode-switched delays."""

__version__ = "0.1.0"
