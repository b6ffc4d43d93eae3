"""Peak-bloom date classification from daily temperature windows."""

__version__ = "0.1.0"
