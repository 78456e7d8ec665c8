"""Investment activity index toolkit."""

__version__ = "0.1.0"
