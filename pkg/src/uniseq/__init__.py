"""Universal sequential hypothesis tests built on universal source codes."""

__version__ = "0.1.0"
