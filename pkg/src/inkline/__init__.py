"""inkline: offline handwritten word recognition built from scratch on numpy."""

__version__ = "0.1.0"
