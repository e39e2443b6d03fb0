"""Entity relation extraction for visually rich documents with a biaffine head selector."""

__version__ = "0.1.0"
