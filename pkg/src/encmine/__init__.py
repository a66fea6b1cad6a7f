"""Encrypted malicious traffic detection from encrypted-packet side channels."""

__version__ = "0.1.0"
TOOL_NAME = "encmine"
