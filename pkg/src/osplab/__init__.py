"""Desk-scale simulation lab for overlapped parameter-server synchronization."""
__version__ = "0.1.0"
