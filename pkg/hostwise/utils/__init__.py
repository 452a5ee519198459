"""Shared helpers: log files and atomic state files."""
