"""Fetching, parsing, DNS and deduplication workers."""
