"""Archival store of fetched responses."""
