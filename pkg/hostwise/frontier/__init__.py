"""Frontier data structures: sieve, workbench, virtualizer and distributor."""
