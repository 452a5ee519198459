"""Core constants shared by the on-disk and on-wire formats."""

# Bumping either value invalidates sieve files and WARC digest headers.
HASH_VERSION = 1
HASH_SEED = 0x5EED

# Digest summarizer pattern set version, recorded in the warcinfo record.
DIGEST_VERSION = 1

DEFAULT_PORTS = {"http": 80, "https": 443}
SUPPORTED_SCHEMES = frozenset(DEFAULT_PORTS)

# Sentinel "next" pointer of the last record of a virtual queue.
NO_NEXT = 0xFFFF_FFFF_FFFF_FFFF

__all__ = [
    "DEFAULT_PORTS",
    "DIGEST_VERSION",
    "HASH_SEED",
    "HASH_VERSION",
    "NO_NEXT",
    "SUPPORTED_SCHEMES",
]
