"""URL canonicalization and crawl filters shared by every component."""
