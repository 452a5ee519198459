"""Crawl agent assembly and lifecycle."""

from hostwise.agent.agent import CrawlAgent, CrawlSummary

__all__ = ["CrawlAgent", "CrawlSummary"]
