"""robots.txt parsing and matching.

Rules are selected from the group whose user-agent token best matches the
crawler's token, falling back to the ``*`` group.  A path is checked against
every Allow/Disallow pattern of the group: the longest matching pattern
wins and Allow wins ties.  Patterns support ``*`` wildcards and a trailing
``$`` anchor; an empty Disallow allows everything.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from hostwise.core.burl import QUERY_SAFE, percent_normalize

logger = logging.getLogger(__name__)

ROBOTS_PATH = b"/robots.txt"


@dataclass(frozen=True)
class RobotsRule:
    pattern: str
    allow: bool
    regex: re.Pattern[str] = field(compare=False, repr=False)

    @classmethod
    def build(cls, value: str, allow: bool) -> "RobotsRule":
        anchored = value.endswith("$")
        body = value[:-1] if anchored else value
        pieces = [re.escape(percent_normalize(p, QUERY_SAFE)) for p in body.split("*")]
        regex = ".*".join(pieces) + (r"\Z" if anchored else "")
        return cls(pattern=value, allow=allow, regex=re.compile(regex, re.S))

    def matches(self, path: str) -> bool:
        return self.regex.match(path) is not None


@dataclass
class RobotsRules:
    """The rules of one host for one user-agent token."""

    rules: list[RobotsRule] = field(default_factory=list)
    crawl_delay_ms: int | None = None
    sitemaps: list[str] = field(default_factory=list)

    def allowed(self, path_query: bytes | str) -> bool:
        path = path_query.decode("ascii") if isinstance(path_query, bytes) else path_query
        if path == ROBOTS_PATH.decode():
            return True
        best: RobotsRule | None = None
        for rule in self.rules:
            if not rule.matches(path):
                continue
            if best is None or len(rule.pattern) > len(best.pattern):
                best = rule
            elif len(rule.pattern) == len(best.pattern) and rule.allow:
                best = rule
        return True if best is None else best.allow

    @classmethod
    def allow_all(cls) -> "RobotsRules":
        return cls()

    @classmethod
    def disallow_all(cls) -> "RobotsRules":
        return cls(rules=[RobotsRule.build("/", allow=False)])

    @classmethod
    def parse(cls, content: bytes | str, agent: str) -> "RobotsRules":
        text = content.decode("utf-8", errors="replace") if isinstance(content, bytes) else content
        text = text.lstrip("\ufeff")
        token = agent.split("/", 1)[0].strip().lower()

        groups: list[tuple[list[str], list[RobotsRule], int | None]] = []
        sitemaps: list[str] = []
        agents: list[str] = []
        rules: list[RobotsRule] = []
        delay: int | None = None
        in_rules = False

        def close_group() -> None:
            if agents:
                groups.append((list(agents), list(rules), delay))

        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or ":" not in line:
                continue
            key, value = (part.strip() for part in line.split(":", 1))
            key = key.lower()
            if key == "user-agent":
                if in_rules:
                    close_group()
                    agents, rules, delay, in_rules = [], [], None, False
                agents.append(value.lower())
            elif key in ("allow", "disallow"):
                in_rules = True
                if value:
                    rules.append(RobotsRule.build(value, allow=key == "allow"))
            elif key == "crawl-delay":
                in_rules = True
                try:
                    delay = int(float(value) * 1000)
                except ValueError:
                    logger.debug("Ignoring bad crawl-delay %r", value)
            elif key == "sitemap":
                sitemaps.append(value)
        close_group()

        chosen: tuple[list[RobotsRule], int | None] | None = None
        best_len = -1
        for names, group_rules, group_delay in groups:
            for name in names:
                if name and name != "*" and name in token and len(name) > best_len:
                    best_len = len(name)
                    chosen = (group_rules, group_delay)
        if chosen is None:
            merged_rules: list[RobotsRule] = []
            merged_delay: int | None = None
            for names, group_rules, group_delay in groups:
                if "*" in names:
                    merged_rules.extend(group_rules)
                    merged_delay = group_delay if group_delay is not None else merged_delay
            chosen = (merged_rules, merged_delay)
        return cls(rules=chosen[0], crawl_delay_ms=chosen[1], sitemaps=sitemaps)


def robots_allowed(rules: RobotsRules | None, path_query: bytes) -> bool:
    """Check a path against a host's rules; unknown rules allow everything."""
    return True if rules is None else rules.allowed(path_query)


__all__ = ["ROBOTS_PATH", "RobotsRule", "RobotsRules", "robots_allowed"]
