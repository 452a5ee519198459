"""Content digests that ignore counters, dates and HTML attributes."""

from __future__ import annotations

import re

import mmh3

from hostwise.core.constants import HASH_SEED

HTML_TYPES = ("text/html", "application/xhtml+xml")

TAG_ATTRIBUTES = re.compile(r"<\s*(/?)\s*([A-Za-z][A-Za-z0-9:\-]*)[^>]*>")
ISO_DATE = re.compile(
    r"\d{4}-\d{1,2}-\d{1,2}"
    r"(?:[T ]\d{1,2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?"
)
NUMERIC_DATE = re.compile(r"\b\d{1,2}[/.\-]\d{1,2}[/.\-]\d{2,4}\b")
_MONTHS = (
    r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?"
    r"|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?"
)
MONTH_DATE = re.compile(
    rf"\b{_MONTHS}\s+\d{{1,2}}(?:st|nd|rd|th)?\b|\b\d{{1,2}}(?:st|nd|rd|th)?\s+{_MONTHS}(?=\W|$)",
    re.IGNORECASE,
)
TIME_OF_DAY = re.compile(r"\b\d{1,2}:\d{2}(?::\d{2})?\s*(?:[ap]\.?m\.?)?(?=\W|$)", re.IGNORECASE)
DIGITS = re.compile(r"\d+")
WHITESPACE = re.compile(r"\s+")


def is_html(content_type: str | None) -> bool:
    if not content_type:
        return False
    return content_type.split(";", 1)[0].strip().lower() in HTML_TYPES


def charset_of(content_type: str | None) -> str:
    if content_type:
        for param in content_type.split(";")[1:]:
            key, _, value = param.partition("=")
            if key.strip().lower() == "charset" and value.strip():
                return value.strip().strip('"')
    return "utf-8"


def summarize(text: str) -> str:
    """Strip what changes between near-identical pages."""
    text = TAG_ATTRIBUTES.sub(r"<\1\2>", text)
    text = ISO_DATE.sub(" ", text)
    text = NUMERIC_DATE.sub(" ", text)
    text = MONTH_DATE.sub(" ", text)
    text = TIME_OF_DAY.sub(" ", text)
    text = DIGITS.sub("", text)
    return WHITESPACE.sub(" ", text).strip()


def digest(content: bytes, content_type: str | None) -> int:
    """128-bit digest: summarized decoded text for HTML, raw bytes otherwise."""
    if not is_html(content_type):
        return mmh3.hash128(content, HASH_SEED, signed=False)
    try:
        text = content.decode(charset_of(content_type), errors="replace")
    except LookupError:
        text = content.decode("utf-8", errors="replace")
    return mmh3.hash128(summarize(text).encode("utf-8"), HASH_SEED, signed=False)


__all__ = ["charset_of", "digest", "is_html", "summarize"]
