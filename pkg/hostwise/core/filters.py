"""Boolean filters gating the crawl phases.

A filter is a tree of :class:`Filter` nodes (``true``, ``false``, ``and``,
``or``, ``not`` and named atoms).  Filters are written as text in the
configuration file, e.g.::

    hostEndsWith(.uk) and not pathContains("/cgi-bin/")

URL filters (schedule, fetch, follow) accept only atoms over a
:class:`~hostwise.core.burl.CrawlUrl`; response filters (parse, store) also
accept atoms over a fetched response.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, ClassVar, Literal, Protocol

from hostwise.core.burl import CrawlUrl

BaseKind = Literal["url", "fetch"]
HOOKS = ("schedule", "fetch", "parse", "follow", "store")
HOOK_KINDS: dict[str, BaseKind] = {
    "schedule": "url",
    "fetch": "url",
    "follow": "url",
    "parse": "fetch",
    "store": "fetch",
}


class FilterSyntaxError(ValueError):
    """Malformed filter expression."""

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownAtom(FilterSyntaxError):
    """The expression names an atom that does not exist for its base type."""


class Response(Protocol):
    """What response atoms read from a fetched page."""

    url: CrawlUrl
    status: int
    is_duplicate: bool

    def header(self, name: str) -> str | None: ...


def _url_of(x: Any) -> CrawlUrl:
    return x if isinstance(x, CrawlUrl) else x.url


class Filter:
    """Base class of all filter nodes."""

    def __call__(self, x: Any) -> bool:
        raise NotImplementedError

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class TrueFilter(Filter):
    def __call__(self, x: Any) -> bool:
        return True

    def to_text(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalseFilter(Filter):
    def __call__(self, x: Any) -> bool:
        return False

    def to_text(self) -> str:
        return "false"


@dataclass(frozen=True)
class And(Filter):
    children: tuple[Filter, ...]

    def __call__(self, x: Any) -> bool:
        return all(child(x) for child in self.children)

    def to_text(self) -> str:
        if not self.children:
            return "true"
        if len(self.children) == 1:
            return self.children[0].to_text()
        return "(" + " and ".join(c.to_text() for c in self.children) + ")"


@dataclass(frozen=True)
class Or(Filter):
    children: tuple[Filter, ...]

    def __call__(self, x: Any) -> bool:
        return any(child(x) for child in self.children)

    def to_text(self) -> str:
        if not self.children:
            return "false"
        if len(self.children) == 1:
            return self.children[0].to_text()
        return "(" + " or ".join(c.to_text() for c in self.children) + ")"


@dataclass(frozen=True)
class Not(Filter):
    child: Filter

    def __call__(self, x: Any) -> bool:
        return not self.child(x)

    def to_text(self) -> str:
        return f"not {self.child.to_text()}"


def _quote(arg: str) -> str:
    return '"' + arg.replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass(frozen=True)
class Atom(Filter):
    """A named predicate with one text argument."""

    name: ClassVar[str]
    kind: ClassVar[BaseKind] = "url"

    arg: str = ""

    def to_text(self) -> str:
        return f"{self.name}({_quote(self.arg)})" if self.arg else f"{self.name}()"


@dataclass(frozen=True)
class HostEndsWith(Atom):
    name: ClassVar[str] = "hostEndsWith"

    def __call__(self, x: Any) -> bool:
        return _url_of(x).host.endswith(self.arg.lower())


@dataclass(frozen=True)
class HostEquals(Atom):
    name: ClassVar[str] = "hostEquals"

    def __call__(self, x: Any) -> bool:
        return _url_of(x).host == self.arg.lower()


@dataclass(frozen=True)
class PathStartsWith(Atom):
    name: ClassVar[str] = "pathStartsWith"

    def __call__(self, x: Any) -> bool:
        return _url_of(x).path_query.startswith(self.arg.encode("utf-8"))


@dataclass(frozen=True)
class PathContains(Atom):
    name: ClassVar[str] = "pathContains"

    def __call__(self, x: Any) -> bool:
        return self.arg.encode("utf-8") in _url_of(x).path_query


@dataclass(frozen=True)
class _RegexAtom(Atom):
    pattern: re.Pattern[str] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", re.compile(self.arg))


@dataclass(frozen=True)
class PathMatches(_RegexAtom):
    name: ClassVar[str] = "pathMatches"

    def __call__(self, x: Any) -> bool:
        return self.pattern.search(_url_of(x).path_query.decode("ascii")) is not None


@dataclass(frozen=True)
class UrlMatches(_RegexAtom):
    name: ClassVar[str] = "urlMatches"

    def __call__(self, x: Any) -> bool:
        return self.pattern.search(str(_url_of(x))) is not None


@dataclass(frozen=True)
class MaxPerHost(Atom):
    """Accepts the first ``n`` URLs of each host, counting acceptances.

    Unlike the other atoms this one keeps state: each evaluation that returns
    true consumes one unit of the host's allowance.
    """

    name: ClassVar[str] = "maxPerHost"
    limit: int = field(init=False, compare=False, repr=False)
    _counts: dict[str, int] = field(init=False, compare=False, repr=False)
    _lock: threading.Lock = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "limit", int(self.arg))
        object.__setattr__(self, "_counts", {})
        object.__setattr__(self, "_lock", threading.Lock())

    def __call__(self, x: Any) -> bool:
        host = _url_of(x).host
        with self._lock:
            seen = self._counts.get(host, 0)
            if seen >= self.limit:
                return False
            self._counts[host] = seen + 1
            return True


@dataclass(frozen=True)
class ContentTypeEquals(Atom):
    name: ClassVar[str] = "contentTypeEquals"
    kind: ClassVar[BaseKind] = "fetch"

    def __call__(self, x: Response) -> bool:
        value = x.header("content-type") or ""
        return value.split(";", 1)[0].strip().lower() == self.arg.lower()


@dataclass(frozen=True)
class StatusClass(Atom):
    name: ClassVar[str] = "statusClass"
    kind: ClassVar[BaseKind] = "fetch"
    digit: int = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        text = self.arg.lower().rstrip("x")
        if len(text) != 1 or not text.isdigit() or not 1 <= int(text) <= 5:
            raise ValueError(f"status class must look like '2xx', got {self.arg!r}")
        object.__setattr__(self, "digit", int(text))

    def __call__(self, x: Response) -> bool:
        return x.status // 100 == self.digit


@dataclass(frozen=True)
class DigestSeen(Atom):
    name: ClassVar[str] = "digestSeen"
    kind: ClassVar[BaseKind] = "fetch"

    def __call__(self, x: Response) -> bool:
        return bool(x.is_duplicate)


ATOMS: dict[str, type[Atom]] = {
    cls.name: cls
    for cls in (
        HostEndsWith,
        HostEquals,
        PathStartsWith,
        PathContains,
        PathMatches,
        UrlMatches,
        MaxPerHost,
        ContentTypeEquals,
        StatusClass,
        DigestSeen,
    )
}
ALIASES = {
    "host-suffix": "hostEndsWith",
    "host-equals": "hostEquals",
    "path-prefix": "pathStartsWith",
    "path-contains": "pathContains",
    "path-regex": "pathMatches",
    "url-regex": "urlMatches",
    "content-type-equals": "contentTypeEquals",
    "status-class": "statusClass",
    "digest-seen": "digestSeen",
    "max-per-host": "maxPerHost",
}

TRUE = TrueFilter()
FALSE = FalseFilter()

_KEYWORDS = ("and", "or", "not", "true", "false")
_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9\-]*")


class _Parser:
    def __init__(self, text: str, kind: BaseKind) -> None:
        self.text = text
        self.kind = kind
        self.pos = 0

    def _skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek_word(self) -> str | None:
        self._skip()
        match = _NAME_RE.match(self.text, self.pos)
        return match.group(0) if match else None

    def _expect(self, char: str) -> None:
        self._skip()
        if self.pos >= len(self.text) or self.text[self.pos] != char:
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            raise FilterSyntaxError(f"expected {char!r}, found {found!r}", self.pos)
        self.pos += 1

    def parse(self) -> Filter:
        result = self._or()
        self._skip()
        if self.pos != len(self.text):
            raise FilterSyntaxError(
                f"unexpected {self.text[self.pos:self.pos + 10]!r}", self.pos
            )
        return result

    def _or(self) -> Filter:
        children = [self._and()]
        while self._peek_word() == "or":
            self.pos += 2
            children.append(self._and())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def _and(self) -> Filter:
        children = [self._unary()]
        while self._peek_word() == "and":
            self.pos += 3
            children.append(self._unary())
        return children[0] if len(children) == 1 else And(tuple(children))

    def _unary(self) -> Filter:
        if self._peek_word() == "not":
            self.pos += 3
            return Not(self._unary())
        return self._primary()

    def _primary(self) -> Filter:
        self._skip()
        start = self.pos
        if self.pos >= len(self.text):
            raise FilterSyntaxError("unexpected end of input", self.pos)
        if self.text[self.pos] == "(":
            self.pos += 1
            inner = self._or()
            self._expect(")")
            return inner
        word = self._peek_word()
        if word is None:
            raise FilterSyntaxError(f"unexpected {self.text[self.pos]!r}", self.pos)
        if word in ("and", "or", "not"):
            raise FilterSyntaxError(f"operator {word!r} needs an operand", start)
        self.pos += len(word)
        if word == "true":
            return TRUE
        if word == "false":
            return FALSE
        cls = ATOMS.get(ALIASES.get(word, word))
        if cls is None:
            raise UnknownAtom(f"unknown atom {word!r}", start)
        if cls.kind == "fetch" and self.kind == "url":
            raise UnknownAtom(f"atom {word!r} needs a fetched response", start)
        self._expect("(")
        arg = self._argument()
        self._expect(")")
        try:
            return cls(arg)
        except (ValueError, re.error) as exc:
            raise FilterSyntaxError(f"bad argument for {word}: {exc}", start) from exc

    def _argument(self) -> str:
        self._skip()
        if self.pos < len(self.text) and self.text[self.pos] == '"':
            self.pos += 1
            chars: list[str] = []
            while self.pos < len(self.text):
                ch = self.text[self.pos]
                if ch == "\\" and self.pos + 1 < len(self.text):
                    chars.append(self.text[self.pos + 1])
                    self.pos += 2
                    continue
                if ch == '"':
                    self.pos += 1
                    return "".join(chars)
                chars.append(ch)
                self.pos += 1
            raise FilterSyntaxError("unterminated string", self.pos)
        end = self.text.find(")", self.pos)
        if end == -1:
            raise FilterSyntaxError("expected ')'", len(self.text))
        arg = self.text[self.pos : end].strip()
        self.pos = end
        return arg


def parse_expression(text: str, kind: BaseKind = "fetch") -> Filter:
    """Parse a filter expression.

    Raises:
        FilterSyntaxError: If the text is not a well-formed expression.
        UnknownAtom: If an atom is unknown or not valid for ``kind``.
    """
    return _Parser(text, kind).parse()


def evaluate(f: Filter, x: Any) -> bool:
    return f(x)


class FilterSet:
    """The five hook-point filters of one agent.

    Filters can be swapped at runtime through the control plane; readers
    always see either the old or the new tree.
    """

    def __init__(self, **expressions: str) -> None:
        unknown = set(expressions) - set(HOOKS)
        if unknown:
            raise ValueError(f"unknown filter hooks: {sorted(unknown)}")
        self._filters: dict[str, Filter] = {}
        for hook in HOOKS:
            self.set(hook, expressions.get(hook, "true"))

    def set(self, hook: str, expression: str) -> Filter:
        if hook not in HOOKS:
            raise ValueError(f"unknown filter hook: {hook}")
        parsed = parse_expression(expression, HOOK_KINDS[hook])
        self._filters[hook] = parsed
        return parsed

    def get(self, hook: str) -> Filter:
        return self._filters[hook]

    @property
    def schedule(self) -> Filter:
        return self._filters["schedule"]

    @property
    def fetch(self) -> Filter:
        return self._filters["fetch"]

    @property
    def parse(self) -> Filter:
        return self._filters["parse"]

    @property
    def follow(self) -> Filter:
        return self._filters["follow"]

    @property
    def store(self) -> Filter:
        return self._filters["store"]


__all__ = [
    "ATOMS",
    "And",
    "FALSE",
    "Filter",
    "FilterSet",
    "FilterSyntaxError",
    "HOOKS",
    "Not",
    "Or",
    "TRUE",
    "UnknownAtom",
    "evaluate",
    "parse_expression",
]
