"""Tests for the filter expression language."""

from dataclasses import dataclass

import pytest

from hostwise.core import burl
from hostwise.core.filters import (
    FilterSet,
    FilterSyntaxError,
    UnknownAtom,
    parse_expression,
)


@dataclass
class FakeResponse:
    url: burl.CrawlUrl
    status: int = 200
    is_duplicate: bool = False
    content_type: str = "text/html; charset=utf-8"

    def header(self, name: str) -> str | None:
        return self.content_type if name == "content-type" else None


def url(text: str) -> burl.CrawlUrl:
    return burl.parse(text)


class TestParse:
    """Parsing and evaluation of expressions over URLs."""

    def test_constants(self) -> None:
        """true and false evaluate to themselves."""
        assert parse_expression("true")(url("http://a.test/"))
        assert not parse_expression("false")(url("http://a.test/"))

    def test_host_atoms(self) -> None:
        """Host atoms compare the lowercase host."""
        f = parse_expression("hostEndsWith(.UK)", "url")
        assert f(url("http://www.bbc.co.uk/"))
        assert not f(url("http://example.com/"))
        assert parse_expression('hostEquals("a.test")', "url")(url("http://A.test/x"))

    def test_precedence(self) -> None:
        """not binds tighter than and, which binds tighter than or."""
        f = parse_expression(
            'hostEquals(a.test) or hostEquals(b.test) and not pathContains("/cgi-bin/")',
            "url",
        )
        assert f(url("http://a.test/cgi-bin/x"))
        assert f(url("http://b.test/index"))
        assert not f(url("http://b.test/cgi-bin/x"))
        assert not f(url("http://c.test/"))

    def test_parentheses(self) -> None:
        """Parentheses override precedence."""
        f = parse_expression("(hostEquals(a.test) or hostEquals(b.test)) and pathStartsWith(/x)")
        assert f(url("http://b.test/x/1"))
        assert not f(url("http://a.test/y"))

    def test_aliases(self) -> None:
        """Dashed aliases name the same atoms."""
        f = parse_expression("host-suffix(.test) and path-prefix(/a)", "url")
        assert f(url("http://x.test/a/b"))
        assert not f(url("http://x.test/b"))

    def test_regex_atoms(self) -> None:
        """Regex atoms search the path+query or the whole URL."""
        assert parse_expression(r'pathMatches("\.pdf$")')(url("http://a.test/doc.pdf"))
        assert not parse_expression(r'pathMatches("\.pdf$")')(url("http://a.test/doc.html"))
        assert parse_expression('urlMatches("^https://")')(url("https://a.test/"))

    def test_quoted_argument_escapes(self) -> None:
        """Quoted arguments support backslash escapes and closing parens."""
        f = parse_expression('pathContains("a)b\\"c")')
        assert f.arg == 'a)b"c'

    def test_to_text_round_trips(self) -> None:
        """to_text() yields an expression that parses to an equal tree."""
        text = 'not hostEndsWith(".uk") and (pathContains("/a") or false)'
        tree = parse_expression(text, "url")
        assert parse_expression(tree.to_text(), "url") == tree

    @pytest.mark.parametrize(
        "text",
        ["", "and", "hostEquals(a", "(true", "true false", "hostEquals(a) or", 'pathContains("x'],
    )
    def test_syntax_errors(self, text: str) -> None:
        """Malformed text raises FilterSyntaxError."""
        with pytest.raises(FilterSyntaxError):
            parse_expression(text)

    def test_unknown_atom(self) -> None:
        """Unknown atom names are reported with their position."""
        with pytest.raises(UnknownAtom) as info:
            parse_expression("true and bogus(1)")
        assert info.value.position == 9

    def test_response_atom_on_url_hook(self) -> None:
        """Response atoms are rejected where only a URL is available."""
        with pytest.raises(UnknownAtom):
            parse_expression("statusClass(2xx)", "url")

    def test_bad_arguments(self) -> None:
        """Invalid atom arguments surface as syntax errors."""
        with pytest.raises(FilterSyntaxError):
            parse_expression("statusClass(9xx)")
        with pytest.raises(FilterSyntaxError):
            parse_expression('pathMatches("(")')
        with pytest.raises(FilterSyntaxError):
            parse_expression("maxPerHost(many)")


class TestResponseAtoms:
    """Atoms that read fetched responses."""

    def test_status_class(self) -> None:
        response = FakeResponse(url("http://a.test/"), status=404)
        assert parse_expression("statusClass(4xx)")(response)
        assert not parse_expression("statusClass(2xx)")(response)

    def test_content_type(self) -> None:
        response = FakeResponse(url("http://a.test/"))
        assert parse_expression("contentTypeEquals(text/html)")(response)
        assert not parse_expression("content-type-equals(text/plain)")(response)

    def test_digest_seen(self) -> None:
        response = FakeResponse(url("http://a.test/"), is_duplicate=True)
        assert parse_expression("digestSeen()")(response)
        assert parse_expression("not digest-seen()")(FakeResponse(url("http://a.test/")))

    def test_url_atoms_apply_to_responses(self) -> None:
        response = FakeResponse(url("http://a.test/x"))
        assert parse_expression("hostEquals(a.test) and statusClass(2xx)")(response)


def test_max_per_host_counts_acceptances() -> None:
    f = parse_expression("maxPerHost(2)", "url")
    results = [f(url(f"http://a.test/{i}")) for i in range(4)]
    assert results == [True, True, False, False]
    assert f(url("http://b.test/"))


def test_max_per_host_not_consumed_by_short_circuit() -> None:
    f = parse_expression("pathStartsWith(/keep) and maxPerHost(1)", "url")
    assert not f(url("http://a.test/skip"))
    assert f(url("http://a.test/keep/1"))
    assert not f(url("http://a.test/keep/2"))


class TestFilterSet:
    """The per-hook filter set."""

    def test_defaults_accept_everything(self) -> None:
        filters = FilterSet()
        assert filters.schedule(url("http://a.test/"))
        assert filters.store(FakeResponse(url("http://a.test/")))

    def test_set_replaces_filter(self) -> None:
        filters = FilterSet(follow="hostEndsWith(.test)")
        assert not filters.follow(url("http://a.example/"))
        filters.set("follow", "true")
        assert filters.follow(url("http://a.example/"))
        assert filters.get("follow").to_text() == "true"

    def test_hook_kinds(self) -> None:
        """Response atoms are allowed on parse and store only."""
        FilterSet(parse="statusClass(2xx)", store="not digestSeen()")
        with pytest.raises(UnknownAtom):
            FilterSet(schedule="statusClass(2xx)")

    def test_unknown_hook(self) -> None:
        with pytest.raises(ValueError):
            FilterSet(crawl="true")
        with pytest.raises(ValueError):
            FilterSet().set("crawl", "true")
