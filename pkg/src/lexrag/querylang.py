"""Parser and renderer for the logical query-string language.

Grammar (operators are upper-case only)::

    query   := or_expr
    or_expr := and_expr ("OR" and_expr)*
    and_expr:= unary (["AND"] unary)*        juxtaposition joins with the default operator
    unary   := "NOT" unary | primary
    primary := [field ":"] (word | '"' phrase '"' | "(" or_expr ")") ["^" number]

``NOT`` inside an ``And``/``Or`` subtracts from the set formed by its positive
siblings, so ``a OR NOT b`` means ``a`` without ``b``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Union

from .index import analyze

FIELD_SCOPES = ("title", "content", "any")
OPERATORS = ("AND", "OR", "NOT")


class QuerySyntaxError(ValueError):
    """A query string that cannot be parsed; ``position`` is a character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.message = message
        self.position = position


@dataclass(frozen=True)
class Term:
    token: str
    field: str = "any"
    boost: float = 1.0


@dataclass(frozen=True)
class Phrase:
    tokens: tuple[str, ...]
    field: str = "any"
    boost: float = 1.0


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Not:
    child: object


QueryAst = Union[Term, Phrase, And, Or, Not]
Leaf = Union[Term, Phrase]


@dataclass(frozen=True)
class ParseOptions:
    default_operator: str = "OR"
    allow_boolean_ops: bool = True

    def __post_init__(self):
        if self.default_operator not in ("OR", "AND"):
            raise ValueError(f"default_operator must be OR or AND, not {self.default_operator!r}")


# -- lexer -----------------------------------------------------------------

_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_FIELD_RE = re.compile(r"(title|content):")
_WORD_STOP = set('()"^')


@dataclass
class _Tok:
    kind: str  # WORD PHRASE LPAREN RPAREN AND OR NOT FIELD BOOST EOF
    text: str
    pos: int


def _lex(s: str) -> list[_Tok]:
    toks = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c.isspace():
            i += 1
        elif c == "(":
            toks.append(_Tok("LPAREN", c, i))
            i += 1
        elif c == ")":
            toks.append(_Tok("RPAREN", c, i))
            i += 1
        elif c == '"':
            j = s.find('"', i + 1)
            if j < 0:
                raise QuerySyntaxError("unbalanced quote", i)
            toks.append(_Tok("PHRASE", s[i + 1 : j], i))
            i = j + 1
        elif c == "^":
            m = _NUMBER_RE.match(s, i + 1)
            if not m:
                raise QuerySyntaxError("boost '^' must be followed by a number", i)
            toks.append(_Tok("BOOST", m.group(), i))
            i = m.end()
        else:
            j = i
            while j < n and not s[j].isspace() and s[j] not in _WORD_STOP:
                j += 1
            word = s[i:j]
            m = _FIELD_RE.match(word)
            if m:
                toks.append(_Tok("FIELD", m.group(1), i))
                if m.end() < len(word):
                    toks.append(_Tok("WORD", word[m.end():], i + m.end()))
            elif word in OPERATORS:
                toks.append(_Tok(word, word, i))
            else:
                toks.append(_Tok("WORD", word, i))
            i = j
    toks.append(_Tok("EOF", "", n))
    return toks


# -- parser ----------------------------------------------------------------

_UNIT_START = ("WORD", "PHRASE", "LPAREN", "FIELD", "NOT")


def _has_positive(node) -> bool:
    return not isinstance(node, Not)


class _Parser:
    def __init__(self, text: str, opts: ParseOptions):
        self.toks = _lex(text)
        self.i = 0
        self.opts = opts

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def check_op_allowed(self, tok: _Tok):
        if not self.opts.allow_boolean_ops:
            raise QuerySyntaxError(f"boolean operator {tok.kind} is disabled in this mode", tok.pos)

    def parse(self) -> QueryAst:
        start = self.peek()
        if start.kind == "EOF":
            raise QuerySyntaxError("empty query", 0)
        node, _ = self.or_expr(scope="any")
        tok = self.peek()
        if tok.kind == "RPAREN":
            raise QuerySyntaxError("unbalanced parenthesis ')'", tok.pos)
        if tok.kind != "EOF":
            raise QuerySyntaxError(f"unexpected {tok.text!r}", tok.pos)
        if isinstance(node, Not):
            raise QuerySyntaxError("query has no positive clause", start.pos)
        return node

    def expect_unit(self, after: _Tok):
        tok = self.peek()
        if tok.kind not in _UNIT_START:
            what = "end of query" if tok.kind == "EOF" else repr(tok.text)
            raise QuerySyntaxError(f"dangling operator {after.kind}: expected a clause, found {what}", after.pos)

    def or_expr(self, scope):
        start = self.peek().pos
        node, built = self.and_expr(scope)
        children = list(node.children) if built and isinstance(node, Or) else [node]
        joined = False
        while self.peek().kind == "OR":
            op = self.take()
            self.check_op_allowed(op)
            self.expect_unit(op)
            node, built = self.and_expr(scope)
            children.extend(node.children if built and isinstance(node, Or) else [node])
            joined = True
        if not joined:
            return children[0] if len(children) == 1 else Or(tuple(children)), len(children) > 1
        if not any(map(_has_positive, children)):
            raise QuerySyntaxError("query has no positive clause", start)
        return Or(tuple(children)), True

    def and_expr(self, scope):
        start = self.peek()
        if start.kind in ("AND", "OR"):
            self.check_op_allowed(start)
            raise QuerySyntaxError(f"dangling operator {start.kind}: no clause before it", start.pos)
        node = self.unary(scope)
        built = False
        while True:
            tok = self.peek()
            if tok.kind == "AND":
                self.take()
                self.check_op_allowed(tok)
                self.expect_unit(tok)
                cls = And
            elif tok.kind in _UNIT_START:
                cls = And if self.opts.default_operator == "AND" else Or
            else:
                break
            item = self.unary(scope)
            if built and type(node) is cls:
                node = cls(node.children + (item,))
            else:
                node = cls((node, item))
                built = True
        if built and not any(map(_has_positive, node.children)):
            raise QuerySyntaxError("query has no positive clause", start.pos)
        return node, built

    def unary(self, scope):
        tok = self.peek()
        if tok.kind == "NOT":
            self.take()
            self.check_op_allowed(tok)
            self.expect_unit(tok)
            child = self.unary(scope)
            if isinstance(child, Not):
                raise QuerySyntaxError("NOT cannot negate a negated clause", tok.pos)
            return Not(child)
        return self.primary(scope)

    def primary(self, scope):
        tok = self.take()
        if tok.kind == "FIELD":
            scope = tok.text
            nxt = self.peek()
            if nxt.kind not in ("WORD", "PHRASE", "LPAREN"):
                raise QuerySyntaxError(f"field prefix {tok.text}: must be followed by a term, phrase or group", tok.pos)
            tok = self.take()
        if tok.kind == "WORD":
            tokens = analyze(tok.text)
            if not tokens:
                raise QuerySyntaxError(f"term {tok.text!r} has no searchable text", tok.pos)
            node = Term(tokens[0], scope) if len(tokens) == 1 else Phrase(tuple(tokens), scope)
        elif tok.kind == "PHRASE":
            tokens = analyze(tok.text)
            if not tokens:
                raise QuerySyntaxError("phrase has no searchable text", tok.pos)
            node = Phrase(tuple(tokens), scope)
        elif tok.kind == "LPAREN":
            if not self.opts.allow_boolean_ops:
                raise QuerySyntaxError("grouping with parentheses is disabled in this mode", tok.pos)
            if self.peek().kind == "RPAREN":
                raise QuerySyntaxError("empty parentheses", tok.pos)
            node, _ = self.or_expr(scope)
            close = self.take()
            if close.kind != "RPAREN":
                raise QuerySyntaxError("unbalanced parenthesis '('", tok.pos)
        elif tok.kind == "BOOST":
            raise QuerySyntaxError("boost without a clause", tok.pos)
        elif tok.kind == "RPAREN":
            raise QuerySyntaxError("unbalanced parenthesis ')'", tok.pos)
        elif tok.kind == "EOF":
            raise QuerySyntaxError("unexpected end of query", tok.pos)
        else:
            raise QuerySyntaxError(f"unexpected {tok.text!r}", tok.pos)

        if self.peek().kind == "BOOST":
            btok = self.take()
            if not self.opts.allow_boolean_ops:
                raise QuerySyntaxError("term boosting is disabled in this mode", btok.pos)
            factor = float(btok.text)
            if not (math.isfinite(factor) and factor > 0):
                raise QuerySyntaxError("boost must be a positive finite number", btok.pos)
            node = _scale_boost(node, factor)
        return node


def _scale_boost(node, factor: float):
    if isinstance(node, (Term, Phrase)):
        return replace(node, boost=node.boost * factor)
    if isinstance(node, Not):
        return node
    return type(node)(tuple(_scale_boost(c, factor) for c in node.children))


def parse_query(query: str | bytes, opts: ParseOptions | None = None) -> QueryAst:
    """Parse a query string into an AST, raising :class:`QuerySyntaxError` on bad input."""
    opts = opts or ParseOptions()
    if isinstance(query, (bytes, bytearray)):
        try:
            query = bytes(query).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise QuerySyntaxError("query is not valid UTF-8", exc.start) from None
    if not query.strip():
        raise QuerySyntaxError("empty query", 0)
    return _Parser(query, opts).parse()


# -- renderer --------------------------------------------------------------

def _fmt_boost(b: float) -> str:
    text = repr(float(b))
    return text[:-2] if text.endswith(".0") else text


def _render_leaf(node: Leaf) -> str:
    prefix = "" if node.field == "any" else node.field + ":"
    body = node.token if isinstance(node, Term) else '"' + " ".join(node.tokens) + '"'
    suffix = "" if node.boost == 1.0 else "^" + _fmt_boost(node.boost)
    return prefix + body + suffix


def _render(node, juxtapose_cls) -> str:
    if isinstance(node, (Term, Phrase)):
        return _render_leaf(node)
    if isinstance(node, Not):
        inner = _render(node.child, juxtapose_cls)
        return "NOT " + (f"({inner})" if isinstance(node.child, (And, Or)) else inner)
    parts = []
    for child in node.children:
        text = _render(child, juxtapose_cls)
        parts.append(f"({text})" if isinstance(child, (And, Or)) else text)
    if type(node) is juxtapose_cls:
        return " ".join(parts)
    return (" AND " if isinstance(node, And) else " OR ").join(parts)


def render_query(ast: QueryAst, opts: ParseOptions | None = None) -> str:
    """Render an AST as a canonical query string.

    Operators are written explicitly, except when ``opts`` disables boolean
    operators; then default-operator nodes are written by juxtaposition.
    """
    juxtapose_cls = None
    if opts is not None and not opts.allow_boolean_ops:
        juxtapose_cls = And if opts.default_operator == "AND" else Or
    return _render(ast, juxtapose_cls)


def iter_leaves(node, negated: bool = False):
    """Yield ``(leaf, negated)`` pairs in left-to-right order."""
    if isinstance(node, (Term, Phrase)):
        yield node, negated
    elif isinstance(node, Not):
        yield from iter_leaves(node.child, True)
    else:
        for child in node.children:
            yield from iter_leaves(child, negated)


def positive_leaves(node) -> list[Leaf]:
    return [leaf for leaf, neg in iter_leaves(node) if not neg]
