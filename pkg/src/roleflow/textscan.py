"""Tokenizer plus parsers for canonical value and color-set descriptor text.

Shared by the marking codec and the model/scenario readers so every
persisted artifact uses one lexical convention: '#' comments, quoted text
with backslash escapes, and identifiers that may carry a trailing '!'.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cpn import ColorSet, Value, value_of
from .errors import ModelSyntaxError

_PUNCT = set("(){},;:=.")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | set("0123456789!")

_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "int" | "string" | "punct" | "arrow" | "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                advance(1)
            continue
        start_line, start_col = line, col
        if ch == "-" and i + 1 < n and text[i + 1] == ">":
            tokens.append(Token("arrow", "->", start_line, start_col))
            advance(2)
            continue
        if ch == "-" or ch.isdigit():
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            lit = text[i:j]
            if lit == "-":
                raise ModelSyntaxError(start_line, start_col, "a token")
            tokens.append(Token("int", lit, start_line, start_col))
            advance(j - i)
            continue
        if ch == '"':
            out = []
            j = i + 1
            while True:
                if j >= n:
                    raise ModelSyntaxError(start_line, start_col, "closing quote")
                c = text[j]
                if c == '"':
                    j += 1
                    break
                if c == "\\":
                    if j + 1 >= n or text[j + 1] not in _UNESCAPES:
                        raise ModelSyntaxError(start_line, start_col, "a valid escape")
                    out.append(_UNESCAPES[text[j + 1]])
                    j += 2
                    continue
                if c == "\n":
                    raise ModelSyntaxError(start_line, start_col, "closing quote before end of line")
                out.append(c)
                j += 1
            tokens.append(Token("string", "".join(out), start_line, start_col))
            advance(j - i)
            continue
        if ch in _IDENT_START:
            j = i + 1
            while j < n and text[j] in _IDENT_CONT:
                j += 1
            tokens.append(Token("ident", text[i:j], start_line, start_col))
            advance(j - i)
            continue
        if ch in _PUNCT:
            tokens.append(Token("punct", ch, start_line, start_col))
            advance(1)
            continue
        raise ModelSyntaxError(start_line, start_col, f"a token (found {ch!r})")
    tokens.append(Token("eof", "", line, col))
    return tokens


class TokenStream:
    def __init__(self, tokens: list[Token]):
        self._tokens = tokens
        self._pos = 0

    def peek(self, ahead: int = 0) -> Token:
        return self._tokens[min(self._pos + ahead, len(self._tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "eof":
            self._pos += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.at(kind, text):
            return self.next()
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            wanted = what or (text if text is not None else kind)
            raise ModelSyntaxError(tok.line, tok.col, f"{wanted} (found {tok.text or tok.kind!r})")
        return self.next()

    def fail(self, expected: str):
        tok = self.peek()
        raise ModelSyntaxError(tok.line, tok.col, expected)


def stream(text: str) -> TokenStream:
    return TokenStream(tokenize(text))


def parse_value(ts: TokenStream, colorset: ColorSet) -> Value:
    """Parse one canonical value of the given color set."""
    kind = colorset.kind
    tok = ts.peek()
    if kind == "unit":
        ts.expect("punct", "(")
        ts.expect("punct", ")")
        return Value(colorset, None)
    if kind == "int":
        t = ts.expect("int", what="an integer")
        return Value(colorset, int(t.text))
    if kind == "text":
        t = ts.expect("string", what="a quoted text value")
        return Value(colorset, t.text)
    if kind == "enum":
        t = ts.expect("ident", what=f"a member of enum {colorset.name}")
        if t.text not in colorset.members:
            raise ModelSyntaxError(t.line, t.col, f"a member of enum {colorset.name}")
        return Value(colorset, t.text)
    # product
    ts.expect("punct", "(")
    parts = []
    for idx, comp in enumerate(colorset.components):
        if idx:
            ts.expect("punct", ",")
        parts.append(parse_value(ts, comp))
    ts.expect("punct", ")")
    return value_of(colorset, tuple(parts))


def parse_value_text(text: str, colorset: ColorSet) -> Value:
    ts = stream(text)
    v = parse_value(ts, colorset)
    ts.expect("eof", what="end of value")
    return v


def parse_descriptor(ts: TokenStream) -> ColorSet:
    """Parse a self-contained descriptor: name=structure, recursively."""
    name = ts.expect("ident", what="a color set name").text
    ts.expect("punct", "=")
    head = ts.expect("ident", what="a color kind").text
    if head in ("unit", "int", "text"):
        return ColorSet(name, head)
    if head == "enum":
        ts.expect("punct", "{")
        members = [ts.expect("ident", what="an enum member").text]
        while ts.accept("punct", ","):
            members.append(ts.expect("ident", what="an enum member").text)
        ts.expect("punct", "}")
        return ColorSet(name, "enum", members=tuple(members))
    if head == "product":
        ts.expect("punct", "(")
        comps = [parse_descriptor(ts)]
        while ts.accept("punct", ","):
            comps.append(parse_descriptor(ts))
        ts.expect("punct", ")")
        return ColorSet(name, "product", components=tuple(comps))
    ts.fail("one of unit/int/text/enum/product")


def parse_descriptor_text(text: str) -> ColorSet:
    ts = stream(text)
    cs = parse_descriptor(ts)
    ts.expect("eof", what="end of descriptor")
    return cs
