"""Parser for the compact model-formula language.

Grammar (whitespace-insensitive, intercept always implicit)::

    formula := name '~' term ('+' term)*
    term    := name                          linear term
             | 's' '(' name ',' k '=' INT ')'          smooth term
             | 'sz' '(' name ',' name ',' k '=' INT ')' factor-smooth term

Syntax errors carry the byte offset of the offending token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Union

from .errors import FormulaError

MIN_BASIS_SIZE = 3


@dataclass(frozen=True)
class Linear:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Smooth:
    var: str
    k: int

    def __str__(self) -> str:
        return f"s({self.var}, k={self.k})"


@dataclass(frozen=True)
class FactorSmooth:
    var: str
    factor: str
    k: int

    def __str__(self) -> str:
        return f"sz({self.var}, {self.factor}, k={self.k})"


Term = Union[Linear, Smooth, FactorSmooth]


@dataclass(frozen=True)
class ModelSpec:
    """Parsed formula: response name, ordered terms and the stage count.

    ``K`` is not part of the formula text; it is attached when the model is
    bound to data (via :func:`with_stage_count` or the fitting entry point).
    """

    response: str
    terms: tuple[Term, ...]
    K: int | None = None

    def __str__(self) -> str:
        rhs = " + ".join(str(t) for t in self.terms) if self.terms else "1"
        return f"{self.response} ~ {rhs}"

    def with_stage_count(self, K: int) -> "ModelSpec":
        if K < 2:
            raise FormulaError(f"stage count must be >= 2, got {K}")
        return replace(self, K=K)

    @property
    def variables(self) -> tuple[str, ...]:
        """All covariate/factor names the design needs, in term order."""
        names: dict[str, None] = {}
        for t in self.terms:
            if isinstance(t, Linear):
                names.setdefault(t.name)
            elif isinstance(t, Smooth):
                names.setdefault(t.var)
            else:
                names.setdefault(t.var)
                names.setdefault(t.factor)
        return tuple(names)


_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<int>\d+)"
    r"|(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)"
    r"|(?P<punct>[~+(),=])"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaError(f"unexpected character {text[pos]!r}", offset=pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, value: str | None = None):
        tkind, tvalue, offset = self.next()
        if tkind != kind or (value is not None and tvalue != value):
            want = value if value is not None else kind
            raise FormulaError(f"expected {want!r}, found {tvalue or tkind!r}", offset=offset)
        return tvalue

    def parse(self) -> ModelSpec:
        response = self.expect("name")
        self.expect("punct", "~")
        terms = [self.term()]
        while self.peek()[:2] == ("punct", "+"):
            self.next()
            terms.append(self.term())
        kind, value, offset = self.peek()
        if kind != "eof":
            raise FormulaError(f"trailing input {value!r}", offset=offset)
        seen = set()
        for t in terms:
            if t in seen:
                raise FormulaError(f"duplicate term {t}")
            seen.add(t)
        return ModelSpec(response=response, terms=tuple(terms))

    def term(self) -> Term:
        kind, value, offset = self.next()
        if kind != "name":
            raise FormulaError(f"expected a term, found {value or kind!r}", offset=offset)
        if self.peek()[:2] != ("punct", "("):
            return Linear(value)
        if value == "s":
            return self.smooth(offset)
        if value == "sz":
            return self.factor_smooth(offset)
        raise FormulaError(f"unknown term constructor {value!r}", offset=offset)

    def smooth(self, offset: int) -> Smooth:
        self.expect("punct", "(")
        var = self.expect("name")
        self.expect("punct", ",")
        k = self.basis_size()
        self.expect("punct", ")")
        return Smooth(var=var, k=k)

    def factor_smooth(self, offset: int) -> FactorSmooth:
        self.expect("punct", "(")
        var = self.expect("name")
        self.expect("punct", ",")
        factor = self.expect("name")
        self.expect("punct", ",")
        k = self.basis_size()
        self.expect("punct", ")")
        return FactorSmooth(var=var, factor=factor, k=k)

    def basis_size(self) -> int:
        kind, value, offset = self.next()
        if (kind, value) != ("name", "k"):
            raise FormulaError(f"expected 'k=', found {value or kind!r}", offset=offset)
        self.expect("punct", "=")
        kind, value, offset = self.next()
        if kind != "int":
            raise FormulaError(f"expected an integer basis size, found {value or kind!r}", offset=offset)
        k = int(value)
        if k < MIN_BASIS_SIZE:
            raise FormulaError(f"basis size k={k} below minimum {MIN_BASIS_SIZE}", offset=offset)
        return k


def parse_formula(text: str) -> ModelSpec:
    """Parse formula text into a :class:`ModelSpec`.

    Total on arbitrary strings: returns a spec or raises
    :class:`~ordsmooth.errors.FormulaError`, never anything else.
    """
    if not isinstance(text, str):
        raise FormulaError(f"formula must be a string, got {type(text).__name__}")
    return _Parser(text).parse()
