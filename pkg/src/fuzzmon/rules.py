"""Textual rule language for the expert rule base.

One rule per line::

    IF util IS extreme AND util IS USUALLY low THEN condition IS abnormal

Keywords are case-insensitive. ``#`` starts a comment that runs to the end
of the line. The only output variable is ``condition`` with the terms
``normal`` and ``abnormal``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

KEYWORDS = frozenset({"IF", "AND", "THEN", "IS", "USUALLY"})
OUTPUT_VARIABLE = "condition"
OUTPUT_TERMS = ("normal", "abnormal")

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ClauseKind(str, Enum):
    FUZZY = "fuzzy"
    BASELINE = "baseline"


@dataclass(frozen=True)
class Clause:
    kind: ClauseKind
    variable: str
    term: str

    def render(self) -> str:
        if self.kind is ClauseKind.BASELINE:
            return f"{self.variable} IS USUALLY {self.term}"
        return f"{self.variable} IS {self.term}"


@dataclass(frozen=True)
class Rule:
    id: int
    antecedents: tuple[Clause, ...]
    consequent: str

    def __post_init__(self):
        if not self.antecedents:
            raise ValueError("rule needs at least one antecedent clause")
        if self.consequent not in OUTPUT_TERMS:
            raise ValueError(f"consequent must be one of {OUTPUT_TERMS}, got {self.consequent!r}")

    def render(self) -> str:
        body = " AND ".join(c.render() for c in self.antecedents)
        return f"IF {body} THEN {OUTPUT_VARIABLE} IS {self.consequent}"

    def variables(self) -> set[str]:
        return {c.variable for c in self.antecedents}


@dataclass(frozen=True)
class RuleBase:
    rules: tuple[Rule, ...] = ()
    # parse-time warnings; not part of the rule base's identity
    warnings: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        for i, rule in enumerate(self.rules):
            if rule.id != i:
                raise ValueError(f"rule ids must be dense 0..n-1; position {i} has id {rule.id}")

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for rule in self.rules:
            out |= rule.variables()
        return out

    @classmethod
    def from_rules(cls, rules: Iterable[tuple[Sequence[Clause], str]]) -> "RuleBase":
        return cls(tuple(Rule(i, tuple(a), c) for i, (a, c) in enumerate(rules)))


class RuleSyntaxError(ValueError):
    """Lexical or syntax error; ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int, token: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        where = f"line {line}, column {column}"
        if token is not None:
            where += f" at token {token!r}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class _Token:
    text: str
    column: int  # 1-based

    @property
    def upper(self) -> str:
        return self.text.upper()

    def is_kw(self, kw: str) -> bool:
        return self.upper == kw


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(line)
    while pos < n:
        ch = line[pos]
        if ch == "#":
            break
        if ch.isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {ch!r}", lineno, pos + 1, ch)
        tokens.append(_Token(m.group(), pos + 1))
        pos = m.end()
    return tokens


class _LineParser:
    """Recursive-descent parser over the tokens of one rule line."""

    def __init__(self, tokens: list[_Token], lineno: int, line_len: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno
        self.eol_column = line_len + 1

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _fail(self, message: str, tok: _Token | None = None):
        tok = tok if tok is not None else self._peek()
        if tok is None:
            raise RuleSyntaxError(message + " (got end of line)", self.lineno, max(1, self.eol_column - 1))
        raise RuleSyntaxError(message, self.lineno, tok.column, tok.text)

    def _keyword(self, kw: str) -> _Token:
        tok = self._peek()
        if tok is None or not tok.is_kw(kw):
            self._fail(f"expected {kw}")
        self.pos += 1
        return tok

    def _ident(self, what: str) -> _Token:
        tok = self._peek()
        if tok is None or tok.upper in KEYWORDS:
            self._fail(f"expected {what}")
        self.pos += 1
        return tok

    def rule(self) -> tuple[list[Clause], str]:
        self._keyword("IF")
        clauses = [self.clause()]
        while (tok := self._peek()) is not None and tok.is_kw("AND"):
            self.pos += 1
            clauses.append(self.clause())
        self._keyword("THEN")
        out = self._ident("output variable")
        if out.text.lower() != OUTPUT_VARIABLE:
            self._fail(f"only the output variable {OUTPUT_VARIABLE!r} is supported", out)
        self._keyword("IS")
        term = self._ident("output term")
        if term.text.lower() not in OUTPUT_TERMS:
            self._fail("output term must be 'normal' or 'abnormal'", term)
        if self._peek() is not None:
            self._fail("unexpected token after rule")
        return clauses, term.text.lower()

    def clause(self) -> Clause:
        var = self._ident("variable name")
        self._keyword("IS")
        kind = ClauseKind.FUZZY
        tok = self._peek()
        if tok is not None and tok.is_kw("USUALLY"):
            self.pos += 1
            kind = ClauseKind.BASELINE
        term = self._ident("term name")
        return Clause(kind, var.text, term.text)


def parse(text: str) -> RuleBase:
    """Parse rule source into a ``RuleBase``.

    Raises ``RuleSyntaxError`` with line/column for malformed input. Duplicate
    rules are kept and reported in ``RuleBase.warnings``.
    """
    parsed: list[tuple[list[Clause], str]] = []
    seen: dict[str, int] = {}
    warnings: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(line, lineno)
        if not tokens:
            continue
        clauses, consequent = _LineParser(tokens, lineno, len(line)).rule()
        rule = Rule(len(parsed), tuple(clauses), consequent)
        key = rule.render()
        if key in seen:
            warnings.append(f"line {lineno}: duplicate of rule {seen[key]}")
        else:
            seen[key] = rule.id
        parsed.append((clauses, consequent))
    rb = RuleBase.from_rules(parsed)
    return RuleBase(rb.rules, tuple(warnings))


def pretty_print(rb: RuleBase) -> str:
    """Canonical text: uppercase keywords, single spaces, one rule per line."""
    return "".join(rule.render() + "\n" for rule in rb.rules)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    rule_id: int | None = None
    clause_index: int | None = None

    def __str__(self) -> str:
        if self.rule_id is None:
            return self.message
        if self.clause_index is None:
            return f"rule {self.rule_id}: {self.message}"
        return f"rule {self.rule_id}, clause {self.clause_index}: {self.message}"


def validate(rb: RuleBase, variables) -> list[Diagnostic]:
    """Check every clause against the declared linguistic variables.

    ``variables`` is an iterable of objects with ``name`` and ``terms``.
    """
    if not rb.rules:
        return [Diagnostic("empty rule base")]
    declared = {v.name: tuple(v.terms) for v in variables}
    diags = []
    for rule in rb.rules:
        for ci, clause in enumerate(rule.antecedents):
            terms = declared.get(clause.variable)
            if terms is None:
                diags.append(Diagnostic(f"unknown variable {clause.variable!r}", rule.id, ci))
            elif clause.term not in terms:
                diags.append(Diagnostic(
                    f"variable {clause.variable!r} has no term {clause.term!r} (terms: {', '.join(terms)})",
                    rule.id, ci))
    return diags
