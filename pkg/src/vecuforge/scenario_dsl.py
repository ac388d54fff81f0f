"""A small language for abstract test scenarios.

A scenario names what to test by which means, without binding any
SUT-specific data: patterns are the atomic actions, ``$NAME``
placeholders defer concrete values to case generation, the env block
names required interfaces and preconditions, and the oracle names the
pass and fail conditions.

Example::

    scenario "read-speed" {
      meta {
        method: "functional"
        requirement_ref: "REQ-1"
      }
      env {
        interface bus canlike
        precondition sut_alive
      }
      steps {
        pattern SEND_CAN_MSG(data=0x02010d, id="7df")   # speed read
        expect RESPONSE(service=0x41) within 500ms
      }
      oracle {
        pass: all_expectations_met
        fail: sut.crashed
      }
    }

Parsing normalizes argument and meta ordering, so semantically equal
scenarios serialize to byte-identical canonical text (2-space indent,
lowercase hex, sorted keys). ``#`` starts a line comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

METHODS = ("functional", "interface", "penetration", "vulnscan", "fuzz")
ENV_KINDS = ("canlike", "diag", "debug")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_UPPER_RE = re.compile(r"[A-Z][A-Z0-9_]*\Z")


class DslError(Exception):
    """Syntax or semantic error with a source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line} column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class ValueKind(str, Enum):
    STRING = "string"
    NUMBER = "number"
    HEXBYTES = "hexbytes"
    PLACEHOLDER = "placeholder"


@dataclass(frozen=True)
class Value:
    kind: ValueKind
    raw: object

    @staticmethod
    def string(s: str) -> "Value":
        return Value(ValueKind.STRING, s)

    @staticmethod
    def number(n: int) -> "Value":
        return Value(ValueKind.NUMBER, n)

    @staticmethod
    def hexbytes(b: bytes) -> "Value":
        return Value(ValueKind.HEXBYTES, b)

    @staticmethod
    def placeholder(name: str) -> "Value":
        return Value(ValueKind.PLACEHOLDER, name)

    def render(self) -> str:
        if self.kind is ValueKind.STRING:
            escaped = str(self.raw).replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"'
        if self.kind is ValueKind.NUMBER:
            return str(self.raw)
        if self.kind is ValueKind.HEXBYTES:
            return "0x" + bytes(self.raw).hex()
        return f"${self.raw}"

    def as_text(self) -> str:
        """Plain text content for binding into command templates."""
        if self.kind is ValueKind.HEXBYTES:
            return bytes(self.raw).hex()
        return str(self.raw)


Args = tuple[tuple[str, Value], ...]


@dataclass(frozen=True)
class PatternStep:
    name: str
    args: Args


@dataclass(frozen=True)
class ExpectStep:
    matcher: str
    args: Args
    within_ms: int | None = None


Step = PatternStep | ExpectStep


@dataclass(frozen=True)
class EnvInterface:
    logical: str
    kind: str
    params: Args


@dataclass(frozen=True)
class EnvSpec:
    interfaces: tuple[EnvInterface, ...] = ()
    preconditions: tuple[str, ...] = ()


@dataclass(frozen=True)
class OracleSpec:
    pass_condition: str
    fail_condition: str


@dataclass(frozen=True)
class Scenario:
    id: str
    meta: Args
    env: EnvSpec
    steps: tuple[Step, ...]
    oracle: OracleSpec

    # -- meta accessors --------------------------------------------------

    def meta_values(self, key: str) -> list[Value]:
        return [v for k, v in self.meta if k == key]

    def method(self) -> str:
        return str(self.meta_values("method")[0].raw)

    def requirement_refs(self) -> list[str]:
        return [str(v.raw) for v in self.meta_values("requirement_ref")]

    def threat_refs(self) -> list[str]:
        return [str(v.raw) for v in self.meta_values("threat_ref")]

    def risk_ref(self) -> str | None:
        vals = self.meta_values("risk_ref")
        return str(vals[0].raw) if vals else None

    def domain_declarations(self) -> dict[str, str]:
        """Placeholder name -> domain key, from ``domain_<NAME>`` meta entries."""
        out: dict[str, str] = {}
        for k, v in self.meta:
            if k.startswith("domain_"):
                out[k.removeprefix("domain_")] = str(v.raw)
        return out

    def placeholders(self) -> set[str]:
        names: set[str] = set()
        for step in self.steps:
            for _, v in step.args:
                if v.kind is ValueKind.PLACEHOLDER:
                    names.add(str(v.raw))
        return names


# -- tokenizer ----------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int
    value: object = None


_PUNCT = {"{": "LBRACE", "}": "RBRACE", "(": "LPAREN", ")": "RPAREN",
          ",": "COMMA", ":": "COLON", "=": "EQUALS", ".": "DOT"}


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token(_PUNCT[ch], ch, line, col))
            i += 1
            col += 1
            continue
        if ch == '"':
            j = i + 1
            out: list[str] = []
            while j < n:
                c = text[j]
                if c == "\\":
                    if j + 1 >= n or text[j + 1] not in ('"', "\\"):
                        raise DslError("bad escape in string", line, col + (j - i))
                    out.append(text[j + 1])
                    j += 2
                    continue
                if c == '"':
                    break
                if c == "\n":
                    raise DslError("unterminated string", line, col)
                out.append(c)
                j += 1
            else:
                raise DslError("unterminated string", line, col)
            if j >= n:
                raise DslError("unterminated string", line, col)
            tokens.append(_Token("STRING", text[i : j + 1], line, col, "".join(out)))
            col += j + 1 - i
            i = j + 1
            continue
        if ch == "$":
            m = _IDENT_RE.match(text, i + 1)
            if not m:
                raise DslError("'$' must be followed by a placeholder name", line, col)
            tokens.append(_Token("PLACEHOLDER", text[i : m.end()], line, col, m.group()))
            col += m.end() - i
            i = m.end()
            continue
        if text.startswith("0x", i) or text.startswith("0X", i):
            j = i + 2
            while j < n and text[j] in "0123456789abcdefABCDEF":
                j += 1
            digits = text[i + 2 : j]
            if len(digits) % 2 != 0:
                raise DslError(f"hex bytes need an even digit count, got {len(digits)}", line, col)
            tokens.append(_Token("HEXBYTES", text[i:j], line, col, bytes.fromhex(digits)))
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(_Token("NUMBER", text[i:j], line, col, int(text[i:j])))
            col += j - i
            i = j
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(_Token("IDENT", m.group(), line, col, m.group()))
            col += m.end() - i
            i = m.end()
            continue
        raise DslError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# -- parser -------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.next()
        if tok.kind != kind:
            raise DslError(f"expected {what}, got {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def keyword(self, word: str) -> _Token:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text != word:
            raise DslError(f"expected {word!r}, got {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text == word

    # grammar rules

    def scenario(self) -> Scenario:
        self.keyword("scenario")
        id_tok = self.expect("STRING", "scenario id string")
        if not str(id_tok.value):
            raise DslError("scenario id must be non-empty", id_tok.line, id_tok.col)
        self.expect("LBRACE", "'{'")
        meta = self.meta()
        env = self.env()
        steps = self.steps()
        oracle = self.oracle()
        self.expect("RBRACE", "'}'")
        tok = self.peek()
        if tok.kind != "EOF":
            raise DslError(f"trailing input {tok.text!r}", tok.line, tok.col)
        return Scenario(id=str(id_tok.value), meta=meta, env=env, steps=steps, oracle=oracle)

    def meta(self) -> Args:
        self.keyword("meta")
        brace = self.expect("LBRACE", "'{'")
        entries: list[tuple[str, Value, _Token]] = []
        while self.peek().kind != "RBRACE":
            key = self.expect("IDENT", "meta key")
            self.expect("COLON", "':'")
            entries.append((key.text, self.value(), key))
        self.expect("RBRACE", "'}'")
        method = [e for e in entries if e[0] == "method"]
        if not method:
            raise DslError("meta must declare a method", brace.line, brace.col)
        if len(method) > 1:
            raise DslError("method declared more than once", method[1][2].line, method[1][2].col)
        mval = method[0][1]
        if mval.kind is not ValueKind.STRING or mval.raw not in METHODS:
            raise DslError(
                f"method must be one of {', '.join(METHODS)}", method[0][2].line, method[0][2].col
            )
        ordered = sorted(range(len(entries)), key=lambda ix: (entries[ix][0], ix))
        return tuple((entries[ix][0], entries[ix][1]) for ix in ordered)

    def env(self) -> EnvSpec:
        self.keyword("env")
        self.expect("LBRACE", "'{'")
        interfaces: list[EnvInterface] = []
        seen: dict[str, _Token] = {}
        preconditions: list[str] = []
        while self.peek().kind != "RBRACE":
            if self.at_keyword("interface"):
                self.next()
                logical = self.expect("IDENT", "interface logical name")
                kind = self.expect("IDENT", "interface kind")
                if kind.text not in ENV_KINDS:
                    raise DslError(
                        f"interface kind must be one of {', '.join(ENV_KINDS)}", kind.line, kind.col
                    )
                if logical.text in seen:
                    raise DslError(f"duplicate interface name {logical.text!r}", logical.line, logical.col)
                seen[logical.text] = logical
                params: list[tuple[str, Value, _Token]] = []
                while self.peek().kind == "IDENT" and self.peek(1).kind == "EQUALS":
                    name = self.next()
                    self.next()
                    params.append((name.text, self.value(), name))
                self._reject_duplicates(params, "interface parameter")
                interfaces.append(
                    EnvInterface(
                        logical.text,
                        kind.text,
                        tuple(sorted(((n, v) for n, v, _ in params), key=lambda p: p[0])),
                    )
                )
            elif self.at_keyword("precondition"):
                self.next()
                preconditions.append(self.expect("IDENT", "precondition name").text)
            else:
                tok = self.peek()
                raise DslError(
                    f"expected 'interface' or 'precondition', got {tok.text or 'end of input'!r}",
                    tok.line,
                    tok.col,
                )
        self.expect("RBRACE", "'}'")
        interfaces.sort(key=lambda i: i.logical)
        return EnvSpec(tuple(interfaces), tuple(preconditions))

    def steps(self) -> tuple[Step, ...]:
        self.keyword("steps")
        brace = self.expect("LBRACE", "'{'")
        out: list[Step] = []
        while self.peek().kind != "RBRACE":
            if self.at_keyword("pattern"):
                self.next()
                name, args = self.call()
                out.append(PatternStep(name, args))
            elif self.at_keyword("expect"):
                self.next()
                name, args = self.call()
                within = None
                if self.at_keyword("within"):
                    self.next()
                    num = self.expect("NUMBER", "duration")
                    self.keyword("ms")
                    if int(num.value) <= 0:
                        raise DslError("expect deadline must be positive", num.line, num.col)
                    within = int(num.value)
                out.append(ExpectStep(name, args, within))
            else:
                tok = self.peek()
                raise DslError(
                    f"expected 'pattern' or 'expect', got {tok.text or 'end of input'!r}",
                    tok.line,
                    tok.col,
                )
        self.expect("RBRACE", "'}'")
        if not out:
            raise DslError("steps must be non-empty", brace.line, brace.col)
        return tuple(out)

    def call(self) -> tuple[str, Args]:
        name = self.expect("IDENT", "pattern name")
        if not _UPPER_RE.match(name.text):
            raise DslError(f"pattern names are uppercase, got {name.text!r}", name.line, name.col)
        self.expect("LPAREN", "'('")
        args: list[tuple[str, Value, _Token]] = []
        if self.peek().kind != "RPAREN":
            while True:
                arg = self.expect("IDENT", "argument name")
                self.expect("EQUALS", "'='")
                args.append((arg.text, self.value(), arg))
                if self.peek().kind == "COMMA":
                    self.next()
                    continue
                break
        self.expect("RPAREN", "')'")
        self._reject_duplicates(args, "argument")
        return name.text, tuple(sorted(((n, v) for n, v, _ in args), key=lambda a: a[0]))

    def oracle(self) -> OracleSpec:
        self.keyword("oracle")
        self.expect("LBRACE", "'{'")
        self.keyword("pass")
        self.expect("COLON", "':'")
        pass_cond = self.cond()
        self.keyword("fail")
        self.expect("COLON", "':'")
        fail_cond = self.cond()
        self.expect("RBRACE", "'}'")
        return OracleSpec(pass_cond, fail_cond)

    def cond(self) -> str:
        parts = [self.expect("IDENT", "condition name").text]
        while self.peek().kind == "DOT":
            self.next()
            parts.append(self.expect("IDENT", "condition name").text)
        return ".".join(parts)

    def value(self) -> Value:
        tok = self.next()
        if tok.kind == "STRING":
            return Value.string(str(tok.value))
        if tok.kind == "NUMBER":
            return Value.number(int(tok.value))
        if tok.kind == "HEXBYTES":
            return Value.hexbytes(bytes(tok.value))
        if tok.kind == "PLACEHOLDER":
            return Value.placeholder(str(tok.value))
        raise DslError(f"expected a value, got {tok.text or 'end of input'!r}", tok.line, tok.col)

    @staticmethod
    def _reject_duplicates(named: list[tuple[str, Value, _Token]], what: str) -> None:
        seen: set[str] = set()
        for name, _, tok in named:
            if name in seen:
                raise DslError(f"duplicate {what} {name!r}", tok.line, tok.col)
            seen.add(name)


def parse_scenario(text: str) -> Scenario:
    return _Parser(text).scenario()


# -- canonical serializer -----------------------------------------------


def _render_args(args: Args) -> str:
    return ", ".join(f"{n}={v.render()}" for n, v in args)


def serialize(scenario: Scenario) -> str:
    lines = [f'scenario "{scenario.id}" {{']
    lines.append("  meta {")
    for key, value in scenario.meta:
        lines.append(f"    {key}: {value.render()}")
    lines.append("  }")
    lines.append("  env {")
    for iface in scenario.env.interfaces:
        params = "".join(f" {n}={v.render()}" for n, v in iface.params)
        lines.append(f"    interface {iface.logical} {iface.kind}{params}")
    for pre in scenario.env.preconditions:
        lines.append(f"    precondition {pre}")
    lines.append("  }")
    lines.append("  steps {")
    for step in scenario.steps:
        if isinstance(step, PatternStep):
            lines.append(f"    pattern {step.name}({_render_args(step.args)})")
        else:
            suffix = f" within {step.within_ms}ms" if step.within_ms is not None else ""
            lines.append(f"    expect {step.matcher}({_render_args(step.args)}){suffix}")
    lines.append("  }")
    lines.append("  oracle {")
    lines.append(f"    pass: {scenario.oracle.pass_condition}")
    lines.append(f"    fail: {scenario.oracle.fail_condition}")
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- vocabulary validation ----------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    patterns: frozenset[str]
    matchers: frozenset[str]
    conditions: frozenset[str]
    preconditions: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Issue:
    code: str
    detail: str


def validate(scenario: Scenario, vocabulary: Vocabulary) -> list[Issue]:
    """Non-raising semantic lint against a known vocabulary."""
    issues: list[Issue] = []
    for step in scenario.steps:
        if isinstance(step, PatternStep) and step.name not in vocabulary.patterns:
            issues.append(Issue("unknown-pattern", f"pattern {step.name!r} is not in the vocabulary"))
        if isinstance(step, ExpectStep) and step.matcher not in vocabulary.matchers:
            issues.append(Issue("unknown-matcher", f"matcher {step.matcher!r} is not in the vocabulary"))
    for cond in (scenario.oracle.pass_condition, scenario.oracle.fail_condition):
        if cond not in vocabulary.conditions:
            issues.append(Issue("unknown-condition", f"condition {cond!r} is not in the vocabulary"))
    for pre in scenario.env.preconditions:
        if vocabulary.preconditions and pre not in vocabulary.preconditions:
            issues.append(Issue("unknown-precondition", f"precondition {pre!r} is not in the vocabulary"))
    declared = set(scenario.domain_declarations())
    for name in sorted(scenario.placeholders() - declared):
        issues.append(
            Issue("unresolved-placeholder", f"placeholder ${name} has no domain_{name} declaration")
        )
    return issues
