"""
Parser for property specification files.

A specification holds one threshold block and any number of extra properties::

    # thresholds of the built-in properties
    thresholds { epsilon=0.25 delta=0.70 gamma=0.70 tau=0.70 rho_th=0 rho_th.fact_acc=0.05 }
    property "hedging" = always[1,T'](my_channel - 0.5 >= 0)

Formulas combine `always[a,b](...)`, `not`, `and`, `or` and affine predicates `lhs >= rhs` where both
sides are sums of channels and numeric literals, optionally scaled by literals. The upper bound `T'`
stands for the horizon of the evaluated signal.
"""
import re
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Tuple, Union

from toggle.exceptions import SpecSyntaxError, ThresholdRangeError
from toggle.stl.formulas import (BUILTIN_PROPERTIES, Always, And, Not, Or, Predicate, PredicateThresholds,
                                 RobustnessThresholds, StlFormula, builtin_properties)

KEYWORDS = {'always', 'not', 'and', 'or', 'thresholds', 'property'}
_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<horizon>T')
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<op>>=|<=|[{}\[\](),=+\-*])
""", re.VERBOSE)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


class ParsedSpec(NamedTuple):
    """
    Result of parsing a specification.

    Attributes:
        properties (Dict[str, StlFormula]): Built-in properties followed by the extra ones, in file order.
        predicate_thresholds (PredicateThresholds): Parsed epsilon, delta, gamma and tau.
        robustness_thresholds (RobustnessThresholds): Robustness threshold of every property.
    """
    properties: Dict[str, StlFormula]
    predicate_thresholds: PredicateThresholds
    robustness_thresholds: RobustnessThresholds


def tokenize(text: str) -> List[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        if kind == 'newline':
            line += 1
            line_start = match.end()
        elif kind not in ('ws', 'comment'):
            if kind == 'name' and match.group() in KEYWORDS:
                kind = 'keyword'
            tokens.append(Token(kind, match.group(), line, pos - line_start + 1))
        pos = match.end()
    tokens.append(Token('eof', '', line, pos - line_start + 1))
    return tokens


class _Affine:
    """Affine expression as channel coefficients plus a constant."""

    def __init__(self, coefficients: Optional[Dict[str, float]] = None, constant: float = 0.0):
        self.coefficients = dict(coefficients or {})
        self.constant = constant

    def add(self, other: '_Affine', sign: float = 1.0) -> '_Affine':
        coefficients = dict(self.coefficients)
        for name, coef in other.coefficients.items():
            coefficients[name] = coefficients.get(name, 0.0) + sign * coef
        return _Affine(coefficients, self.constant + sign * other.constant)

    def scale(self, factor: float) -> '_Affine':
        return _Affine({k: v * factor for k, v in self.coefficients.items()}, self.constant * factor)

    @property
    def is_constant(self) -> bool:
        return not self.coefficients


class _Parser:
    def __init__(self, text: str, known_channels: Optional[Iterable[str]]):
        self.tokens = tokenize(text)
        self.pos = 0
        self.known_channels = set(known_channels) if known_channels is not None else None

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: Optional[Token] = None) -> SpecSyntaxError:
        token = token or self.current
        found = 'end of input' if token.kind == 'eof' else repr(token.text)
        return SpecSyntaxError(f"{message} (found {found})", token.line, token.column)

    def advance(self) -> Token:
        token = self.current
        self.pos += 1
        return token

    def accept(self, text: str) -> Optional[Token]:
        if self.current.text == text and self.current.kind in ('op', 'keyword', 'horizon'):
            return self.advance()
        return None

    def expect(self, text: str) -> Token:
        token = self.accept(text)
        if token is None:
            raise self.error(f"expected '{text}'")
        return token

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.current.kind != kind:
            raise self.error(f"expected {what}")
        return self.advance()

    # formula := disjunction
    def formula(self) -> StlFormula:
        left = self.conjunction()
        while self.accept('or'):
            left = Or(left, self.conjunction())
        return left

    def conjunction(self) -> StlFormula:
        left = self.unary()
        while self.accept('and'):
            left = And(left, self.unary())
        return left

    def unary(self) -> StlFormula:
        if self.accept('not'):
            return Not(self.unary())
        start_token = self.current
        if self.accept('always'):
            self.expect('[')
            a = self.integer('interval start')
            self.expect(',')
            if self.accept("T'"):
                b = None
            else:
                b = self.integer('interval end or T\'')
            self.expect(']')
            if a < 1 or (b is not None and b < a):
                raise SpecSyntaxError(f"interval [{a},{b}] must satisfy 1 <= a <= b",
                                      start_token.line, start_token.column)
            self.expect('(')
            child = self.formula()
            self.expect(')')
            return Always(a, b, child)
        if self.accept('('):
            inner = self.formula()
            self.expect(')')
            return inner
        return self.predicate()

    def integer(self, what: str) -> int:
        token = self.expect_kind('number', what)
        if not token.text.isdigit():
            raise self.error(f"{what} must be an integer", token)
        return int(token.text)

    def predicate(self) -> Predicate:
        lhs = self.affine()
        if self.accept('>='):
            expr = lhs.add(self.affine(), -1.0)
        elif self.accept('<='):
            expr = self.affine().add(lhs, -1.0)
        else:
            raise self.error("expected '>=' or '<=' after an affine expression")
        terms = {k: v for k, v in expr.coefficients.items() if v != 0.0}
        return Predicate.affine(terms, expr.constant)

    def affine(self) -> _Affine:
        expr = self.term()
        while self.current.text in ('+', '-') and self.current.kind == 'op':
            sign = 1.0 if self.advance().text == '+' else -1.0
            expr = expr.add(self.term(), sign)
        return expr

    def term(self) -> _Affine:
        expr = self.factor()
        while self.current.kind == 'op' and self.current.text == '*':
            star = self.advance()
            rhs = self.factor()
            if expr.is_constant:
                expr = rhs.scale(expr.constant)
            elif rhs.is_constant:
                expr = expr.scale(rhs.constant)
            else:
                raise SpecSyntaxError("product of two channels is not affine", star.line, star.column)
        return expr

    def factor(self) -> _Affine:
        token = self.current
        if token.kind == 'op' and token.text in ('+', '-'):
            self.advance()
            inner = self.factor()
            return inner if token.text == '+' else inner.scale(-1.0)
        if token.kind == 'number':
            self.advance()
            return _Affine(constant=float(token.text))
        if token.kind == 'name':
            self.advance()
            if '.' in token.text:
                raise self.error("invalid channel name", token)
            if self.known_channels is not None and token.text not in self.known_channels:
                raise SpecSyntaxError(f"unknown channel '{token.text}'", token.line, token.column)
            return _Affine({token.text: 1.0})
        raise self.error("expected a channel name or a number")

    def number(self) -> float:
        sign = -1.0 if self.accept('-') else 1.0
        token = self.expect_kind('number', 'a number')
        return sign * float(token.text)


def parse_spec(text: str, n_layers: int, horizon: Optional[int] = None,
               known_channels: Optional[Iterable[str]] = None) -> ParsedSpec:
    """
    Parse a property specification.

    Args:
        text (str): The specification source.
        n_layers (int): Number of transformer layers, used to instantiate the attention property.
        horizon (Optional[int]): Fixed horizon for the built-in properties, or None for each signal's horizon.
        known_channels (Optional[Iterable[str]]): If given, extra properties may only reference these channels.

    Returns:
        ParsedSpec: The built-in and extra properties with their thresholds.

    Raises:
        SpecSyntaxError: For grammar errors, with line and column.
        ThresholdRangeError: For predicate thresholds outside (0, 1] or negative robustness thresholds.
    """
    parser = _Parser(text, known_channels)
    values: Dict[str, Tuple[float, Token]] = {}
    overrides: Dict[str, Tuple[float, Token]] = {}
    extras: Dict[str, StlFormula] = {}
    seen_block = False

    while parser.current.kind != 'eof':
        token = parser.current
        if parser.accept('thresholds'):
            if seen_block:
                raise SpecSyntaxError("duplicate thresholds block", token.line, token.column)
            seen_block = True
            parser.expect('{')
            while not parser.accept('}'):
                key = parser.expect_kind('name', "a threshold name or '}'")
                parser.expect('=')
                value = parser.number()
                if key.text.startswith('rho_th.'):
                    target = overrides
                    name = key.text.split('.', 1)[1]
                elif key.text in ('epsilon', 'delta', 'gamma', 'tau', 'rho_th'):
                    target = values
                    name = key.text
                else:
                    raise SpecSyntaxError(f"unknown threshold '{key.text}'", key.line, key.column)
                if name in target:
                    raise SpecSyntaxError(f"threshold '{key.text}' given twice", key.line, key.column)
                target[name] = (value, key)
        elif parser.accept('property'):
            name_token = parser.expect_kind('string', 'a quoted property name')
            name = name_token.text[1:-1]
            if not name or name in extras or name in BUILTIN_PROPERTIES:
                raise SpecSyntaxError(f"property name '{name}' is empty or already defined",
                                      name_token.line, name_token.column)
            parser.expect('=')
            extras[name] = parser.formula()
        else:
            raise parser.error("expected 'thresholds' or 'property'")

    for key, (value, token) in values.items():
        if key == 'rho_th':
            if value < 0.0:
                raise ThresholdRangeError(f"line {token.line}, column {token.column}: "
                                          f"rho_th must be >= 0, got {value}")
        elif not 0.0 < value <= 1.0:
            raise ThresholdRangeError(f"line {token.line}, column {token.column}: "
                                      f"{key}={value} must lie in (0, 1]")
    thresholds = PredicateThresholds(**{k: v for k, (v, _) in values.items() if k != 'rho_th'})

    properties = builtin_properties(thresholds, n_layers, horizon)
    properties.update(extras)

    default_rho = values['rho_th'][0] if 'rho_th' in values else 0.0
    rho = {name: default_rho for name in properties}
    for name, (value, token) in overrides.items():
        if name not in properties:
            raise SpecSyntaxError(f"threshold for unknown property '{name}'", token.line, token.column)
        if value < 0.0:
            raise ThresholdRangeError(f"line {token.line}, column {token.column}: "
                                      f"rho_th.{name} must be >= 0, got {value}")
        rho[name] = value
    return ParsedSpec(properties, thresholds, RobustnessThresholds(rho))


def format_spec(thresholds: PredicateThresholds, rho_th: float = 0.0,
                extras: Optional[Mapping[str, Union[StlFormula, str]]] = None,
                property_rho_th: Optional[Mapping[str, float]] = None) -> str:
    """
    Render thresholds and extra properties back into specification source.

    Extra properties are given as formulas or as formula text; `parse_spec` reads the result back.
    """
    keys = [f"epsilon={thresholds.epsilon!r}", f"delta={thresholds.delta!r}", f"gamma={thresholds.gamma!r}",
            f"tau={thresholds.tau!r}", f"rho_th={float(rho_th)!r}"]
    keys += [f"rho_th.{name}={float(value)!r}" for name, value in (property_rho_th or {}).items()]
    lines = ["thresholds { " + " ".join(keys) + " }"]
    lines += [f'property "{name}" = {phi}' for name, phi in (extras or {}).items()]
    return '\n'.join(lines) + '\n'
