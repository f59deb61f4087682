"""
A small text language for user ODE systems.

    params: a [0, inf], b [0, inf], c [0, inf]
    states: V, R
    dV = c * (V - V^3/3 + R)
    dR = -(1/c) * (V - a + b*R)

Statements are separated by newlines or semicolons and `#` starts a comment. Without a `states:` line the states are
taken from the left-hand sides, without a `params:` line every other free symbol becomes an unbounded parameter (in
order of first appearance). `t` is the time. Jacobians come from forward-mode dual numbers evaluated over the parsed
expression trees, so they are exact up to rounding.
"""
import re
from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core import FloatArray, OdeSystem
from src.exceptions import DslEvaluationError, DslSyntaxError, UndefinedSymbolError

TOKEN_TYPES = (
    ("NUMBER", r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("POW", r"\*\*|\^"),
    ("OP", r"[-+*/]"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("LBRACKET", r"\["),
    ("RBRACKET", r"\]"),
    ("COMMA", r","),
    ("COLON", r":"),
    ("EQUALS", r"="),
    ("END", r"[;\n]"),
    ("SKIP", r"[ \t\r]+|#[^\n]*"),
    ("MISMATCH", r"."),
)
TOKEN_PATTERN = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_TYPES))

TIME_SYMBOL = "t"


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int
    column: int


def tokenize(source: str) -> List[Token]:
    """Split source text into tokens, keeping 1-based line and column of each."""
    tokens = []
    line, line_start = 1, 0
    for match in TOKEN_PATTERN.finditer(source):
        kind, value = match.lastgroup, match.group()
        column = match.start() - line_start + 1
        if kind == "MISMATCH":
            raise DslSyntaxError(f"unexpected character {value!r}", line, column)
        if kind != "SKIP":
            tokens.append(Token(kind, value, line, column))
        if value == "\n":
            line += 1
            line_start = match.end()
    return tokens


class Dual:
    """Vectorized dual number: values of shape (n,) with derivatives of shape (n, k) for k seeded variables."""

    __slots__ = ("value", "grad")
    # numpy scalars on the left must defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value: FloatArray, grad: FloatArray) -> None:
        """Constructor."""
        self.value = value
        self.grad = grad

    def __add__(self, other: "Operand") -> "Dual":
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.grad + other.grad)
        return Dual(self.value + other, self.grad)

    __radd__ = __add__

    def __sub__(self, other: "Operand") -> "Dual":
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.grad - other.grad)
        return Dual(self.value - other, self.grad)

    def __rsub__(self, other: float) -> "Dual":
        return Dual(other - self.value, -self.grad)

    def __mul__(self, other: "Operand") -> "Dual":
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value, self.grad * other.value[:, None] + other.grad * self.value[:, None]
            )
        return Dual(self.value * other, self.grad * other)

    __rmul__ = __mul__

    def __truediv__(self, other: "Operand") -> "Dual":
        if isinstance(other, Dual):
            quotient = self.value / other.value
            return Dual(quotient, (self.grad - other.grad * quotient[:, None]) / other.value[:, None])
        return Dual(self.value / other, self.grad / other)

    def __rtruediv__(self, other: float) -> "Dual":
        quotient = other / self.value
        return Dual(quotient, -self.grad * (quotient / self.value)[:, None])

    def __neg__(self) -> "Dual":
        return Dual(-self.value, -self.grad)

    def __pow__(self, other: "Operand") -> "Dual":
        if isinstance(other, Dual):
            value = self.value**other.value
            grad = value[:, None] * (
                other.grad * np.log(self.value)[:, None] + self.grad * (other.value / self.value)[:, None]
            )
            return Dual(value, grad)
        if other == 0:
            return Dual(np.ones_like(self.value), np.zeros_like(self.grad))
        return Dual(self.value**other, self.grad * (other * self.value ** (other - 1))[:, None])

    def __rpow__(self, other: float) -> "Dual":
        value = other**self.value
        return Dual(value, self.grad * (value * np.log(other))[:, None])

    def exp(self) -> "Dual":
        value = np.exp(self.value)
        return Dual(value, self.grad * value[:, None])

    def log(self) -> "Dual":
        return Dual(np.log(self.value), self.grad / self.value[:, None])

    def sin(self) -> "Dual":
        return Dual(np.sin(self.value), self.grad * np.cos(self.value)[:, None])

    def cos(self) -> "Dual":
        return Dual(np.cos(self.value), -self.grad * np.sin(self.value)[:, None])


Operand = Union[Dual, float]

FUNCTIONS: Dict[str, Tuple[Callable[[Dual], Dual], Callable[[float], float]]] = {
    "exp": (Dual.exp, np.exp),
    "log": (Dual.log, np.log),
    "sin": (Dual.sin, np.sin),
    "cos": (Dual.cos, np.cos),
}


class Expr(metaclass=ABCMeta):
    """Node of a parsed expression."""

    @abstractmethod
    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        """Value of the node, a Dual when it depends on a state or parameter."""

    def symbols(self) -> Iterator["Symbol"]:
        return iter(())


@dataclass(frozen=True)
class Number(Expr):
    value: float

    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        return self.value


@dataclass(frozen=True)
class Symbol(Expr):
    name: str
    line: int
    column: int

    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        return env[self.name]

    def symbols(self) -> Iterator["Symbol"]:
        yield self


@dataclass(frozen=True)
class Negate(Expr):
    operand: Expr

    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        return -self.operand.evaluate(env)

    def symbols(self) -> Iterator[Symbol]:
        return self.operand.symbols()


@dataclass(frozen=True)
class BinaryOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        left, right = self.left.evaluate(env), self.right.evaluate(env)
        if not isinstance(left, Dual) and not isinstance(right, Dual):
            # constant subexpressions follow IEEE rules instead of raising
            left = np.float64(left)
        if self.op == "+":
            return left + right
        if self.op == "-":
            return left - right
        if self.op == "*":
            return left * right
        if self.op == "/":
            return left / right
        return left**right

    def symbols(self) -> Iterator[Symbol]:
        yield from self.left.symbols()
        yield from self.right.symbols()


@dataclass(frozen=True)
class Call(Expr):
    function: str
    argument: Expr

    def evaluate(self, env: Dict[str, Dual]) -> Operand:
        dual_function, float_function = FUNCTIONS[self.function]
        argument = self.argument.evaluate(env)
        if isinstance(argument, Dual):
            return dual_function(argument)
        return float(float_function(argument))

    def symbols(self) -> Iterator[Symbol]:
        return self.argument.symbols()


class _Parser:
    """Recursive descent over the tokens of one statement.

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := ('-' | '+') unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
    """

    def __init__(self, tokens: Sequence[Token], end: Tuple[int, int]) -> None:
        """Constructor. `end` is the position reported when the statement ends early."""
        self.tokens = tokens
        self.position = 0
        self.end = end

    def peek(self) -> Optional[Token]:
        return self.tokens[self.position] if self.position < len(self.tokens) else None

    def advance(self) -> Token:
        token = self.peek()
        if token is None:
            raise DslSyntaxError("unexpected end of statement", *self.end)
        self.position += 1
        return token

    def expect(self, kind: str, what: str) -> Token:
        token = self.advance()
        if token.kind != kind:
            raise DslSyntaxError(f"expected {what}, found {token.value!r}", token.line, token.column)
        return token

    def at_end(self) -> bool:
        return self.position >= len(self.tokens)

    def expression(self) -> Expr:
        node = self.term()
        while self._next_is("OP", "+-"):
            op = self.advance().value
            node = BinaryOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self._next_is("OP", "*/"):
            op = self.advance().value
            node = BinaryOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self._next_is("OP", "+-"):
            op = self.advance().value
            operand = self.unary()
            return Negate(operand) if op == "-" else operand
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._next_is("POW"):
            self.advance()
            return BinaryOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        token = self.advance()
        if token.kind == "NUMBER":
            return Number(float(token.value))
        if token.kind == "LPAREN":
            node = self.expression()
            self.expect("RPAREN", "')'")
            return node
        if token.kind == "NAME":
            if self._next_is("LPAREN"):
                if token.value not in FUNCTIONS:
                    raise UndefinedSymbolError(token.value, token.line, token.column)
                self.advance()
                argument = self.expression()
                self.expect("RPAREN", "')'")
                return Call(token.value, argument)
            return Symbol(token.value, token.line, token.column)
        raise DslSyntaxError(f"unexpected {token.value!r}", token.line, token.column)

    def bound(self) -> float:
        sign = 1.0
        if self._next_is("OP", "+-"):
            sign = -1.0 if self.advance().value == "-" else 1.0
        token = self.advance()
        if token.kind == "NUMBER":
            return sign * float(token.value)
        if token.kind == "NAME" and token.value.lower() == "inf":
            return sign * np.inf
        raise DslSyntaxError(f"expected a number or inf, found {token.value!r}", token.line, token.column)

    def _next_is(self, kind: str, values: Optional[str] = None) -> bool:
        token = self.peek()
        return token is not None and token.kind == kind and (values is None or token.value in values)


def _statements(tokens: List[Token]) -> Iterator[List[Token]]:
    statement: List[Token] = []
    for token in tokens:
        if token.kind == "END":
            if statement:
                yield statement
            statement = []
        else:
            statement.append(token)
    if statement:
        yield statement


def _end_of(statement: List[Token]) -> Tuple[int, int]:
    last = statement[-1]
    return last.line, last.column + len(last.value)


def _parse_params(parser: _Parser) -> List[Tuple[str, float, float]]:
    params = []
    while not parser.at_end():
        name = parser.expect("NAME", "a parameter name")
        lower, upper = -np.inf, np.inf
        if parser._next_is("LBRACKET"):
            parser.advance()
            lower = parser.bound()
            parser.expect("COMMA", "','")
            upper = parser.bound()
            parser.expect("RBRACKET", "']'")
            if lower > upper:
                raise DslSyntaxError(f"lower bound of '{name.value}' exceeds its upper bound", name.line, name.column)
        params.append((name.value, lower, upper))
        if parser._next_is("COMMA"):
            parser.advance()
    return params


def _parse_states(parser: _Parser) -> List[str]:
    states = []
    while not parser.at_end():
        states.append(parser.expect("NAME", "a state name").value)
        if parser._next_is("COMMA"):
            parser.advance()
    return states


class DslOdeSystem(OdeSystem):
    """An OdeSystem defined by parsed expressions, differentiated with dual numbers."""

    def __init__(
        self,
        name: str,
        component_names: Sequence[str],
        parameter_names: Sequence[str],
        equations: Sequence[Expr],
        theta_lower: Sequence[float],
        theta_upper: Sequence[float],
    ) -> None:
        """Constructor."""
        super().__init__(name, component_names, parameter_names, theta_lower, theta_upper)
        self.equations = tuple(equations)

    def evaluate(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """Values and both Jacobians from one forward pass."""
        n, dim_x = x.shape
        n_seeds = dim_x + self.dim_theta
        env: Dict[str, Dual] = {}
        for i, name in enumerate(self.component_names):
            grad = np.zeros((n, n_seeds))
            grad[:, i] = 1.0
            env[name] = Dual(np.asarray(x[:, i], dtype=float), grad)
        for i, name in enumerate(self.parameter_names):
            grad = np.zeros((n, n_seeds))
            grad[:, dim_x + i] = 1.0
            env[name] = Dual(np.full(n, float(theta[i])), grad)
        env[TIME_SYMBOL] = Dual(np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy(), np.zeros((n, n_seeds)))

        values = np.zeros((n, dim_x))
        grads = np.zeros((n, n_seeds, dim_x))
        with np.errstate(all="ignore"):
            for j, equation in enumerate(self.equations):
                result = equation.evaluate(env)
                if isinstance(result, Dual):
                    values[:, j] = result.value
                    grads[:, :, j] = result.grad
                else:
                    values[:, j] = result
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grads))):
            raise DslEvaluationError(f"model '{self.name}' evaluated to a non-finite value")
        return values, grads[:, :dim_x, :], grads[:, dim_x:, :]

    def f(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self.evaluate(theta, x, t)[0]

    def jac_x(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self.evaluate(theta, x, t)[1]

    def jac_theta(self, theta: FloatArray, x: FloatArray, t: FloatArray) -> FloatArray:
        return self.evaluate(theta, x, t)[2]


def parse_ode_dsl(source: str, name: str = "dsl") -> DslOdeSystem:
    """Parse an ODE description into an OdeSystem with exact Jacobians."""
    declared_params: Optional[List[Tuple[str, float, float]]] = None
    declared_states: Optional[List[str]] = None
    equations: Dict[str, Tuple[Expr, Token]] = {}

    for statement in _statements(tokenize(source)):
        parser = _Parser(statement, _end_of(statement))
        head = parser.advance()
        if head.kind == "NAME" and parser._next_is("COLON"):
            parser.advance()
            if head.value == "params":
                declared_params = _parse_params(parser)
            elif head.value == "states":
                declared_states = _parse_states(parser)
            else:
                raise DslSyntaxError(f"unknown section '{head.value}'", head.line, head.column)
            continue
        if head.kind != "NAME" or len(head.value) < 2 or not head.value.startswith("d"):
            raise DslSyntaxError("expected an equation of the form d<state> = <expression>", head.line, head.column)
        parser.expect("EQUALS", "'='")
        expression = parser.expression()
        if not parser.at_end():
            extra = parser.advance()
            raise DslSyntaxError(f"unexpected {extra.value!r}", extra.line, extra.column)
        state = head.value[1:]
        if state in equations:
            raise DslSyntaxError(f"state '{state}' has more than one equation", head.line, head.column)
        equations[state] = (expression, head)

    if not equations:
        raise DslSyntaxError("no equations found", 1, 1)

    states = declared_states if declared_states is not None else list(equations)
    for state, (_, head) in equations.items():
        if state not in states:
            raise UndefinedSymbolError(state, head.line, head.column + 1)
    missing = [state for state in states if state not in equations]
    if missing:
        raise DslSyntaxError(f"no equation for state(s) {', '.join(missing)}", 1, 1)

    reserved = set(states) | {TIME_SYMBOL}
    if declared_params is not None:
        params = declared_params
        known = reserved | {param for param, _, _ in params}
        for expression, _ in equations.values():
            for symbol in expression.symbols():
                if symbol.name not in known:
                    raise UndefinedSymbolError(symbol.name, symbol.line, symbol.column)
    else:
        seen: List[str] = []
        for state in states:
            for symbol in equations[state][0].symbols():
                if symbol.name not in reserved and symbol.name not in seen:
                    seen.append(symbol.name)
        params = [(param, -np.inf, np.inf) for param in seen]

    return DslOdeSystem(
        name,
        states,
        [param for param, _, _ in params],
        [equations[state][0] for state in states],
        [lower for _, lower, _ in params],
        [upper for _, _, upper in params],
    )
