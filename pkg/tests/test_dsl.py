from unittest import TestCase

import numpy as np

from src.core import check_gradients
from src.dsl import Expr, Number, parse_ode_dsl, tokenize
from src.exceptions import DslEvaluationError, DslSyntaxError, UndefinedSymbolError
from src.models import FitzHughNagumo

FN_SOURCE = """
params: a [0, inf], b [0, inf], c [0, inf]
states: V, R
dV = c * (V - V^3/3 + R)
dR = -(1/c) * (V - a + b*R)
"""


class TokenizerTests(TestCase):
    def test_positions(self):
        tokens = tokenize("dX = a\n  dY = 2.5e-1 * Y")
        kinds = [token.kind for token in tokens]
        assert kinds == ["NAME", "EQUALS", "NAME", "END", "NAME", "EQUALS", "NUMBER", "OP", "NAME"]
        assert (tokens[4].line, tokens[4].column) == (2, 3)

    def test_comments_are_skipped(self):
        assert [token.value for token in tokenize("dX = a  # decay")] == ["dX", "=", "a"]

    def test_unexpected_character(self):
        with self.assertRaises(DslSyntaxError) as context:
            tokenize("dX = a $ b")
        assert context.exception.line == 1
        assert context.exception.column == 8


class ParseOdeDslTests(TestCase):
    def test_matches_builtin_model(self):
        model = parse_ode_dsl(FN_SOURCE, name="fn-dsl")
        builtin = FitzHughNagumo()
        rng = np.random.default_rng(5)
        x = rng.uniform(-2.0, 2.0, size=(7, 2))
        theta = np.array([0.2, 0.2, 3.0])
        times = np.linspace(0.0, 1.0, 7)
        f, jac_x, jac_theta = model.evaluate(theta, x, times)
        assert model.component_names == ("V", "R")
        assert model.parameter_names == ("a", "b", "c")
        assert np.all(model.theta_lower == 0) and np.all(model.theta_upper == np.inf)
        assert np.allclose(f, builtin.f(theta, x, times))
        assert np.allclose(jac_x, builtin.jac_x(theta, x, times))
        assert np.allclose(jac_theta, builtin.jac_theta(theta, x, times))

    def test_inferred_sections(self):
        model = parse_ode_dsl("dX = -k * X; dY = k * X - m * Y")
        assert model.component_names == ("X", "Y")
        assert model.parameter_names == ("k", "m")
        assert np.all(model.theta_lower == -np.inf)

    def test_functions_time_and_gradients(self):
        model = parse_ode_dsl("dX = exp(-a * t) * sin(X) + log(b) * cos(Y)\ndY = X ** 2 / b - 3")
        rng = np.random.default_rng(7)
        x = rng.uniform(0.5, 2.0, size=(5, 2))
        report = check_gradients(model, x, np.array([0.4, 1.5]), np.linspace(0.0, 2.0, 5))
        assert report.passed

    def test_constant_equation(self):
        model = parse_ode_dsl("dX = 2 * 3")
        assert model.dim_theta == 0
        f = model.f(np.zeros(0), np.ones((3, 1)), np.zeros(3))
        assert np.allclose(f, 6.0)

    def test_undefined_symbol_is_located(self):
        with self.assertRaises(UndefinedSymbolError) as context:
            parse_ode_dsl("params: a\ndX = a * X + q")
        assert context.exception.symbol == "q"
        assert (context.exception.line, context.exception.column) == (2, 14)

    def test_unknown_function(self):
        with self.assertRaises(UndefinedSymbolError):
            parse_ode_dsl("dX = tanh(X)")

    SYNTAX_ERRORS = (
        "dX = (a + X",
        "dX = a X",
        "X = a",
        "dX = a; dX = b",
        "",
        "params: a [2, 1]\ndX = a",
        "states: X, Y\ndX = a",
        "colors: red\ndX = a",
    )

    def test_syntax_errors(self):
        for source in self.SYNTAX_ERRORS:
            with self.assertRaises(DslSyntaxError, msg=source):
                parse_ode_dsl(source)

    def test_equation_for_undeclared_state(self):
        with self.assertRaises(UndefinedSymbolError):
            parse_ode_dsl("states: X\ndX = a\ndY = b")

    def test_non_finite_evaluation(self):
        model = parse_ode_dsl("dX = log(X)")
        with self.assertRaises(DslEvaluationError):
            model.f(np.zeros(0), np.array([[-1.0]]), np.zeros(1))


class ExprTests(TestCase):
    def test_nodes_must_evaluate(self):
        with self.assertRaises(TypeError):
            Expr()

        class Incomplete(Expr):
            pass

        with self.assertRaises(TypeError):
            Incomplete()
        assert Number(2.0).evaluate({}) == 2.0
