from dataclasses import replace
from unittest import TestCase

import numpy as np

from src.benchmarks import FN_THETA, FN_X0
from src.bundles import build_gp_bundle, gp_matrices
from src.core import FunctionalOdeSystem, OdeSystem
from src.dsl import parse_ode_dsl
from src.exceptions import NumericalError, ValidationError
from src.integrators import integrate
from src.kernels import KernelKind, KernelSpec
from src.models import builtin_model
from src.posterior import FitState, PosteriorContext, compute_temper, log_posterior, optimize_missing_components
from tests.utils import central_difference, linear_model, make_context, oscillator_model, random_state


class ComputeTemperTests(TestCase):
    def test_hes1_layout(self):
        mask = np.zeros((33, 3), dtype=bool)
        mask[0::2, 0] = True
        mask[1::2, 1] = True
        assert mask.sum(axis=0).tolist() == [17, 16, 0]
        assert compute_temper(mask, 3, 33) == 3.0

    def test_fully_observed(self):
        assert compute_temper(np.ones((10, 2), dtype=bool), 2, 10) == 1.0

    def test_no_observations(self):
        with self.assertRaises(ValidationError):
            compute_temper(np.zeros((4, 2), dtype=bool), 2, 4)


class LogPosteriorTests(TestCase):
    def setUp(self):
        self.model = oscillator_model()
        self.grid = np.linspace(0.0, 4.0, 9)
        values = np.column_stack((np.cos(self.grid), -np.sin(self.grid)))
        values[1::2, 1] = np.nan
        self.ctx = make_context(self.model, self.grid, values, phi=(1.0, 1.5))
        self.state = random_state(self.model, 9, np.random.default_rng(2))

    def test_matches_dense_computation(self):
        model = linear_model()
        grid = np.linspace(0.0, 2.0, 6)
        y = np.array([1.0, np.nan, 1.5, 1.9, np.nan, 2.6])
        ctx = make_context(model, grid, y[:, None], phi=(2.0, 1.0))
        x = np.array([1.0, 1.2, 1.4, 1.8, 2.2, 2.7])
        state = FitState(x[:, None], np.array([0.5]), np.array([0.3]))

        Cinv, m, Psinv, logdet_C, logdet_Psi = gp_matrices(grid, KernelSpec(KernelKind.GENERAL_MATERN, (2.0, 1.0)))
        e = 0.5 * x - m @ x
        prior = -0.5 * (x @ Cinv @ x + logdet_C + e @ Psinv @ e + logdet_Psi)
        observed = ~np.isnan(y)
        residual = y[observed] - x[observed]
        loglik = np.sum(-0.5 * residual**2 / 0.09 - 0.5 * np.log(2 * np.pi * 0.09))
        beta = 6 / 4
        assert np.isclose(ctx.beta, beta)
        assert np.isclose(log_posterior(state, ctx).value, prior / beta + loglik)

    def test_gradient(self):
        result = log_posterior(self.state, self.ctx)

        def value_in(x=None, theta=None, sigma=None):
            state = FitState(
                self.state.x if x is None else x,
                self.state.theta if theta is None else theta,
                self.state.sigma if sigma is None else sigma,
            )
            return log_posterior(state, self.ctx).value

        assert np.allclose(
            result.grad_x, central_difference(lambda x: value_in(x=x), self.state.x), rtol=1e-4, atol=1e-3
        )
        assert np.allclose(
            result.grad_theta, central_difference(lambda t: value_in(theta=t), self.state.theta), rtol=1e-4, atol=1e-3
        )
        assert np.allclose(
            result.grad_sigma, central_difference(lambda s: value_in(sigma=s), self.state.sigma), rtol=1e-4, atol=1e-3
        )

    def test_tempering_scales_the_gp_terms(self):
        values = np.column_stack((np.cos(self.grid), -np.sin(self.grid)))
        ctx_1 = make_context(self.model, self.grid, values, phi=(1.0, 1.5), beta=1.0)
        ctx_2 = make_context(self.model, self.grid, values, phi=(1.0, 1.5), beta=2.0)
        loglik = log_posterior(self.state, make_context(self.model, self.grid, values, phi=(1.0, 1.5), beta=1e12))
        gp_1 = log_posterior(self.state, ctx_1).value - loglik.value
        gp_2 = log_posterior(self.state, ctx_2).value - loglik.value
        assert np.isclose(gp_2, gp_1 / 2, rtol=1e-6)

    def test_unobserved_sigma_is_ignored(self):
        values = np.column_stack((np.cos(self.grid), np.full(9, np.nan)))
        ctx = make_context(self.model, self.grid, values)
        state = FitState(self.state.x, self.state.theta, np.array([0.3, np.nan]))
        result = log_posterior(state, ctx)
        assert np.isfinite(result.value)
        assert result.grad_sigma[1] == 0.0

    def test_rejected_states(self):
        model = linear_model(lower=0.0, upper=1.0)
        grid = np.linspace(0.0, 1.0, 5)
        values = np.linspace(0.5, 1.0, 5)[:, None]
        x = np.linspace(-0.5, 1.0, 5)[:, None]
        bounded = make_context(model, grid, values)
        positive = make_context(model, grid, values, positive_system=True)
        for ctx, state in (
            (bounded, FitState(np.ones((5, 1)), np.array([1.5]), np.array([0.1]))),
            (bounded, FitState(np.ones((5, 1)), np.array([0.5]), np.array([0.0]))),
            (positive, FitState(x, np.array([0.5]), np.array([0.1]))),
        ):
            result = log_posterior(state, ctx)
            assert result.value == -np.inf
            assert np.all(result.grad_x == 0)
        assert np.isfinite(log_posterior(FitState(x, np.array([0.5]), np.array([0.1])), bounded).value)

    def test_non_finite_model(self):
        model = parse_ode_dsl("dX = log(X)")
        grid = np.linspace(0.0, 1.0, 4)
        ctx = make_context(model, grid, np.ones((4, 1)))
        with self.assertRaises(NumericalError):
            log_posterior(FitState(-np.ones((4, 1)), np.zeros(0), np.array([0.1])), ctx)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValidationError):
            log_posterior(FitState(np.ones((3, 2)), self.state.theta, self.state.sigma), self.ctx)


class PosteriorContextTests(TestCase):
    def test_invalid_contexts(self):
        model = linear_model()
        grid = np.linspace(0.0, 1.0, 4)
        with self.assertRaises(ValidationError):
            make_context(model, grid, np.ones((3, 1)))
        with self.assertRaises(ValidationError):
            make_context(model, grid, np.ones((4, 1)), beta=0.0)
        ctx = make_context(model, grid, np.ones((4, 1)))
        with self.assertRaises(ValidationError):
            replace(ctx, bundles=ctx.bundles * 2)
        with self.assertRaises(ValidationError):
            replace(ctx, obs_mask=np.ones((4, 1), dtype=bool), obs_values=np.full((4, 1), np.nan))

    def test_with_bundle_rebuilds_the_stacked_matrices(self):
        model = oscillator_model()
        grid = np.linspace(0.0, 2.0, 5)
        ctx = make_context(model, grid, np.ones((5, 2)), phi=(1.0, 1.0))
        other = make_context(model, grid, np.ones((5, 2)), phi=(3.0, 1.0))
        updated = ctx.with_bundle(1, other.bundles[1])
        assert updated.bundles[1] is other.bundles[1]
        assert np.allclose(updated.stacked("Cinv").toarray()[5:, 5:], other.bundles[1].Cinv.toarray())
        assert np.allclose(ctx.stacked("Cinv").toarray()[5:, 5:], ctx.bundles[1].Cinv.toarray())


class OptimizeMissingComponentsTests(TestCase):
    def setUp(self):
        self.model = oscillator_model()
        self.grid = np.linspace(0.0, 2 * np.pi, 13)
        rng = np.random.default_rng(9)
        values = np.column_stack((np.cos(self.grid) + rng.normal(0.0, 0.05, 13), np.full(13, np.nan)))
        self.ctx = make_context(self.model, self.grid, values, phi=(1.0, 2.0))
        self.x_init = np.column_stack((values[:, 0], np.zeros(13)))
        self.sigma = np.array([0.05, np.nan])
        self.theta_init = np.array([0.8, 0.8])

    def value(self, ctx, theta, x):
        return log_posterior(FitState(x, theta, self.sigma), ctx).value

    def test_improves_the_starting_point(self):
        fit = optimize_missing_components(self.ctx, self.theta_init, self.x_init, self.sigma, free=frozenset({1}))
        assert self.value(fit.context, fit.theta, fit.x) >= self.value(self.ctx, self.theta_init, self.x_init)
        assert np.array_equal(fit.x[:, 0], self.x_init[:, 0])
        assert fit.x_missing.shape == (13, 1)
        assert set(fit.phi_missing) == {1}
        assert fit.context.bundles[1].spec.phi == fit.phi_missing[1]
        assert fit.context.bundles[0] is self.ctx.bundles[0]

    def test_fixed_phi(self):
        fit = optimize_missing_components(
            self.ctx, self.theta_init, self.x_init, self.sigma, free=frozenset({1}), optimize_phi=False
        )
        assert fit.phi_missing[1] == (1.0, 2.0)
        assert fit.context.bundles[1] is self.ctx.bundles[1]

    def test_theta_only(self):
        fit = optimize_missing_components(self.ctx, self.theta_init, self.x_init, self.sigma)
        assert fit.phi_missing == {}
        assert np.array_equal(fit.x, self.x_init)
        assert self.value(self.ctx, fit.theta, fit.x) >= self.value(self.ctx, self.theta_init, self.x_init)

    def test_fixed_theta(self):
        fit = optimize_missing_components(
            self.ctx, self.theta_init, self.x_init, self.sigma, free=frozenset({1}), optimize_theta=False
        )
        assert np.array_equal(fit.theta, self.theta_init)
        assert np.any(fit.x[:, 1] != 0.0)
        assert self.value(fit.context, fit.theta, fit.x) >= self.value(self.ctx, self.theta_init, self.x_init)

    def test_nothing_to_fit(self):
        fit = optimize_missing_components(self.ctx, self.theta_init, self.x_init, self.sigma, optimize_theta=False)
        assert np.array_equal(fit.theta, self.theta_init)
        assert np.array_equal(fit.x, self.x_init)
        assert fit.x_missing.shape == (13, 0)
        assert fit.context is self.ctx

    def test_invalid_component(self):
        with self.assertRaises(ValidationError):
            optimize_missing_components(self.ctx, self.theta_init, self.x_init, self.sigma, free=frozenset({2}))


def permuted_model(model: OdeSystem, perm: np.ndarray) -> OdeSystem:
    """The same system with its components listed in the order perm."""
    inverse = np.argsort(perm)
    return FunctionalOdeSystem(
        f"{model.name}-permuted",
        [model.component_names[p] for p in perm],
        model.parameter_names,
        f=lambda theta, x, t: model.f(theta, x[:, inverse], t)[:, perm],
        jac_x=lambda theta, x, t: model.jac_x(theta, x[:, inverse], t)[:, perm][:, :, perm],
        jac_theta=lambda theta, x, t: model.jac_theta(theta, x[:, inverse], t)[:, :, perm],
        theta_lower=model.theta_lower,
        theta_upper=model.theta_upper,
    )


class GradientTests(TestCase):
    """Analytic gradients against central differences over random systems, grids and states."""

    N_INSTANCES = 50
    MODELS = (oscillator_model(), builtin_model("fn"), builtin_model("hes1"))

    def random_instance(self, rng, model):
        n = int(rng.integers(5, 22))
        grid = np.cumsum(rng.uniform(0.1, 0.4, n))
        values = rng.uniform(0.5, 1.5, size=(n, model.dim_x))
        values[rng.uniform(size=values.shape) < 0.3] = np.nan
        values[0, 0] = 1.0
        phi = (float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
        return make_context(model, grid, values, phi=phi), random_state(model, n, rng)

    @staticmethod
    def close(analytic, numeric):
        return np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1.0)

    def test_random_instances(self):
        rng = np.random.default_rng(11)
        for i in range(self.N_INSTANCES):
            model = self.MODELS[i % len(self.MODELS)]
            ctx, state = self.random_instance(rng, model)
            result = log_posterior(state, ctx)

            def at(x=state.x, theta=state.theta, sigma=state.sigma):
                return log_posterior(FitState(x, theta, sigma), ctx).value

            assert self.close(result.grad_x, central_difference(lambda x: at(x=x), state.x)), i
            assert self.close(result.grad_theta, central_difference(lambda t: at(theta=t), state.theta)), i
            assert self.close(result.grad_sigma, central_difference(lambda s: at(sigma=s), state.sigma)), i


class ComponentOrderTests(TestCase):
    def test_reordering_components_leaves_the_posterior_unchanged(self):
        model = builtin_model("hes1")
        perm = np.array([2, 0, 1])
        grid = np.linspace(0.0, 6.0, 13)
        rng = np.random.default_rng(5)
        values = rng.uniform(0.5, 1.5, size=(13, 3))
        values[1::2, 0] = np.nan
        values[0::2, 1] = np.nan
        values[:, 2] = np.nan
        mask = ~np.isnan(values)
        phis = ((1.0, 1.5), (2.0, 0.8), (0.5, 2.5))
        bundles = tuple(build_gp_bundle(grid, KernelSpec(KernelKind.GENERAL_MATERN, phi)) for phi in phis)
        beta = compute_temper(mask, 3, 13)
        ctx = PosteriorContext(model, grid, values, mask, bundles, beta)
        reordered = PosteriorContext(
            permuted_model(model, perm), grid, values[:, perm], mask[:, perm], tuple(bundles[p] for p in perm), beta
        )
        drawn = random_state(model, 13, rng)
        state = FitState(drawn.x, drawn.theta, np.array([drawn.sigma[0], drawn.sigma[1], np.nan]))

        result = log_posterior(state, ctx)
        other = log_posterior(FitState(state.x[:, perm], state.theta, state.sigma[perm]), reordered)
        assert np.isclose(other.value, result.value, rtol=1e-10)
        assert np.allclose(other.grad_x, result.grad_x[:, perm], rtol=1e-9)
        assert np.allclose(other.grad_theta, result.grad_theta, rtol=1e-9)
        assert np.allclose(other.grad_sigma, result.grad_sigma[perm], rtol=1e-9)


class BandApproximationTests(TestCase):
    """The banded posterior stays within 1e-4 relative of the dense one on fine grids."""

    GRID_SIZES = (81, 161, 321)

    def test_fitzhugh_nagumo_truth(self):
        model = builtin_model("fn")
        rng = np.random.default_rng(3)
        for n in self.GRID_SIZES:
            grid = np.linspace(0.0, 20.0, n)
            truth = integrate(model, FN_X0, FN_THETA, grid, dt_max=0.01).values
            step = (n - 1) // 40
            values = np.full_like(truth, np.nan)
            values[::step] = truth[::step] + rng.normal(0.0, 0.2, size=truth[::step].shape)
            state = FitState(truth, FN_THETA.copy(), np.full(2, 0.2))

            banded = log_posterior(state, make_context(model, grid, values, phi=(2.0, 1.0), band_size=20)).value
            dense = log_posterior(state, make_context(model, grid, values, phi=(2.0, 1.0), band_size=n)).value
            assert abs(banded - dense) <= 1e-4 * abs(dense), n
