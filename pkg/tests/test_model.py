import numpy as np
import pytest
from scipy.integrate import quad

from jdinfo.model import (
    ChannelModel,
    Grid,
    InitialLaw,
    JumpKernel,
    ModelError,
    analytic_km_coefficient,
    build_model,
    jump_moment,
)
from jdinfo.expressions import parse_expression


def make_model(drift="0", diffusion="1", jump_rate="0", kernel=None, initial=None):
    kernel = kernel or JumpKernel("gaussian", {"mean": "0", "scale": "1"})
    initial = initial or InitialLaw(kind="gaussian", mean=0.0, std=1.0)
    return ChannelModel(
        drift=parse_expression(drift),
        diffusion=parse_expression(diffusion),
        jump_rate=parse_expression(jump_rate),
        jump_kernel=kernel,
        initial_law=initial,
    )


BASE_CONFIG = {
    "channel": {
        "drift": "0",
        "diffusion": "1",
        "jump_rate": "0",
        "jump_kernel": {"family": "gaussian", "mean": "0", "scale": "1"},
    },
    "grid": {"x_min": -10.0, "x_max": 10.0, "n": 128},
    "time": {"t0": 0.0, "t1": 1.0, "dt": 1e-3},
    "initial": {"kind": "gaussian", "mean": 0.0, "std": 1.0},
}


def _with(cfg_update):
    import copy

    cfg = copy.deepcopy(BASE_CONFIG)
    for path, value in cfg_update.items():
        parts = path.split(".")
        node = cfg
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return cfg


class TestGrid:
    def test_basic(self):
        g = Grid(-1.0, 1.0, 21)
        assert g.dx == pytest.approx(0.1)
        assert len(g.nodes) == 21

    def test_too_few_nodes(self):
        with pytest.raises(ModelError):
            Grid(-1.0, 1.0, 8)

    def test_inverted_bounds(self):
        with pytest.raises(ModelError):
            Grid(1.0, -1.0, 32)


class TestJumpMoments:
    def test_centered_gaussian_second_moment(self):
        model = make_model(kernel=JumpKernel("gaussian", {"mean": "0", "scale": "2"}))
        assert jump_moment(model, 2, 0.0, 0.0) == pytest.approx(4.0)

    def test_gaussian_third_moment_vs_quadrature(self):
        # independent oracle: numerical quadrature of xi^3 * N(1, 2^2)
        mu, sig = 1.0, 2.0
        oracle, _ = quad(
            lambda z: z**3 * np.exp(-0.5 * ((z - mu) / sig) ** 2) / (sig * np.sqrt(2 * np.pi)),
            mu - 12 * sig,
            mu + 12 * sig,
        )
        assert oracle == pytest.approx(13.0, abs=1e-9)
        model = make_model(kernel=JumpKernel("gaussian", {"mean": "1", "scale": "2"}))
        assert jump_moment(model, 3, 0.0, 0.0) == pytest.approx(oracle, rel=1e-12)

    def test_uniform_mean(self):
        model = make_model(kernel=JumpKernel("uniform", {"lo": "0", "hi": "1"}))
        assert jump_moment(model, 1, 0.0, 0.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("family,params", [
        ("gaussian", {"mean": "0.3", "scale": "0.7"}),
        ("laplace", {"mean": "-0.2", "scale": "0.5"}),
        ("uniform", {"lo": "-1.5", "hi": "0.5"}),
    ])
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_all_families_vs_quadrature(self, family, params, n):
        kernel = JumpKernel(family, params)
        model = make_model(kernel=kernel)
        lo, hi = kernel.support_bounds(0.0, 0.0)
        oracle, _ = quad(lambda z: z**n * kernel.pdf(z, 0.0, 0.0), lo, hi, limit=200)
        assert jump_moment(model, n, 0.0, 0.0) == pytest.approx(oracle, rel=1e-7, abs=1e-10)

    def test_state_dependent_parameters(self):
        kernel = JumpKernel("gaussian", {"mean": "x", "scale": "1 + t"})
        model = make_model(kernel=kernel)
        # at x=2, t=1: N(2, 4): second moment = 4 + 4 = 8
        assert jump_moment(model, 2, 2.0, 1.0) == pytest.approx(8.0)

    def test_invalid_parameters_raise(self):
        kernel = JumpKernel("gaussian", {"mean": "0", "scale": "x"})
        model = make_model(kernel=kernel)
        with pytest.raises(ModelError):
            jump_moment(model, 2, 0.0, 0.0)  # scale = 0 at x = 0

    def test_ppf_matches_cdf_inversion(self):
        kernel = JumpKernel("laplace", {"mean": "0.5", "scale": "1.5"})
        us = np.linspace(0.01, 0.99, 25)
        xs = kernel.ppf(us, 0.0, 0.0)
        # oracle: integrate pdf up to xs and compare with u (kink at the mean)
        for u, xv in zip(us, xs):
            pts = [p for p in (0.5,) if -60.0 < p < xv]
            mass, _ = quad(lambda z: kernel.pdf(z, 0.0, 0.0), -60.0, xv, points=pts, limit=200)
            assert mass == pytest.approx(u, abs=1e-8)

    def test_char_fn_matches_quadrature(self):
        for family, params in [
            ("gaussian", {"mean": "0.4", "scale": "0.8"}),
            ("laplace", {"mean": "-0.1", "scale": "0.6"}),
            ("uniform", {"lo": "-0.3", "hi": "0.9"}),
        ]:
            kernel = JumpKernel(family, params)
            lo, hi = kernel.support_bounds(0.0, 0.0)
            for k in (0.0, 0.7, -2.3):
                re, _ = quad(lambda z: np.cos(k * z) * kernel.pdf(z, 0.0, 0.0), lo, hi, limit=200)
                im, _ = quad(lambda z: -np.sin(k * z) * kernel.pdf(z, 0.0, 0.0), lo, hi, limit=200)
                got = kernel.char_fn(k, 0.0, 0.0)
                assert complex(got) == pytest.approx(complex(re, im), abs=1e-8)


class TestAnalyticKmCoefficient:
    def test_derived_example(self):
        model = make_model("1", "2", "3", JumpKernel("gaussian", {"mean": "1", "scale": "2"}))
        assert analytic_km_coefficient(model, 1, 0.0, 0.0) == pytest.approx(4.0)
        assert analytic_km_coefficient(model, 2, 0.0, 0.0) == pytest.approx(17.0)
        assert analytic_km_coefficient(model, 3, 0.0, 0.0) == pytest.approx(39.0)

    def test_no_jump_collapse(self):
        model = make_model("sin(x)", "1 + x^2", "0")
        for x in (-1.0, 0.0, 2.0):
            assert analytic_km_coefficient(model, 1, x, 0.5) == np.sin(x)
            assert analytic_km_coefficient(model, 2, x, 0.5) == 1 + x**2
            for n in range(3, 7):
                assert analytic_km_coefficient(model, n, x, 0.5) == 0.0

    def test_pure_jump_gaussian_even_moments(self):
        model = make_model("0", "0", "1", JumpKernel("gaussian", {"mean": "0", "scale": "1"}))
        assert analytic_km_coefficient(model, 1, 0.0, 0.0) == pytest.approx(0.0)
        assert analytic_km_coefficient(model, 2, 0.0, 0.0) == pytest.approx(1.0)
        assert analytic_km_coefficient(model, 4, 0.0, 0.0) == pytest.approx(3.0)

    def test_high_order_equals_rate_times_moment_bitwise(self):
        model = make_model("0.3", "0.2", "1.7", JumpKernel("laplace", {"mean": "0.1", "scale": "0.4"}))
        for n in range(3, 7):
            assert analytic_km_coefficient(model, n, 0.8, 0.3) == (
                model.jump_rate(0.8, 0.3) * jump_moment(model, n, 0.8, 0.3)
            )


class TestBuildModel:
    def test_valid_pure_brownian(self):
        model = build_model(BASE_CONFIG)
        assert model.grid.n == 128
        assert not model.has_jumps(model.grid, 0.0, 1.0)

    def test_negative_diffusion_names_field_and_node(self):
        with pytest.raises(ModelError, match="diffusion b.*x="):
            build_model(_with({"channel.diffusion": "-1"}))

    def test_kernel_scale_zero_on_grid(self):
        with pytest.raises(ModelError, match="scale must be > 0"):
            build_model(_with({"channel.jump_kernel": {"family": "gaussian", "mean": "0", "scale": "x"}}))

    def test_negative_rate(self):
        with pytest.raises(ModelError, match="jump rate"):
            build_model(_with({"channel.jump_rate": "-0.5"}))

    def test_non_normalizable_initial(self):
        with pytest.raises(ModelError, match="normalizable|negative"):
            build_model(_with({"initial": {"kind": "expression", "density": "0 - 1"}}))

    def test_initial_expression_density(self):
        cfg = _with({"initial": {"kind": "expression", "density": "exp(-x^2/2)"}})
        model = build_model(cfg)
        vals = model.initial_law.density_values(model.grid)
        assert np.trapezoid(vals, dx=model.grid.dx) == pytest.approx(1.0)

    def test_state_homogeneity_detection(self):
        model = build_model(BASE_CONFIG)
        assert model.is_state_homogeneous(model.grid, (0.0, 1.0))
        inhom = build_model(_with({"channel.drift": "-x"}))
        assert not inhom.is_state_homogeneous(inhom.grid, (0.0, 1.0))

    def test_time_invariance_detection(self):
        assert build_model(BASE_CONFIG).is_time_invariant()
        assert not build_model(_with({"channel.drift": "sin(t)"})).is_time_invariant()


class TestInitialLaw:
    def test_point_mass_sampling_is_exact(self):
        law = InitialLaw(kind="point", x0=1.5)
        u = np.linspace(0.01, 0.99, 7)
        assert np.all(law.sample(u) == 1.5)

    def test_gaussian_sampling_moments(self):
        law = InitialLaw(kind="gaussian", mean=2.0, std=0.5)
        rng = np.random.default_rng(7)
        u = rng.uniform(1e-12, 1 - 1e-12, 200_000)
        draws = law.sample(u)
        assert np.mean(draws) == pytest.approx(2.0, abs=0.01)
        assert np.std(draws) == pytest.approx(0.5, abs=0.01)

    def test_expression_sampling_matches_density(self):
        grid = Grid(-8.0, 8.0, 512)
        law = InitialLaw(kind="expression", density=parse_expression("exp(-abs(x))"))
        rng = np.random.default_rng(11)
        draws = law.sample(rng.uniform(0, 1, 100_000), grid=grid)
        # Laplace(0,1): std = sqrt(2)
        assert np.mean(draws) == pytest.approx(0.0, abs=0.02)
        assert np.std(draws) == pytest.approx(np.sqrt(2), abs=0.02)

    def test_mollified_point_density(self):
        grid = Grid(-4.0, 4.0, 256)
        law = InitialLaw(kind="point", x0=0.25)
        vals = law.density_values(grid)
        assert np.trapezoid(vals, dx=grid.dx) == pytest.approx(1.0)
        assert grid.nodes[np.argmax(vals)] == pytest.approx(0.25, abs=grid.dx)
