import io

import numpy as np
import pytest

from jdinfo.density import DensityField
from jdinfo.model import Grid
from jdinfo.simulate import (
    PathEnsemble,
    RngStream,
    propagator_density,
    propagator_step,
    simulate_ensemble,
)

from test_model import make_model
from jdinfo.model import JumpKernel, InitialLaw


class TestRngStream:
    def test_same_key_same_draws(self):
        a = RngStream(42).at(7, 3).step_uniforms(5)
        b = RngStream(42).at(7, 3).step_uniforms(5)
        np.testing.assert_array_equal(a, b)

    def test_position_addressing_is_chunk_invariant(self):
        # drawing paths [0, 10) at once equals drawing [0, 4) and [4, 10)
        whole = RngStream(9).at(0, 5).step_uniforms(10)
        lo = RngStream(9).at(0, 5).step_uniforms(4)
        hi = RngStream(9).at(4, 5).step_uniforms(6)
        np.testing.assert_array_equal(whole, np.vstack([lo, hi]))

    def test_distinct_steps_differ(self):
        a = RngStream(1).at(0, 0).step_uniforms(4)
        b = RngStream(1).at(0, 1).step_uniforms(4)
        assert not np.array_equal(a, b)

    def test_uniforms_strictly_inside_unit_interval(self):
        u = RngStream(3).at(0, 0).step_uniforms(10_000)
        assert np.all(u > 0.0) and np.all(u < 1.0)


class TestPropagatorStep:
    def test_frozen_dynamics(self):
        model = make_model("0", "0", "0")
        assert propagator_step(model, 1.25, 0.0, 0.1, RngStream(0)) == 1.25

    def test_pure_drift_exact(self):
        model = make_model("1", "0", "0")
        assert propagator_step(model, 2.0, 0.0, 0.25, RngStream(0)) == 2.25

    def test_brownian_increment_moments(self):
        # oracle: with Y = 0 the increment is N(0, dt)
        model = make_model("0", "1", "0")
        n, dt = 100_000, 0.01
        x = propagator_step(model, np.zeros(n), 0.0, dt, RngStream(5))
        assert abs(np.mean(x)) <= 4.0 * np.sqrt(dt / n)
        assert np.var(x) == pytest.approx(dt, rel=0.05)

    def test_step_too_large(self):
        model = make_model("0", "0", "3")
        with pytest.raises(ValueError, match="step too large"):
            propagator_step(model, 0.0, 0.0, 0.5, RngStream(0))

    def test_jump_frequency_and_size(self):
        model = make_model("0", "0", "2", JumpKernel("gaussian", {"mean": "5", "scale": "0.1"}))
        n, dt = 200_000, 0.05
        x = propagator_step(model, np.zeros(n), 0.0, dt, RngStream(11))
        jumped = x > 1.0
        assert np.mean(jumped) == pytest.approx(2 * dt, rel=0.05)
        assert np.mean(x[jumped]) == pytest.approx(5.0, abs=0.01)


class TestSimulateEnsemble:
    def test_single_time_is_initial_draw(self):
        model = make_model(initial=InitialLaw(kind="point", x0=0.75))
        ens = simulate_ensemble(model, [0.0], 1, 1e-3, seed=1)
        assert ens.states.shape == (1, 1)
        assert ens.states[0, 0] == 0.75

    def test_gaussian_channel_variance(self):
        # Var X_1 = sigma0^2 + t = 2 for Brownian noise
        model = make_model("0", "1", "0")
        ens = simulate_ensemble(model, [0.0, 1.0], 100_000, 1e-2, seed=7)
        assert np.var(ens.states[:, 1]) == pytest.approx(2.0, rel=0.03)

    def test_compound_poisson_variance(self):
        # Var X_1 = lam * t * w_2 = 2
        model = make_model(
            "0", "0", "2",
            JumpKernel("gaussian", {"mean": "0", "scale": "1"}),
            initial=InitialLaw(kind="point", x0=0.0),
        )
        ens = simulate_ensemble(model, [0.0, 1.0], 100_000, 1e-2, seed=13)
        assert np.var(ens.states[:, 1]) == pytest.approx(2.0, rel=0.05)

    def test_pure_drift_exactness(self):
        model = make_model("2", "0", "0", initial=InitialLaw(kind="point", x0=-1.0))
        ens = simulate_ensemble(model, [0.0, 0.5, 1.5], 3, 1e-3, seed=3)
        np.testing.assert_allclose(ens.states[:, 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(ens.states[:, 2], 2.0, atol=1e-12)

    def test_worker_count_invariance(self):
        model = make_model("-x", "0.5", "1")
        kw = dict(schedule=[0.0, 0.1, 0.3], n_paths=1003, step_dt=1e-2, seed=99)
        one = simulate_ensemble(model, n_workers=1, **kw)
        eight = simulate_ensemble(model, n_workers=8, **kw)
        assert np.array_equal(one.states, eight.states)

    def test_csv_bytes_deterministic(self):
        model = make_model("0", "1", "0")
        bufs = []
        for workers in (1, 8):
            ens = simulate_ensemble(model, [0.0, 0.25], 57, 1e-2, seed=5, n_workers=workers)
            buf = io.StringIO()
            ens.to_csv(buf)
            bufs.append(buf.getvalue())
        assert bufs[0] == bufs[1]
        assert bufs[0].startswith("path,time,state\n")

    def test_bad_schedule_rejected(self):
        model = make_model()
        with pytest.raises(ValueError, match="does not divide"):
            simulate_ensemble(model, [0.0, 0.00150001], 2, 1e-3, seed=0)
        with pytest.raises(ValueError, match="ascending"):
            simulate_ensemble(model, [0.0, -0.5], 2, 1e-3, seed=0)

    def test_memory_cap(self):
        model = make_model()
        with pytest.raises(MemoryError):
            simulate_ensemble(model, [0.0, 1.0], 10**9, 1e-3, seed=0)


class TestPropagatorDensity:
    def test_no_jump_reduces_to_gaussian(self):
        model = make_model("1", "2", "0")
        dt = 0.01
        field = propagator_density(model, 0.0, 0.0, dt)
        nodes = field.grid.nodes
        gauss = np.exp(-0.5 * (nodes - dt) ** 2 / (2 * dt)) / np.sqrt(2 * np.pi * 2 * dt)
        np.testing.assert_allclose(field.values, gauss, rtol=1e-12)

    def test_mixture_weight(self):
        model = make_model("0", "1", "1")
        dt = 0.01
        field = propagator_density(model, 0.0, 0.0, dt)
        # far from the diffusion peak only the kernel term survives
        i = int(np.argmin(np.abs(field.grid.nodes - 3.0)))
        xi = field.grid.nodes[i]
        w = model.jump_kernel.pdf(xi, 0.0, 0.0)
        assert field.values[i] == pytest.approx(dt * w, rel=1e-9)

    def test_total_mass_near_one(self):
        model = make_model("0", "1", "1")
        field = propagator_density(model, 0.0, 0.0, 0.01)
        assert field.mass == pytest.approx(1.0, abs=1e-3)

    def test_degenerate_diffusion_rejected(self):
        model = make_model("0", "0", "1")
        with pytest.raises(ValueError, match="degenerate diffusion"):
            propagator_density(model, 0.0, 0.0, 0.01)

    def test_histogram_matches_density_and_improves_with_dt(self):
        # single-step draws vs the mixture density, and the L1 gap shrinks
        # when the step size drops 4x (lighter version of the full check)
        model = make_model("1", "2", "3", JumpKernel("gaussian", {"mean": "1", "scale": "2"}))
        gaps = []
        for stream, dt in ((0, 0.01), (1, 0.0025)):
            n = 200_000
            rng = RngStream(2026).at(0, stream)
            dx_draw = propagator_step(model, np.zeros(n), 0.0, dt, rng) - 0.0
            field = propagator_density(model, 0.0, 0.0, dt)
            edges = np.concatenate(
                [field.grid.nodes - 0.5 * field.grid.dx, [field.grid.nodes[-1] + 0.5 * field.grid.dx]]
            )
            hist, _ = np.histogram(dx_draw, bins=edges, density=True)
            gaps.append(np.sum(np.abs(hist - field.values)) * field.grid.dx)
        assert gaps[0] < 0.08
        assert gaps[1] < gaps[0]
