import math

import numpy as np
import pytest

from fehlberg_node import (
    LorenzParams,
    NonFiniteError,
    SolverConfig,
    fehlberg_step,
    integrate_fixed_rk3,
    lorenz_field,
    rk2_step,
    rk3_step,
)
from fehlberg_node.integrators import proposed_step, substep_count

from oracles import rk4_lorenz, truncated_expm


def scalar_field(fn):
    """Embed a scalar ODE into the first coordinate of R^3."""
    return lambda x: np.array([fn(x[0]), 0.0, 0.0])


class TestRkSteps:
    def test_zero_field(self):
        x = np.array([1.0, 2.0, 3.0])
        zero = lambda y: np.zeros(3)
        assert np.array_equal(rk2_step(zero, x, 0.5), x)
        assert np.array_equal(rk3_step(zero, x, 0.5), x)

    def test_constant_field(self):
        x = np.array([1.0, 2.0, 3.0])
        c = np.array([0.5, -1.0, 2.0])
        const = lambda y: c
        assert np.allclose(rk2_step(const, x, 0.25), x + 0.25 * c, rtol=0, atol=1e-16)
        assert np.allclose(rk3_step(const, x, 0.25), x + 0.25 * c, rtol=0, atol=1e-16)

    def test_rk2_hand_value(self):
        # f1 = 1, f2 = 1.1 -> 1 + 0.05 * 2.1 = 1.105
        out = rk2_step(scalar_field(lambda v: v), np.array([1.0, 0.0, 0.0]), 0.1)
        assert abs(out[0] - 1.105) < 1e-15

    def test_rk3_hand_value(self):
        # On a linear field RK3 equals the 3rd-order Taylor polynomial.
        out = rk3_step(scalar_field(lambda v: v), np.array([1.0, 0.0, 0.0]), 0.1)
        expected = 1.0 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6
        assert abs(out[0] - expected) < 1e-15

    def test_linear_field_exactness(self, rng):
        # rk3 == degree-3 truncated matrix exponential; rk2 == degree-2.
        for _ in range(100):
            a = rng.standard_normal((3, 3))
            h = 0.5 / np.linalg.norm(a)
            x = rng.standard_normal(3)
            field = lambda y: a @ y
            r3 = rk3_step(field, x, h)
            r2 = rk2_step(field, x, h)
            e3 = truncated_expm(a, h, 3) @ x
            e2 = truncated_expm(a, h, 2) @ x
            assert np.abs(r3 - e3).max() <= 1e-13 * max(1.0, np.abs(e3).max())
            assert np.abs(r2 - e2).max() <= 1e-13 * max(1.0, np.abs(e2).max())

    def test_non_finite_field_raises(self):
        bad = lambda y: np.array([np.nan, 0.0, 0.0])
        with pytest.raises(NonFiniteError):
            rk2_step(bad, np.zeros(3), 1.0)
        with pytest.raises(NonFiniteError):
            rk3_step(bad, np.zeros(3), 1.0)

    def test_local_order_on_lorenz(self, small_dataset):
        # Log-log slope of one-step error vs a fine RK4 oracle.
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        x = small_dataset.points[150]
        hs = np.array([0.04, 0.02, 0.01, 0.005])
        e2, e3 = [], []
        for h in hs:
            ref = rk4_lorenz(x, h, h * 1e-5)
            e2.append(np.linalg.norm(rk2_step(field, x, h) - ref))
            e3.append(np.linalg.norm(rk3_step(field, x, h) - ref))
        s2 = np.polyfit(np.log(hs), np.log(e2), 1)[0]
        s3 = np.polyfit(np.log(hs), np.log(e3), 1)[0]
        assert 2.7 <= s2 <= 3.3
        assert 3.7 <= s3 <= 4.3


class TestFehlbergStep:
    def test_zero_field_accepts(self):
        out = fehlberg_step(lambda y: np.zeros(3), np.array([1.0, 2.0, 3.0]), SolverConfig(), 1.0)
        assert out.accepted and out.r == 0.0
        assert np.array_equal(out.a2, np.array([1.0, 2.0, 3.0]))
        assert out.h_new is None and out.n_steps is None

    def test_hand_derived_rejection(self):
        # Linear growth at h=1: every quantity computable by hand.
        out = fehlberg_step(scalar_field(lambda v: v), np.array([1.0, 0.0, 0.0]), SolverConfig(), 1.0)
        assert abs(out.evals[0][0] - 1.0) < 1e-15
        assert abs(out.evals[1][0] - 2.0) < 1e-15
        assert abs(out.evals[2][0] - 1.75) < 1e-15
        assert abs(out.a1[0] - 2.5) < 1e-12
        assert abs(out.a2[0] - 8.0 / 3.0) < 1e-12
        assert abs(out.r - 1.0 / 6.0) < 1e-12
        assert not out.accepted
        assert abs(out.h_new - 0.9 * math.sqrt(0.6)) < 1e-12
        assert out.n_steps == 2

    def test_direct_substitution_step_update(self):
        cfg = SolverConfig()
        h_new = proposed_step(0.4, 1.0, cfg)
        assert abs(h_new - 0.45) < 1e-15
        assert substep_count(h_new, cfg) == 3

    def test_clip_gives_ten_substeps(self):
        cfg = SolverConfig()
        assert substep_count(0.05, cfg) == 10

    def test_acceptance_boundary(self):
        cfg = SolverConfig(eps=0.2)
        out = fehlberg_step(scalar_field(lambda v: v), np.array([1.0, 0.0, 0.0]), cfg, 1.0)
        assert out.accepted  # r = 1/6 < 0.2

    def test_error_rate_times_h_is_distance(self, rng, small_dataset):
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        cfg = SolverConfig()
        for _ in range(25):
            x = small_dataset.points[rng.integers(0, 200)]
            h = float(rng.uniform(0.01, 1.0))
            out = fehlberg_step(field, x, cfg, h)
            dist = float(np.linalg.norm(out.a2 - out.a1))
            assert abs(out.r * h - dist) <= 4 * np.finfo(float).eps * max(dist, 1.0)

    def test_hypothesis_difference_identity(self, rng):
        # A2 - A1 = (h/3) * (2 f3 - f1 - f2)
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        for _ in range(25):
            x = rng.uniform(-15, 15, size=3)
            h = float(rng.uniform(0.05, 1.0))
            out = fehlberg_step(field, x, SolverConfig(), h)
            f1, f2, f3 = out.evals
            lhs = out.a2 - out.a1
            rhs = (h / 3.0) * (2.0 * f3 - f1 - f2)
            assert np.abs(lhs - rhs).max() <= 4 * np.finfo(float).eps * max(1.0, np.abs(lhs).max())

    def test_rejection_monotonicity(self, rng):
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        cfg = SolverConfig()
        rejected = 0
        for _ in range(50):
            x = rng.uniform(-15, 15, size=3)
            out = fehlberg_step(field, x, cfg, 1.0)
            if not out.accepted:
                rejected += 1
                assert out.h_new < cfg.safety * 1.0
                assert out.n_steps >= 2
        assert rejected > 0  # the raw Lorenz field at h=1 is far too coarse

    def test_error_rate_scales_quadratically(self, small_dataset):
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        x = small_dataset.points[150]
        hs = np.array([0.04, 0.02, 0.01, 0.005])
        rs = [fehlberg_step(field, x, SolverConfig(), float(h)).r for h in hs]
        slope = np.polyfit(np.log(hs), np.log(rs), 1)[0]
        assert 1.8 <= slope <= 2.2

    def test_determinism(self):
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        x = np.array([3.0, 4.0, 25.0])
        a = fehlberg_step(field, x, SolverConfig(), 1.0)
        b = fehlberg_step(field, x, SolverConfig(), 1.0)
        assert np.array_equal(a.a1, b.a1) and np.array_equal(a.a2, b.a2)
        assert a.r == b.r and a.h_new == b.h_new


class TestFixedRk3:
    def test_single_step_equals_rk3(self):
        p = LorenzParams()
        field = lambda y: lorenz_field(p, y)
        x = np.array([1.0, 1.0, 1.0])
        assert np.array_equal(integrate_fixed_rk3(field, x, 1), rk3_step(field, x, 1.0))

    def test_constant_field_total_interval(self):
        c = np.array([0.5, -1.0, 2.0])
        x = np.array([1.0, 2.0, 3.0])
        for n in (1, 2, 5, 10):
            out = integrate_fixed_rk3(lambda y: c, x, n)
            assert np.allclose(out, x + c, rtol=0, atol=1e-14)

    def test_decay_matches_iterated_factor(self):
        # Per-step factor of RK3 on xdot = -x with h = 0.1, iterated 10 times
        # in extended precision.
        factor = np.longdouble(1) - np.longdouble("0.1") + np.longdouble("0.005") - np.longdouble("0.1") ** 3 / 6
        expected = float(factor**10)
        out = integrate_fixed_rk3(scalar_field(lambda v: -v), np.array([1.0, 0.0, 0.0]), 10)
        assert abs(out[0] - expected) < 1e-14

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            integrate_fixed_rk3(lambda y: np.zeros(3), np.zeros(3), 0)


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.eps == 0.1 and cfg.safety == 0.9 and cfg.h0 == 1.0 and cfg.h_clip == 0.1

    @pytest.mark.parametrize(
        "kwargs", [{"eps": 0.0}, {"safety": 1.5}, {"h0": 0.5}, {"h_clip": 0.0}, {"norm": "max"}]
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)
