import numpy as np
import pytest

from fehlberg_node import LbfgsConfig, NonFiniteError, lbfgs_minimize
from fehlberg_node.optim import LbfgsState


def quadratic(a):
    """f(x) = ||x - a||^2 with its gradient."""

    def obj(x):
        d = x - a
        return float(d @ d), 2.0 * d

    return obj


def rosenbrock(x):
    f = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2
    g = np.array(
        [
            -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
            200.0 * (x[1] - x[0] ** 2),
        ]
    )
    return float(f), g


class TestLbfgs:
    def test_stationary_start_returns_immediately(self):
        a = np.array([1.0, -2.0, 3.0])
        x, trace = lbfgs_minimize(quadratic(a), a.copy())
        assert np.array_equal(x, a)
        assert trace.n_evals == 1
        assert trace.losses == [0.0]

    def test_quadratic_10d(self, rng):
        a = rng.standard_normal(10)
        cfg = LbfgsConfig(max_iter=15, max_eval=60)
        x, trace = lbfgs_minimize(quadratic(a), np.zeros(10), cfg)
        assert np.linalg.norm(x - a) <= 1e-8
        assert len(trace.losses) - 1 <= 15

    def test_rosenbrock_multiple_calls(self):
        x = np.array([-1.2, 1.0])
        state = LbfgsState()
        cfg = LbfgsConfig(max_iter=20, max_eval=40)
        for _ in range(10):  # 200 iterations in total
            x, _ = lbfgs_minimize(rosenbrock, x, cfg, state=state)
            if np.abs(x - 1.0).max() < 1e-6:
                break
        assert np.abs(x - 1.0).max() < 1e-6

    def test_trace_is_non_increasing(self, rng):
        a = rng.standard_normal(20)
        x, trace = lbfgs_minimize(quadratic(a), rng.standard_normal(20))
        losses = np.array(trace.losses)
        assert (np.diff(losses) <= 0).all()

    def test_strong_wolfe_conditions_hold_on_every_step(self, rng):
        cfg = LbfgsConfig()
        x0 = rng.standard_normal(2) * 2.0
        state = LbfgsState()
        x = x0
        records = []
        for _ in range(5):
            x, trace = lbfgs_minimize(rosenbrock, x, cfg, state=state)
            records.extend(trace.steps)
        assert records
        for rec in records:
            armijo = rec.f_after <= rec.f_before + cfg.c1 * rec.step * rec.gtd_before + 1e-12
            curvature = abs(rec.gtd_after) <= cfg.c2 * abs(rec.gtd_before) + 1e-12
            assert armijo and curvature

    def test_memory_bound(self, rng):
        cfg = LbfgsConfig(history=3, max_iter=20, max_eval=100)
        a = rng.standard_normal(30)

        def rough(x):
            d = x - a
            return float(d @ d + 0.1 * (d**4).sum()), 2.0 * d + 0.4 * d**3

        state = LbfgsState()
        lbfgs_minimize(rough, rng.standard_normal(30), cfg, state=state)
        assert len(state.s_list) <= 3

    def test_descent_directions(self, rng):
        # Every recorded step has a negative directional derivative.
        _, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig())
        for rec in trace.steps:
            assert rec.gtd_before < 0

    def test_eval_budget_respected(self, rng):
        cfg = LbfgsConfig(max_eval=5)
        calls = 0
        a = rng.standard_normal(5)
        base = quadratic(a)

        def counting(x):
            nonlocal calls
            calls += 1
            return base(x)

        lbfgs_minimize(counting, np.zeros(5), cfg)
        assert calls <= 5 + 1  # one possible overshoot by the final bracket probe

    def test_non_finite_start_raises(self):
        def bad(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NonFiniteError):
            lbfgs_minimize(bad, np.zeros(3))

    def test_overflowing_objective_recovers(self):
        # Steep narrow valley: a unit trial step overflows, the search must
        # still find a Wolfe point within budget.
        def steep(x):
            with np.errstate(over="ignore"):
                v = x[0] * 1e8
                f = v * v + x[1] ** 2
                g = np.array([2e8 * v, 2.0 * x[1]])
            if not np.isfinite(f):
                return float("inf"), np.zeros_like(x)
            return float(f), g

        x, trace = lbfgs_minimize(steep, np.array([1.0, 1.0]), LbfgsConfig())
        assert trace.losses[-1] < trace.losses[0]

    def test_determinism(self, rng):
        a = rng.standard_normal(8)
        x0 = rng.standard_normal(8)
        x1, t1 = lbfgs_minimize(quadratic(a), x0)
        x2, t2 = lbfgs_minimize(quadratic(a), x0)
        assert np.array_equal(x1, x2)
        assert t1.losses == t2.losses

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LbfgsConfig(c1=0.5, c2=0.1)
        with pytest.raises(ValueError):
            LbfgsConfig(max_iter=0)
