import math
import warnings

import numpy as np
import pytest

from diengmf.dynamics import (
    LORENZ_FIXED_POINT,
    IkedaParams,
    Lorenz63Params,
    ObservationModel,
    Propagator,
    ikeda_forward,
    ikeda_inverse,
    integrate,
    lorenz_vector_field,
    range_jacobian,
    range_observe,
    simulate_truth,
)
from diengmf.errors import ConfigurationError, NonInvertibleError
from diengmf.rng import RngStream


class TestIkeda:
    def test_origin(self):
        np.testing.assert_allclose(ikeda_forward(np.array([0.0, 0.0])), [1.0, 0.0])

    def test_unit_point(self):
        # t = 0.4 - 6/2 = -2.6, so (1, 0) -> (1 + 0.9 cos t, 0.9 sin t)
        out = ikeda_forward(np.array([1.0, 0.0]))
        np.testing.assert_allclose(
            out, [1.0 + 0.9 * math.cos(-2.6), 0.9 * math.sin(-2.6)], rtol=1e-14
        )
        np.testing.assert_allclose(out, [0.228800, -0.463951], atol=5e-7)

    def test_u_zero_collapses(self):
        params = IkedaParams(u=0.0)
        for x in [np.array([3.0, -7.0]), np.array([0.1, 0.2])]:
            np.testing.assert_allclose(ikeda_forward(x, params), [1.0, 0.0])

    def test_inverse_of_unit_image(self):
        np.testing.assert_allclose(
            ikeda_inverse(np.array([1.0, 0.0])), [0.0, 0.0], atol=1e-14
        )

    def test_roundtrip_batch(self):
        rng = RngStream(1)
        pts = rng.uniform(size=(10**4, 2)) * 6.0 - 3.0
        back = ikeda_inverse(ikeda_forward(pts))
        assert np.abs(back - pts).max() < 1e-10

    def test_forward_of_inverse(self):
        x = np.array([0.5, -0.3])
        np.testing.assert_allclose(ikeda_forward(ikeda_inverse(x)), x, atol=1e-10)

    def test_inverse_requires_u(self):
        with pytest.raises(NonInvertibleError):
            ikeda_inverse(np.array([1.0, 0.0]), IkedaParams(u=0.0))

    def test_ball_radius(self):
        assert IkedaParams(0.9).ball_radius == pytest.approx(math.sqrt(10.0), rel=1e-15)

    def test_param_validation(self):
        with pytest.raises(ConfigurationError):
            IkedaParams(u=1.0)


class TestLorenzField:
    def test_origin_equilibrium(self):
        np.testing.assert_array_equal(lorenz_vector_field(np.zeros(3)), np.zeros(3))

    def test_fixed_point(self):
        # x = y = sqrt(beta (rho - 1)), z = rho - 1 with beta (rho-1) = 72
        np.testing.assert_allclose(
            lorenz_vector_field(LORENZ_FIXED_POINT), np.zeros(3), atol=1e-12
        )

    def test_hand_value(self):
        np.testing.assert_allclose(
            lorenz_vector_field(np.array([1.0, 2.0, 3.0])), [10.0, 23.0, -6.0]
        )

    def test_param_validation(self):
        with pytest.raises(ConfigurationError):
            Lorenz63Params(sigma=-1.0)


class TestIntegrate:
    def test_fixed_point_preserved(self):
        params = Lorenz63Params()
        out = integrate(LORENZ_FIXED_POINT, params, dt=100.0, h=0.01)
        assert np.abs(out - LORENZ_FIXED_POINT).max() < 1e-9

    def test_substep_count(self):
        # one dt = 0.12 call equals twelve sequential h = 0.01 steps
        params = Lorenz63Params()
        x = np.array([8.0, 0.0, 0.0])
        direct = integrate(x, params, dt=0.12, h=0.01)
        stepped = x.copy()
        for _ in range(12):
            stepped = integrate(stepped, params, dt=0.01, h=0.01)
        np.testing.assert_array_equal(direct, stepped)

    def test_nonconforming_step(self):
        with pytest.raises(ConfigurationError):
            integrate(np.zeros(3), Lorenz63Params(), dt=0.125, h=0.01)

    def test_rk4_order(self):
        params = Lorenz63Params()
        x = np.array([8.0, 0.0, 0.0])
        sols = [integrate(x, params, dt=0.12, h=h) for h in (0.01, 0.005, 0.0025)]
        d1 = np.linalg.norm(sols[0] - sols[1])
        d2 = np.linalg.norm(sols[1] - sols[2])
        assert d1 / d2 > 12.0  # ~16 for a 4th-order scheme

    def test_tsit5_consistency(self):
        params = Lorenz63Params()
        x = np.array([8.0, 0.0, 0.0])
        fixed = integrate(LORENZ_FIXED_POINT, params, dt=10.0, h=0.01, method="tsit5")
        assert np.abs(fixed - LORENZ_FIXED_POINT).max() < 1e-9
        rk4 = integrate(x, params, dt=0.12, h=0.001)
        tsit = integrate(x, params, dt=0.12, h=0.01, method="tsit5")
        assert np.abs(rk4 - tsit).max() < 1e-6

    def test_tsit5_order(self):
        params = Lorenz63Params()
        x = np.array([8.0, 0.0, 0.0])
        sols = [
            integrate(x, params, dt=0.12, h=h, method="tsit5")
            for h in (0.012, 0.006, 0.003)
        ]
        d1 = np.linalg.norm(sols[0] - sols[1])
        d2 = np.linalg.norm(sols[1] - sols[2])
        assert d1 / d2 > 24.0  # ~32 for a 5th-order scheme


class TestRangeObservation:
    def test_pythagorean(self):
        model = ObservationModel(np.zeros(2), 4.0)
        assert range_observe(np.array([3.0, 4.0]), model) == pytest.approx(5.0)
        assert range_observe(np.array([0.0, 0.0]), model) == 0.0

    def test_center_is_zero(self):
        model = ObservationModel(LORENZ_FIXED_POINT, 4.0)
        assert range_observe(LORENZ_FIXED_POINT.copy(), model) == 0.0

    def test_jacobian_values(self):
        model = ObservationModel(np.zeros(2), 4.0)
        np.testing.assert_allclose(
            range_jacobian(np.array([3.0, 4.0]), model), [0.6, 0.8], rtol=1e-14
        )

    def test_jacobian_unit_norm(self):
        model = ObservationModel(np.zeros(3), 4.0)
        rng = RngStream(4)
        pts = rng.standard_normal((100, 3)) * 5.0
        rows = model.jacobian(pts)
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, rtol=1e-12)

    def test_jacobian_finite_differences(self):
        model = ObservationModel(np.zeros(2), 4.0)
        rng = RngStream(5)
        eps = 1e-6
        for _ in range(100):
            x = rng.standard_normal(2) * 3.0
            if np.linalg.norm(x) < 1e-2:
                continue
            grad_fd = np.array([
                (model.observe(x + eps * e) - model.observe(x - eps * e)) / (2 * eps)
                for e in np.eye(2)
            ])
            np.testing.assert_allclose(model.jacobian(x), grad_fd, rtol=1e-6)

    def test_jacobian_at_center_warns_zero(self):
        model = ObservationModel(np.zeros(2), 4.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            row = model.jacobian(np.zeros(2))
        assert len(caught) == 1
        np.testing.assert_array_equal(row, np.zeros(2))


class TestPropagator:
    def test_ikeda_dt_must_be_integer(self):
        with pytest.raises(ConfigurationError):
            Propagator("ikeda", dt=1.5)

    def test_unknown_system(self):
        with pytest.raises(ConfigurationError):
            Propagator("lorenz96")

    def test_batch_matches_single(self):
        prop = Propagator("ikeda", dt=3.0)
        pts = np.array([[1.25, 0.0], [0.5, 0.5]])
        batch = prop.propagate(pts)
        for row_in, row_out in zip(pts, batch):
            np.testing.assert_array_equal(prop.propagate(row_in), row_out)


class TestSimulateTruth:
    def test_noise_free(self):
        prop = Propagator("ikeda", dt=1.0)
        obs = ObservationModel(np.zeros(2), 0.0)
        truth, ys = simulate_truth(RngStream(0), np.array([1.25, 0.0]), prop, 50, obs)
        np.testing.assert_array_equal(ys, np.linalg.norm(truth, axis=1))

    def test_reproducible(self):
        prop = Propagator("ikeda", dt=1.0)
        obs = ObservationModel(np.zeros(2), 4.0)
        t1, y1 = simulate_truth(RngStream(7), np.array([1.25, 0.0]), prop, 100, obs)
        t2, y2 = simulate_truth(RngStream(7), np.array([1.25, 0.0]), prop, 100, obs)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(y1, y2)

    def test_truth_independent_of_obs_noise(self):
        prop = Propagator("ikeda", dt=1.0)
        obs = ObservationModel(np.zeros(2), 4.0)
        t1, y1 = simulate_truth(RngStream(1), np.array([1.25, 0.0]), prop, 100, obs)
        t2, y2 = simulate_truth(RngStream(2), np.array([1.25, 0.0]), prop, 100, obs)
        np.testing.assert_array_equal(t1, t2)
        assert not np.array_equal(y1, y2)

    def test_attractor_containment(self):
        prop = Propagator("ikeda", dt=1.0)
        obs = ObservationModel(np.zeros(2), 4.0)
        truth, _ = simulate_truth(RngStream(3), np.array([1.25, 0.0]), prop, 1100, obs)
        norms = np.linalg.norm(truth[100:], axis=1)
        assert norms.max() < math.sqrt(10.0) + 1.0
