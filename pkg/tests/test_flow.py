import math

import numpy as np
import pytest

import diengmf.autodiff as ad
from diengmf.flow import Flow, FlowConfig, alternating_masks, build_flow
from diengmf.rng import RngStream

TINY = FlowConfig(dim=2, n_layers=2, n_bins=4, depth=2, width=8)


def identity_flow(config=TINY, log_scale=0.0):
    masks = alternating_masks(config.dim, config.n_layers)
    perms = [np.arange(config.dim) for _ in range(config.n_layers)]
    return Flow(config, masks, perms, rng=None, log_scale=log_scale)


def perturbed_flow(seed=0, config=TINY, scale=0.4, log_scale=0.0):
    rng = RngStream(seed)
    flow = build_flow(config, rng.split("init"), log_scale)
    noise = rng.split("noise")
    for p in flow.parameters():
        p.data = p.data + scale * noise.standard_normal(p.data.shape)
    return flow


class TestIdentityFlow:
    def test_forward_is_identity(self):
        flow = identity_flow()
        u = RngStream(1).standard_normal((20, 2))
        x, ld = flow.forward(u)
        np.testing.assert_allclose(x, u, atol=1e-13)
        np.testing.assert_allclose(ld, 0.0, atol=1e-12)

    def test_scale_only(self):
        flow = identity_flow(log_scale=math.log(2.0))
        u = RngStream(2).standard_normal((10, 2))
        x, ld = flow.forward(u)
        np.testing.assert_allclose(x, 2.0 * u, rtol=1e-12)
        np.testing.assert_allclose(ld, 2.0 * math.log(2.0), rtol=1e-12)

    def test_log_density_at_zero(self):
        flow = identity_flow()
        assert flow.log_density(np.zeros((1, 2)))[0] == pytest.approx(
            -math.log(2 * math.pi), rel=1e-12
        )

    def test_scaled_log_density_at_zero(self):
        flow = identity_flow(log_scale=math.log(2.0))
        assert flow.log_density(np.zeros((1, 2)))[0] == pytest.approx(
            -math.log(2 * math.pi) - 2 * math.log(2.0), rel=1e-12
        )

    def test_fresh_flow_density_is_scaled_normal(self):
        # random permutations preserve the standard normal base
        for dim in (2, 3):
            cfg = FlowConfig(dim=dim, n_layers=6, n_bins=4, depth=2, width=8)
            flow = build_flow(cfg, RngStream(3), log_scale=0.7)
            x = RngStream(4).standard_normal((50, dim)) * 2.0
            u = x / math.exp(0.7)
            expected = (
                -0.5 * (u**2).sum(axis=1)
                - 0.5 * dim * math.log(2 * math.pi)
                - dim * 0.7
            )
            np.testing.assert_allclose(flow.log_density(x), expected, rtol=1e-10)


class TestBijectivity:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_roundtrip_many_parameter_draws(self, dim):
        cfg = FlowConfig(dim=dim, n_layers=6, n_bins=4, depth=2, width=8)
        for seed in range(10):
            flow = perturbed_flow(seed, cfg, scale=0.5)
            u = RngStream(100 + seed).standard_normal((100, dim))
            x, ld_f = flow.forward(u)
            back, ld_i = flow.inverse(x)
            assert np.abs(back - u).max() < 1e-8
            assert np.abs(ld_f + ld_i).max() < 1e-8

    def test_masked_coordinates_pass_through(self):
        flow = perturbed_flow(5)
        coupling = flow.couplings[0]
        z = RngStream(6).standard_normal((30, 2))
        out, _ = coupling.transform(z, inverse=False, grad=False)
        np.testing.assert_array_equal(
            out[:, coupling.mask_idx], z[:, coupling.mask_idx]
        )


class TestJacobianConsistency:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_logdet_matches_dense_jacobian(self, dim):
        cfg = FlowConfig(dim=dim, n_layers=4, n_bins=4, depth=2, width=8)
        flow = perturbed_flow(7, cfg, scale=0.5)
        eps = 1e-6
        x0 = np.array([0.3, -0.8, 1.1])[:dim]
        _, ld = flow.inverse(x0[None, :])
        jac = np.zeros((dim, dim))
        for j in range(dim):
            up = x0.copy()
            up[j] += eps
            down = x0.copy()
            down[j] -= eps
            u_up, _ = flow.inverse(up[None, :])
            u_down, _ = flow.inverse(down[None, :])
            jac[:, j] = (u_up[0] - u_down[0]) / (2 * eps)
        _, logdet_fd = np.linalg.slogdet(jac)
        assert ld[0] == pytest.approx(logdet_fd, rel=1e-4)

    def test_coupling_logdet_matches_jacobian(self):
        flow = perturbed_flow(8)
        coupling = flow.couplings[0]
        z0 = np.array([0.4, -0.2])
        eps = 1e-6
        jac = np.zeros((2, 2))
        for j in range(2):
            up, down = z0.copy(), z0.copy()
            up[j] += eps
            down[j] -= eps
            out_up, _ = coupling.transform(up[None, :], inverse=False, grad=False)
            out_down, _ = coupling.transform(down[None, :], inverse=False, grad=False)
            jac[:, j] = (out_up[0] - out_down[0]) / (2 * eps)
        _, ld = coupling.transform(z0[None, :], inverse=False, grad=False)
        _, logdet_fd = np.linalg.slogdet(jac)
        assert ld[0] == pytest.approx(logdet_fd, abs=1e-5)


class TestPlu:
    def test_logdet_cancellation(self):
        flow = perturbed_flow(9)
        plu = flow.plus[0]
        plu.log_diag.data = np.array([math.log(2.0), math.log(0.5)])
        z = RngStream(10).standard_normal((5, 2))
        out, ld = plu.transform(z, inverse=False, grad=False)
        np.testing.assert_allclose(ld, 0.0, atol=1e-15)  # log 2 + log 0.5
        back, ld_i = plu.transform(out, inverse=True, grad=False)
        np.testing.assert_allclose(back, z, atol=1e-12)
        np.testing.assert_allclose(ld_i, 0.0, atol=1e-15)


class TestDensityNormalization:
    def test_trapezoid_integral_is_one(self):
        flow = perturbed_flow(11, scale=0.6, log_scale=0.3)
        lim, n_grid = 14.0, 701
        axis = np.linspace(-lim, lim, n_grid)
        xx, yy = np.meshgrid(axis, axis)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        dens = np.exp(flow.log_density(pts)).reshape(n_grid, n_grid)
        integral = np.trapz(np.trapz(dens, axis, axis=1), axis)
        assert integral == pytest.approx(1.0, abs=0.01)


class TestSampling:
    def test_identity_flow_sampling_moments(self):
        flow = identity_flow()
        samples = flow.sample(RngStream(12), 20000)
        assert np.abs(samples.mean(axis=0)).max() < 0.03
        assert np.abs(samples.std(axis=0) - 1.0).max() < 0.03

    def test_reproducible(self):
        flow = perturbed_flow(13)
        a = flow.sample(RngStream(14), 5)
        b = flow.sample(RngStream(14), 5)
        np.testing.assert_array_equal(a, b)

    def test_sample_log_density_finite(self):
        flow = perturbed_flow(15, scale=0.5)
        samples = flow.sample(RngStream(16), 10**4)
        values = flow.log_density(samples)
        assert np.isfinite(values.mean())


class TestGradPathAgreement:
    def test_tensor_path_matches_numpy_path(self):
        flow = perturbed_flow(17, scale=0.5)
        x = RngStream(18).standard_normal((40, 2)) * 2.0
        plain = flow.log_density(x, grad=False)
        graph = flow.log_density(x, grad=True)
        assert isinstance(graph, ad.Tensor)
        np.testing.assert_allclose(graph.data, plain, rtol=1e-10, atol=1e-12)
