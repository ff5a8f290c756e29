"""
正基单元测试

测试基模块的各种功能：
- hat与Bernstein基的取值性质
- Γ变换与协方差匹配
- 区域积分
- 基大小建议
- 截断GP采样与非负矩阵分解
"""

import numpy as np
import pytest

from coxsense.core.action_set import Region
from coxsense.core.basis import (
    BernsteinBasis,
    FunctionBasis,
    HatBasis,
    TabulatedBasis,
    build_nmf_basis,
    covariance_residual,
    eval_intensity,
    export_basis,
    factorize_nonnegative,
    gamma_transform,
    load_nmf_basis,
    region_integrals,
    sample_truncated_gp,
    save_nmf_basis,
    suggest_basis_size,
)
from coxsense.core.kernels import Domain, KernelSpec, psd_sqrt
from coxsense.errors import (
    BasisDegeneracyError,
    CapacityError,
    ParameterError,
    SamplingFailureError,
)


class TestHatBasis:
    """hat基测试类"""

    def test_midpoint_value(self, unit_domain):
        """测试m=3时节点为(−1,0,1)且中点取值0.5"""
        basis = HatBasis(unit_domain, 3)

        np.testing.assert_allclose(basis.nodes[:, 0], [-1.0, 0.0, 1.0])
        values = basis.evaluate(np.array([[0.5]]))
        assert values[0, 1] == pytest.approx(0.5)
        assert values[0, 2] == pytest.approx(0.5)
        assert values[0, 0] == 0.0

    def test_interpolatory(self, unit_domain):
        """测试φ_j(t_i) = δ_ij"""
        basis = HatBasis(unit_domain, 9)

        np.testing.assert_allclose(basis.evaluate(basis.nodes), np.eye(9), atol=1e-12)
        assert basis.interpolatory

    def test_partition_of_unity(self, unit_domain):
        """测试Σφ_j ≡ 1"""
        basis = HatBasis(unit_domain, 5)
        pts = np.random.default_rng(1).uniform(-1, 1, (1000, 1))

        np.testing.assert_allclose(basis.evaluate(pts).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(basis.evaluate(pts) >= 0.0)

    def test_partition_of_unity_2d(self):
        """测试2维张量hat基的单位分解"""
        domain = Domain(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        basis = HatBasis(domain, 4)
        pts = np.random.default_rng(2).uniform(-1, 1, (200, 2))

        assert basis.m == 16
        np.testing.assert_allclose(basis.evaluate(pts).sum(axis=1), 1.0, atol=1e-12)
        # 第一维变化最快
        np.testing.assert_allclose(basis.nodes[1], [-1.0 + 2.0 / 3.0, -1.0])

    def test_too_few_nodes(self, unit_domain):
        """测试每维节点少于2时抛出ParameterError"""
        with pytest.raises(ParameterError):
            HatBasis(unit_domain, 1)


class TestBernsteinBasis:
    """Bernstein基测试类"""

    def test_degree_one_endpoints(self, unit_domain):
        """测试1次基在端点插值"""
        basis = BernsteinBasis(unit_domain, 1)

        assert basis.evaluate(np.array([[-1.0]]))[0, 0] == pytest.approx(1.0)
        assert basis.evaluate(np.array([[1.0]]))[0, 1] == pytest.approx(1.0)

    def test_partition_of_unity(self, unit_domain):
        """测试Σφ_j ≡ 1（二项式定理）"""
        basis = BernsteinBasis(unit_domain, 6)
        pts = np.linspace(-1, 1, 101)

        np.testing.assert_allclose(basis.evaluate(pts).sum(axis=1), 1.0, atol=1e-12)

    def test_maxima_at_nodes(self, unit_domain):
        """测试7次基函数的最大值位于u=j/7"""
        basis = BernsteinBasis(unit_domain, 7)
        grid = np.linspace(-1, 1, 7001)
        values = basis.evaluate(grid)

        peaks = grid[np.argmax(values, axis=0)]
        np.testing.assert_allclose(peaks, basis.nodes[:, 0], atol=1e-3)

    def test_invalid_degree(self, unit_domain):
        """测试次数为0时抛出ParameterError"""
        with pytest.raises(ParameterError):
            BernsteinBasis(unit_domain, 0)


class TestGammaTransform:
    """Γ变换测试类"""

    def test_hat_covariance_matching(self, unit_domain):
        """测试hat基在节点处精确匹配核协方差"""
        model = gamma_transform(HatBasis(unit_domain, 64), KernelSpec(unit_domain, lengthscale=0.1))

        assert covariance_residual(model) <= 1e-6

    def test_bernstein_change_of_basis(self, unit_domain):
        """测试非插值基满足VΓ = K^{1/2}"""
        model = gamma_transform(BernsteinBasis(unit_domain, 7), KernelSpec(unit_domain, lengthscale=0.5))

        assert np.max(np.abs(model.V @ model.gamma - psd_sqrt(model.K))) <= 1e-8
        assert covariance_residual(model) <= 1e-8

    def test_identity_kernel_gives_identity_transform(self, unit_domain):
        """测试K=I时Γ=I且Φ=φ"""
        raw = HatBasis(unit_domain, 5)
        model = gamma_transform(raw, KernelSpec(unit_domain, lengthscale=1e-3))
        pts = np.linspace(-1, 1, 33)

        np.testing.assert_allclose(model.gamma, np.eye(5), atol=1e-12)
        np.testing.assert_allclose(model.features(pts), raw.evaluate(pts), atol=1e-12)

    def test_singular_change_of_basis(self, unit_domain):
        """测试V奇异时抛出BasisDegeneracyError并给出问题节点"""
        raw = FunctionBasis(unit_domain, np.array([[-0.5], [0.5]]), lambda p: np.ones((len(p), 2)))

        with pytest.raises(BasisDegeneracyError) as exc_info:
            gamma_transform(raw, KernelSpec(unit_domain, lengthscale=0.5))

        assert exc_info.value.nodes == [0, 1]

    def test_interior_point_is_strictly_feasible(self, unit_domain):
        """测试内点满足Γθ = l + 1"""
        model = gamma_transform(HatBasis(unit_domain, 8), KernelSpec(unit_domain, lengthscale=0.2), lower_bound=0.1)
        theta = model.interior_point()

        np.testing.assert_allclose(model.coefficients(theta), 1.1, atol=1e-8)
        assert model.is_feasible(theta)


class TestIntensityEvaluation:
    """强度取值测试类"""

    def test_zero_theta(self, unit_domain):
        """测试θ=0时强度为0"""
        model = gamma_transform(HatBasis(unit_domain, 8), KernelSpec(unit_domain, lengthscale=0.2))

        assert eval_intensity(model, np.zeros(8), 0.3) == 0.0

    def test_constant_under_identity_gamma(self, identity_model):
        """测试Γ=I、θ=c·1时强度处处为c"""
        model = identity_model(m=6)
        pts = np.linspace(-1, 1, 41)

        np.testing.assert_allclose(model.intensity(np.full(6, 2.5), pts), 2.5, atol=1e-12)

    def test_piecewise_linear_interpolant(self, unit_domain):
        """测试θ=Γ⁻¹c给出节点值c的分段线性插值"""
        model = gamma_transform(HatBasis(unit_domain, 8), KernelSpec(unit_domain, lengthscale=0.2))
        c = np.random.default_rng(3).uniform(0.2, 2.0, 8)
        theta = model.theta_from_coefficients(c)
        xs = np.linspace(-1, 1, 101)

        np.testing.assert_allclose(model.intensity(theta, xs), np.interp(xs, model.nodes[:, 0], c), atol=1e-8)


class TestRegionIntegrals:
    """区域积分测试类"""

    def test_hat_whole_domain(self, unit_domain, whole_region):
        """测试hat m=5在整个定义域上的积分"""
        model = gamma_transform(HatBasis(unit_domain, 5), KernelSpec(unit_domain, lengthscale=0.5))
        phi = region_integrals(model, [whole_region]).phi[0]

        assert phi.sum() == pytest.approx(2.0)
        np.testing.assert_allclose(phi, [0.25, 0.5, 0.5, 0.5, 0.25])

    def test_bernstein_whole_domain(self, unit_domain, whole_region):
        """测试3次Bernstein基在[−1,1]上的积分均为0.5"""
        model = gamma_transform(BernsteinBasis(unit_domain, 3), KernelSpec(unit_domain, lengthscale=0.5))
        phi = region_integrals(model, [whole_region]).phi[0]

        np.testing.assert_allclose(phi, 0.5, rtol=1e-12)

    @pytest.mark.parametrize("raw_factory", [lambda d: HatBasis(d, 7), lambda d: BernsteinBasis(d, 5)])
    def test_additivity(self, unit_domain, whole_region, raw_factory):
        """测试不相交区域的积分可加"""
        model = gamma_transform(raw_factory(unit_domain), KernelSpec(unit_domain, lengthscale=0.5))
        left = Region(1, np.array([-1.0]), np.array([0.0]), 1, 0)
        right = Region(2, np.array([0.0]), np.array([1.0]), 1, 0)
        integrals = region_integrals(model, [whole_region, left, right])

        np.testing.assert_allclose(integrals.phi[1] + integrals.phi[2], integrals.phi[0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(integrals.psi, integrals.phi @ model.gamma)
        np.testing.assert_allclose(integrals.psi_of(2), integrals.psi[2])

    def test_zero_volume_region(self, unit_domain):
        """测试零体积区域抛出ParameterError"""
        model = gamma_transform(HatBasis(unit_domain, 5), KernelSpec(unit_domain, lengthscale=0.5))
        flat = Region(3, np.array([0.2]), np.array([0.2]))

        with pytest.raises(ParameterError):
            region_integrals(model, [flat])


class TestSuggestBasisSize:
    """基大小建议测试类"""

    def test_smooth_kernel_small_basis(self, unit_domain):
        """测试非常平滑的核只需要很少的基"""
        assert suggest_basis_size(KernelSpec(unit_domain, lengthscale=10.0), unit_domain, 1e-3) <= 8

    def test_monotone_in_lengthscale(self, unit_domain):
        """测试长度尺度越短建议的基越多"""
        rough = suggest_basis_size(KernelSpec(unit_domain, lengthscale=0.05), unit_domain, 1e-3)
        smooth = suggest_basis_size(KernelSpec(unit_domain, lengthscale=0.5), unit_domain, 1e-3)

        assert rough > smooth

    def test_constant_kernel_minimum(self, unit_domain):
        """测试常数核返回最小基数2"""
        assert suggest_basis_size(KernelSpec(unit_domain, lengthscale=1e6), unit_domain, 1e-3) == 2

    def test_capacity_error(self, unit_domain):
        """测试超过上限时抛出CapacityError"""
        with pytest.raises(CapacityError):
            suggest_basis_size(KernelSpec(unit_domain, lengthscale=1e-2), unit_domain, 1e-12, cap=4)


class TestNonnegativeFactorization:
    """截断GP采样与NMF测试类"""

    def test_rank_one_exact(self):
        """测试精确秩1非负矩阵的重构误差"""
        rng = np.random.default_rng(4)
        F = np.outer(rng.uniform(0.5, 2.0, 30), rng.uniform(0.5, 2.0, 12))
        L, Y, history = factorize_nonnegative(F, 1, rng, weight=0.5)

        assert np.linalg.norm(F - L @ Y) / np.linalg.norm(F) <= 1e-6
        assert np.all(L >= 0) and np.all(Y >= 0)
        assert np.sqrt(0.5 * np.sum(L[:, 0] ** 2)) == pytest.approx(1.0)
        assert history[-1] <= history[0]

    def test_rank_too_large(self):
        """测试秩超过矩阵尺寸"""
        with pytest.raises(ParameterError):
            factorize_nonnegative(np.ones((3, 5)), 4, np.random.default_rng(0))

    def test_truncated_paths_respect_lower_bound(self, unit_domain):
        """测试拒绝采样得到的路径全部非负"""
        grid = np.linspace(-1, 1, 16).reshape(-1, 1)
        paths = sample_truncated_gp(KernelSpec(unit_domain, lengthscale=0.5), grid, 5, np.random.default_rng(5))

        assert paths.shape == (16, 5)
        assert paths.min() >= 0.0

    def test_rejection_budget_exhausted(self, unit_domain):
        """测试预算内无法接受时抛出SamplingFailureError"""
        grid = np.linspace(-1, 1, 8).reshape(-1, 1)

        with pytest.raises(SamplingFailureError):
            sample_truncated_gp(KernelSpec(unit_domain, lengthscale=0.5), grid, 3, np.random.default_rng(6),
                                lower=10.0, budget=2000)

    def test_nmf_basis(self, tmp_path, unit_domain):
        """测试NMF基的节点有序、取值非负，并可保存后重新加载"""
        kernel = KernelSpec(unit_domain, lengthscale=0.5)
        basis = build_nmf_basis(kernel, unit_domain, 3, np.random.default_rng(7), n_grid=32, n_samples=30,
                                iterations=100, seed=7)

        assert isinstance(basis, TabulatedBasis)
        assert basis.m == 3
        assert np.all(np.diff(basis.nodes[:, 0]) > 0)
        assert np.all(basis.table >= 0)
        assert basis.metadata["seed"] == 7

        frame = export_basis(basis, np.linspace(-1, 1, 10).reshape(-1, 1))
        assert list(frame.columns) == ["node_index", "x", "value"]
        assert len(frame) == 30

        save_nmf_basis(basis, tmp_path / "nmf.csv")
        loaded = load_nmf_basis(tmp_path / "nmf.csv", unit_domain)
        pts = np.linspace(-1, 1, 25)
        np.testing.assert_allclose(loaded.evaluate(pts), basis.evaluate(pts), atol=1e-12)
        np.testing.assert_allclose(loaded.nodes, basis.nodes)



class TestNmfBasisQuality:
    """NMF基质量验收测试类"""

    @pytest.mark.slow
    def test_reconstruction_error_decreases_with_rank(self, unit_domain):
        """测试同一组截断GP路径上，m=8→16→32重构误差严格下降且列归一"""
        n_grid = 128
        grid = np.linspace(-1, 1, n_grid).reshape(-1, 1)
        weight = 2.0 / (n_grid - 1)
        rng = np.random.default_rng(25)
        F = sample_truncated_gp(KernelSpec(unit_domain, lengthscale=0.25), grid, 200, rng, budget=200000)

        errors = []
        for m in (8, 16, 32):
            L, Y, history = factorize_nonnegative(F, m, np.random.default_rng(m), weight=weight)
            errors.append(np.linalg.norm(F - L @ Y) / np.linalg.norm(F))
            assert np.all(L >= 0) and np.all(Y >= 0)
            np.testing.assert_allclose(np.sqrt(weight * np.sum(L * L, axis=0)), 1.0, atol=1e-8)

        assert errors[0] > errors[1] > errors[2]

    @pytest.mark.slow
    def test_nmf_basis_columns(self, unit_domain):
        """测试NMF基的表格非负且离散列范数为1"""
        basis = build_nmf_basis(KernelSpec(unit_domain, lengthscale=0.25), unit_domain, 16,
                                np.random.default_rng(25), n_grid=128, budget=200000, seed=25)
        weight = basis.metadata["weight"]

        assert np.all(basis.table >= 0)
        np.testing.assert_allclose(np.sqrt(weight * np.sum(basis.table ** 2, axis=0)), 1.0, atol=1e-8)
        assert basis.metadata["relative_error"] < 1.0

    @pytest.mark.slow
    def test_gibbs_nodes_concentrate_where_lengthscale_is_short(self, unit_domain):
        """测试Gibbs核下节点更多落在长度尺度较小的左半区"""
        kernel = KernelSpec(unit_domain, family="gibbs",
                            lengthscale_field=lambda p: 0.15 + 0.225 * (p[:, 0] + 1.0))
        basis = build_nmf_basis(kernel, unit_domain, 12, np.random.default_rng(26), n_grid=128,
                                budget=200000, seed=26)
        nodes = basis.nodes[:, 0]

        assert np.sum(nodes < 0) > np.sum(nodes > 0)
