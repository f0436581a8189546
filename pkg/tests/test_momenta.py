import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidereg.geometry import GridGeometry
from slidereg.kernels import KernelSpec, eval_kernel, eval_mixed
from slidereg.momenta import (
    KernelGrams,
    MomentumSet,
    TimeMomenta,
    VelocityAssembler,
    control_lattice,
    directional_kernel_velocity,
    sparsity,
    sparsity_grad,
    synth_velocity,
    v_energy,
)

GRID = GridGeometry((24, 24), (1.0, 1.0), (0.0, 0.0))
WEND = KernelSpec("wendland_c0_mult", 4.0, 9)
GAUSS = KernelSpec("gaussian", 4.0, 9)


def random_set(rng, n=4, lo=6.0, hi=17.0):
    pts = rng.uniform(lo, hi, (n, 2))
    return MomentumSet(pts, rng.standard_normal((n, 2)), rng.standard_normal((n, 2, 2)))


class TestContainers:
    def test_shape_validation(self, rng):
        pts = rng.uniform(2, 20, (3, 2))
        with pytest.raises(ValueError):
            MomentumSet(pts, np.zeros((3, 2)), np.zeros((3, 2)))

    def test_time_momenta_point_mismatch(self, rng):
        a = MomentumSet.zeros(rng.uniform(2, 20, (3, 2)))
        b = MomentumSet.zeros(rng.uniform(2, 20, (3, 2)))
        with pytest.raises(ValueError):
            TimeMomenta((a, b))

    def test_control_lattice_stride(self):
        pts = control_lattice(GRID, 2)
        assert pts.shape == (144, 2)
        assert pts.min() == 0.0 and pts.max() == 22.0


class TestSynthVelocity:
    def test_zero_momenta_zero_field(self, rng):
        ms = MomentumSet.zeros(rng.uniform(4, 20, (5, 2)))
        v = synth_velocity(ms, WEND, GRID)
        assert np.all(v.vectors == 0.0)

    @pytest.mark.parametrize("spec", [WEND, GAUSS])
    def test_single_zeroth_momentum_reproduces_at_center(self, spec):
        pts = np.array([[12.0, 12.0]])
        a = np.array([0.7, -1.3])
        ms = MomentumSet(pts, a[None, :], np.zeros((1, 2, 2)))
        v = synth_velocity(ms, spec, GRID)
        np.testing.assert_allclose(v.vectors[12, 12], a, atol=1e-14)

    def test_first_order_sign_flip_across_kink(self):
        pts = np.array([[12.0, 12.0]])
        m1 = np.zeros((1, 2, 2))
        m1[0, 0] = [0.0, 1.0]  # slot along rows, vector along columns
        ms = MomentumSet(pts, np.zeros((1, 2)), m1)
        v = synth_velocity(ms, WEND, GRID).vectors
        # rows mirrored about the control row see opposite tangential velocity
        for off in (1, 2, 3):
            assert v[12 - off, 12, 1] == pytest.approx(-v[12 + off, 12, 1])
            assert v[12 + off, 12, 1] != 0.0
        assert v[12, 12, 1] == 0.0  # kink convention at the control row

    def test_linearity_doubling(self, rng):
        ms = random_set(rng)
        v1 = synth_velocity(ms, WEND, GRID).vectors
        doubled = MomentumSet(ms.points, 2 * ms.m0, 2 * ms.m1)
        v2 = synth_velocity(doubled, WEND, GRID).vectors
        np.testing.assert_allclose(v2, 2 * v1, rtol=1e-13, atol=1e-15)

    def test_compact_locality(self, rng):
        ms = random_set(rng, n=3, lo=8.0, hi=14.0)
        v = synth_velocity(ms, WEND, GRID).vectors
        pos = GRID.node_positions()
        far = np.ones(GRID.dims, bool)
        for p in ms.points:
            far &= np.max(np.abs(pos - p), axis=-1) >= WEND.scale
        assert far.any()
        assert np.all(v[far] == 0.0)

    def test_out_of_domain_points_rejected(self):
        ms = MomentumSet.zeros(np.array([[40.0, 4.0]]))
        with pytest.raises(ValueError):
            synth_velocity(ms, WEND, GRID)

    def test_matches_brute_force_sum(self, rng):
        # dense re-evaluation over every (node, point) pair, no footprints
        ms = random_set(rng, n=3, lo=8.0, hi=15.0)
        got = synth_velocity(ms, WEND, GRID).vectors
        pos = GRID.node_positions().reshape(-1, 2)
        want = np.zeros_like(pos)
        from slidereg.kernels import eval_partial

        for x_i, x in enumerate(pos):
            for j in range(3):
                want[x_i] += eval_kernel(WEND, x, ms.points[j]) * ms.m0[j]
                for i in range(2):
                    want[x_i] += eval_partial(WEND, i, x, ms.points[j]) * ms.m1[j, i]
        np.testing.assert_allclose(got.reshape(-1, 2), want, atol=1e-12)


class TestVEnergy:
    def test_zero_momenta(self, rng):
        assert v_energy(MomentumSet.zeros(rng.uniform(4, 20, (4, 2))), WEND) == 0.0

    @pytest.mark.parametrize("spec", [WEND, GAUSS])
    def test_single_zeroth_momentum_norm(self, spec):
        a = np.array([1.5, -2.0])
        ms = MomentumSet(np.array([[10.0, 10.0]]), a[None, :], np.zeros((1, 2, 2)))
        assert v_energy(ms, spec) == pytest.approx(float(a @ a))

    @pytest.mark.parametrize("spec", [WEND, GAUSS])
    def test_matches_dense_gram_oracle(self, spec, rng):
        ms = random_set(rng, n=5)
        want = 0.0
        for j in range(5):
            for k in range(5):
                want += ms.m0[j] @ ms.m0[k] * eval_kernel(spec, ms.points[j], ms.points[k])
                for i in range(2):
                    want += ms.m1[j, i] @ ms.m1[k, i] * eval_mixed(
                        spec, i, ms.points[j], ms.points[k]
                    )
        assert v_energy(ms, spec) == pytest.approx(want, rel=1e-12)

    def test_gaussian_energy_nonnegative(self, rng):
        # the smooth family has a true positive-semidefinite per-order Gram
        for _ in range(20):
            ms = random_set(rng, n=6)
            scale = max(np.sum(ms.m0**2) + np.sum(ms.m1**2), 1.0)
            assert v_energy(ms, GAUSS) >= -1e-8 * scale

    def test_wendland_zeroth_energy_nonnegative(self, rng):
        for _ in range(20):
            ms = random_set(rng, n=6)
            only0 = MomentumSet(ms.points, ms.m0, np.zeros_like(ms.m1))
            scale = max(np.sum(ms.m0**2), 1.0)
            assert v_energy(only0, WEND) >= -1e-8 * scale

    def test_grams_grad_matches_quadratic_form(self, rng):
        ms = random_set(rng, n=5)
        grams = KernelGrams(WEND, ms.points)
        g0, g1 = grams.grad(ms.m0, ms.m1)
        eps = 1e-6
        d0 = rng.standard_normal(ms.m0.shape)
        d1 = rng.standard_normal(ms.m1.shape)
        ep = grams.energy(ms.m0 + eps * d0, ms.m1 + eps * d1)
        em = grams.energy(ms.m0 - eps * d0, ms.m1 - eps * d1)
        dd = (ep - em) / (2 * eps)
        assert float(np.sum(g0 * d0) + np.sum(g1 * d1)) == pytest.approx(dd, rel=1e-7)


class TestSparsity:
    def test_zero_momenta(self, rng):
        ms = MomentumSet.zeros(rng.uniform(4, 20, (4, 2)))
        assert sparsity(ms, [0.5, 0.5, 0.5]) == 0.0

    def test_single_momentum_small_eps_limit(self):
        m1 = np.zeros((1, 2, 2))
        m1[0, 0] = [2.0, 0.0]
        ms = MomentumSet(np.array([[10.0, 10.0]]), np.zeros((1, 2)), m1)
        got = sparsity(ms, [0.0, 0.5, 0.5], eps=1e-12)
        assert got == pytest.approx(1.0, abs=1e-9)

    def test_gradient_zero_at_zero_momenta(self, rng):
        ms = MomentumSet.zeros(rng.uniform(4, 20, (4, 2)))
        g0, g1 = sparsity_grad(ms, [0.7, 0.7, 0.7])
        assert np.all(g0 == 0.0) and np.all(g1 == 0.0)

    def test_weight_count_checked(self, rng):
        ms = MomentumSet.zeros(rng.uniform(4, 20, (4, 2)))
        with pytest.raises(ValueError):
            sparsity(ms, [0.5, 0.5])

    @settings(deadline=None, max_examples=25)
    @given(st.floats(0.1, 3.0), st.floats(1e-8, 1e-3))
    def test_below_unsmoothed_l1(self, norm, eps):
        m0 = np.zeros((1, 2))
        m0[0, 0] = norm
        ms = MomentumSet(np.array([[10.0, 10.0]]), m0, np.zeros((1, 2, 2)))
        got = sparsity(ms, [1.0, 0.0, 0.0], eps=eps)
        assert got <= norm
        assert got >= norm - eps


class TestDirectionalEquivalence:
    def test_axis_direction_equals_first_order_momentum(self):
        a = np.array([0.3, 1.1])
        y = np.array([11.0, 13.0])
        via_dir = directional_kernel_velocity(a, [1.0, 0.0], y, WEND, GRID).vectors
        m1 = np.zeros((1, 2, 2))
        m1[0, 0] = a
        via_synth = synth_velocity(MomentumSet(y[None, :], np.zeros((1, 2)), m1), WEND, GRID).vectors
        np.testing.assert_array_equal(via_dir, via_synth)

    def test_oblique_direction_equals_weighted_momenta(self, rng):
        a = np.array([-0.8, 0.4])
        y = np.array([12.0, 12.0])
        w = np.array([1.0, 1.0]) / np.sqrt(2.0)
        via_dir = directional_kernel_velocity(a, w, y, GAUSS, GRID).vectors
        m1 = np.zeros((1, 2, 2))
        m1[0, 0] = w[0] * a
        m1[0, 1] = w[1] * a
        via_synth = synth_velocity(MomentumSet(y[None, :], np.zeros((1, 2)), m1), GAUSS, GRID).vectors
        np.testing.assert_allclose(via_dir, via_synth, atol=1e-12)

    def test_zero_vector_gives_zero_field(self):
        v = directional_kernel_velocity([0.0, 0.0], [0.0, 1.0], [12.0, 12.0], WEND, GRID)
        assert np.all(v.vectors == 0.0)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(ValueError):
            directional_kernel_velocity([1.0, 0.0], [2.0, 0.0], [12.0, 12.0], WEND, GRID)


class TestAssemblerAdjoint:
    @pytest.mark.parametrize("spec", [WEND, GAUSS])
    def test_adjoint_identity(self, spec, rng):
        pts = control_lattice(GRID, 4)
        asm = VelocityAssembler(spec, GRID, pts)
        n, d = pts.shape
        m0 = rng.standard_normal((n, d))
        m1 = rng.standard_normal((n, d, d))
        vbar = rng.standard_normal((GRID.node_count, d))
        v = asm.velocity(m0, m1)
        a0, a1 = asm.adjoint(vbar)
        lhs = float(np.sum(v * vbar))
        rhs = float(np.sum(m0 * a0) + np.sum(m1 * a1))
        assert lhs == pytest.approx(rhs, rel=1e-12)
