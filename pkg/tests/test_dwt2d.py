import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tunable_wavelets.dwt2d import (
    SubbandSet,
    analysis_matrix,
    build_plan,
    decompose,
    reconstruct,
    square_plans,
    tap_gradient,
)
from tunable_wavelets.errors import InvalidParameterError, ShapeError
from tunable_wavelets.filterbank import CoefficientFilterBank, LatticeFilterBank, lattice_to_filters

R2 = math.sqrt(2) / 2
HAAR = CoefficientFilterBank([R2, R2])


def direct_analysis(h, x):
    """Filtered downsampling by explicit loops: y[r] = sum_j h[j] x[(2r + j) mod n]."""
    n = len(x)
    return np.array([sum(h[j] * x[(2 * r + j) % n] for j in range(len(h))) for r in range(n // 2)])


def direct_decompose(bank, x):
    def rows(h, img):
        return np.stack([direct_analysis(h, img[:, c]) for c in range(img.shape[1])], axis=1)

    def cols(h, img):
        return np.stack([direct_analysis(h, img[r]) for r in range(img.shape[0])], axis=0)

    lo_r, hi_r = rows(bank.h0, x), rows(bank.h1, x)
    return (cols(bank.h0, lo_r), cols(bank.h0, hi_r), cols(bank.h1, lo_r), cols(bank.h1, hi_r))


def random_lattice(rng, max_stages=4):
    return lattice_to_filters(LatticeFilterBank(rng.uniform(-np.pi, np.pi, rng.integers(1, max_stages + 1))))


class TestBuildPlan:
    def test_haar_lowpass(self):
        plan = build_plan(HAAR, 4)
        np.testing.assert_allclose(plan.lowpass_op, [[R2, R2, 0, 0], [0, 0, R2, R2]], atol=1e-15)

    def test_haar_highpass(self):
        plan = build_plan(HAAR, 4)
        np.testing.assert_allclose(plan.highpass_op, [[R2, -R2, 0, 0], [0, 0, R2, -R2]], atol=1e-15)

    def test_lazy_bank(self):
        plan = build_plan(CoefficientFilterBank([1.0, 0.0]), 4)
        np.testing.assert_array_equal(plan.lowpass_op, [[1, 0, 0, 0], [0, 0, 1, 0]])
        assert plan.boundary == "periodic"

    def test_wraparound(self):
        op = analysis_matrix([1.0, 2.0, 3.0, 4.0], 6)
        np.testing.assert_array_equal(op[2], [3, 4, 0, 0, 1, 2])

    def test_accepts_lattice_bank(self):
        plan = build_plan(LatticeFilterBank([math.pi / 4]), 4)
        np.testing.assert_allclose(plan.lowpass_op, build_plan(HAAR, 4).lowpass_op, atol=1e-15)

    @pytest.mark.parametrize("length", [3, 5, 2, 0])
    def test_bad_length(self, length):
        bank = CoefficientFilterBank([0.1, 0.2, 0.3, 0.4])
        with pytest.raises(InvalidParameterError):
            build_plan(bank, length)

    def test_plans_are_cached_and_read_only(self):
        a = build_plan(HAAR, 8)
        assert build_plan(CoefficientFilterBank([R2, R2]), 8) is a
        with pytest.raises(ValueError):
            a.lowpass_op[0, 0] = 1.0

    def test_concurrent_lookups_agree(self):
        rng = np.random.default_rng(0)
        banks = [random_lattice(rng) for _ in range(20)]
        results = {}

        def work(idx):
            results[idx] = [build_plan(b, 16).lowpass_op.copy() for b in banks]

        threads = [threading.Thread(target=work, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(1, 6):
            for a, b in zip(results[0], results[i]):
                np.testing.assert_array_equal(a, b)

    def test_tap_gradient_is_adjoint(self):
        rng = np.random.default_rng(1)
        for length, taps in [(4, 4), (6, 2), (8, 6), (16, 8)]:
            h = rng.standard_normal(taps)
            g = rng.standard_normal((length // 2, length))
            lhs = np.sum(g * analysis_matrix(h, length))
            assert lhs == pytest.approx(np.dot(tap_gradient(g, taps), h), rel=1e-12)


class TestDecompose:
    def test_constant(self):
        rows, cols = square_plans(HAAR, 2)
        s = decompose(rows, cols, [[1, 1], [1, 1]])
        np.testing.assert_allclose(s.ll, [[2]], atol=1e-15)
        for band in (s.lh, s.hl, s.hh):
            np.testing.assert_allclose(band, [[0]], atol=1e-15)

    def test_checkerboard(self):
        rows, cols = square_plans(HAAR, 2)
        s = decompose(rows, cols, [[1, -1], [-1, 1]])
        np.testing.assert_allclose(s.hh, [[2]], atol=1e-15)
        for band in (s.ll, s.lh, s.hl):
            np.testing.assert_allclose(band, [[0]], atol=1e-15)

    def test_energy_conservation(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            rows, cols = square_plans(random_lattice(rng, 3), 8)
            x = rng.standard_normal((8, 8))
            energy = sum(np.sum(b ** 2) for b in decompose(rows, cols, x).as_tuple())
            assert energy == pytest.approx(np.sum(x ** 2), rel=1e-8)

    def test_matches_direct_filtering(self):
        rng = np.random.default_rng(3)
        for h, w in [(8, 8), (8, 12), (16, 10)]:
            bank = random_lattice(rng, 4)
            if bank.taps > min(h, w):
                continue
            x = rng.standard_normal((h, w))
            s = decompose(*square_plans(bank, h, w), x)
            for got, want in zip(s.as_tuple(), direct_decompose(bank, x)):
                np.testing.assert_allclose(got, want, atol=1e-12)

    def test_rectangular_shapes(self):
        rows, cols = square_plans(HAAR, 6, 10)
        s = decompose(rows, cols, np.ones((6, 10)))
        assert s.ll.shape == (3, 5)

    def test_batched_input_matches_per_image(self):
        rng = np.random.default_rng(4)
        rows, cols = square_plans(random_lattice(rng), 8)
        x = rng.standard_normal((2, 3, 8, 8))
        s = decompose(rows, cols, x)
        single = decompose(rows, cols, x[1, 2])
        np.testing.assert_allclose(s.hl[1, 2], single.hl, atol=1e-14)

    def test_shape_mismatch(self):
        rows, cols = square_plans(HAAR, 4)
        with pytest.raises(ShapeError):
            decompose(rows, cols, np.zeros((4, 6)))
        with pytest.raises(ShapeError):
            decompose(rows, cols, np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (8, 8), elements=st.floats(-100, 100)),
           arrays(np.float64, (8, 8), elements=st.floats(-100, 100)),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, x, y, a, b):
        rows, cols = square_plans(lattice_to_filters(LatticeFilterBank([0.4, -1.1, 0.2])), 8)
        lhs = decompose(rows, cols, a * x + b * y).as_tuple()
        sx, sy = decompose(rows, cols, x).as_tuple(), decompose(rows, cols, y).as_tuple()
        scale = max(1.0, np.max(np.abs(a * x)) + np.max(np.abs(b * y)))
        for got, u, v in zip(lhs, sx, sy):
            assert np.max(np.abs(got - (a * u + b * v))) <= 1e-12 * scale


class TestReconstruct:
    def test_perfect_reconstruction_random_lattice(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            rows, cols = square_plans(random_lattice(rng), 16)
            x = rng.standard_normal((16, 16))
            worst = max(worst, np.max(np.abs(reconstruct(rows, cols, decompose(rows, cols, x)) - x)))
        assert worst < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-4, 4), min_size=1, max_size=4), st.sampled_from([0, 1, 2, 3]),
           st.integers(0, 2 ** 32 - 1))
    def test_perfect_reconstruction_any_even_size(self, angles, extra, seed):
        bank = lattice_to_filters(LatticeFilterBank(angles))
        h = bank.taps + 2 * extra
        w = bank.taps + 2 * ((extra + 1) % 4)
        x = np.random.default_rng(seed).standard_normal((h, w))
        rows, cols = square_plans(bank, h, w)
        assert np.max(np.abs(reconstruct(rows, cols, decompose(rows, cols, x)) - x)) < 1e-10

    def test_operator_orthogonality(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            plan = build_plan(random_lattice(rng), 16)
            low, high = plan.lowpass_op, plan.highpass_op
            eye = np.eye(8)
            assert np.max(np.abs(low @ low.T - eye)) < 1e-10
            assert np.max(np.abs(high @ high.T - eye)) < 1e-10
            assert np.max(np.abs(low @ high.T)) < 1e-10

    def test_zero_subbands(self):
        rows, cols = square_plans(HAAR, 4)
        z = np.zeros((2, 2))
        np.testing.assert_array_equal(reconstruct(rows, cols, SubbandSet(z, z, z, z)), np.zeros((4, 4)))

    def test_adjoint_of_constant_example(self):
        rows, cols = square_plans(HAAR, 2)
        z = np.zeros((1, 1))
        out = reconstruct(rows, cols, SubbandSet(np.array([[2.0]]), z, z, z))
        np.testing.assert_allclose(out, [[1, 1], [1, 1]], atol=1e-15)

    def test_pr_relaxed_error_grows_with_perturbation(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((16, 16))
        direction = np.array([0.3, -0.8])
        errors = []
        for delta in (0.0, 1e-3, 1e-2):
            bank = CoefficientFilterBank(np.array([R2, R2]) + delta * direction)
            rows, cols = square_plans(bank, 16)
            errors.append(np.max(np.abs(reconstruct(rows, cols, decompose(rows, cols, x)) - x)))
        assert errors[0] < 1e-14
        assert errors[0] <= errors[1] <= errors[2]
        assert errors[2] > 0

    def test_subband_shape_mismatch(self):
        rows, cols = square_plans(HAAR, 4)
        z = np.zeros((3, 3))
        with pytest.raises(ShapeError):
            reconstruct(rows, cols, SubbandSet(z, z, z, z))
        with pytest.raises(ShapeError):
            SubbandSet(np.zeros((2, 2)), z, z, z)
