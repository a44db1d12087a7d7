import math

import numpy as np
import pytest

from rotoconv.groups import (GroupElement, RotationOperators, act_on_group_feature_map,
                             compose, export_triplets, import_triplets, inverse,
                             roll_orientations, rotate_exact90, rotate_interp,
                             rotation_matrix, unitarity_defect)

from oracles import rotation_dense_matrix


class TestGroupAlgebra:
    def test_compose_with_inverse_is_identity(self, rng):
        for _ in range(10):
            g = GroupElement(int(rng.integers(8)), tuple(rng.integers(-5, 6, 2)))
            e = compose(g, inverse(g))
            assert e.rot == 0
            assert np.abs(np.asarray(e.translation)).max() <= 1e-12

    def test_compose_worked_example(self):
        g = GroupElement(2, (1.0, 0.0))
        h = GroupElement(0, (0.0, 1.0))
        gh = compose(g, h)
        assert gh.rot == 2
        assert np.abs(np.asarray(gh.translation)).max() <= 1e-12
        matrix_product = g.homogeneous() @ h.homogeneous()
        assert np.abs(gh.homogeneous() - matrix_product).max() <= 1e-12

    def test_compose_symbolic_contract(self, rng):
        for _ in range(20):
            g = GroupElement(int(rng.integers(8)), tuple(rng.standard_normal(2)))
            h = GroupElement(int(rng.integers(8)), tuple(rng.standard_normal(2)))
            assert np.abs(compose(g, h).homogeneous()
                          - g.homogeneous() @ h.homogeneous()).max() <= 1e-12

    def test_inverse_identity(self):
        e = GroupElement.identity()
        assert inverse(e) == e

    def test_inverse_worked_example(self):
        inv = inverse(GroupElement(2, (1.0, 0.0)))
        assert inv.rot == 6
        assert np.allclose(inv.translation, (0.0, 1.0), atol=1e-12)
        g = GroupElement(2, (1.0, 0.0))
        assert np.abs(inv.homogeneous() - np.linalg.inv(g.homogeneous())).max() <= 1e-12

    def test_inverse_is_involution(self, rng):
        for _ in range(10):
            g = GroupElement(int(rng.integers(8)), tuple(rng.integers(-9, 10, 2)))
            gg = inverse(inverse(g))
            assert gg.rot == g.rot
            assert np.allclose(gg.translation, g.translation, atol=1e-12)

    def test_axioms_over_all_index_pairs(self, rng):
        worst = 0.0
        for r1 in range(8):
            for r2 in range(8):
                g = GroupElement(r1, tuple(rng.integers(-8, 9, 2)))
                h = GroupElement(r2, tuple(rng.integers(-8, 9, 2)))
                k = GroupElement(int(rng.integers(8)), tuple(rng.integers(-8, 9, 2)))
                worst = max(
                    worst,
                    np.abs(compose(g, h).homogeneous()
                           - g.homogeneous() @ h.homogeneous()).max(),
                    np.abs(compose(compose(g, h), k).homogeneous()
                           - compose(g, compose(h, k)).homogeneous()).max(),
                    np.abs(inverse(g).homogeneous()
                           - np.linalg.inv(g.homogeneous())).max(),
                )
        assert worst <= 1e-12

    def test_mixed_orders_rejected(self):
        with pytest.raises(ValueError, match="orders"):
            compose(GroupElement(1, order=8), GroupElement(1, order=4))


class TestExactRotation:
    def test_zero_turns_identity(self, rng):
        x = rng.random((3, 4, 4))
        assert np.array_equal(rotate_exact90(x, 0), x)

    def test_worked_example(self):
        out = rotate_exact90(np.array([[1.0, 2.0], [3.0, 4.0]]), 1)
        assert out.tolist() == [[2.0, 4.0], [1.0, 3.0]]

    def test_full_turn_identity(self, rng):
        x = rng.random((5, 5))
        assert np.array_equal(rotate_exact90(x, 4), x)

    def test_composition_bitwise(self, rng):
        x = rng.random((2, 6, 6))
        for q1 in range(4):
            for q2 in range(4):
                assert np.array_equal(rotate_exact90(rotate_exact90(x, q1), q2),
                                      rotate_exact90(x, q1 + q2))

    def test_non_square_rejected(self, rng):
        with pytest.raises(ValueError, match="square"):
            rotate_exact90(rng.random((3, 4)), 1)


class TestInterpolatedRotation:
    def test_zero_is_exact_identity(self, rng):
        x = rng.random((2, 7, 7))
        assert np.array_equal(rotate_interp(x, 0), x)

    def test_quarter_turn_short_circuits(self, rng):
        x = rng.random((9, 9))
        assert np.array_equal(rotate_interp(x, 2), rotate_exact90(x, 1))
        assert np.array_equal(rotate_interp(x, 2, method="bilinear"),
                              rotate_exact90(x, 1))

    @pytest.mark.parametrize("method", ["gaussian", "bilinear"])
    def test_matches_dense_oracle(self, rng, method):
        size = 7
        impulse = np.zeros((size, size))
        impulse[size // 2, size // 2] = 1.0
        got = rotate_interp(impulse, 1, method=method)
        oracle = rotation_dense_matrix(size, math.pi / 4, method)
        expect = (oracle @ impulse.reshape(-1)).reshape(size, size)
        assert np.abs(got - expect).max() <= 1e-12
        x = rng.standard_normal((size, size))
        got = rotate_interp(x, 3, method=method)
        oracle = rotation_dense_matrix(size, 3 * math.pi / 4, method)
        assert np.abs(got - (oracle @ x.reshape(-1)).reshape(size, size)).max() <= 1e-12

    def test_linearity(self, rng):
        f = rng.standard_normal((8, 8))
        g = rng.standard_normal((8, 8))
        a, b = 1.7, -0.4
        combined = rotate_interp(a * f + b * g, 1)
        assert np.abs(combined - (a * rotate_interp(f, 1) + b * rotate_interp(g, 1))).max() <= 1e-6

    def test_rows_renormalized_in_grid(self):
        m = rotation_matrix(9, math.pi / 4, "gaussian")
        sums = np.asarray(m.sum(axis=1)).reshape(-1)
        nonzero = sums[sums > 0]
        assert np.abs(nonzero - 1.0).max() <= 1e-12

    def test_exact90_matrices_are_permutations(self):
        ops = RotationOperators(6, 8)
        for r in (0, 2, 4, 6):
            m = ops.matrix(r).toarray()
            assert np.array_equal(np.sort(m, axis=1)[:, :-1], np.zeros((36, 35)))
            assert np.array_equal(m.sum(axis=1), np.ones(36))
            assert np.array_equal(m.sum(axis=0), np.ones(36))

    def test_non_square_rejected(self, rng):
        with pytest.raises(ValueError, match="square"):
            rotate_interp(rng.random((3, 5)), 1)


class TestRoll:
    def test_zero_identity(self, rng):
        x = rng.random((4, 3, 3))
        assert np.array_equal(roll_orientations(x, 0), x)

    def test_worked_example(self):
        slices = np.arange(4.0)[:, None, None] * np.ones((4, 2, 2))
        out = roll_orientations(slices, 1)
        assert out[:, 0, 0].tolist() == [3.0, 0.0, 1.0, 2.0]

    def test_full_cycle_identity(self, rng):
        x = rng.random((8, 2, 2))
        assert np.array_equal(roll_orientations(x, 8), x)

    def test_extent_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="extent"):
            roll_orientations(rng.random((4, 2, 2)), 1, order=8)


class TestInducedAction:
    def test_zero_identity(self, rng):
        ops = RotationOperators(6, 8)
        x = rng.random((2, 8, 6, 6))
        assert np.array_equal(act_on_group_feature_map(x, 0, ops), x)

    def test_full_turn_closes(self, rng):
        ops = RotationOperators(6, 8)
        x = rng.random((8, 6, 6))
        out = x
        for _ in range(4):
            out = act_on_group_feature_map(out, 2, ops)
        assert np.array_equal(out, x)

    def test_quarter_turn_matches_composition_oracle(self, rng):
        ops = RotationOperators(6, 8)
        x = rng.random((1, 3, 8, 6, 6))
        got = act_on_group_feature_map(x, 2, ops)
        expect = np.roll(rotate_exact90(x, 1), 2, axis=-3)
        assert np.array_equal(got, expect)

    def test_extent_mismatch_rejected(self, rng):
        ops = RotationOperators(6, 8)
        with pytest.raises(ValueError, match="extent"):
            act_on_group_feature_map(rng.random((4, 6, 6)), 1, ops)


class TestUnitarity:
    def test_exact_rotations_preserve_inner_products(self):
        ops = RotationOperators(9, 8)
        for r in (0, 2, 4, 6):
            assert unitarity_defect(ops, r, trials=16, seed=1) <= 1e-12

    @pytest.mark.parametrize("method", ["gaussian", "bilinear"])
    def test_interpolators_break_unitarity(self, method):
        ops = RotationOperators(9, 8, method)
        assert unitarity_defect(ops, 1, trials=64, seed=1) > 1e-3

    def test_trials_validated(self):
        with pytest.raises(ValueError, match="trials"):
            unitarity_defect(RotationOperators(5, 8), 1, trials=0)


class TestTripletExport:
    def test_round_trip(self, rng, tmp_path):
        m = rotation_matrix(6, math.pi / 4, "gaussian")
        path = tmp_path / "op.triplets"
        export_triplets(m, path)
        back = import_triplets(path, m.shape)
        assert np.abs((m - back).toarray()).max() == 0.0
        first = path.read_text().splitlines()[0].split()
        assert len(first) == 3
