"""Coefficient-space ICP: nearest rows, Procrustes refit, end-to-end polish."""

import numpy as np
import pytest

import _meshes
import _oracles
from shapecorr import (PointMap, load_point_map, nearest_rows,
                       orthogonal_procrustes, point_map_from_functional,
                       refine_icp, save_point_map)


class TestPointMap:
    def test_basics(self):
        pm = PointMap(np.array([2, 0, 1]))
        assert len(pm) == 3
        assert pm.indices.dtype == np.int64

    def test_immutable(self):
        pm = PointMap(np.array([0, 1]))
        with pytest.raises(ValueError):
            pm.indices[0] = 5

    def test_validation(self):
        with pytest.raises(ValueError, match="1-d"):
            PointMap(np.array([[0, 1]]))
        with pytest.raises(ValueError, match="1-d"):
            PointMap(np.array([], dtype=int))
        with pytest.raises(ValueError, match="nonnegative"):
            PointMap(np.array([0, -1]))


class TestNearestRows:
    def test_matches_linear_scan(self, rng):
        points = rng.standard_normal((200, 6))
        queries = rng.standard_normal((50, 6))
        got = nearest_rows(points, queries)
        assert np.array_equal(got, _oracles.nearest_rows_scan(points, queries))

    def test_duplicate_rows_tie_to_smallest_index(self):
        points = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        got = nearest_rows(points, np.array([[1.0, 0.1], [1.0, 0.0]]))
        assert got.tolist() == [0, 0]

    def test_equidistant_ties(self):
        points = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        got = nearest_rows(points, np.array([[0.0, 0.0]]))
        assert got.tolist() == [0]

    def test_grid_midpoint_ties_match_scan(self):
        # every query ties between at least two grid points
        grid = np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0)),
                        axis=-1).reshape(-1, 2)
        queries = grid[:8] + np.array([0.5, 0.0])
        got = nearest_rows(grid, queries)
        assert np.array_equal(got, _oracles.nearest_rows_scan(grid, queries))

    def test_single_point(self, rng):
        got = nearest_rows(np.array([[1.0, 2.0, 3.0]]), rng.standard_normal((5, 3)))
        assert np.array_equal(got, np.zeros(5, dtype=np.int64))

    def test_validation(self):
        with pytest.raises(ValueError, match="incompatible shapes"):
            nearest_rows(np.ones((3, 2)), np.ones((2, 3)))
        with pytest.raises(ValueError, match="nonempty"):
            nearest_rows(np.ones((0, 2)), np.ones((2, 2)))


class TestProcrustes:
    def test_recovers_orthonormal_map(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        sources = rng.standard_normal((50, 6))
        got = orthogonal_procrustes(sources @ q.T, sources)
        assert np.allclose(got, q, atol=1e-10)

    def test_recovers_reflection(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        q[0] *= -1.0  # flip one row: determinant -1 stays recoverable
        sources = rng.standard_normal((40, 5))
        got = orthogonal_procrustes(sources @ q.T, sources)
        assert np.allclose(got, q, atol=1e-10)
        assert np.linalg.det(got) < 0

    def test_result_is_orthonormal(self, rng):
        got = orthogonal_procrustes(rng.standard_normal((30, 4)),
                                    rng.standard_normal((30, 4)))
        assert np.allclose(got.T @ got, np.eye(4), atol=1e-12)

    def test_beats_random_orthonormal_candidates(self, rng):
        X = rng.standard_normal((30, 4))
        Y = rng.standard_normal((30, 4))
        best = np.linalg.norm(X - Y @ orthogonal_procrustes(X, Y).T)
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
            assert best <= np.linalg.norm(X - Y @ q.T) + 1e-12

    def test_validation(self):
        with pytest.raises(ValueError, match="row-paired"):
            orthogonal_procrustes(np.ones((3, 2)), np.ones((4, 2)))


class TestRefine:
    def test_identity_is_fixed_point(self, creature3, creature3_basis):
        res = refine_icp(creature3_basis, creature3_basis, np.eye(20))
        assert res.converged
        assert res.iterations == 1
        assert np.array_equal(res.point_map.indices,
                              np.arange(creature3.num_vertices))
        assert res.objective_trace[0] == 0.0
        assert np.allclose(res.functional_map, np.eye(20), atol=1e-10)

    def test_perturbed_identity_recovers(self, creature3, creature3_basis, rng):
        init = np.eye(20) + 0.05 * rng.standard_normal((20, 20))
        res = refine_icp(creature3_basis, creature3_basis, init)
        assert res.converged
        frac = np.mean(res.point_map.indices == np.arange(creature3.num_vertices))
        assert frac >= 0.99
        assert (np.diff(res.objective_trace) <= 1e-9).all()

    def test_jittered_pair_stays_on_truth(self, creature3, creature3_basis):
        from shapecorr import cotangent_laplacian, eigenbasis

        twin = _meshes.jittered(creature3, scale=0.005, seed=3)
        basis_y = eigenbasis(*cotangent_laplacian(twin), 20)
        init = orthogonal_procrustes(creature3_basis.functions, basis_y.functions)
        res = refine_icp(creature3_basis, basis_y, init)
        assert res.converged
        frac = np.mean(res.point_map.indices == np.arange(creature3.num_vertices))
        assert frac >= 0.99

    def test_iteration_cap(self, creature3_basis, rng):
        init = np.eye(20) + 0.5 * rng.standard_normal((20, 20))
        res = refine_icp(creature3_basis, creature3_basis, init, max_iters=1)
        assert res.iterations == 1
        assert not res.converged
        assert len(res.objective_trace) == 1

    def test_validation(self, creature3_basis, ico):
        from shapecorr import cotangent_laplacian, eigenbasis

        small = eigenbasis(*cotangent_laplacian(ico), 5)
        with pytest.raises(ValueError, match="basis sizes differ"):
            refine_icp(creature3_basis, small, np.eye(20))
        with pytest.raises(ValueError, match="initial map must be"):
            refine_icp(creature3_basis, creature3_basis, np.eye(3))
        with pytest.raises(ValueError, match="max_iters"):
            refine_icp(creature3_basis, creature3_basis, np.eye(20), max_iters=0)


class TestPointMapFromFunctional:
    def test_identity_map_on_same_basis(self, creature3, creature3_basis):
        pm = point_map_from_functional(creature3_basis, creature3_basis, np.eye(20))
        assert np.array_equal(pm.indices, np.arange(creature3.num_vertices))


class TestIO:
    def test_round_trip(self, tmp_path):
        pm = PointMap(np.array([3, 1, 4, 1, 5]))
        path = tmp_path / "map.txt"
        save_point_map(pm, path)
        back = load_point_map(path, num_targets=6)
        assert np.array_equal(back.indices, pm.indices)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("# header\n2\n\n0  # trailing note\n1\n")
        back = load_point_map(path)
        assert back.indices.tolist() == [2, 0, 1]

    def test_bad_token(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("0\n1\nx\n")
        with pytest.raises(ValueError, match=r":3: expected a vertex index"):
            load_point_map(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError, match="empty point map"):
            load_point_map(path)

    def test_out_of_range(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("0\n7\n")
        with pytest.raises(ValueError, match="out of range"):
            load_point_map(path, num_targets=7)

    def test_negative_rejected(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("0\n-2\n")
        with pytest.raises(ValueError, match="nonnegative"):
            load_point_map(path)
