import numpy as np
import pytest

from hodgecover.complexes import (Complex2, ComplexStructureError, betti1, build_incidence,
                                  complete_edges, kernel_dimension, laplacians,
                                  random_complex, rank, skeleton_components)


def k3(with_triangle=True):
    tris = [[0, 1, 2]] if with_triangle else []
    return Complex2(3, [[0, 1], [0, 2], [1, 2]], tris)


class TestComplexValidation:
    def test_rejects_unsorted_edges(self):
        with pytest.raises(ComplexStructureError):
            Complex2(3, [[0, 2], [0, 1]], [])

    def test_rejects_reversed_pair(self):
        with pytest.raises(ComplexStructureError):
            Complex2(3, [[1, 0]], [])

    def test_rejects_duplicates(self):
        with pytest.raises(ComplexStructureError):
            Complex2(3, [[0, 1], [0, 1]], [])

    def test_rejects_out_of_range(self):
        with pytest.raises(ComplexStructureError):
            Complex2(3, [[0, 3]], [])

    def test_rejects_triangle_with_missing_edge(self):
        with pytest.raises(ComplexStructureError, match=r"\(0, 1, 2\)"):
            Complex2(3, [[0, 1], [0, 2]], [[0, 1, 2]])

    def test_json_round_trip(self):
        k = k3()
        back = Complex2.from_json(k.to_json())
        assert back.n == k.n
        assert np.array_equal(back.edges, k.edges)
        assert np.array_equal(back.triangles, k.triangles)


class TestIncidence:
    def test_single_edge_column(self):
        # boundary of [0, 1] is [1] - [0]
        k = Complex2(2, [[0, 1]], [])
        inc = build_incidence(k)
        assert inc.b1[:, 0].tolist() == [-1, 1]

    def test_triangle_column_signs(self):
        # boundary of [0, 1, 2]: +1 on (1,2), -1 on (0,2), +1 on (0,1)
        inc = build_incidence(k3())
        col = {tuple(e): int(s) for e, s in zip(k3().edges, inc.b2[:, 0])}
        assert col == {(1, 2): 1, (0, 2): -1, (0, 1): 1}

    def test_chain_identity_exact_on_random_complexes(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = random_complex(rng)
            inc = build_incidence(k)
            assert inc.b1.dtype == np.int64 and inc.b2.dtype == np.int64
            assert not (inc.b1 @ inc.b2).any()

    def test_missing_edge_reported(self):
        k = k3()
        object.__setattr__(k, "edges", np.array([[0, 1], [0, 2]]))
        k.__dict__.pop("edge_index", None)
        with pytest.raises(ComplexStructureError, match="2"):
            build_incidence(k)


class TestLaplacians:
    def test_shapes_symmetry_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            k = random_complex(rng, n_max=12)
            l0, l1, l2 = laplacians(build_incidence(k))
            assert l0.shape == (k.n, k.n)
            assert l1.shape == (k.num_edges, k.num_edges)
            assert l2.shape == (k.num_triangles, k.num_triangles)
            for m in (l0, l1, l2):
                if m.size:
                    assert np.abs(m - m.T).max() < 1e-10
                    assert np.linalg.eigvalsh(m).min() > -1e-10

    def test_filled_triangle_has_trivial_kernel(self):
        _, l1, _ = laplacians(build_incidence(k3()))
        assert np.linalg.eigvalsh(l1).min() > 1e-8

    def test_empty_triangle_has_one_cycle(self):
        _, l1, _ = laplacians(build_incidence(k3(False)))
        eig = np.linalg.eigvalsh(l1)
        assert (np.abs(eig) < 1e-10).sum() == 1

    def test_k4_kernel_dimension_matches_eigen_oracle(self):
        k = Complex2(4, complete_edges(4), [])
        inc = build_incidence(k)
        _, l1, _ = laplacians(inc)
        eig_dim = int((np.abs(np.linalg.eigvalsh(l1)) < 1e-10).sum())
        assert eig_dim == 3  # |E| - n + 1 = 6 - 4 + 1
        assert kernel_dimension(inc) == 3


class TestBetti:
    def test_k4_no_triangles(self):
        k = Complex2(4, complete_edges(4), [])
        assert betti1(k, build_incidence(k)) == 3

    def test_complete_two_skeleton_vanishes(self):
        n = 5
        tris = [[i, j, l] for i in range(n) for j in range(i + 1, n) for l in range(j + 1, n)]
        k = Complex2(n, complete_edges(n), tris)
        assert betti1(k, build_incidence(k)) == 0

    def test_matches_kernel_dimension_on_random_complexes(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = random_complex(rng, n_max=14)
            inc = build_incidence(k)
            assert betti1(k, inc) == kernel_dimension(inc)

    def test_matches_dense_eigendecomposition(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            k = random_complex(rng, n_max=10)
            inc = build_incidence(k)
            _, l1, _ = laplacians(inc)
            if l1.size == 0:
                continue
            eig_dim = int((np.abs(np.linalg.eigvalsh(l1)) < 1e-8).sum())
            assert betti1(k, inc) == eig_dim

    def test_edge_deletion_changes_betti(self):
        # thresholding pathology: removing one cycle edge shifts the count
        k = Complex2(4, complete_edges(4), [[0, 1, 2]])
        assert betti1(k, build_incidence(k)) == 2
        cut = Complex2(4, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3]], [[0, 1, 2]])
        assert betti1(cut, build_incidence(cut)) == 1

    def test_isolated_vertices_counted_as_components(self):
        k = Complex2(5, [[0, 1]], [])
        assert skeleton_components(k) == 4
        assert betti1(k, build_incidence(k)) == 0


def test_rank_of_empty_matrix():
    assert rank(np.zeros((0, 3))) == 0
    assert rank(np.zeros((4, 0))) == 0


def test_injected_sign_error_breaks_chain_identity():
    # mutation check: the zero-product predicate must catch a bad boundary
    rng = np.random.default_rng(99)
    k = random_complex(rng)
    while k.num_triangles == 0:
        k = random_complex(rng)
    inc = build_incidence(k)
    assert not (inc.b1 @ inc.b2).any()
    corrupted = inc.b2.copy()
    row, col = np.argwhere(corrupted != 0)[0]
    corrupted[row, col] *= -1
    assert (inc.b1 @ corrupted).any()
