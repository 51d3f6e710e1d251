import numpy as np
import pytest

from locus.connmat import (ConnectivityDataset, EdgeIndexMap, edge_labels,
                           fisher_z, load_dataset, nodes_from_edge_count,
                           save_dataset, unvectorize, vectorize)
from locus.errors import DimensionError, ValidationError


class TestEdgeIndexMap:
    def test_enumeration_order_matches_row_major_upper_triangle(self):
        em = EdgeIndexMap(4)
        expected = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        assert [em.inverse(k) for k in range(6)] == expected

    def test_forward_inverse_identity(self):
        em = EdgeIndexMap(9)
        for k in range(em.edge_count):
            u, v = em.inverse(k)
            assert em.forward(u, v) == k
            assert em.forward(v, u) == k

    def test_bijection_hits_every_index_once(self):
        em = EdgeIndexMap(7)
        seen = sorted(em.forward(u, v) for u in range(7) for v in range(u + 1, 7))
        assert seen == list(range(em.edge_count))

    def test_node_edges_cover_all_neighbors(self):
        em = EdgeIndexMap(6)
        for v in range(6):
            idx = em.node_edges(v)
            assert len(idx) == 5
            pairs = {em.inverse(int(k)) for k in idx}
            assert pairs == {(min(u, v), max(u, v)) for u in range(6) if u != v}

    def test_diagonal_rejected(self):
        em = EdgeIndexMap(3)
        with pytest.raises(ValidationError):
            em.forward(1, 1)


class TestVectorize:
    def test_three_node_example(self):
        m = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
        assert vectorize(m).tolist() == [1, 2, 3]

    def test_two_node_single_edge(self):
        m = np.array([[5.0, 7.0], [7.0, 5.0]])
        assert vectorize(m).tolist() == [7.0]

    def test_random_matrix_matches_index_map(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        m = a + a.T
        em = EdgeIndexMap(4)
        s = vectorize(m)
        for k in range(em.edge_count):
            u, v = em.inverse(k)
            assert s[k] == m[u, v]

    def test_asymmetric_rejected_with_worst_pair_named(self):
        m = np.array([[0, 1.0, 2], [1, 0, 3], [2, 3.5, 0]])
        with pytest.raises(ValidationError, match=r"\(2, 3\)|\(3, 2\)"):
            vectorize(m)

    def test_tiny_asymmetry_symmetrized(self):
        m = np.array([[0.0, 1.0], [1.0 + 1e-13, 0.0]])
        assert vectorize(m).tolist() == [(1.0 + (1.0 + 1e-13)) / 2]

    def test_non_square_rejected(self):
        with pytest.raises(ValidationError):
            vectorize(np.zeros((2, 3)))


class TestUnvectorize:
    def test_inverse_of_example(self):
        m = unvectorize(np.array([1.0, 2.0, 3.0]), 3)
        assert m.tolist() == [[0, 1, 2], [1, 0, 3], [2, 3, 0]]

    def test_zero_vector(self):
        assert not unvectorize(np.zeros(10), 5).any()

    def test_round_trip_bit_identical(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            s = rng.standard_normal(45)
            assert np.array_equal(vectorize(unvectorize(s, 10)), s)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            unvectorize(np.zeros(5), 4)


class TestDataset:
    def test_p_v_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            ConnectivityDataset(data=np.zeros((3, 7)), node_count=4)

    def test_non_finite_rejected(self):
        data = np.zeros((2, 6))
        data[1, 3] = np.nan
        with pytest.raises(ValidationError, match="non_finite"):
            ConnectivityDataset(data=data, node_count=4)

    def test_immutable_after_construction(self):
        ds = ConnectivityDataset(data=np.zeros((2, 6)), node_count=4)
        with pytest.raises(ValueError):
            ds.data[0, 0] = 1.0

    def test_nodes_from_edge_count_rejects_non_triangular(self):
        assert nodes_from_edge_count(6) == 4
        with pytest.raises(DimensionError):
            nodes_from_edge_count(7)


class TestFisherZ:
    def test_closed_form(self):
        assert abs(fisher_z(np.array([0.5]))[0] - np.arctanh(0.5)) < 1e-12

    def test_domain_violation(self):
        with pytest.raises(ValidationError, match="fisher_z_domain"):
            fisher_z(np.array([0.2, 1.0]))


class TestLoadSave:
    def test_square_directory(self, tmp_path):
        rng = np.random.default_rng(3)
        for i in range(3):
            a = rng.standard_normal((4, 4))
            np.savetxt(tmp_path / f"subj{i}.csv", a + a.T, delimiter=",")
        ds = load_dataset(str(tmp_path))
        assert ds.n_subjects == 3
        assert ds.node_count == 4
        assert ds.n_edges == 6
        assert ds.subject_ids == ["subj0", "subj1", "subj2"]

    def test_edge_csv_header_infers_nodes(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1_2,1_3,2_3\n0.1,0.2,0.3\n0.4,0.5,0.6\n")
        ds = load_dataset(str(path))
        assert ds.n_subjects == 2
        assert ds.node_count == 3

    def test_bad_header_order_rejected(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1_3,1_2,2_3\n0.1,0.2,0.3\n")
        with pytest.raises(ValidationError, match="bad_header"):
            load_dataset(str(path))

    def test_asymmetric_subject_rejected(self, tmp_path):
        m = np.array([[0, 1.0], [2.0, 0]])
        np.savetxt(tmp_path / "bad.csv", m, delimiter=",")
        with pytest.raises(ValidationError, match="asymmetric"):
            load_dataset(str(tmp_path))

    def test_inconsistent_dimensions_rejected(self, tmp_path):
        np.savetxt(tmp_path / "a.csv", np.zeros((3, 3)), delimiter=",")
        np.savetxt(tmp_path / "b.csv", np.zeros((4, 4)), delimiter=",")
        with pytest.raises(DimensionError):
            load_dataset(str(tmp_path))

    def test_fisher_z_opt_in(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1_2,1_3,2_3\n0.5,0.0,-0.5\n")
        plain = load_dataset(str(path))
        assert plain.data[0, 0] == 0.5
        transformed = load_dataset(str(path), fisher=True)
        assert abs(transformed.data[0, 0] - np.arctanh(0.5)) < 1e-12

    def test_fisher_z_domain_error(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1_2,1_3,2_3\n0.5,1.0,-0.5\n")
        with pytest.raises(ValidationError, match="fisher_z_domain"):
            load_dataset(str(path), fisher=True)

    def test_round_trip_preserves_data(self, tmp_path):
        rng = np.random.default_rng(5)
        ds = ConnectivityDataset(data=rng.standard_normal((4, 15)), node_count=6)
        out = tmp_path / "out.csv"
        save_dataset(ds, str(out))
        back = load_dataset(str(out))
        assert np.allclose(back.data, ds.data, rtol=1e-12, atol=0)
        save_dataset(back, str(tmp_path / "again.csv"))
        assert (tmp_path / "again.csv").read_text() == out.read_text()

    def test_edge_labels_one_based(self):
        assert edge_labels(3) == ["1_2", "1_3", "2_3"]
