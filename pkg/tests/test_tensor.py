import numpy as np
import pytest

from tnps.tensor import (
    IndexLabel,
    contract_pair,
    frobenius_norm,
    inverse_vdt,
    load_tnsb,
    load_tns,
    permute_modes,
    save_tnsb,
    save_tns,
    tensorize_reshape,
    tensorize_vdt,
)


def L(id_, dim):
    return IndexLabel(id_, dim)


class TestContractPair:
    def test_matrix_product(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.arange(6.0).reshape(3, 2)
        out, labels = contract_pair(a, [L("i", 2), L("k", 3)],
                                    b, [L("k", 3), L("j", 2)])
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out, a @ b)
        assert [lab.id for lab in labels] == ["i", "j"]

    def test_outer_product(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([4.0, 5.0, 6.0, 7.0])
        out, labels = contract_pair(a, [L("i", 3)], b, [L("j", 4)])
        assert out.shape == (3, 4)
        np.testing.assert_allclose(out, np.outer(a, b))

    def test_full_pairing_scalar(self):
        # brute-force double sum: 1*5 + 2*6 + 3*7 + 4*8 = 70
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        out, labels = contract_pair(a, [L("i", 2), L("j", 2)],
                                    b, [L("i", 2), L("j", 2)])
        assert labels == []
        assert float(out) == pytest.approx(70.0)

    def test_dim_mismatch_on_shared_id(self):
        a = np.zeros((2, 3))
        b = np.zeros((4, 2))
        with pytest.raises(ValueError, match="mismatch"):
            contract_pair(a, [L("i", 2), L("k", 3)], b, [L("k", 4), L("j", 2)])

    def test_label_count_mismatch(self):
        with pytest.raises(ValueError, match="label count"):
            contract_pair(np.zeros((2, 2)), [L("i", 2)], np.zeros(2), [L("i", 2)])

    def test_duplicate_label_rejected(self):
        a = np.zeros((2, 2))
        with pytest.raises(ValueError, match="duplicate"):
            contract_pair(a, [L("i", 2), L("i", 2)], np.zeros(2), [L("j", 2)])

    def test_bilinear(self):
        rng = np.random.default_rng(0)
        la = [L("i", 2), L("k", 3)]
        lb = [L("k", 3), L("j", 4)]
        a1, a2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        b = rng.normal(size=(3, 4))
        alpha, beta = 0.7, -1.3
        lhs, _ = contract_pair(alpha * a1 + beta * a2, la, b, lb)
        r1, _ = contract_pair(a1, la, b, lb)
        r2, _ = contract_pair(a2, la, b, lb)
        np.testing.assert_allclose(lhs, alpha * r1 + beta * r2, rtol=1e-12)

    def test_association_order_independent(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(3, 4))
        c = rng.normal(size=(4, 5))
        la = [L("i", 2), L("x", 3)]
        lb = [L("x", 3), L("y", 4)]
        lc = [L("y", 4), L("j", 5)]
        ab, lab = contract_pair(a, la, b, lb)
        left, _ = contract_pair(ab, lab, c, lc)
        bc, lbc = contract_pair(b, lb, c, lc)
        right, _ = contract_pair(a, la, bc, lbc)
        np.testing.assert_allclose(left, right, rtol=1e-10)


class TestPermuteModes:
    def test_identity(self):
        x = np.random.default_rng(2).normal(size=(2, 3, 4))
        np.testing.assert_array_equal(permute_modes(x, (0, 1, 2)), x)

    def test_swap_is_transpose(self):
        x = np.random.default_rng(3).normal(size=(3, 5))
        np.testing.assert_array_equal(permute_modes(x, (1, 0)), x.T)

    def test_convention_shape(self):
        # p sends mode n to position p[n]: shape[p[n]] == x.shape[n]
        x = np.zeros((2, 3, 4))
        p = (2, 0, 1)
        y = permute_modes(x, p)
        assert y.shape == (3, 4, 2)

    def test_entry_correspondence(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 4))
        p = (2, 0, 1)
        y = permute_modes(x, p)
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    idx = [None] * 3
                    idx[p[0]], idx[p[1]], idx[p[2]] = i, j, k
                    assert y[tuple(idx)] == x[i, j, k]

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4, 5))
        for trial in range(10):
            p = tuple(int(v) for v in rng.permutation(3))
            inv = tuple(int(np.argwhere(np.array(p) == k)) for k in range(3))
            back = permute_modes(permute_modes(x, p), inv)
            np.testing.assert_array_equal(back, x)

    def test_norm_invariant(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 4))
        p = (1, 2, 0)
        assert frobenius_norm(permute_modes(x, p)) == pytest.approx(
            frobenius_norm(x), rel=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            permute_modes(np.zeros((2, 2)), (0, 1, 2))


class TestNorm:
    def test_zero(self):
        assert frobenius_norm(np.zeros((3, 3))) == 0.0

    def test_vector(self):
        assert frobenius_norm([3.0, 4.0]) == pytest.approx(5.0)

    def test_identity(self):
        assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2.0))


class TestReshape:
    def test_vector_to_matrix(self):
        out = tensorize_reshape([1.0, 2.0, 3.0, 4.0], (2, 2))
        np.testing.assert_array_equal(out, [[1, 2], [3, 4]])

    def test_roundtrip(self):
        x = np.random.default_rng(7).normal(size=(4, 6))
        back = tensorize_reshape(tensorize_reshape(x, (2, 12)), (4, 6))
        np.testing.assert_array_equal(back, x)

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            tensorize_reshape(np.zeros(5), (2, 2))

    def test_256_matrix_to_order8(self):
        x = np.arange(65536.0).reshape(256, 256)
        out = tensorize_reshape(x, (4,) * 8)
        assert out.shape == (4,) * 8
        assert out.size == 65536


class TestVdt:
    def test_single_level_scan_order(self):
        img = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = tensorize_vdt(img)
        np.testing.assert_array_equal(out, [1.0, 2.0, 3.0, 4.0])

    def test_roundtrip_16(self):
        img = np.random.default_rng(8).normal(size=(16, 16))
        np.testing.assert_array_equal(inverse_vdt(tensorize_vdt(img)), img)

    def test_256_gives_order8_dims4(self):
        img = np.zeros((256, 256))
        out = tensorize_vdt(img)
        assert out.shape == (4,) * 8

    def test_block_structure(self):
        # mode 0 selects the coarsest 2x2 quadrant
        img = np.zeros((4, 4))
        img[0, 0] = 1.0   # top-left quadrant, local (0, 0)
        out = tensorize_vdt(img)
        assert out[0, 0] == 1.0
        assert out[1:, :].sum() == 0.0

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            tensorize_vdt(np.zeros((4, 8)))

    def test_non_power_rejected(self):
        with pytest.raises(ValueError):
            tensorize_vdt(np.zeros((6, 6)))


class TestFileFormats:
    def test_tnsb_roundtrip(self, tmp_path):
        x = np.random.default_rng(9).normal(size=(2, 3, 4))
        path = tmp_path / "x.tnsb"
        save_tnsb(x, path)
        np.testing.assert_array_equal(load_tnsb(path), x)

    def test_tnsb_golden_bytes(self, tmp_path):
        path = tmp_path / "g.tnsb"
        save_tnsb(np.array([[1.0, 2.0], [3.0, 4.0]]), path)
        raw = path.read_bytes()
        assert raw[:4] == b"TNSB"
        assert raw[4] == 1
        assert int.from_bytes(raw[5:13], "little") == 2
        assert int.from_bytes(raw[13:21], "little") == 2
        assert int.from_bytes(raw[21:29], "little") == 2
        vals = np.frombuffer(raw[29:], dtype="<f8")
        np.testing.assert_array_equal(vals, [1.0, 2.0, 3.0, 4.0])
        assert len(raw) == 29 + 32

    def test_tns_roundtrip(self, tmp_path):
        x = np.random.default_rng(10).normal(size=(3, 2))
        path = tmp_path / "x.tns"
        save_tns(x, path)
        np.testing.assert_array_equal(load_tns(path), x)

    def test_tns_text_layout(self, tmp_path):
        path = tmp_path / "g.tns"
        save_tns(np.array([[1.0, 2.0], [3.0, 4.0]]), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "2"
        assert lines[1].split() == ["2", "2"]
        assert [float(v) for v in lines[2].split()] == [1.0, 2.0, 3.0, 4.0]

    def test_tnsb_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tnsb"
        path.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ValueError, match="magic"):
            load_tnsb(path)

    def test_tnsb_truncated(self, tmp_path):
        path = tmp_path / "x.tnsb"
        save_tnsb(np.ones((2, 2)), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_tnsb(path)
